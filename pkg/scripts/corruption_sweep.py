"""Flip bytes of a stored ledger and count corruptions that verification misses."""
import argparse
import random
import sys
import time

from ictoken.ledger import RecordCache
from ictoken.scenario import ATTACKS, ScenarioScript, run_attack, run_script
from ictoken.tracker import Tracker, verify_ledger_bytes


def build(capacity: int) -> bytes:
    tracker = Tracker(capacity)
    run_script(ScenarioScript.builtin("table2.scn"), tracker, seed=0)
    run_script(ScenarioScript.builtin("multi_ic.scn"), tracker, seed=1)
    for i, name in enumerate(ATTACKS):
        run_attack(name, tracker, seed=10 + i)
    tracker.flush()
    print(f"ledger: {len(tracker.state.tokens)} tokens, {tracker.ledger.height} blocks")
    return tracker.ledger.to_text().encode()


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("file", nargs="?", help="ledger file (default: build a sample ledger)")
    p.add_argument("--capacity", type=int, default=2)
    p.add_argument("--values", type=int, default=1,
                   help="random replacement bytes per position (255 = exhaustive)")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    data = open(args.file, "rb").read() if args.file else build(args.capacity)
    cache = RecordCache()
    if not verify_ledger_bytes(data, cache=cache).ok:
        sys.exit("the input ledger does not verify")
    rng = random.Random(args.seed)
    buf, checked, missed = bytearray(data), 0, []
    start = time.perf_counter()
    for pos in range(len(data)):
        others = [v for v in range(256) if v != data[pos]]
        for value in rng.sample(others, min(args.values, 255)):
            buf[pos] = value
            checked += 1
            if verify_ledger_bytes(bytes(buf), cache=cache).ok:
                missed.append((pos, data[pos], value))
        buf[pos] = data[pos]
    print(f"{len(data)} bytes, {checked} corruptions, missed {len(missed)} "
          f"in {time.perf_counter() - start:.1f}s")
    for pos, old, new in missed[:20]:
        print(f"  missed at {pos}: {old:#04x} -> {new:#04x}")


if __name__ == "__main__":
    main()
