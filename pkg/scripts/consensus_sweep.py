"""Run the seeded workload against every byzantine behavior and node position."""
import argparse
import time

from ictoken.consensus import Behavior, Network, NetworkConfig
from ictoken.workload import Workload, WorkloadConfig


def run(behavior: Behavior | None, index: int, rounds: int, seed: int, nodes: int, quorum):
    net = Network(NetworkConfig(nodes, quorum, seed=seed))
    if behavior is not None:
        net.inject_byzantine(index, behavior)
    wl = Workload(net, WorkloadConfig(seed=seed))
    wl.run(rounds)
    wl.drain()
    leaked = set(net.reference.committed) & set(wl.invalid)
    return net, wl, leaked


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=4)
    p.add_argument("--quorum", type=int)
    args = p.parse_args()

    print("behavior        node  valid  committed  invalid  leaked  max_latency  identical  secs")
    cases = [(None, -1)] + [(b, i) for b in Behavior if b is not Behavior.HONEST
                            for i in range(args.nodes)]
    for behavior, index in cases:
        start = time.perf_counter()
        net, wl, leaked = run(behavior, index, args.rounds, args.seed, args.nodes, args.quorum)
        s = wl.stats
        name = behavior.value if behavior else "honest"
        print(f"{name:15s} {index:4d} {s.valid_submitted:6d} {s.committed:10d} "
              f"{s.invalid_submitted:8d} {len(leaked):7d} {s.max_latency:12d} "
              f"{str(net.compare_chains().identical):>10s} {time.perf_counter() - start:5.1f}")


if __name__ == "__main__":
    main()
