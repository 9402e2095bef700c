"""Replay the full single-IC lifecycle and print the report and the audit trail."""
import argparse

from ictoken.audit import audit_ic
from ictoken.scenario import ScenarioScript, make_backend, run_script, write_artifacts


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--nodes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write ledger and reports here")
    args = p.parse_args()

    backend = make_backend(args.nodes, seed=args.seed)
    report, runner = run_script(ScenarioScript.builtin("table2.scn"), backend, args.seed)
    print(report.to_text())
    labels = {w.public_id: label for label, w in runner.wallets.items()}
    print(audit_ic(backend.state, runner.ics["IC1"], labels))
    if args.out:
        for kind, path in write_artifacts(report, backend, args.out).items():
            print(f"wrote {kind}: {path}")


if __name__ == "__main__":
    main()
