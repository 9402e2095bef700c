"""Command-line interface.

State lives in a ledger directory (``--ledger-dir``, else ``$ICTOKEN_LEDGER_DIR``,
else ``./ictoken-data``) holding ``ledger.jsonl`` and one ``<label>.wallet``
file per owner. Every mutating command loads the ledger, verifies it from
genesis, applies one transaction and appends the sealed block.

Exit codes: 0 success, 1 rejection or other package error (the error class
name is printed), 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .audit import audit_ic
from .config import Config
from .consensus import Behavior, Network, NetworkConfig
from .errors import ICTokenError, UnknownICID
from .ledger import LedgerFormatError, parse_ledger_text
from .scenario import (ATTACKS, ScenarioScript, make_backend, run_attack, run_script,
                       write_artifacts)
from .token_model import FIELD_SIZES, TOKEN_SIZE, Stage, Status
from .tracker import Tracker, verify_ledger_bytes
from .wallet import ROLES, Wallet
from .workload import Workload, WorkloadConfig

LEDGER_FILE = "ledger.jsonl"


class Workspace:
    def __init__(self, config: Config):
        self.config = config
        self.dir = config.ledger_dir()
        self.ledger_path = self.dir / LEDGER_FILE
        self._tracker: Tracker | None = None

    @property
    def tracker(self) -> Tracker:
        if self._tracker is None:
            self._tracker = Tracker.load(self.ledger_path, self.config.capacity)
        return self._tracker

    def save(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        self.tracker.save(self.ledger_path)

    def wallet_path(self, label: str) -> Path:
        return self.dir / f"{label}.wallet"

    def wallet(self, label: str) -> Wallet:
        path = self.wallet_path(label)
        if not path.exists():
            raise SystemExit(_usage(f"no wallet named {label!r} in {self.dir}"))
        return Wallet.load(path, self.tracker)

    def labels(self) -> dict[bytes, str]:
        out = {}
        for path in sorted(self.dir.glob("*.wallet")):
            for line in path.read_text().splitlines():
                if line.startswith("publicID="):
                    out[bytes.fromhex(line.split("=", 1)[1])] = path.stem
        return out

    def icid(self, text: str) -> bytes:
        """Full hex ICID or an unambiguous prefix of at least 8 hex digits."""
        text = text.lower()
        known = [i for i in self.tracker.state.icdb if i.hex().startswith(text)]
        if len(text) < 8 or len(known) != 1:
            try:
                value = bytes.fromhex(text)
            except ValueError:
                raise SystemExit(_usage(f"not an ICID: {text!r}")) from None
            if len(value) != 32:
                raise UnknownICID(text)
            return value
        return known[0]


def _usage(message: str) -> int:
    print(f"ictoken: error: {message}", file=sys.stderr)
    return 2


def _config(args) -> Config:
    cfg = Config.from_file(args.config) if args.config else Config()
    for name in ("nodes", "quorum", "capacity", "seed", "ledger"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


# owner

def cmd_owner_create(ws: Workspace, args) -> int:
    path = ws.wallet_path(args.label)
    if path.exists():
        return _usage(f"wallet {args.label!r} already exists")
    ws.dir.mkdir(parents=True, exist_ok=True)
    wallet = Wallet.create(args.role, seed=args.key_seed)
    wallet.save(path)
    print(f"owner {args.label} role={args.role} publicID={wallet.public_id.hex()}")
    return 0


def cmd_owner_enroll(ws: Workspace, args) -> int:
    wallet = ws.wallet(args.label)
    wallet.enroll()
    ws.save()
    print(f"enrolled {args.label}")
    return 0


# ic

def _metering_key(args) -> bytes:
    if args.key_hex:
        return bytes.fromhex(args.key_hex)
    return Path(args.key_file).read_bytes()


def cmd_ic_enroll(ws: Workspace, args) -> int:
    wallet = ws.wallet(args.owner)
    markings = Path(args.markings_file).read_text() if args.markings_file else args.markings
    icid = wallet.enroll_ic(args.uid, markings, _metering_key(args))
    ws.save()
    print(f"enrolled IC {icid.hex()}")
    return 0


def cmd_ic_transfer(ws: Workspace, args) -> int:
    wallet = ws.wallet(args.owner)
    to = ws.wallet(args.to)
    wallet.transfer(ws.icid(args.icid), to.profile)
    ws.save()
    print(f"transferred to {args.to}")
    return 0


def cmd_ic_update_stage(ws: Workspace, args) -> int:
    wallet = ws.wallet(args.owner)
    wallet.update_stage(ws.icid(args.icid), args.stage, args.status)
    ws.save()
    print(f"stage {args.stage}/{args.status}")
    return 0


def cmd_ic_compose(ws: Workspace, args) -> int:
    wallet = ws.wallet(args.owner)
    icids = [ws.icid(x) for x in args.icids]
    if args.command == "assemble":
        digest, name = wallet.assemble(icids), "PID"
    else:
        digest, name = wallet.integrate(icids), "EDID"
    ws.save()
    print(f"{name} {digest.hex()}")
    return 0


def cmd_ic_report_defect(ws: Workspace, args) -> int:
    wallet = ws.wallet(args.owner)
    wallet.report_defect(ws.icid(args.icid))
    ws.save()
    print("reported defective")
    return 0


def cmd_ic_list(ws: Workspace, args) -> int:
    wallet = ws.wallet(args.owner)
    for icid, token in sorted(wallet.held.items()):
        m = token.metadata
        print(f"{icid.hex()} v{m.version} stage={int(m.stage)}/{int(m.status)}"
              f" defective={int(m.is_defective)}")
    return 0


# audit / ledger

def cmd_audit(ws: Workspace, args) -> int:
    print(audit_ic(ws.tracker.state, ws.icid(args.icid), ws.labels()), end="")
    return 0


def cmd_ledger_verify(ws: Workspace, args) -> int:
    path = Path(args.file) if args.file else ws.ledger_path
    if not path.exists():
        return _usage(f"no ledger at {path}")
    report = verify_ledger_bytes(path.read_bytes(), ws.config.capacity)
    if report.ok:
        print(f"ok: {len(report.state.tokens)} token versions, "
              f"{len(report.state.icdb)} ICs verified from genesis")
        return 0
    print(f"corrupt: first bad block {report.first_bad_block}", file=sys.stderr)
    for problem in report.problems:
        print(f"  {problem}", file=sys.stderr)
    return 1


def cmd_ledger_show(ws: Workspace, args) -> int:
    path = Path(args.file) if args.file else ws.ledger_path
    blocks = parse_ledger_text(path.read_text()) if path.exists() else []
    for b in blocks:
        kinds = ",".join(tx.kind.value for tx in b.txs)
        print(f"block {b.index} hash={b.block_hash.hex()[:16]} prev={b.prev_hash.hex()[:16]}"
              f" root={b.token_root.hex()[:16]} tokens={b.token_count} txs={kinds}")
    print(f"height {len(blocks)}")
    return 0


# network / scenarios

def cmd_net_run(ws: Workspace, args) -> int:
    cfg = ws.config
    net = Network(NetworkConfig(cfg.nodes, cfg.quorum, cfg.capacity, cfg.seed, args.parallel))
    for spec in args.byzantine or []:
        index, _, behavior = spec.partition(":")
        try:
            net.inject_byzantine(int(index), Behavior(behavior))
        except (ValueError, IndexError):
            return _usage(f"bad --byzantine {spec!r}; use INDEX:BEHAVIOR")
    workload = Workload(net, WorkloadConfig(seed=cfg.seed))
    stats = workload.run(args.rounds)
    workload.drain()
    leaked = [t for n in net.honest_nodes for t in n.committed if t not in workload.valid]
    chains = net.compare_chains()
    print(f"nodes={cfg.nodes} quorum={net.config.quorum} rounds={stats.rounds} "
          f"height={net.ledger.height}")
    print(f"valid submitted={stats.valid_submitted} committed={stats.committed} "
          f"max_latency={stats.max_latency} pending={len(workload.pending)}")
    print(f"invalid submitted={stats.invalid_submitted} committed={len(leaked)}")
    print(f"honest chains identical: {chains.identical}")
    ok = chains.identical and not leaked and not workload.pending
    return 0 if ok else 1


def _emit(report, args, backend) -> None:
    if args.out:
        write_artifacts(report, backend, args.out)
    print(report.to_json() if args.json else report.to_text(), end="\n" if args.json else "")


def cmd_scenario(ws: Workspace, args) -> int:
    cfg = ws.config
    if args.name == "table2":
        script = ScenarioScript.builtin("table2.scn")
    elif args.name == "multi":
        script = ScenarioScript.builtin("multi_ic.scn")
    elif args.name == "run":
        if not args.file:
            return _usage("scenario run needs a script file")
        script = ScenarioScript.parse(Path(args.file).read_text())
    else:  # pragma: no cover - argparse restricts choices
        return 2
    backend = make_backend(cfg.nodes, cfg.seed, cfg.capacity)
    report, _ = run_script(script, backend, cfg.seed)
    _emit(report, args, backend)
    return 0 if report.passed else 1


def cmd_attack(ws: Workspace, args) -> int:
    cfg = ws.config
    names = list(ATTACKS) if args.name == "all" else [args.name]
    status = 0
    for name in names:
        backend = make_backend(cfg.nodes, cfg.seed, cfg.capacity)
        report = run_attack(name, backend, cfg.seed)
        last = report.steps[-1]
        if args.json:
            print(report.to_json())
        else:
            print(f"attack {name}: {last.outcome.replace('reject(', 'rejected: ').rstrip(')')}"
                  f" ({'as documented' if report.passed else 'UNEXPECTED'})")
        if args.out:
            write_artifacts(report, backend, args.out)
        status |= 0 if report.passed else 1
    return status


def cmd_selftest_sizes(ws: Workspace, args) -> int:
    for name, size in FIELD_SIZES:
        print(f"{name:12s} {size:4d}")
    print(f"{'total':12s} {TOKEN_SIZE:4d}")
    print(TOKEN_SIZE)
    return 0


# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ictoken", description="IC provenance ledger tools")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--ledger-dir", dest="ledger", help="directory holding the ledger and wallets")
    p.add_argument("--nodes", type=int)
    p.add_argument("--quorum", type=int)
    p.add_argument("--capacity", type=int, help="tokens per block")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="group", required=True)

    owner = sub.add_parser("owner").add_subparsers(dest="command", required=True)
    c = owner.add_parser("create")
    c.add_argument("label")
    c.add_argument("--role", choices=ROLES, required=True)
    c.add_argument("--key-seed", help="derive the RSA key from this seed (testing only)")
    c.set_defaults(func=cmd_owner_create)
    c = owner.add_parser("enroll")
    c.add_argument("label")
    c.set_defaults(func=cmd_owner_enroll)

    ic = sub.add_parser("ic").add_subparsers(dest="command", required=True)
    c = ic.add_parser("enroll")
    c.add_argument("owner")
    c.add_argument("--uid", required=True)
    marks = c.add_mutually_exclusive_group(required=True)
    marks.add_argument("--markings")
    marks.add_argument("--markings-file")
    key = c.add_mutually_exclusive_group(required=True)
    key.add_argument("--key-hex")
    key.add_argument("--key-file")
    c.set_defaults(func=cmd_ic_enroll)
    c = ic.add_parser("transfer")
    c.add_argument("owner")
    c.add_argument("icid")
    c.add_argument("--to", required=True)
    c.set_defaults(func=cmd_ic_transfer)
    c = ic.add_parser("update-stage")
    c.add_argument("owner")
    c.add_argument("icid")
    c.add_argument("--stage", type=int, choices=[int(s) for s in Stage], required=True)
    c.add_argument("--status", type=int, choices=[int(s) for s in Status], required=True)
    c.set_defaults(func=cmd_ic_update_stage)
    for name in ("assemble", "integrate"):
        c = ic.add_parser(name)
        c.add_argument("owner")
        c.add_argument("icids", nargs="+")
        c.set_defaults(func=cmd_ic_compose)
    c = ic.add_parser("report-defect")
    c.add_argument("owner")
    c.add_argument("icid")
    c.set_defaults(func=cmd_ic_report_defect)
    c = ic.add_parser("list")
    c.add_argument("owner")
    c.set_defaults(func=cmd_ic_list)

    c = sub.add_parser("audit")
    c.add_argument("icid")
    c.set_defaults(func=cmd_audit)

    ledger = sub.add_parser("ledger").add_subparsers(dest="command", required=True)
    for name, func in (("verify", cmd_ledger_verify), ("show", cmd_ledger_show)):
        c = ledger.add_parser(name)
        c.add_argument("--file", help="ledger file (default: the workspace ledger)")
        c.set_defaults(func=func)

    net = sub.add_parser("net").add_subparsers(dest="command", required=True)
    c = net.add_parser("run")
    c.add_argument("--rounds", type=int, default=20)
    c.add_argument("--byzantine", action="append", metavar="INDEX:BEHAVIOR",
                   help=f"behaviors: {', '.join(b.value for b in Behavior if b.value != 'honest')}")
    c.add_argument("--parallel", action="store_true", help="validate votes in a thread pool")
    # accept the network flags after the subcommand too
    c.add_argument("--nodes", type=int, default=argparse.SUPPRESS)
    c.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    c.set_defaults(func=cmd_net_run)

    c = sub.add_parser("scenario")
    c.add_argument("name", choices=["table2", "multi", "run"])
    c.add_argument("file", nargs="?")
    c.add_argument("--json", action="store_true")
    c.add_argument("--out", help="write ledger and reports into this directory")
    c.add_argument("--nodes", type=int, default=argparse.SUPPRESS)
    c.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    c.set_defaults(func=cmd_scenario)

    c = sub.add_parser("attack")
    c.add_argument("name", choices=[*ATTACKS, "all"])
    c.add_argument("--json", action="store_true")
    c.add_argument("--out", help="write ledger and reports into this directory")
    c.add_argument("--nodes", type=int, default=argparse.SUPPRESS)
    c.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    c.set_defaults(func=cmd_attack)

    selftest = sub.add_parser("selftest").add_subparsers(dest="command", required=True)
    c = selftest.add_parser("sizes")
    c.set_defaults(func=cmd_selftest_sizes)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        ws = Workspace(cfg)
        return args.func(ws, args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except ICTokenError as exc:
        print(f"rejected: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (LedgerFormatError, ValueError, OSError) as exc:
        print(f"ictoken: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
