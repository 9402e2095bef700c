"""Scenario scripts, the replay engine and its report.

Script format (line-delimited, ``#`` starts a comment)::

    ictoken-scenario 1
    name table2
    owner <label> <role> [unenrolled]
    step <actor> <action> key=value ... [expect=accept|reject(ErrorClass)]

Actions: enroll, transfer, stage, assemble, integrate, report, and the
forging actions used by the attack scripts (remark, forge-pid, keytamper),
which build tokens by hand instead of through the wallet's guards.
"""
from __future__ import annotations

import json
import shlex
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .consensus import Network, NetworkConfig
from .crypto import sha256
from .errors import ICTokenError
from .ledger import DEFAULT_CAPACITY, TxKind
from .token_model import compute_pid, make_mark_hash
from .tracker import Tracker, check_invariants
from .wallet import Wallet

FORMAT_HEADER = "ictoken-scenario 1"
ACTIONS = ("enroll", "transfer", "stage", "assemble", "integrate", "report",
           "remark", "forge-pid", "keytamper")

ATTACKS = {
    "clone": "attack_clone.scn",
    "remark": "attack_remark.scn",
    "rollback": "attack_rollback.scn",
    "swap": "attack_swap.scn",
    "defectiveResale": "attack_defective_resale.scn",
    "foreignTransfer": "attack_foreign_transfer.scn",
    "keyTamper": "attack_key_tamper.scn",
}


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class OwnerDecl:
    label: str
    role: str
    enrolled: bool = True


@dataclass(frozen=True)
class Step:
    actor: str
    action: str
    args: tuple[tuple[str, str], ...]
    expect: str = "accept"

    def arg(self, name: str, default=None) -> str:
        for k, v in self.args:
            if k == name:
                return v
        if default is None:
            raise ScriptError(f"step {self.actor} {self.action}: missing {name}=")
        return default


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    owners: tuple[OwnerDecl, ...]
    steps: tuple[Step, ...]

    @classmethod
    def parse(cls, text: str) -> "ScenarioScript":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines or lines[0].strip() != FORMAT_HEADER:
            raise ScriptError(f"first line must be {FORMAT_HEADER!r}")
        name, owners, steps = "unnamed", [], []
        for line in lines[1:]:
            words = shlex.split(line)
            head = words[0]
            if head == "name" and len(words) == 2:
                name = words[1]
            elif head == "owner" and len(words) in (3, 4):
                if len(words) == 4 and words[3] != "unenrolled":
                    raise ScriptError(f"bad owner flag: {line}")
                owners.append(OwnerDecl(words[1], words[2], len(words) == 3))
            elif head == "step" and len(words) >= 3:
                actor, action = words[1], words[2]
                if action not in ACTIONS:
                    raise ScriptError(f"unknown action {action!r}")
                args, expect = [], "accept"
                for word in words[3:]:
                    key, sep, value = word.partition("=")
                    if not sep:
                        raise ScriptError(f"expected key=value, got {word!r}")
                    if key == "expect":
                        expect = value
                    else:
                        args.append((key, value))
                steps.append(Step(actor, action, tuple(args), expect))
            else:
                raise ScriptError(f"cannot parse: {line}")
        labels = set()
        for decl in owners:
            labels.add(decl.label)
        for step in steps:
            if step.actor not in labels:
                raise ScriptError(f"actor {step.actor!r} used before it is declared")
        return cls(name, tuple(owners), tuple(steps))

    @classmethod
    def builtin(cls, filename: str) -> "ScenarioScript":
        text = resources.files("ictoken").joinpath("scenarios").joinpath(filename).read_text()
        return cls.parse(text)


@dataclass
class StepOutcome:
    index: int
    actor: str
    action: str
    target: str
    expected: str
    outcome: str

    @property
    def ok(self) -> bool:
        return self.expected == self.outcome


@dataclass
class ICSummary:
    label: str
    icid: str
    version: int
    stage: int
    status: int
    defective: bool
    owner: str


@dataclass
class ScenarioReport:
    name: str
    seed: int
    backend: str
    steps: list[StepOutcome] = field(default_factory=list)
    height: int = 0
    tokens: list[ICSummary] = field(default_factory=list)
    invariants: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(s.ok for s in self.steps) and all(self.invariants.values())

    @property
    def accepted(self) -> int:
        return sum(s.outcome == "accept" for s in self.steps)

    def to_text(self) -> str:
        out = [f"scenario {self.name} seed={self.seed} backend={self.backend}"]
        for s in self.steps:
            mark = "ok" if s.ok else "MISMATCH"
            out.append(f"  step {s.index:2d} {s.actor} {s.action} {s.target}: "
                       f"{s.outcome} (expected {s.expected}) {mark}")
        out.append(f"  chain height: {self.height}")
        for t in self.tokens:
            out.append(f"  {t.label} {t.icid[:16]} version={t.version} stage={t.stage} "
                       f"status={t.status} defective={int(t.defective)} owner={t.owner}")
        inv = " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in self.invariants.items())
        out.append(f"  invariants: {inv}")
        out.append(f"  result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(out) + "\n"

    def to_json(self) -> str:
        obj = asdict(self)
        obj["passed"] = self.passed
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def outcome_of(exc: Exception | None) -> str:
    return "accept" if exc is None else f"reject({type(exc).__name__})"


class ScenarioRunner:
    """Drives wallets against a backend (a Tracker or a consensus Network)."""

    def __init__(self, backend, seed: int = 0):
        self.backend = backend
        self.seed = seed
        self.wallets: dict[str, Wallet] = {}
        self.ics: dict[str, bytes] = {}

    def run(self, script: ScenarioScript) -> ScenarioReport:
        report = ScenarioReport(script.name, self.seed, describe_backend(self.backend))
        for decl in script.owners:
            wallet = Wallet.create(decl.role, seed=f"{self.seed}:{decl.label}",
                                   tracker=self.backend)
            self.wallets[decl.label] = wallet
            if decl.enrolled:
                wallet.enroll()
        for i, step in enumerate(script.steps, start=1):
            try:
                self._do(step)
                err = None
            except ICTokenError as exc:
                err = exc
            for wallet in self.wallets.values():
                wallet.sync_assets()
            target = step.arg("ic", "") or step.arg("ics", "")
            report.steps.append(StepOutcome(i, step.actor, step.action, target,
                                             step.expect, outcome_of(err)))
        self._finish(report)
        return report

    def _finish(self, report: ScenarioReport) -> None:
        backend = self.backend
        if isinstance(backend, Tracker):
            backend.flush()
        labels = {w.public_id: label for label, w in self.wallets.items()}
        seen = set()
        for label, icid in self.ics.items():
            if icid in seen or icid not in backend.state.icdb:
                continue
            seen.add(icid)
            m = backend.latest(icid).metadata
            report.tokens.append(ICSummary(label, icid.hex(), m.version, int(m.stage),
                                           int(m.status), m.is_defective,
                                           labels.get(backend.latest(icid).owner, "?")))
        report.height = backend.ledger.height
        checks = check_invariants(backend.state, backend.ledger.blocks)
        report.invariants = {name: not problems for name, problems in checks.items()}
        if isinstance(backend, Network):
            report.invariants["honest_chains_identical"] = bool(backend.compare_chains())

    # actions

    def _icid(self, label: str) -> bytes:
        try:
            return self.ics[label]
        except KeyError:
            raise ScriptError(f"IC {label!r} used before enrollment") from None

    def _do(self, step: Step) -> None:
        w = self.wallets[step.actor]
        a = step.action
        if a == "enroll":
            label = step.arg("ic")
            key = step.arg("key", "")
            key = bytes.fromhex(key) if key else sha256(f"{self.seed}:{label}:meter".encode())
            token = w.build_enrollment(step.arg("uid"), step.arg("markings"), key)
            self.ics.setdefault(label, token.icid)
            w.submit(TxKind.ENROLL_IC, [token])
        elif a == "transfer":
            to = self.wallets[step.arg("to")]
            w.submit(TxKind.TRANSFER, [w.build_transfer(self._icid(step.arg("ic")), to.profile)])
        elif a == "stage":
            token = w.build_stage_update(self._icid(step.arg("ic")),
                                         int(step.arg("stage")), int(step.arg("status")))
            w.submit(TxKind.UPDATE_STAGE, [token])
        elif a in ("assemble", "integrate"):
            icids = [self._icid(x) for x in step.arg("ics").split(",")]
            target = "pid" if a == "assemble" else "edid"
            w.submit(TxKind.UPDATE_COMPOSITION, w.build_composition_update(icids, target))
        elif a == "report":
            w.submit(TxKind.REPORT_DEFECT, [w.build_defect_report(self._icid(step.arg("ic")))])
        elif a == "remark":
            token = w._held(self._icid(step.arg("ic")))
            token = token.with_metadata(mark_hash=make_mark_hash(step.arg("markings")))
            w.submit(TxKind.UPDATE_STAGE, [w.sign_token(token)])
        elif a == "forge-pid":
            icids = [self._icid(x) for x in step.arg("ics").split(",")]
            source = step.arg("pid-of", "")
            pid = (self.backend.latest(self._icid(source)).metadata.pid if source
                   else compute_pid(icids))
            tokens = [w.sign_token(w._held(i).with_metadata(pid=pid)) for i in icids]
            w.submit(TxKind.UPDATE_COMPOSITION, tokens)
        elif a == "keytamper":
            to = self.wallets[step.arg("to")]
            token = w.build_transfer(self._icid(step.arg("ic")), to.profile)
            token = token.with_key(key_hash=sha256(b"substituted:" + token.key.key_hash))
            w.submit(TxKind.TRANSFER, [w.sign_token(token)])
        else:  # pragma: no cover
            raise ScriptError(a)


def describe_backend(backend) -> str:
    if isinstance(backend, Network):
        return f"network(n={backend.config.node_count},quorum={backend.config.quorum})"
    return "tracker"


def make_backend(nodes: int = 1, seed: int = 0, capacity: int | None = None):
    capacity = capacity or DEFAULT_CAPACITY
    if nodes <= 1:
        return Tracker(capacity)
    return Network(NetworkConfig(node_count=nodes, seed=seed, capacity=capacity))


def run_script(script: ScenarioScript, backend=None,
               seed: int = 0) -> tuple[ScenarioReport, "ScenarioRunner"]:
    backend = backend if backend is not None else Tracker()
    runner = ScenarioRunner(backend, seed)
    return runner.run(script), runner


def replay_table2(backend=None, seed: int = 0) -> ScenarioReport:
    return run_script(ScenarioScript.builtin("table2.scn"), backend, seed)[0]


def run_attack(name: str, backend=None, seed: int = 0) -> ScenarioReport:
    if name not in ATTACKS:
        raise KeyError(f"unknown attack {name!r}; choose from {', '.join(ATTACKS)}")
    return run_script(ScenarioScript.builtin(ATTACKS[name]), backend, seed)[0]


def write_artifacts(report: ScenarioReport, backend, directory) -> dict[str, Path]:
    """Write the ledger file and both report forms; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(backend, Tracker):
        backend.flush()
    paths = {
        "ledger": directory / f"{report.name}.ledger.jsonl",
        "text": directory / f"{report.name}.report.txt",
        "json": directory / f"{report.name}.report.json",
    }
    paths["ledger"].write_text(backend.ledger.to_text())
    paths["text"].write_text(report.to_text())
    paths["json"].write_text(report.to_json() + "\n")
    return paths
