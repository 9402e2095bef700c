"""ICtracker node: validation of the token services over the derived mappings.

Every service checks its preconditions in the order the algorithms list
them and raises the matching :class:`~ictoken.errors.Rejected` subclass on
the first failure. Nothing is mutated until all checks pass.

Signed-field contract: a wallet signs the token carrying the version/prevVer
of the version it holds. The tracker then commits a copy with
``version + 1`` and ``prevVer`` pointing at the predecessor's sequence
index. To re-verify a committed token, :func:`submitted_form` swaps the
predecessor's values back in.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .crypto import PublicProfile, ZERO_DIGEST
from .errors import (AlreadyEnrolled, BadSignature, BadVersion, BatchInvalid,
                     CompositionAlreadySet, DefectiveToken, DuplicateICID,
                     ICTokenError, IllegalFieldChange, InProgress, KeyTrailBroken,
                     MerkleMismatch, MixedOwners, NewOwnerNotEnrolled,
                     NonEmptyComposition, NotCurrentOwner, OwnerNotEnrolled,
                     ProfileMismatch, ReplayMismatch, StageRollback, StatusRollback,
                     UnknownICID, WrongStage, WrongStatus)
from .ledger import (DEFAULT_CAPACITY, Block, Ledger, LedgerFormatError, RecordCache,
                     Transaction, TxKind, parse_ledger_text)
from .token_model import (MAX_VERSION, ICToken, Stage, Status, changed_fields,
                          compute_edid, compute_pid, encode, signing_payload)


@dataclass
class OwnerEntry:
    is_enrolled: bool
    profile: PublicProfile
    assets: set[bytes] = field(default_factory=set)


def submitted_form(token: ICToken, tokens: list[ICToken]) -> ICToken:
    """The token image the owner signed, given the committed sequence."""
    if token.metadata.version == 0:
        return token
    pred_seq = token.metadata.prev_ver
    if pred_seq >= len(tokens):
        raise ReplayMismatch(f"prevVer {pred_seq} points past the chain")
    pred = tokens[pred_seq].metadata
    return token.with_metadata(version=pred.version, prev_ver=pred.prev_ver)


class NodeState:
    """The four mappings plus the seq-indexed token store they point into."""

    def __init__(self):
        self.tokens: list[ICToken] = []
        self.icdb: dict[bytes, int] = {}
        self.pcbdb: dict[bytes, list[bytes]] = {}
        self.devdb: dict[bytes, list[bytes]] = {}
        self.owndb: dict[bytes, OwnerEntry] = {}

    def copy(self) -> "NodeState":
        other = NodeState()
        other.tokens = list(self.tokens)
        other.icdb = dict(self.icdb)
        other.pcbdb = {k: list(v) for k, v in self.pcbdb.items()}
        other.devdb = {k: list(v) for k, v in self.devdb.items()}
        other.owndb = {k: OwnerEntry(e.is_enrolled, e.profile, set(e.assets))
                       for k, e in self.owndb.items()}
        return other

    @property
    def next_seq(self) -> int:
        return len(self.tokens)

    def snapshot(self):
        """A comparable image of the whole state (used for rebuild checks)."""
        return (
            tuple(encode(t) for t in self.tokens),
            dict(self.icdb),
            {k: tuple(v) for k, v in self.pcbdb.items()},
            {k: tuple(v) for k, v in self.devdb.items()},
            {k: (e.is_enrolled, e.profile.key_bytes(), frozenset(e.assets))
             for k, e in self.owndb.items()},
        )

    # queries

    def latest(self, icid: bytes) -> ICToken:
        if icid not in self.icdb:
            raise UnknownICID(icid.hex())
        return self.tokens[self.icdb[icid]]

    def assets_of(self, public_id: bytes) -> set[bytes]:
        entry = self.owndb.get(public_id)
        return set(entry.assets) if entry else set()

    def profile(self, public_id: bytes) -> PublicProfile | None:
        entry = self.owndb.get(public_id)
        return entry.profile if entry and entry.is_enrolled else None

    def trace_history(self, icid: bytes) -> list[ICToken]:
        """Newest to oldest, following prevVer links back to version 0."""
        seq = self.icdb.get(icid)
        if seq is None:
            raise UnknownICID(icid.hex())
        history = []
        while True:
            token = self.tokens[seq]
            history.append(token)
            if token.metadata.prev_ver is None:
                return history
            seq = token.metadata.prev_ver

    def signer_of(self, token: ICToken) -> bytes:
        """publicID whose key must have signed a committed token."""
        if token.metadata.version == 0:
            return token.owner
        return self.tokens[token.metadata.prev_ver].owner

    def verify_committed(self, token: ICToken) -> bool:
        entry = self.owndb.get(self.signer_of(token))
        if entry is None:
            return False
        signed = submitted_form(token, self.tokens)
        return entry.profile.verify_sign(signing_payload(signed), token.trnsaxn_id)

    # services

    def verify_transaxn(self, entry: OwnerEntry | None, token: ICToken) -> bool:
        if entry is None or not entry.is_enrolled:
            raise OwnerNotEnrolled("signer is not an enrolled owner")
        return entry.profile.verify_sign(signing_payload(token), token.trnsaxn_id)

    def apply(self, tx: Transaction) -> tuple[Transaction, list[int]]:
        """Validate and commit ``tx``; returns its committed form and seq indices."""
        kind = tx.kind
        if kind is TxKind.ENROLL_OWNER:
            self.enroll_owner(tx.profile)
            return tx, []
        if kind is TxKind.ENROLL_IC:
            seqs = [self.enroll_ic(tx.tokens[0])]
        elif kind is TxKind.UPDATE_STAGE:
            seqs = [self.update_stage(tx.tokens[0])]
        elif kind is TxKind.UPDATE_COMPOSITION:
            seqs = self.update_pid_or_edid(tx.tokens)
        elif kind is TxKind.TRANSFER:
            seqs = [self.transfer_ic(tx.tokens[0])]
        elif kind is TxKind.REPORT_DEFECT:
            seqs = [self.report_defective(tx.tokens[0])]
        else:  # pragma: no cover
            raise ValueError(kind)
        return Transaction(kind, tuple(self.tokens[s] for s in seqs)), seqs

    def submitted_tx(self, tx: Transaction) -> Transaction:
        """The transaction as its owner signed it, before the tracker's renumbering."""
        if tx.kind is TxKind.ENROLL_OWNER:
            return tx
        return Transaction(tx.kind, tuple(submitted_form(t, self.tokens) for t in tx.tokens))

    def apply_committed(self, tx: Transaction) -> list[int]:
        """Replay a transaction taken from a block; it must reproduce exactly."""
        result, seqs = self.apply(self.submitted_tx(tx))
        if result != tx:
            raise ReplayMismatch("committed tokens differ from their replay")
        return seqs

    def enroll_owner(self, profile: PublicProfile) -> None:
        if not profile.is_consistent():
            raise ProfileMismatch("publicID is not the hash of the public key")
        if profile.public_id in self.owndb:
            raise AlreadyEnrolled(profile.public_id.hex())
        self.owndb[profile.public_id] = OwnerEntry(True, profile, set())

    def enroll_ic(self, token: ICToken) -> int:
        token.validate()
        m = token.metadata
        if m.icid in self.icdb:
            raise DuplicateICID("can't re-enroll")
        entry = self.owndb.get(token.owner)
        if not self.verify_transaxn(entry, token):
            raise BadSignature("enrollment not signed by its owner")
        if m.stage != Stage.FABRICATION:
            raise WrongStage("enrollment must be at Fabrication")
        if m.status != Status.COMPLETED:
            raise WrongStatus("enrollment must be Completed")
        if m.pid is not None or m.edid is not None:
            raise NonEmptyComposition("new IC carries a PID/EDID")
        if m.prev_ver is not None or m.version != 0:
            raise BadVersion("new IC must be version 0 with no prevVer")
        seq = self._append(token)
        entry.assets.add(m.icid)
        return seq

    def update_stage(self, token: ICToken) -> int:
        token.validate()
        prev_seq, prev = self._live(token.icid)
        if not self.verify_transaxn(self.owndb.get(prev.owner), token):
            raise BadSignature("not signed by the current owner")
        if changed_fields(token, prev) - {"stage", "status"}:
            raise IllegalFieldChange(
                ", ".join(sorted(changed_fields(token, prev) - {"stage", "status"})))
        m, p = token.metadata, prev.metadata
        if m.stage < p.stage:
            raise StageRollback(f"{p.stage} -> {m.stage}")
        if m.status < p.status and not m.stage > p.stage:
            raise StatusRollback("status may only drop when stage advances")
        return self._append(self._next_version(token, prev, prev_seq))

    def update_pid_or_edid(self, tokens) -> list[int]:
        tokens = list(tokens)
        if not tokens:
            raise BatchInvalid("empty batch")
        for t in tokens:
            t.validate()
        icids = [t.icid for t in tokens]
        if len(set(icids)) != len(icids):
            raise BatchInvalid("duplicate ICID in batch")
        prevs = [self._live(icid) for icid in icids]
        for t, (_, prev) in zip(tokens, prevs):
            if not self.verify_transaxn(self.owndb.get(prev.owner), t):
                raise BadSignature("not signed by the current owner")
        if len({prev.owner for _, prev in prevs}) != 1:
            raise MixedOwners("batch spans several owners")
        for t, (_, prev) in zip(tokens, prevs):
            extra = changed_fields(t, prev) - {"pid", "edid"}
            if extra:
                raise IllegalFieldChange(", ".join(sorted(extra)))
        if any(prev.metadata.status != Status.COMPLETED for _, prev in prevs):
            raise InProgress("every IC must be Completed at its stage")

        metas = [t.metadata for t in tokens]
        prev_metas = [prev.metadata for _, prev in prevs]
        if all(m.edid is None for m in metas):
            pids = {m.pid for m in metas}
            if len(pids) != 1 or None in pids:
                raise BatchInvalid("tokens do not share one PID")
            pid = pids.pop()
            if any(m.stage != Stage.PCB_ASSEMBLY for m in metas):
                raise BatchInvalid("PID is set only at PCB assembly")
            if any(p.pid is not None or p.edid is not None for p in prev_metas):
                raise CompositionAlreadySet("an IC already belongs to a PCB")
            if pid != compute_pid(icids):
                raise MerkleMismatch("PID is not the merkle root of the batch ICIDs")
            registry, key, members = self.pcbdb, pid, list(icids)
        elif all(m.edid is not None for m in metas):
            edids = {m.edid for m in metas}
            if len(edids) != 1:
                raise BatchInvalid("tokens do not share one EDID")
            edid = edids.pop()
            if any(m.pid is None or m.pid != p.pid for m, p in zip(metas, prev_metas)):
                raise BatchInvalid("each IC must keep its existing PID")
            if any(m.stage != Stage.SYSTEM_INTEGRATION for m in metas):
                raise BatchInvalid("EDID is set only at system integration")
            if any(p.edid is not None for p in prev_metas):
                raise CompositionAlreadySet("an IC already belongs to a device")
            pids = list(dict.fromkeys(m.pid for m in metas))
            if edid != compute_edid(pids):
                raise MerkleMismatch("EDID is not the merkle root of the batch PIDs")
            registry, key, members = self.devdb, edid, pids
        else:
            raise BatchInvalid("invalid data")
        # versions are checked before any token is appended so the batch is atomic
        new = [self._next_version(t, prev, seq) for t, (seq, prev) in zip(tokens, prevs)]
        registry[key] = members
        return [self._append(t) for t in new]

    def transfer_ic(self, token: ICToken) -> int:
        token.validate()
        prev_seq, prev = self._live(token.icid)
        new_owner = self.owndb.get(token.owner)
        if new_owner is None or not new_owner.is_enrolled:
            raise NewOwnerNotEnrolled(token.owner.hex())
        if prev.metadata.status != Status.COMPLETED:
            raise InProgress("transfer requires a Completed stage")
        if not self.verify_transaxn(self.owndb.get(prev.owner), token):
            raise BadSignature("not signed by the current owner")
        diff = changed_fields(token, prev)
        if "key_hash" in diff:
            raise KeyTrailBroken("keyHash must carry over unchanged")
        if diff - {"key_encr", "owner"}:
            raise IllegalFieldChange(", ".join(sorted(diff - {"key_encr", "owner"})))
        seq = self._append(self._next_version(token, prev, prev_seq))
        self.owndb[prev.owner].assets.discard(token.icid)
        new_owner.assets.add(token.icid)
        return seq

    def report_defective(self, token: ICToken) -> int:
        token.validate()
        prev_seq, prev = self._live(token.icid)
        if token.owner != prev.owner:
            raise NotCurrentOwner("only the current owner may report a defect")
        if not self.verify_transaxn(self.owndb.get(prev.owner), token):
            raise BadSignature("not signed by the current owner")
        if changed_fields(token, prev) != {"is_defective"}:
            raise IllegalFieldChange("a defect report changes only isDefective")
        return self._append(self._next_version(token, prev, prev_seq))

    # helpers

    def _live(self, icid: bytes) -> tuple[int, ICToken]:
        if icid not in self.icdb:
            raise UnknownICID(icid.hex())
        seq = self.icdb[icid]
        prev = self.tokens[seq]
        if prev.metadata.is_defective:
            raise DefectiveToken("IC has been reported defective")
        return seq, prev

    @staticmethod
    def _next_version(token: ICToken, prev: ICToken, prev_seq: int) -> ICToken:
        if prev.metadata.version >= MAX_VERSION:
            raise BadVersion("version counter exhausted")
        return token.with_metadata(version=prev.metadata.version + 1, prev_ver=prev_seq)

    def _append(self, token: ICToken) -> int:
        seq = len(self.tokens)
        self.tokens.append(token)
        self.icdb[token.icid] = seq
        return seq


# chain verification

@dataclass
class ChainReport:
    ok: bool
    problems: list[str] = field(default_factory=list)
    first_bad_block: int | None = None
    state: NodeState | None = None

    def __bool__(self) -> bool:
        return self.ok


def _link_problems(i: int, block: Block, prev_hash: bytes, header, capacity) -> list[str]:
    problems = []
    if block.index != i:
        problems.append(f"block {i} carries index {block.index}")
    if block.prev_hash != prev_hash:
        problems.append(f"block {i} prevBlockHash does not link")
    problems += [f"block {i}: {p}" for p in header]
    if capacity is not None and block.weight > capacity:
        problems.append(f"block {i} exceeds capacity {capacity}")
    return problems


def _replay(blocks) -> ChainReport:
    state = NodeState()
    for i, block in enumerate(blocks):
        for j, tx in enumerate(block.txs):
            try:
                state.apply_committed(tx)
            except ICTokenError as exc:
                return ChainReport(False, [f"block {i} tx {j}: {type(exc).__name__}: {exc}"],
                                   i, None)
    return ChainReport(True, [], None, state)


def verify_chain(blocks, capacity: int | None = None) -> ChainReport:
    """Recheck hash links, roots and capacity, then replay every transaction.

    All hash checks run before any replay, so tampering is usually found
    without verifying a single signature.
    """
    blocks = list(blocks)
    prev_hash = ZERO_DIGEST
    for i, block in enumerate(blocks):
        problems = _link_problems(i, block, prev_hash, block.header_problems(), capacity)
        if problems:
            return ChainReport(False, problems, i, None)
        prev_hash = block.block_hash
    return _replay(blocks)


def verify_ledger_bytes(data: bytes, capacity: int | None = None,
                        cache: RecordCache | None = None) -> ChainReport:
    """Verify a stored ledger file exactly as read from disk."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        return ChainReport(False, [f"not UTF-8: {exc.reason}"],
                           data.count(b"\n", 0, exc.start), None)
    return verify_ledger_text(text, capacity, cache)


def verify_ledger_text(text: str, capacity: int | None = None,
                       cache: RecordCache | None = None) -> ChainReport:
    if text and not text.endswith("\n"):
        return ChainReport(False, ["ledger file must end with a newline"],
                           text.count("\n"), None)
    cache = cache if cache is not None else RecordCache()
    blocks, prev_hash = [], ZERO_DIGEST
    for i, line in enumerate(text.split("\n")[:-1] if text else []):
        try:
            block, header = cache.lookup(line)
        except LedgerFormatError as exc:
            return ChainReport(False, [f"block {i}: {exc}"], i, None)
        problems = _link_problems(i, block, prev_hash, header, capacity)
        if problems:
            return ChainReport(False, problems, i, None)
        blocks.append(block)
        prev_hash = block.block_hash
    return _replay(blocks)


def rebuild_state(blocks) -> NodeState:
    report = verify_chain(blocks)
    if not report.ok:
        raise ReplayMismatch("; ".join(report.problems))
    return report.state


# node

class Tracker:
    """A single ICtracker node: a ledger and the state derived from it."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self.ledger = Ledger(capacity)
        self.state = NodeState()

    @property
    def capacity(self) -> int:
        return self.ledger.capacity

    def execute(self, tx: Transaction) -> list[int]:
        if tx.weight > self.capacity:
            raise BatchInvalid("batch larger than block capacity")
        committed, seqs = self.state.apply(tx)
        self.ledger.append_tx(committed)
        return seqs

    def enroll_owner(self, profile: PublicProfile) -> None:
        self.execute(Transaction(TxKind.ENROLL_OWNER, profile=profile))

    def enroll_ic(self, token: ICToken) -> int:
        return self.execute(Transaction(TxKind.ENROLL_IC, (token,)))[0]

    def update_stage(self, token: ICToken) -> int:
        return self.execute(Transaction(TxKind.UPDATE_STAGE, (token,)))[0]

    def update_pid_or_edid(self, tokens) -> list[int]:
        return self.execute(Transaction(TxKind.UPDATE_COMPOSITION, tuple(tokens)))

    def transfer_ic(self, token: ICToken) -> int:
        return self.execute(Transaction(TxKind.TRANSFER, (token,)))[0]

    def report_defective(self, token: ICToken) -> int:
        return self.execute(Transaction(TxKind.REPORT_DEFECT, (token,)))[0]

    def flush(self) -> Block | None:
        return self.ledger.seal()

    # queries, mirrored by the consensus network

    def latest(self, icid: bytes) -> ICToken:
        return self.state.latest(icid)

    def assets_of(self, public_id: bytes) -> set[bytes]:
        return self.state.assets_of(public_id)

    def profile(self, public_id: bytes) -> PublicProfile | None:
        return self.state.profile(public_id)

    def trace_history(self, icid: bytes) -> list[ICToken]:
        return self.state.trace_history(icid)

    def verify_chain(self) -> ChainReport:
        self.flush()
        return verify_chain(self.ledger.blocks, self.capacity)

    def ledger_text(self) -> str:
        self.flush()
        return self.ledger.to_text()

    def save(self, path: str | Path) -> None:
        self.flush()
        self.ledger.save(path)

    @classmethod
    def load(cls, path: str | Path, capacity: int = DEFAULT_CAPACITY) -> "Tracker":
        path = Path(path)
        node = cls(capacity)
        if not path.exists():
            return node
        text = path.read_text()
        blocks = parse_ledger_text(text)
        report = verify_chain(blocks, capacity)
        if not report.ok:
            raise ReplayMismatch("; ".join(report.problems))
        node.ledger.blocks = list(blocks)
        node.state = report.state
        return node


# invariant suite

def check_invariants(state: NodeState, blocks=None) -> dict[str, list[str]]:
    """Name -> list of violations (empty list means the invariant holds)."""
    out: dict[str, list[str]] = {
        "version_chain": [], "icdb_latest": [], "stage_monotone": [],
        "composition_once": [], "asset_partition": [], "signatures": [],
    }
    latest_by_version: dict[bytes, int] = {}
    for seq, t in enumerate(state.tokens):
        m = t.metadata
        if m.prev_ver is not None and not m.prev_ver < seq:
            out["version_chain"].append(f"seq {seq}: prevVer {m.prev_ver} not earlier")
        best = latest_by_version.get(t.icid)
        if best is None or m.version > state.tokens[best].metadata.version:
            latest_by_version[t.icid] = seq
        if not state.verify_committed(t):
            out["signatures"].append(f"seq {seq}: signature does not verify")
    if latest_by_version != state.icdb:
        out["icdb_latest"].append("icdb does not point at the highest versions")

    owners_of: dict[bytes, list[bytes]] = {}
    for pid, entry in state.owndb.items():
        for icid in entry.assets:
            owners_of.setdefault(icid, []).append(pid)
    for icid, seq in state.icdb.items():
        label = icid.hex()[:12]
        history = state.trace_history(icid)[::-1]
        for k, t in enumerate(history):
            if t.metadata.version != k:
                out["version_chain"].append(
                    f"{label}: version {t.metadata.version} at position {k}")
        for a, b in zip(history, history[1:]):
            ma, mb = a.metadata, b.metadata
            if (mb.stage, mb.status) < (ma.stage, ma.status) and not mb.stage > ma.stage:
                out["stage_monotone"].append(f"{label}: v{mb.version} moves backwards")
            if mb.stage < ma.stage:
                out["stage_monotone"].append(f"{label}: v{mb.version} lowers stage")
            for name in ("pid", "edid"):
                before, after = getattr(ma, name), getattr(mb, name)
                if before is not None and before != after:
                    out["composition_once"].append(f"{label}: {name} changed at v{mb.version}")
            if mb.edid is not None and mb.pid is None:
                out["composition_once"].append(f"{label}: edid without pid")
        owner = state.tokens[seq].owner
        holders = owners_of.get(icid, [])
        if holders != [owner]:
            out["asset_partition"].append(f"{label}: held by {len(holders)} owners")
    if blocks is not None:
        out["rebuild"] = []
        try:
            rebuilt = rebuild_state(blocks)
        except ReplayMismatch as exc:
            out["rebuild"].append(str(exc))
        else:
            if rebuilt.snapshot() != state.snapshot():
                out["rebuild"].append("state rebuilt from genesis differs from live state")
    return out
