"""Seeded transaction workload for exercising a consensus network.

Each round the generator draws a few valid transactions from the committed
state (enrollments, stage steps, transfers) and a few that must be rejected
(duplicate enrollment, transfer to an unenrolled stranger, corrupted
signature, stage rollback), submits them all, and runs one round. It never
touches an IC that still has a valid transaction in flight, so every valid
transaction stays valid until it commits.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .consensus import Network
from .ledger import Transaction, TxKind
from .token_model import Stage, Status
from .wallet import Wallet

INVALID_KINDS = ("duplicate", "stranger", "badsig", "rollback")


@dataclass
class WorkloadConfig:
    owners: int = 5
    valid_per_round: int = 3
    invalid_per_round: int = 1
    seed: int = 0


@dataclass
class WorkloadStats:
    rounds: int = 0
    valid_submitted: int = 0
    invalid_submitted: int = 0
    committed: int = 0
    max_latency: int = 0
    latencies: list[int] = field(default_factory=list)


class Workload:
    def __init__(self, network: Network, config: WorkloadConfig | None = None):
        self.network = network
        self.config = config or WorkloadConfig()
        self.rng = random.Random(f"ictoken-workload:{self.config.seed}")
        self.wallets: list[Wallet] = []
        self.stranger: Wallet | None = None
        self.uids: list[str] = []
        self.pending: dict[bytes, tuple[int, bytes | None]] = {}  # txid -> (round, icid)
        self.valid: set[bytes] = set()
        self.invalid: dict[bytes, str] = {}
        self.stats = WorkloadStats()

    def setup(self) -> None:
        seed = self.config.seed
        for i in range(self.config.owners):
            wallet = Wallet.create("distributor", seed=f"workload:{seed}:{i}", tracker=self.network)
            txid = Transaction(TxKind.ENROLL_OWNER, profile=wallet.profile).txid
            wallet.enroll()
            self.valid.add(txid)
            self.wallets.append(wallet)
        self.stranger = Wallet.create("end-user", seed=f"workload:{seed}:stranger")

    # generation

    def _sync(self) -> None:
        for w in self.wallets:
            w.sync_assets()

    def _busy(self) -> set[bytes]:
        return {icid for _, icid in self.pending.values() if icid is not None}

    def _held(self, busy):
        """(wallet, token) pairs for every idle IC, in a stable order."""
        out = []
        for w in self.wallets:
            for icid in sorted(w.held):
                if icid not in busy:
                    out.append((w, w.held[icid]))
        return out

    def _new_uid(self) -> str:
        uid = f"wl-{self.config.seed}-{len(self.uids)}-{self.rng.getrandbits(32):08x}"
        self.uids.append(uid)
        return uid

    def _valid_tx(self, busy) -> tuple[Transaction, bytes | None]:
        r = self.rng
        candidates = self._held(busy)
        choice = r.random()
        if candidates and choice < 0.7:
            w, token = r.choice(candidates)
            m = token.metadata
            if choice < 0.35 and not (m.stage == Stage.END_USER and m.status == Status.COMPLETED):
                if m.status == Status.IN_PROGRESS:
                    stage, status = m.stage, Status.COMPLETED
                else:
                    stage, status = m.stage + 1, Status.IN_PROGRESS
                tok = w.build_stage_update(token.icid, stage, status)
                return Transaction(TxKind.UPDATE_STAGE, (tok,)), token.icid
            if m.status == Status.COMPLETED:
                to = r.choice([x for x in self.wallets if x is not w])
                tok = w.build_transfer(token.icid, to.profile)
                return Transaction(TxKind.TRANSFER, (tok,)), token.icid
        w = r.choice(self.wallets)
        tok = w.build_enrollment(self._new_uid(), f"MK-{r.getrandbits(24):06x}", r.randbytes(32))
        return Transaction(TxKind.ENROLL_IC, (tok,)), tok.icid

    def _invalid_tx(self, kind: str) -> Transaction | None:
        r = self.rng
        candidates = self._held(set())
        if kind == "duplicate" and self.uids:
            w = r.choice(self.wallets)
            tok = w.build_enrollment(r.choice(self.uids), "MK-dup", r.randbytes(32))
            return Transaction(TxKind.ENROLL_IC, (tok,))
        if not candidates:
            return None
        w, token = r.choice(candidates)
        m = token.metadata
        if kind == "stranger":
            if m.status != Status.COMPLETED:
                return None
            tok = w.build_transfer(token.icid, self.stranger.profile)
            return Transaction(TxKind.TRANSFER, (tok,))
        if kind == "badsig":
            tok = w.build_stage_update(token.icid, m.stage, Status.COMPLETED)
            sig = bytearray(tok.trnsaxn_id)
            sig[r.randrange(len(sig))] ^= 1 << r.randrange(8)
            return Transaction(TxKind.UPDATE_STAGE, (replace(tok, trnsaxn_id=bytes(sig)),))
        if kind == "rollback" and m.stage > Stage.FABRICATION:
            tok = w.build_stage_update(token.icid, m.stage - 1, Status.COMPLETED)
            return Transaction(TxKind.UPDATE_STAGE, (tok,))
        return None

    # driving

    def step(self):
        """Submit one round's worth of transactions and run the round."""
        self._sync()
        busy = self._busy()
        round_no = self.network.round
        for _ in range(self.config.valid_per_round):
            tx, icid = self._valid_tx(busy)
            if icid is not None:
                busy.add(icid)
            self.pending[self.network.submit(tx)] = (round_no, icid)
            self.valid.add(tx.txid)
            self.stats.valid_submitted += 1
        for _ in range(self.config.invalid_per_round):
            tx = self._invalid_tx(self.rng.choice(INVALID_KINDS))
            if tx is not None and tx.txid not in self.valid:
                self.network.submit(tx)
                self.invalid[tx.txid] = tx.kind.value
                self.stats.invalid_submitted += 1
        block = self.network.run_round()
        self._collect()
        self.stats.rounds += 1
        return block

    def _collect(self) -> None:
        committed = self.network.reference.committed
        now = self.network.round
        for txid in [t for t in self.pending if t in committed]:
            submitted, _ = self.pending.pop(txid)
            latency = now - submitted
            self.stats.committed += 1
            self.stats.latencies.append(latency)
            self.stats.max_latency = max(self.stats.max_latency, latency)

    def run(self, rounds: int) -> WorkloadStats:
        if not self.wallets:
            self.setup()
        for _ in range(rounds):
            self.step()
        return self.stats

    def drain(self, max_rounds: int = 8) -> None:
        """Run empty rounds until nothing valid is left in flight."""
        for _ in range(max_rounds):
            if not self.pending:
                return
            self.network.run_round()
            self._collect()

    def overdue(self, limit: int) -> list[bytes]:
        """Pending transactions older than ``limit`` rounds."""
        now = self.network.round
        return [t for t, (r, _) in self.pending.items() if now - r > limit]
