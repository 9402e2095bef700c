"""Deterministic consortium network: round-robin leaders and quorum votes.

Each round the leader filters its pending pool against its committed state,
proposes a block of the transactions that pass, and every node re-validates
the block independently before voting. A block commits on every node iff it
gathers ``quorum`` accepting votes. Rounds are synchronous and the whole
simulation is a pure function of (config, seed, submission sequence).
"""
from __future__ import annotations

import logging
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .errors import BatchInvalid, ICTokenError, Rejected, SafetyViolation
from .ledger import DEFAULT_CAPACITY, Block, Transaction, TxKind
from .token_model import ICKeyBox, ICMetadata, ICToken
from .tracker import Tracker

log = logging.getLogger(__name__)


class Behavior(str, Enum):
    HONEST = "honest"
    PROPOSE_INVALID = "proposeInvalid"
    VOTE_RANDOM = "voteRandom"
    EQUIVOCATE = "equivocate"


@dataclass
class NetworkConfig:
    node_count: int = 4
    quorum: int | None = None
    capacity: int = DEFAULT_CAPACITY
    seed: int = 0
    parallel: bool = False

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be at least 1")
        if self.quorum is None:
            self.quorum = 2 * self.node_count // 3 + 1
        if not 1 <= self.quorum <= self.node_count:
            raise ValueError("quorum must lie in [1, node_count]")

    def leader(self, round_no: int) -> int:
        return round_no % self.node_count


@dataclass(frozen=True)
class Proposal:
    round: int
    leader: int
    block: Block


@dataclass(frozen=True)
class Vote:
    round: int
    voter: int
    block_hash: bytes
    accept: bool


@dataclass
class RoundTrace:
    round: int
    leader: int
    proposals: list[bytes]
    votes: list[Vote]
    committed: bytes | None

    def log_line(self) -> str:
        votes = ",".join(f"{v.voter}:{v.block_hash.hex()[:8]}:{'+' if v.accept else '-'}"
                         for v in self.votes)
        props = ",".join(h.hex()[:16] for h in self.proposals) or "-"
        commit = self.committed.hex()[:16] if self.committed else "none"
        return (f"round={self.round} leader={self.leader} proposals={props} "
                f"votes={votes or '-'} commit={commit}")


class Node:
    def __init__(self, index: int, capacity: int):
        self.index = index
        self.tracker = Tracker(capacity)
        self.pool: list[Transaction] = []
        self.behavior = Behavior.HONEST
        self.committed: dict[bytes, list[int]] = {}

    @property
    def honest(self) -> bool:
        return self.behavior is Behavior.HONEST

    @property
    def state(self):
        return self.tracker.state

    @property
    def ledger(self):
        return self.tracker.ledger

    def filter_pool(self):
        """Run the pool in order against a scratch state; drop what fails.

        Returns (accepted committed-form transactions, [(tx, error), ...]).
        """
        scratch = self.state.copy()
        kept, accepted, rejected = [], [], []
        for tx in self.pool:
            try:
                if tx.weight > self.tracker.capacity:
                    raise BatchInvalid("batch larger than block capacity")
                committed, _ = scratch.apply(tx)
            except ICTokenError as exc:
                rejected.append((tx, exc))
                continue
            kept.append(tx)
            accepted.append(committed)
        self.pool = kept
        return accepted, rejected

    def validate_block(self, block: Block) -> bool:
        return self._replay(block) is not None

    def _replay(self, block: Block):
        if block.index != self.ledger.height or block.prev_hash != self.ledger.head_hash:
            return None
        if block.header_problems() or block.weight > self.tracker.capacity:
            return None
        scratch = self.state.copy()
        done = {}
        try:
            for tx in block.txs:
                txid = scratch.submitted_tx(tx).txid
                done[txid] = scratch.apply_committed(tx)
        except ICTokenError:
            return None
        return scratch, done

    def commit(self, block: Block) -> bool:
        replay = self._replay(block)
        if replay is None:
            log.warning("node %d refuses certified block %s",
                        self.index, block.block_hash.hex()[:16])
            return False
        scratch, done = replay
        self.tracker.ledger.append_block(block)
        self.tracker.state = scratch
        self.committed.update(done)
        self.pool = [tx for tx in self.pool if tx.txid not in done]
        return True


class Network:
    def __init__(self, config: NetworkConfig | None = None):
        self.config = config or NetworkConfig()
        self.nodes = [Node(i, self.config.capacity) for i in range(self.config.node_count)]
        self.round = 0
        self.traces: list[RoundTrace] = []
        self.rejections: dict[bytes, Rejected] = {}
        self.rng = random.Random(f"ictoken-network:{self.config.seed}")

    # configuration

    def inject_byzantine(self, index: int, behavior) -> Node:
        node = self.nodes[index]
        node.behavior = Behavior(behavior)
        return node

    @property
    def honest_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.honest]

    @property
    def reference(self) -> Node:
        honest = self.honest_nodes
        if not honest:
            raise RuntimeError("no honest node left to answer queries")
        return honest[0]

    # transactions

    def submit(self, tx: Transaction) -> bytes:
        for node in self.nodes:
            node.pool.append(tx)
        return tx.txid

    def run_round(self) -> Block | None:
        cfg = self.config
        round_no = self.round
        self.round += 1
        leader = self.nodes[cfg.leader(round_no)]

        accepted = {}
        for node in self.nodes:
            ok, bad = node.filter_pool()
            accepted[node.index] = ok
            if node is self.reference:
                for tx, exc in bad:
                    self.rejections.setdefault(tx.txid, exc)

        received = self._proposals(round_no, leader, accepted[leader.index])
        votes = self._votes(round_no, leader, received)

        tally: dict[bytes, set[int]] = {}
        for v in votes:
            if v.accept:
                tally.setdefault(v.block_hash, set()).add(v.voter)
        winners = [h for h, voters in tally.items() if len(voters) >= cfg.quorum]
        if len(winners) > 1:
            raise SafetyViolation(f"round {round_no}: {len(winners)} blocks reached quorum")

        committed = None
        if winners:
            blocks = {p.block.block_hash: p.block for p in received.values()}
            committed = blocks[winners[0]]
            for node in self.nodes:
                node.commit(committed)

        distinct = list(dict.fromkeys(p.block.block_hash for p in received.values()))
        trace = RoundTrace(round_no, leader.index, distinct, votes,
                           committed.block_hash if committed else None)
        self.traces.append(trace)
        log.info(trace.log_line())
        return committed

    def run(self, rounds: int) -> list[Block | None]:
        return [self.run_round() for _ in range(rounds)]

    def _candidate(self, leader: Node, accepted) -> list[Transaction]:
        txs, weight = [], 0
        for tx in accepted:
            if weight + tx.weight > self.config.capacity:
                break
            txs.append(tx)
            weight += tx.weight
        return txs

    def _junk_tx(self) -> Transaction:
        r = self.rng
        token = ICToken(ICMetadata(icid=r.randbytes(32), mark_hash=r.randbytes(32)),
                        ICKeyBox(r.randbytes(256), r.randbytes(32)),
                        r.randbytes(32), r.randbytes(256))
        return Transaction(TxKind.ENROLL_IC, (token,))

    def _proposals(self, round_no: int, leader: Node, accepted) -> dict[int, Proposal]:
        """Which proposal each node receives this round (absent: none)."""
        height, head = leader.ledger.height, leader.ledger.head_hash
        txs = self._candidate(leader, accepted)

        def make(body):
            return Proposal(round_no, leader.index, Block.seal(height, head, body))

        behavior = leader.behavior
        if behavior is Behavior.PROPOSE_INVALID:
            prop = make(txs + [self._junk_tx()])
            return {n.index: prop for n in self.nodes}
        if behavior is Behavior.EQUIVOCATE:
            first = make(txs or [self._junk_tx()])
            second = make(txs[:-1] if len(txs) > 1 else txs + [self._junk_tx()])
            return {n.index: (first if n.index % 2 == 0 else second) for n in self.nodes}
        if not txs:
            return {}
        prop = make(txs)
        return {n.index: prop for n in self.nodes}

    def _votes(self, round_no: int, leader: Node, received: dict[int, Proposal]) -> list[Vote]:
        if not received:
            return []
        # random draws happen in node order so results never depend on scheduling
        draws = {n.index: self.rng.random() for n in self.nodes
                 if n.behavior is Behavior.VOTE_RANDOM and n.index in received}
        honest = [n for n in self.nodes if n.honest and n.index in received]
        if self.config.parallel and len(honest) > 1:
            workers = min(len(honest), os.cpu_count() or 1)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                verdicts = dict(zip((n.index for n in honest),
                                    pool.map(lambda n: n.validate_block(received[n.index].block),
                                             honest)))
        else:
            verdicts = {n.index: n.validate_block(received[n.index].block) for n in honest}

        votes = []
        for node in self.nodes:
            if node.index not in received:
                continue
            prop = received[node.index]
            if node.honest:
                accept = verdicts[node.index]
            elif node.behavior is Behavior.VOTE_RANDOM:
                accept = draws[node.index] < 0.5
            else:
                accept = True
            if node is leader and node.behavior is Behavior.EQUIVOCATE:
                for h in dict.fromkeys(p.block.block_hash for p in received.values()):
                    votes.append(Vote(round_no, node.index, h, True))
                continue
            votes.append(Vote(round_no, node.index, prop.block.block_hash, accept))
        return votes

    # harness / wallet endpoint

    def execute(self, tx: Transaction, max_rounds: int | None = None) -> list[int]:
        """Submit ``tx`` and run rounds until it commits or is rejected."""
        txid = self.submit(tx)
        for _ in range(max_rounds or 2 * self.config.node_count):
            self.run_round()
            if txid in self.reference.committed:
                return self.reference.committed[txid]
            if txid in self.rejections:
                raise self.rejections[txid]
        raise TimeoutError(f"transaction {txid.hex()[:16]} did not commit")

    def latest(self, icid: bytes):
        return self.reference.tracker.latest(icid)

    def assets_of(self, public_id: bytes):
        return self.reference.tracker.assets_of(public_id)

    def profile(self, public_id: bytes):
        return self.reference.tracker.profile(public_id)

    def trace_history(self, icid: bytes):
        return self.reference.tracker.trace_history(icid)

    @property
    def state(self):
        return self.reference.state

    @property
    def ledger(self):
        return self.reference.ledger

    def ledger_text(self) -> str:
        return self.reference.ledger.to_text()

    # comparison

    def compare_chains(self, nodes=None) -> "ChainComparison":
        return compare_chains(nodes if nodes is not None else self.honest_nodes)


@dataclass
class ChainComparison:
    identical: bool
    first_divergence: int | None = None
    heights: dict[int, int] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.identical


def compare_chains(nodes) -> ChainComparison:
    """True iff every node's ledger is bytewise identical to the first one's."""
    nodes = list(nodes)
    lines = {n.index: [b.to_line() for b in n.ledger.blocks] for n in nodes}
    heights = {i: len(v) for i, v in lines.items()}
    if not nodes:
        return ChainComparison(True, None, heights)
    ref = lines[nodes[0].index]
    first = None
    for other in list(lines.values())[1:]:
        for i in range(max(len(ref), len(other))):
            if i >= len(ref) or i >= len(other) or ref[i] != other[i]:
                first = i if first is None else min(first, i)
                break
    return ChainComparison(first is None, first, heights)
