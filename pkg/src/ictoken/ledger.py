"""Transactions, hash-chained blocks and the line-delimited ledger file."""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .crypto import ZERO_DIGEST, PublicProfile, load_public_key, merkle_root, sha256
from .errors import MalformedToken
from .token_model import ICToken, encode, from_text, to_text

DEFAULT_CAPACITY = 16


class TxKind(str, Enum):
    ENROLL_OWNER = "enrollOwner"
    ENROLL_IC = "enrollIC"
    UPDATE_STAGE = "updateStage"
    UPDATE_COMPOSITION = "updatePIDorEDID"
    TRANSFER = "transferIC"
    REPORT_DEFECT = "reportDefective"


_KIND_CODE = {kind: i for i, kind in enumerate(TxKind)}


@dataclass(frozen=True)
class Transaction:
    """One service request. Blocks hold the committed form of each token."""

    kind: TxKind
    tokens: tuple[ICToken, ...] = ()
    profile: PublicProfile | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TxKind(self.kind))
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.kind is TxKind.ENROLL_OWNER:
            if self.profile is None or self.tokens:
                raise ValueError("enrollOwner carries exactly one profile")
        elif self.profile is not None:
            raise ValueError(f"{self.kind.value} carries no profile")
        elif self.kind is not TxKind.UPDATE_COMPOSITION and len(self.tokens) != 1:
            raise ValueError(f"{self.kind.value} carries exactly one token")

    @property
    def weight(self) -> int:
        return max(1, len(self.tokens))

    def body(self) -> bytes:
        head = bytes([_KIND_CODE[self.kind]])
        if self.profile is not None:
            return head + self.profile.public_id + self.profile.key_bytes()
        return head + b"".join(encode(t) for t in self.tokens)

    @property
    def txid(self) -> bytes:
        return sha256(self.body())

    def to_json(self) -> dict:
        if self.profile is not None:
            return {"kind": self.kind.value,
                    "publicID": self.profile.public_id.hex(),
                    "publicKey": self.profile.key_bytes().hex()}
        return {"kind": self.kind.value, "tokens": [to_text(t) for t in self.tokens]}

    @classmethod
    def from_json(cls, obj: dict) -> "Transaction":
        kind = TxKind(obj["kind"])
        if kind is TxKind.ENROLL_OWNER:
            profile = PublicProfile(bytes.fromhex(obj["publicID"]),
                                    load_public_key(bytes.fromhex(obj["publicKey"])))
            return cls(kind, profile=profile)
        return cls(kind, tuple(from_text(t) for t in obj["tokens"]))


def tx_leaf(position: int, tx: Transaction) -> bytes:
    return sha256(position.to_bytes(4, "big") + tx.body())


def compute_token_root(txs) -> bytes:
    return merkle_root([tx_leaf(i, tx) for i, tx in enumerate(txs)])


def compute_block_hash(index: int, prev_hash: bytes, token_root: bytes) -> bytes:
    return sha256(index.to_bytes(8, "big") + prev_hash + token_root)


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]
    token_root: bytes
    block_hash: bytes

    @classmethod
    def seal(cls, index: int, prev_hash: bytes, txs) -> "Block":
        txs = tuple(txs)
        if not txs:
            raise ValueError("a block holds at least one transaction")
        root = compute_token_root(txs)
        return cls(index, prev_hash, txs, root, compute_block_hash(index, prev_hash, root))

    @property
    def weight(self) -> int:
        return sum(tx.weight for tx in self.txs)

    @property
    def token_count(self) -> int:
        return sum(len(tx.tokens) for tx in self.txs)

    def header_problems(self) -> list[str]:
        problems = []
        if not self.txs:
            problems.append("empty block")
            return problems
        if compute_token_root(self.txs) != self.token_root:
            problems.append("tokenRoot does not match contents")
        if compute_block_hash(self.index, self.prev_hash, self.token_root) != self.block_hash:
            problems.append("blockHash does not match header")
        return problems

    def to_line(self) -> str:
        return json.dumps({
            "index": self.index,
            "prevBlockHash": self.prev_hash.hex(),
            "tokenRoot": self.token_root.hex(),
            "blockHash": self.block_hash.hex(),
            "txs": [tx.to_json() for tx in self.txs],
        }, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> "Block":
        """Parse one ledger record; stored hashes are kept, not recomputed."""
        try:
            obj = json.loads(line)
            block = cls(
                int(obj["index"]),
                bytes.fromhex(obj["prevBlockHash"]),
                tuple(Transaction.from_json(t) for t in obj["txs"]),
                bytes.fromhex(obj["tokenRoot"]),
                bytes.fromhex(obj["blockHash"]),
            )
        except (ValueError, KeyError, TypeError, AttributeError, MalformedToken) as exc:
            raise LedgerFormatError(f"unparseable block record: {exc}") from None
        if block.to_line() != line:
            raise LedgerFormatError("non-canonical block record")
        return block


class LedgerFormatError(ValueError):
    pass


@dataclass
class Ledger:
    """Append-only chain of sealed blocks plus the open block being filled."""

    capacity: int = DEFAULT_CAPACITY
    blocks: list[Block] = field(default_factory=list)
    open_txs: list[Transaction] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("block capacity must be positive")

    @property
    def head_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else ZERO_DIGEST

    @property
    def height(self) -> int:
        return len(self.blocks)

    @property
    def open_weight(self) -> int:
        return sum(tx.weight for tx in self.open_txs)

    def append_tx(self, tx: Transaction) -> None:
        if tx.weight > self.capacity:
            raise ValueError("transaction exceeds block capacity")
        if self.open_weight + tx.weight > self.capacity:
            self.seal()
        self.open_txs.append(tx)
        if self.open_weight == self.capacity:
            self.seal()

    def seal(self) -> Block | None:
        if not self.open_txs:
            return None
        block = Block.seal(self.height, self.head_hash, self.open_txs)
        self.blocks.append(block)
        self.open_txs = []
        return block

    def append_block(self, block: Block) -> None:
        if self.open_txs:
            raise ValueError("cannot append a block while one is open")
        if block.index != self.height or block.prev_hash != self.head_hash:
            raise ValueError("block does not extend the head")
        self.blocks.append(block)

    def committed_txs(self):
        for block in self.blocks:
            yield from block.txs
        yield from self.open_txs

    def to_text(self) -> str:
        return "".join(b.to_line() + "\n" for b in self.blocks)

    def save(self, path: str | Path) -> None:
        """Append the blocks not yet in ``path``; existing records are never rewritten."""
        path = Path(path)
        existing = path.read_text().splitlines() if path.exists() else []
        ours = [b.to_line() for b in self.blocks]
        if existing != ours[:len(existing)]:
            raise LedgerFormatError(f"{path} is not a prefix of this ledger")
        with path.open("a") as fh:
            for line in ours[len(existing):]:
                fh.write(line + "\n")


class RecordCache:
    """Parsed records and their header check, keyed by the exact record text.

    Re-verifying a file whose records are mostly unchanged then costs one
    parse per changed record. Any edit to a record changes its key, so a
    cache hit can only ever return what a fresh parse would. Least recently
    used entries are dropped beyond ``maxsize``.
    """

    def __init__(self, maxsize: int = 4096):
        self.maxsize = maxsize
        self._entries: OrderedDict[str, tuple[Block, tuple[str, ...]]] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, line: str) -> tuple[Block, tuple[str, ...]]:
        """(block, header problems); raises LedgerFormatError for bad records."""
        entry = self._entries.get(line)
        if entry is not None:
            self._entries.move_to_end(line)
            return entry
        block = Block.from_line(line)
        entry = (block, tuple(block.header_problems()))
        self._entries[line] = entry
        if len(self._entries) > self.maxsize:
            self._entries.popitem(last=False)
        return entry


def parse_ledger_text(text: str) -> list[Block]:
    if text and not text.endswith("\n"):
        raise LedgerFormatError("ledger file must end with a newline")
    return [Block.from_line(line) for line in text.split("\n")[:-1]] if text else []
