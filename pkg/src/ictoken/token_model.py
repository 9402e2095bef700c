"""ICtoken record, its fixed 714-byte wire image and identifier constructors.

Layout (big-endian, absent optional fields are all-zero)::

    icid(32) pid(32) edid(32) markHash(32) flags(1) prevVer(8) version(1)
    keyEncr(256) keyHash(32) owner(32) trnsaxnID(256)

flags, most significant bit first: stage(3) status(1) isDefective(1) pad(3).
prevVer is absent exactly when version == 0, which keeps the image injective
even though sequence index 0 is a legal prevVer value.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, fields, replace
from enum import IntEnum

from .crypto import (CIPHERTEXT_SIZE, DIGEST_SIZE, SIGNATURE_SIZE, ZERO_DIGEST,
                     merkle_root, sha256)
from .errors import EmptyIdentifier, MalformedToken


class Stage(IntEnum):
    FABRICATION = 1
    PCB_ASSEMBLY = 2
    SYSTEM_INTEGRATION = 3
    END_USER = 4


class Status(IntEnum):
    IN_PROGRESS = 0
    COMPLETED = 1


_LAYOUT = struct.Struct(">32s32s32s32sBQB256s32s32s256s")
TOKEN_SIZE = _LAYOUT.size
PAYLOAD_SIZE = TOKEN_SIZE - SIGNATURE_SIZE
MAX_VERSION = 0xFF
MAX_SEQ = 2**64 - 1

# (name, bytes) per wire field, in order; the flag byte packs three fields
FIELD_SIZES = (
    ("icid", 32), ("pid", 32), ("edid", 32), ("markHash", 32), ("flags", 1),
    ("prevVer", 8), ("version", 1), ("keyEncr", 256), ("keyHash", 32),
    ("ownerPublicID", 32), ("trnsaxnID", 256),
)

STAGE_SHIFT = 5
STATUS_BIT = 0x10
DEFECTIVE_BIT = 0x08
PAD_MASK = 0x07

ZERO_SIGNATURE = bytes(SIGNATURE_SIZE)


@dataclass(frozen=True)
class ICMetadata:
    icid: bytes
    mark_hash: bytes
    stage: Stage = Stage.FABRICATION
    status: Status = Status.COMPLETED
    pid: bytes | None = None
    edid: bytes | None = None
    prev_ver: int | None = None
    version: int = 0
    is_defective: bool = False

    def validate(self) -> None:
        for name in ("icid", "mark_hash"):
            _need_digest(name, getattr(self, name))
        for name in ("pid", "edid"):
            value = getattr(self, name)
            if value is not None:
                _need_digest(name, value)
                if value == ZERO_DIGEST:
                    raise MalformedToken(f"{name} may not be the all-zero digest")
        if self.stage not in (1, 2, 3, 4):
            raise MalformedToken(f"stage {self.stage!r} out of range")
        if self.status not in (0, 1):
            raise MalformedToken(f"status {self.status!r} out of range")
        if not isinstance(self.is_defective, bool):
            raise MalformedToken("isDefective must be a bool")
        if not isinstance(self.version, int) or not 0 <= self.version <= MAX_VERSION:
            raise MalformedToken(f"version {self.version!r} out of range")
        if (self.version == 0) != (self.prev_ver is None):
            raise MalformedToken("prevVer must be absent exactly when version is 0")
        if self.prev_ver is not None and not 0 <= self.prev_ver <= MAX_SEQ:
            raise MalformedToken("prevVer out of range")
        if self.edid is not None and self.pid is None:
            raise MalformedToken("edid requires pid")


@dataclass(frozen=True)
class ICKeyBox:
    key_encr: bytes
    key_hash: bytes


@dataclass(frozen=True)
class ICToken:
    metadata: ICMetadata
    key: ICKeyBox
    owner: bytes
    trnsaxn_id: bytes = ZERO_SIGNATURE

    @property
    def icid(self) -> bytes:
        return self.metadata.icid

    def with_metadata(self, **changes) -> "ICToken":
        return replace(self, metadata=replace(self.metadata, **changes))

    def with_key(self, **changes) -> "ICToken":
        return replace(self, key=replace(self.key, **changes))

    def validate(self) -> None:
        self.metadata.validate()
        if len(self.key.key_encr) != CIPHERTEXT_SIZE:
            raise MalformedToken("keyEncr must be 256 bytes")
        _need_digest("key_hash", self.key.key_hash)
        _need_digest("owner", self.owner)
        if len(self.trnsaxn_id) != SIGNATURE_SIZE:
            raise MalformedToken("trnsaxnID must be 256 bytes")


def _need_digest(name: str, value) -> None:
    if not isinstance(value, bytes) or len(value) != DIGEST_SIZE:
        raise MalformedToken(f"{name} must be {DIGEST_SIZE} bytes")


def encode(token: ICToken) -> bytes:
    token.validate()
    m = token.metadata
    flags = (int(m.stage) << STAGE_SHIFT) | (STATUS_BIT if m.status else 0) \
        | (DEFECTIVE_BIT if m.is_defective else 0)
    return _LAYOUT.pack(
        m.icid, m.pid or ZERO_DIGEST, m.edid or ZERO_DIGEST, m.mark_hash,
        flags, m.prev_ver or 0, m.version,
        token.key.key_encr, token.key.key_hash, token.owner, token.trnsaxn_id,
    )


def decode(data: bytes) -> ICToken:
    if len(data) != TOKEN_SIZE:
        raise MalformedToken(f"expected {TOKEN_SIZE} bytes, got {len(data)}")
    (icid, pid, edid, mark, flags, prev_ver, version,
     key_encr, key_hash, owner, sig) = _LAYOUT.unpack(data)
    if flags & PAD_MASK:
        raise MalformedToken("nonzero padding bits in flags")
    stage = flags >> STAGE_SHIFT
    if stage not in (1, 2, 3, 4):
        raise MalformedToken(f"stage {stage} out of range")
    if version == 0 and prev_ver != 0:
        raise MalformedToken("version 0 with a prevVer link")
    token = ICToken(
        ICMetadata(
            icid=icid,
            mark_hash=mark,
            stage=Stage(stage),
            status=Status(1 if flags & STATUS_BIT else 0),
            pid=None if pid == ZERO_DIGEST else pid,
            edid=None if edid == ZERO_DIGEST else edid,
            prev_ver=prev_ver if version else None,
            version=version,
            is_defective=bool(flags & DEFECTIVE_BIT),
        ),
        ICKeyBox(key_encr, key_hash),
        owner,
        sig,
    )
    token.validate()
    return token


def signing_payload(token: ICToken) -> bytes:
    """Everything but the signature: the bytes an owner signs."""
    return encode(token)[:PAYLOAD_SIZE]


# comparison helpers used by the tracker

TOKEN_FIELDS = (
    "icid", "pid", "edid", "mark_hash", "stage", "status", "prev_ver",
    "version", "is_defective", "key_encr", "key_hash", "owner",
)


def field_values(token: ICToken) -> dict:
    values = {f.name: getattr(token.metadata, f.name) for f in fields(ICMetadata)}
    values["key_encr"] = token.key.key_encr
    values["key_hash"] = token.key.key_hash
    values["owner"] = token.owner
    return values


def changed_fields(new: ICToken, old: ICToken) -> set[str]:
    a, b = field_values(new), field_values(old)
    return {name for name in TOKEN_FIELDS if a[name] != b[name]}


# text form

def _hex_or_dash(value: bytes | None) -> str:
    return "-" if value is None else value.hex()


def to_text(token: ICToken) -> str:
    """One-line key=value form; the binary image is derived from it on load."""
    token.validate()
    m = token.metadata
    parts = [
        f"icid={m.icid.hex()}",
        f"pid={_hex_or_dash(m.pid)}",
        f"edid={_hex_or_dash(m.edid)}",
        f"markHash={m.mark_hash.hex()}",
        f"stage={int(m.stage)}",
        f"status={int(m.status)}",
        f"isDefective={int(m.is_defective)}",
        f"prevVer={'-' if m.prev_ver is None else m.prev_ver}",
        f"version={m.version}",
        f"keyEncr={token.key.key_encr.hex()}",
        f"keyHash={token.key.key_hash.hex()}",
        f"owner={token.owner.hex()}",
        f"trnsaxnID={token.trnsaxn_id.hex()}",
    ]
    return " ".join(parts)


_TEXT_KEYS = ("icid", "pid", "edid", "markHash", "stage", "status", "isDefective",
              "prevVer", "version", "keyEncr", "keyHash", "owner", "trnsaxnID")


def from_text(line: str) -> ICToken:
    """Strict inverse of :func:`to_text`; rejects any non-canonical spelling."""
    try:
        pairs = [p.split("=", 1) for p in line.split(" ")]
        if [k for k, _ in pairs] != list(_TEXT_KEYS):
            raise ValueError("unexpected keys")
        v = dict(pairs)

        def opt_hex(s):
            return None if s == "-" else bytes.fromhex(s)

        token = ICToken(
            ICMetadata(
                icid=bytes.fromhex(v["icid"]),
                mark_hash=bytes.fromhex(v["markHash"]),
                stage=Stage(int(v["stage"])),
                status=Status(int(v["status"])),
                pid=opt_hex(v["pid"]),
                edid=opt_hex(v["edid"]),
                prev_ver=None if v["prevVer"] == "-" else int(v["prevVer"]),
                version=int(v["version"]),
                is_defective={"0": False, "1": True}[v["isDefective"]],
            ),
            ICKeyBox(bytes.fromhex(v["keyEncr"]), bytes.fromhex(v["keyHash"])),
            bytes.fromhex(v["owner"]),
            bytes.fromhex(v["trnsaxnID"]),
        )
    except (ValueError, KeyError) as exc:
        raise MalformedToken(f"unparseable token text: {exc}") from None
    if to_text(token) != line:
        raise MalformedToken("non-canonical token text")
    return token


# identifiers

def make_icid(device_uid: bytes | str) -> bytes:
    if isinstance(device_uid, str):
        device_uid = device_uid.encode()
    if not device_uid:
        raise EmptyIdentifier("device UID is empty")
    return sha256(device_uid)


def normalize_markings(markings: str) -> str:
    return " ".join(markings.split())


def make_mark_hash(markings: str) -> bytes:
    return sha256(normalize_markings(markings).encode("utf-8"))


def compute_pid(icids) -> bytes:
    """PCB identifier: merkle root over the ICIDs mounted on the board."""
    return merkle_root(icids)


def compute_edid(pids) -> bytes:
    """Device identifier: merkle root over the PIDs of its boards."""
    return merkle_root(pids)
