"""Owners and wallets: the client side of every transaction.

A wallet builds and signs new token versions; the tracker (a single
:class:`~ictoken.tracker.Tracker` or a consensus
:class:`~ictoken.consensus.Network`) validates and commits them. Anything
exposing ``execute``, ``latest``, ``assets_of`` and ``profile`` works as the
tracker endpoint.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, replace
from pathlib import Path

from .crypto import (KeyPair, PublicProfile, change_enc_key, decrypt, encrypt,
                     generate_keypair, sha256, sign)
from .errors import (DecryptionFailure, EmptyList, MixedStages, NotHeld,
                     TrackerUnavailable)
from .ledger import Transaction, TxKind
from .token_model import (ICKeyBox, ICMetadata, ICToken, Stage, Status, compute_edid,
                          compute_pid, make_icid, make_mark_hash, signing_payload)

ROLES = ("designer", "fab", "assembler", "integrator", "distributor", "retailer",
         "end-user", "recycler")


@dataclass(frozen=True)
class Owner:
    public_id: bytes
    keypair: KeyPair
    role: str

    @property
    def profile(self) -> PublicProfile:
        return PublicProfile(self.public_id, self.keypair.public_key)


def create_owner(role: str, seed=None) -> Owner:
    keypair = generate_keypair(seed)
    profile = PublicProfile.from_public_key(keypair.public_key)
    return Owner(profile.public_id, keypair, role)


class Wallet:
    def __init__(self, owner: Owner, tracker=None, rng: random.Random | None = None):
        self.owner = owner
        self.tracker = tracker
        self.rng = rng
        self.held: dict[bytes, ICToken] = {}

    @classmethod
    def create(cls, role: str, seed=None, tracker=None) -> "Wallet":
        rng = None if seed is None else random.Random(f"ictoken-oaep:{seed}")
        return cls(create_owner(role, seed), tracker, rng)

    @property
    def public_id(self) -> bytes:
        return self.owner.public_id

    @property
    def profile(self) -> PublicProfile:
        return self.owner.profile

    def sign_token(self, token: ICToken) -> ICToken:
        sig = sign(self.owner.keypair.private_key, signing_payload(token))
        return replace(token, trnsaxn_id=sig)

    def _held(self, icid: bytes) -> ICToken:
        try:
            return self.held[icid]
        except KeyError:
            raise NotHeld(icid.hex()) from None

    # builders

    def build_enrollment(self, device_uid, markings: str, metering_key: bytes) -> ICToken:
        token = ICToken(
            ICMetadata(icid=make_icid(device_uid), mark_hash=make_mark_hash(markings)),
            ICKeyBox(encrypt(self.owner.keypair.public_key, metering_key, self.rng),
                     sha256(metering_key)),
            self.public_id,
        )
        return self.sign_token(token)

    def build_stage_update(self, icid: bytes, stage, status) -> ICToken:
        token = self._held(icid)
        return self.sign_token(token.with_metadata(stage=Stage(stage), status=Status(status)))

    def build_composition_update(self, icids, target: str) -> list[ICToken]:
        """Bind ``icids`` to one PCB (``target="pid"``) or one device (``"edid"``)."""
        icids = list(icids)
        if not icids:
            raise EmptyList("no ICs given")
        tokens = [self._held(icid) for icid in icids]
        metas = [t.metadata for t in tokens]
        if target == "pid":
            if any(m.stage != Stage.PCB_ASSEMBLY or m.status != Status.COMPLETED
                   or m.pid is not None for m in metas):
                raise MixedStages("PCB binding needs unbound ICs at 2/1")
            pid = compute_pid(icids)
            return [self.sign_token(t.with_metadata(pid=pid)) for t in tokens]
        if target == "edid":
            if any(m.stage != Stage.SYSTEM_INTEGRATION or m.status != Status.COMPLETED
                   or m.pid is None or m.edid is not None for m in metas):
                raise MixedStages("device binding needs PCB-bound ICs at 3/1")
            edid = compute_edid(list(dict.fromkeys(m.pid for m in metas)))
            return [self.sign_token(t.with_metadata(edid=edid)) for t in tokens]
        raise ValueError(f"unknown composition target {target!r}")

    def build_transfer(self, icid: bytes, new_owner: PublicProfile) -> ICToken:
        token = self._held(icid)
        key_encr = change_enc_key(self.owner.keypair.private_key, new_owner.public_key,
                                  token.key.key_encr, self.rng)
        token = replace(token, owner=new_owner.public_id).with_key(key_encr=key_encr)
        return self.sign_token(token)

    def build_defect_report(self, icid: bytes) -> ICToken:
        token = self._held(icid)
        return self.sign_token(token.with_metadata(is_defective=True))

    def recover_key(self, icid: bytes) -> bytes:
        """Decrypt the metering key of a held IC and check it against keyHash."""
        token = self._held(icid)
        key = decrypt(self.owner.keypair.private_key, token.key.key_encr)
        if sha256(key) != token.key.key_hash:
            raise DecryptionFailure("decrypted key does not match keyHash")
        return key

    # tracker interaction

    def _endpoint(self):
        if self.tracker is None:
            raise TrackerUnavailable("wallet has no tracker endpoint")
        return self.tracker

    def sync_assets(self) -> dict[bytes, ICToken]:
        tracker = self._endpoint()
        self.held = {icid: tracker.latest(icid)
                     for icid in sorted(tracker.assets_of(self.public_id))}
        return self.held

    def submit(self, kind: TxKind, tokens=(), profile=None) -> list[int]:
        seqs = self._endpoint().execute(Transaction(kind, tuple(tokens), profile))
        self.sync_assets()
        return seqs

    def enroll(self) -> None:
        self.submit(TxKind.ENROLL_OWNER, profile=self.profile)

    def enroll_ic(self, device_uid, markings: str, metering_key: bytes) -> bytes:
        token = self.build_enrollment(device_uid, markings, metering_key)
        self.submit(TxKind.ENROLL_IC, [token])
        return token.icid

    def update_stage(self, icid: bytes, stage, status) -> int:
        return self.submit(TxKind.UPDATE_STAGE, [self.build_stage_update(icid, stage, status)])[0]

    def assemble(self, icids) -> bytes:
        tokens = self.build_composition_update(icids, "pid")
        self.submit(TxKind.UPDATE_COMPOSITION, tokens)
        return tokens[0].metadata.pid

    def integrate(self, icids) -> bytes:
        tokens = self.build_composition_update(icids, "edid")
        self.submit(TxKind.UPDATE_COMPOSITION, tokens)
        return tokens[0].metadata.edid

    def transfer(self, icid: bytes, new_owner: PublicProfile) -> int:
        return self.submit(TxKind.TRANSFER, [self.build_transfer(icid, new_owner)])[0]

    def report_defect(self, icid: bytes) -> int:
        return self.submit(TxKind.REPORT_DEFECT, [self.build_defect_report(icid)])[0]

    # persistence

    def save(self, path: str | Path) -> None:
        lines = [
            f"role={self.owner.role}",
            f"publicID={self.public_id.hex()}",
            f"held={','.join(icid.hex() for icid in sorted(self.held))}",
        ]
        Path(path).write_text("\n".join(lines) + "\n" + self.owner.keypair.private_pem())

    @classmethod
    def load(cls, path: str | Path, tracker=None) -> "Wallet":
        text = Path(path).read_text()
        head, sep, pem = text.partition("-----BEGIN")
        if not sep:
            raise ValueError(f"{path}: no private key block")
        fields = dict(line.split("=", 1) for line in head.splitlines() if line)
        keypair = KeyPair.from_pem(sep + pem)
        profile = PublicProfile.from_public_key(keypair.public_key)
        if profile.public_id.hex() != fields["publicID"]:
            raise ValueError(f"{path}: publicID does not match the stored key")
        wallet = cls(Owner(profile.public_id, keypair, fields["role"]), tracker)
        if tracker is not None:
            wallet.sync_assets()
        return wallet
