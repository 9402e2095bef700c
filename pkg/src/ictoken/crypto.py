"""Hashing, merkle aggregation, signatures and public-key encryption.

Signatures are RSA-2048 PKCS#1 v1.5 over SHA-256 (deterministic, 256 bytes).
Encryption is RSA-2048 OAEP with SHA-256/MGF1-SHA256 (256-byte ciphertexts,
190-byte plaintext capacity). OAEP padding is applied here so the seed can be
drawn from a caller-supplied RNG, which keeps seeded runs byte-reproducible;
decryption goes through the standard OAEP decoder in ``cryptography``.
"""
from __future__ import annotations

import hashlib
import math
import os
import random
from dataclasses import dataclass

import gmpy2
from cryptography.exceptions import InvalidSignature, UnsupportedAlgorithm
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .errors import DecryptionFailure, EmptyLeafSet, MalformedKey, PlaintextTooLong

DIGEST_SIZE = 32
KEY_BITS = 2048
MODULUS_SIZE = KEY_BITS // 8
SIGNATURE_SIZE = MODULUS_SIZE
CIPHERTEXT_SIZE = MODULUS_SIZE
MAX_PLAINTEXT = MODULUS_SIZE - 2 * DIGEST_SIZE - 2
PUBLIC_EXPONENT = 65537

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

ZERO_DIGEST = bytes(DIGEST_SIZE)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _check_digest(d: bytes) -> bytes:
    if not isinstance(d, (bytes, bytearray)) or len(d) != DIGEST_SIZE:
        raise ValueError(f"expected a {DIGEST_SIZE}-byte digest")
    return bytes(d)


def merkle_root(leaves) -> bytes:
    """Root of a binary merkle tree over the *set* of ``leaves``.

    Leaves are sorted and deduplicated first, so the root is insensitive to
    order and repetition. An odd node at the end of a level is promoted
    unchanged.
    """
    level = sorted({_check_digest(d) for d in leaves})
    if not level:
        raise EmptyLeafSet("merkle root of an empty leaf set")
    level = [sha256(LEAF_PREFIX + d) for d in level]
    while len(level) > 1:
        nxt = [sha256(NODE_PREFIX + level[i] + level[i + 1])
               for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


# keys

@dataclass(frozen=True)
class KeyPair:
    private_key: rsa.RSAPrivateKey

    @property
    def public_key(self) -> rsa.RSAPublicKey:
        return self.private_key.public_key()

    def private_pem(self) -> str:
        return self.private_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        ).decode()

    @classmethod
    def from_pem(cls, pem: str | bytes) -> "KeyPair":
        if isinstance(pem, str):
            pem = pem.encode()
        key = serialization.load_pem_private_key(pem, password=None)
        if not isinstance(key, rsa.RSAPrivateKey) or key.key_size != KEY_BITS:
            raise ValueError("expected an RSA-2048 private key")
        return cls(key)


def _seeded_prime(rng: random.Random, bits: int) -> int:
    while True:
        # top two bits set so that p*q has exactly 2*bits bits
        cand = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        p = int(gmpy2.next_prime(cand))
        if p.bit_length() == bits and math.gcd(p - 1, PUBLIC_EXPONENT) == 1:
            return p


def generate_keypair(seed=None) -> KeyPair:
    """Fresh RSA-2048 key pair; reproducible when ``seed`` is given."""
    if seed is None:
        return KeyPair(rsa.generate_private_key(PUBLIC_EXPONENT, KEY_BITS))
    rng = random.Random(f"ictoken-keygen:{seed}")
    half = KEY_BITS // 2
    p = _seeded_prime(rng, half)
    q = _seeded_prime(rng, half)
    while q == p:
        q = _seeded_prime(rng, half)
    n = p * q
    d = pow(PUBLIC_EXPONENT, -1, math.lcm(p - 1, q - 1))
    numbers = rsa.RSAPrivateNumbers(
        p=p, q=q, d=d,
        dmp1=rsa.rsa_crt_dmp1(d, p),
        dmq1=rsa.rsa_crt_dmq1(d, q),
        iqmp=rsa.rsa_crt_iqmp(p, q),
        public_numbers=rsa.RSAPublicNumbers(PUBLIC_EXPONENT, n),
    )
    return KeyPair(numbers.private_key())


def public_key_bytes(public_key: rsa.RSAPublicKey) -> bytes:
    """DER SubjectPublicKeyInfo; the canonical byte form hashed into publicIDs."""
    return public_key.public_bytes(
        serialization.Encoding.DER,
        serialization.PublicFormat.SubjectPublicKeyInfo,
    )


def load_public_key(der: bytes) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_der_public_key(der)
    except (ValueError, TypeError, UnsupportedAlgorithm) as exc:
        raise MalformedKey(f"unreadable public key: {exc}") from None
    if not isinstance(key, rsa.RSAPublicKey) or key.key_size != KEY_BITS:
        raise MalformedKey("expected an RSA-2048 public key")
    return key


@dataclass(frozen=True)
class PublicProfile:
    """What an owner publishes: its publicID and public key."""

    public_id: bytes
    public_key: rsa.RSAPublicKey

    @classmethod
    def from_public_key(cls, public_key: rsa.RSAPublicKey) -> "PublicProfile":
        return cls(sha256(public_key_bytes(public_key)), public_key)

    def key_bytes(self) -> bytes:
        return public_key_bytes(self.public_key)

    def is_consistent(self) -> bool:
        return self.public_id == sha256(self.key_bytes())

    def verify_sign(self, message: bytes, signature: bytes) -> bool:
        return verify(self.public_key, message, signature)

    def __eq__(self, other):
        if not isinstance(other, PublicProfile):
            return NotImplemented
        return self.public_id == other.public_id and self.key_bytes() == other.key_bytes()

    def __hash__(self):
        return hash(self.public_id)


# signatures

def sign(private_key: rsa.RSAPrivateKey, message: bytes) -> bytes:
    return private_key.sign(message, padding.PKCS1v15(), hashes.SHA256())


def verify(public_key: rsa.RSAPublicKey, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_SIZE:
        return False
    try:
        public_key.verify(signature, message, padding.PKCS1v15(), hashes.SHA256())
    except InvalidSignature:
        return False
    return True


# encryption

def _mgf1(seed: bytes, length: int) -> bytes:
    out = b""
    counter = 0
    while len(out) < length:
        out += sha256(seed + counter.to_bytes(4, "big"))
        counter += 1
    return out[:length]


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def encrypt(public_key: rsa.RSAPublicKey, plaintext: bytes,
            rng: random.Random | None = None) -> bytes:
    """RSA-OAEP(SHA-256) encryption. ``rng`` supplies the OAEP seed when given."""
    k, hlen = MODULUS_SIZE, DIGEST_SIZE
    if len(plaintext) > MAX_PLAINTEXT:
        raise PlaintextTooLong(f"{len(plaintext)} > {MAX_PLAINTEXT} bytes")
    db = sha256(b"") + bytes(k - len(plaintext) - 2 * hlen - 2) + b"\x01" + plaintext
    seed = rng.randbytes(hlen) if rng is not None else os.urandom(hlen)
    masked_db = _xor(db, _mgf1(seed, k - hlen - 1))
    masked_seed = _xor(seed, _mgf1(masked_db, hlen))
    em = int.from_bytes(b"\x00" + masked_seed + masked_db, "big")
    nums = public_key.public_numbers()
    return pow(em, nums.e, nums.n).to_bytes(k, "big")


def decrypt(private_key: rsa.RSAPrivateKey, ciphertext: bytes) -> bytes:
    if len(ciphertext) != CIPHERTEXT_SIZE:
        raise DecryptionFailure("ciphertext has the wrong length")
    try:
        return private_key.decrypt(
            ciphertext,
            padding.OAEP(mgf=padding.MGF1(hashes.SHA256()),
                         algorithm=hashes.SHA256(), label=None),
        )
    except ValueError as exc:
        raise DecryptionFailure(str(exc)) from None


def change_enc_key(own_private_key: rsa.RSAPrivateKey,
                   new_public_key: rsa.RSAPublicKey,
                   ciphertext: bytes,
                   rng: random.Random | None = None) -> bytes:
    """Re-encrypt ``ciphertext`` for another owner's public key."""
    return encrypt(new_public_key, decrypt(own_private_key, ciphertext), rng)
