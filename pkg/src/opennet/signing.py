"""Detached envelope signatures.

Envelopes are signed over their canonical body (context + message). The
header binds subscriber, key id, validity window and a BLAKE2b-512 digest
of the body; the signed string follows the familiar HTTP-signature layout::

    (created): <unix seconds>
    (expires): <unix seconds>
    keyId: <subscriber_id>|<key_id>|<algorithm>
    digest: BLAKE-512=<base64 digest>

Two schemes are registered. ``ed25519`` (alias ``ed-curve``) draws fresh
random keys. ``test-deterministic`` derives an Ed25519 key from a seed so
golden files and replays are reproducible; never use it outside tests.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from opennet.core.codec import b64, canonical_bytes, encode_body, load_document, unb64
from opennet.core.model import UTC, Envelope, SignatureHeader, format_timestamp, parse_timestamp
from opennet.errors import ExpiredKey, MalformedDocument, UnsupportedAlgorithm

__all__ = [
    "KeyPair",
    "SignatureHeader",
    "Verdict",
    "canonical_digest",
    "generate_keypair",
    "load_keypair",
    "save_keypair",
    "sign_envelope",
    "verify_envelope",
]

ED25519 = "ed25519"
TEST_DETERMINISTIC = "test-deterministic"
ALIASES = {"ed-curve": ED25519}
SUPPORTED = (ED25519, TEST_DETERMINISTIC)
CLOCK_SKEW = timedelta(seconds=5)

KeyResolver = Callable[[str, str], Optional[bytes]]


@dataclass(frozen=True)
class KeyPair:
    key_id: str
    algorithm: str
    signing_key: bytes
    verification_key: bytes
    valid_until: Optional[datetime] = None

    def __repr__(self) -> str:  # keep secrets out of logs
        return f"KeyPair(key_id={self.key_id!r}, algorithm={self.algorithm!r})"


class Verdict(str, Enum):
    VALID = "Valid"
    UNKNOWN_KEY = "UnknownKey"
    DIGEST_MISMATCH = "DigestMismatch"
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"

    @property
    def ok(self) -> bool:
        return self is Verdict.VALID

    def __bool__(self) -> bool:
        return self.ok


def _normalize(algorithm: str) -> str:
    algorithm = ALIASES.get(algorithm, algorithm)
    if algorithm not in SUPPORTED:
        raise UnsupportedAlgorithm(f"unsupported signature algorithm {algorithm!r}")
    return algorithm


def _public_bytes(private: Ed25519PrivateKey) -> bytes:
    return private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def generate_keypair(algorithm: str = ED25519, *, seed: Union[int, str, None] = None) -> KeyPair:
    algorithm = _normalize(algorithm)
    if algorithm == TEST_DETERMINISTIC:
        if seed is None:
            raise ValueError("test-deterministic keys need a seed")
        raw = hashlib.sha256(f"opennet-test-key:{seed}".encode()).digest()
    else:
        raw = os.urandom(32)
    private = Ed25519PrivateKey.from_private_bytes(raw)
    public = _public_bytes(private)
    key_id = hashlib.sha256(public).hexdigest()[:16]
    return KeyPair(key_id=key_id, algorithm=algorithm, signing_key=raw, verification_key=public)


def derive_verification_key(kp: KeyPair) -> bytes:
    return _public_bytes(Ed25519PrivateKey.from_private_bytes(kp.signing_key))


def canonical_digest(e: Envelope) -> bytes:
    return hashlib.blake2b(encode_body(e), digest_size=64).digest()


def _signing_string(h: SignatureHeader) -> bytes:
    return (
        f"(created): {int(h.created.timestamp())}\n"
        f"(expires): {int(h.expires.timestamp())}\n"
        f"keyId: {h.subscriber_id}|{h.key_id}|{h.algorithm}\n"
        f"digest: BLAKE-512={b64(h.digest)}"
    ).encode()


def sign_envelope(
    e: Envelope,
    kp: KeyPair,
    subscriber_id: str,
    validity: Union[timedelta, float],
    *,
    now: Optional[datetime] = None,
) -> SignatureHeader:
    if not isinstance(validity, timedelta):
        validity = timedelta(seconds=validity)
    if validity <= timedelta(0):
        raise ValueError("signature validity must be positive")
    now = now or datetime.now(UTC)
    if kp.valid_until is not None and now > kp.valid_until:
        raise ExpiredKey(f"key {kp.key_id} expired at {kp.valid_until}")
    # whole-second resolution keeps the signed string stable
    created = now.replace(microsecond=0)
    header = SignatureHeader(
        subscriber_id=subscriber_id,
        key_id=kp.key_id,
        algorithm=kp.algorithm,
        created=created,
        expires=created + validity,
        digest=canonical_digest(e),
        signature=b"",
    )
    private = Ed25519PrivateKey.from_private_bytes(kp.signing_key)
    sig = private.sign(_signing_string(header))
    return replace(header, signature=sig)


def sign(e: Envelope, kp: KeyPair, subscriber_id: str, validity, *, now=None) -> Envelope:
    """Convenience: return ``e`` carrying a fresh signature header."""
    return e.with_signature(sign_envelope(e.unsigned(), kp, subscriber_id, validity, now=now))


def verify_envelope(
    e: Envelope,
    h: Optional[SignatureHeader],
    resolve_key: KeyResolver,
    *,
    now: Optional[datetime] = None,
) -> Verdict:
    """Check an envelope against a header; failures are verdicts, never raised."""
    if h is None:
        return Verdict.BAD_SIGNATURE
    try:
        key = resolve_key(h.subscriber_id, h.key_id)
    except (KeyError, LookupError):
        key = None
    if not key or h.algorithm not in SUPPORTED:
        return Verdict.UNKNOWN_KEY
    try:
        digest = canonical_digest(e.unsigned())
    except MalformedDocument:
        return Verdict.DIGEST_MISMATCH
    if digest != h.digest:
        return Verdict.DIGEST_MISMATCH
    try:
        Ed25519PublicKey.from_public_bytes(key).verify(h.signature, _signing_string(h))
    except (InvalidSignature, ValueError):
        return Verdict.BAD_SIGNATURE
    now = now or datetime.now(UTC)
    if not (h.created - CLOCK_SKEW <= now <= h.expires + CLOCK_SKEW):
        return Verdict.EXPIRED
    return Verdict.VALID


def keypair_to_doc(kp: KeyPair) -> dict:
    doc = {
        "algorithm": kp.algorithm,
        "key_id": kp.key_id,
        "signing_key": b64(kp.signing_key),
        "verification_key": b64(kp.verification_key),
    }
    if kp.valid_until is not None:
        doc["valid_until"] = format_timestamp(kp.valid_until)
    return doc


def keypair_from_doc(doc: dict) -> KeyPair:
    try:
        kp = KeyPair(
            key_id=doc["key_id"],
            algorithm=_normalize(doc["algorithm"]),
            signing_key=unb64(doc["signing_key"]),
            verification_key=unb64(doc["verification_key"]),
            valid_until=parse_timestamp(doc["valid_until"]) if "valid_until" in doc else None,
        )
    except KeyError as exc:
        raise MalformedDocument(f"key file lacks {exc}") from None
    if derive_verification_key(kp) != kp.verification_key:
        raise MalformedDocument("verification key does not match signing key")
    return kp


def save_keypair(kp: KeyPair, path: Union[str, Path]) -> None:
    """Write a key file readable by the owner only (mode 0600)."""
    path = Path(path)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(canonical_bytes(keypair_to_doc(kp)) + b"\n")
    os.chmod(path, 0o600)


def load_keypair(path: Union[str, Path]) -> KeyPair:
    return keypair_from_doc(load_document(Path(path).read_bytes().strip()))
