"""Protocol value types: contexts, envelopes, signature headers and tags."""

from __future__ import annotations

import random
import secrets
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Optional

from opennet.core.actions import CORE_ACTIONS, ActionRegistry
from opennet.errors import MalformedDocument, NonPositiveTtl, UnknownAction

UTC = timezone.utc
CORE_VERSION = "1.1.0"
DISCOVERY_TTL = 30
DEFAULT_TTL = 300
_TS_FORMAT = "%Y-%m-%dT%H:%M:%S.%fZ"

IdFactory = Callable[[], str]


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        raise ValueError("timestamps must be timezone-aware")
    return ts.astimezone(UTC).strftime(_TS_FORMAT)


def parse_timestamp(text: str) -> datetime:
    try:
        return datetime.strptime(text, _TS_FORMAT).replace(tzinfo=UTC)
    except (TypeError, ValueError):
        raise MalformedDocument(f"bad RFC3339 UTC timestamp {text!r}") from None


def random_id() -> str:
    """128-bit random identifier as 32 lowercase hex digits."""
    return secrets.token_hex(16)


def seeded_ids(seed: int | str) -> IdFactory:
    rng = random.Random(seed)

    def make() -> str:
        return f"{rng.getrandbits(128):032x}"

    return make


def default_ttl(action: str) -> int:
    return DISCOVERY_TTL if action in ("search", "on_search") else DEFAULT_TTL


@dataclass(frozen=True)
class Context:
    domain: str
    action: str
    core_version: str
    bap_id: str
    bap_uri: str
    transaction_id: str
    message_id: str
    timestamp: datetime
    ttl: int
    bpp_id: Optional[str] = None
    bpp_uri: Optional[str] = None

    def expires_at(self) -> datetime:
        return self.timestamp + timedelta(seconds=self.ttl)

    def is_expired(self, now: datetime) -> bool:
        return now > self.expires_at()


@dataclass(frozen=True)
class SignatureHeader:
    subscriber_id: str
    key_id: str
    algorithm: str
    created: datetime
    expires: datetime
    digest: bytes
    signature: bytes


@dataclass(frozen=True)
class Envelope:
    context: Context
    payload: dict[str, Any] = field(default_factory=dict)
    signature: Optional[SignatureHeader] = None

    def with_signature(self, header: Optional[SignatureHeader]) -> "Envelope":
        return replace(self, signature=header)

    def unsigned(self) -> "Envelope":
        return replace(self, signature=None)


@dataclass(frozen=True)
class Tag:
    namespace: str
    key: str
    value: str


def new_context(
    domain: str,
    action: str,
    bap_id: str,
    bap_uri: str,
    transaction_id: str | None = None,
    ttl: int | None = None,
    *,
    bpp_id: str | None = None,
    bpp_uri: str | None = None,
    now: datetime | None = None,
    message_id: str | None = None,
    ids: IdFactory = random_id,
    actions: ActionRegistry = CORE_ACTIONS,
    core_version: str = CORE_VERSION,
) -> Context:
    if action not in actions:
        raise UnknownAction(action)
    if ttl is None:
        ttl = default_ttl(action)
    if ttl <= 0:
        raise NonPositiveTtl(f"ttl must be positive, got {ttl}")
    return Context(
        domain=domain,
        action=action,
        core_version=core_version,
        bap_id=bap_id,
        bap_uri=bap_uri,
        bpp_id=bpp_id,
        bpp_uri=bpp_uri,
        transaction_id=transaction_id or ids(),
        message_id=message_id or ids(),
        timestamp=now or datetime.now(UTC),
        ttl=ttl,
    )
