"""Subscriber registries, suspension, and recursive multi-network discovery."""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Iterable, Optional

from opennet.core.codec import b64, canonical_bytes, load_document, unb64
from opennet.core.model import format_timestamp, parse_timestamp
from opennet.errors import (
    DuplicateSubscriber,
    InvalidRecord,
    MalformedDocument,
    RootUnreachable,
    UnknownSubscriber,
)


class Role(str, Enum):
    BAP = "BAP"
    BPP = "BPP"
    BG = "BG"
    BR = "BR"

    def __str__(self) -> str:
        return self.value


class Status(str, Enum):
    ACTIVE = "ACTIVE"
    SUSPENDED = "SUSPENDED"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SubscriberRecord:
    subscriber_id: str
    role: Role
    domains: frozenset[str]
    endpoint: str
    key_id: str
    verification_key: bytes
    region: str = ""
    status: Status = Status.ACTIVE
    valid_from: Optional[datetime] = None
    valid_to: Optional[datetime] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "status", Status(self.status))
        object.__setattr__(self, "domains", frozenset(self.domains))

    def validate(self) -> None:
        if not self.subscriber_id:
            raise InvalidRecord("subscriber_id must be non-empty")
        if not self.endpoint:
            raise InvalidRecord(f"{self.subscriber_id}: endpoint must be non-empty")
        if not self.key_id or not self.verification_key:
            raise InvalidRecord(f"{self.subscriber_id}: a verification key is required")
        if self.role is Role.BPP and not self.domains:
            raise InvalidRecord(f"{self.subscriber_id}: a provider must serve at least one domain")
        if self.valid_from and self.valid_to and self.valid_from >= self.valid_to:
            raise InvalidRecord(f"{self.subscriber_id}: valid_from must precede valid_to")

    def valid_at(self, at: Optional[datetime]) -> bool:
        if at is None:
            return True
        if self.valid_from and at < self.valid_from:
            return False
        return not (self.valid_to and at > self.valid_to)

    def matches(self, role=None, domain=None, region=None) -> bool:
        return (
            (role is None or self.role == role)
            and (domain is None or domain in self.domains)
            and (region is None or self.region == region)
        )

    def to_doc(self) -> dict[str, Any]:
        doc = {
            "domains": sorted(self.domains),
            "endpoint": self.endpoint,
            "key_id": self.key_id,
            "region": self.region,
            "role": self.role.value,
            "status": self.status.value,
            "subscriber_id": self.subscriber_id,
            "verification_key": b64(self.verification_key),
        }
        if self.valid_from:
            doc["valid_from"] = format_timestamp(self.valid_from)
        if self.valid_to:
            doc["valid_to"] = format_timestamp(self.valid_to)
        return doc

    @classmethod
    def from_doc(cls, doc: Any) -> "SubscriberRecord":
        if not isinstance(doc, dict):
            raise MalformedDocument("subscriber record must be an object")
        try:
            return cls(
                subscriber_id=doc["subscriber_id"],
                role=Role(doc["role"]),
                domains=frozenset(doc.get("domains", ())),
                endpoint=doc["endpoint"],
                key_id=doc["key_id"],
                verification_key=unb64(doc["verification_key"]),
                region=doc.get("region", ""),
                status=Status(doc.get("status", "ACTIVE")),
                valid_from=parse_timestamp(doc["valid_from"]) if "valid_from" in doc else None,
                valid_to=parse_timestamp(doc["valid_to"]) if "valid_to" in doc else None,
            )
        except KeyError as exc:
            raise MalformedDocument(f"subscriber record lacks {exc}") from None
        except ValueError as exc:
            raise MalformedDocument(str(exc)) from None


@dataclass(frozen=True)
class PeerLink:
    registry_id: str
    locator: str

    def to_doc(self) -> dict[str, str]:
        return {"locator": self.locator, "registry_id": self.registry_id}


class Registry:
    """A registry: append-only event log plus an in-memory index.

    Reads take no lock beyond a snapshot of the index; register and status
    changes are serialized. Peer links make a registry usable as a root
    (a registry of registries) for :func:`resolve_networks`.
    """

    def __init__(self, registry_id: str, locator: str = "", peers: Iterable[PeerLink] = ()) -> None:
        self.registry_id = registry_id
        self.locator = locator or f"registry://{registry_id}"
        self.peers: list[PeerLink] = list(peers)
        self._records: dict[str, SubscriberRecord] = {}
        self._log: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return f"Registry({self.registry_id!r}, records={len(self._records)}, peers={len(self.peers)})"

    def register(self, record: SubscriberRecord) -> SubscriberRecord:
        record.validate()
        record = replace(record, status=Status.ACTIVE)
        with self._lock:
            if record.subscriber_id in self._records:
                raise DuplicateSubscriber(record.subscriber_id)
            self._records[record.subscriber_id] = record
            self._log.append({"event": "register", "record": record.to_doc()})
        return record

    def set_status(self, subscriber_id: str, status: Status) -> SubscriberRecord:
        status = Status(status)
        with self._lock:
            try:
                current = self._records[subscriber_id]
            except KeyError:
                raise UnknownSubscriber(subscriber_id) from None
            updated = replace(current, status=status)
            self._records[subscriber_id] = updated
            self._log.append({"event": "status", "status": status.value, "subscriber_id": subscriber_id})
        return updated

    def add_peer(self, registry_id: str, locator: str) -> None:
        with self._lock:
            self.peers.append(PeerLink(registry_id, locator))

    def get(self, subscriber_id: str) -> Optional[SubscriberRecord]:
        return self._records.get(subscriber_id)

    @property
    def records(self) -> list[SubscriberRecord]:
        return list(self._records.values())

    @property
    def log(self) -> list[dict[str, Any]]:
        return list(self._log)

    def lookup(
        self,
        role: Optional[Role] = None,
        domain: Optional[str] = None,
        region: Optional[str] = None,
        *,
        at: Optional[datetime] = None,
    ) -> list[SubscriberRecord]:
        """ACTIVE records matching every given criterion (routing view)."""
        return [
            r
            for r in list(self._records.values())
            if r.status is Status.ACTIVE and r.valid_at(at) and r.matches(role, domain, region)
        ]

    def candidates(self, role: Optional[Role] = None) -> list[SubscriberRecord]:
        """All records of a role regardless of status (accounting view)."""
        return [r for r in list(self._records.values()) if role is None or r.role == role]

    def resolve_key(self, subscriber_id: str, key_id: str) -> Optional[bytes]:
        r = self._records.get(subscriber_id)
        if r is None or r.status is not Status.ACTIVE or r.key_id != key_id:
            return None
        return r.verification_key

    def dump(self) -> bytes:
        """Snapshot as newline-delimited canonical records, sorted by id."""
        lines = [canonical_bytes(self._records[k].to_doc()) for k in sorted(self._records)]
        return b"".join(line + b"\n" for line in lines)

    def dump_peers(self) -> bytes:
        return b"".join(canonical_bytes(p.to_doc()) + b"\n" for p in self.peers)

    def load(self, data: bytes, *, keep_status: bool = True) -> int:
        """Register every record in an NDJSON snapshot; returns the count."""
        n = 0
        for line in data.splitlines():
            if not line.strip():
                continue
            record = SubscriberRecord.from_doc(load_document(line))
            self.register(record)
            if keep_status and record.status is not Status.ACTIVE:
                self.set_status(record.subscriber_id, record.status)
            n += 1
        return n


def load_peers(data: bytes) -> list[PeerLink]:
    out = []
    for line in data.splitlines():
        if line.strip():
            doc = load_document(line)
            try:
                out.append(PeerLink(doc["registry_id"], doc["locator"]))
            except (KeyError, TypeError):
                raise MalformedDocument("peer line needs registry_id and locator") from None
    return out


class TrustTable:
    """Pairwise (symmetric) trust assertions between registries."""

    def __init__(self, pairs: Iterable[tuple[str, str]] = ()) -> None:
        self._pairs: set[frozenset[str]] = set()
        for a, b in pairs:
            self.assert_trust(a, b)

    def assert_trust(self, a: str, b: str) -> None:
        self._pairs.add(frozenset((a, b)))

    def revoke(self, a: str, b: str) -> None:
        self._pairs.discard(frozenset((a, b)))

    def trusts(self, a: str, b: str) -> bool:
        return a == b or frozenset((a, b)) in self._pairs

    def __len__(self) -> int:
        return len(self._pairs)


@dataclass
class DiscoveryResult:
    matches: list[tuple[str, list[SubscriberRecord]]] = field(default_factory=list)
    unreachable: list[tuple[str, str]] = field(default_factory=list)
    visited: list[str] = field(default_factory=list)

    def pairs(self) -> set[tuple[str, str]]:
        return {(rid, r.subscriber_id) for rid, recs in self.matches for r in recs}


def resolve_networks(
    root: str,
    fetch: Callable[[str], Registry],
    *,
    domain: Optional[str] = None,
    region: Optional[str] = None,
    role: Optional[Role] = None,
) -> DiscoveryResult:
    """Breadth-first walk from a root registry through peer links.

    Each registry (by locator and by id) is fetched at most once, so cyclic
    peer graphs terminate. Registries whose fetch fails are listed in
    ``unreachable``; only a failing root raises.
    """
    result = DiscoveryResult()
    try:
        root_reg = fetch(root)
    except Exception as exc:
        raise RootUnreachable(f"{root}: {exc}") from exc
    seen_locators = {root}
    seen_ids: set[str] = set()
    queue: deque[tuple[str, Optional[Registry]]] = deque([(root, root_reg)])
    while queue:
        locator, reg = queue.popleft()
        if reg is None:
            try:
                reg = fetch(locator)
            except Exception as exc:
                result.unreachable.append((locator, str(exc) or type(exc).__name__))
                continue
        if reg.registry_id in seen_ids:
            continue
        seen_ids.add(reg.registry_id)
        result.visited.append(reg.registry_id)
        found = reg.lookup(role=role, domain=domain, region=region)
        if found:
            unique = {r.subscriber_id: r for r in found}
            result.matches.append((reg.registry_id, [unique[k] for k in sorted(unique)]))
        for peer in reg.peers:
            if peer.locator not in seen_locators and peer.registry_id not in seen_ids:
                seen_locators.add(peer.locator)
                queue.append((peer.locator, None))
    return result


class KeyDirectory:
    """Resolve verification keys from a home registry and trusted peers."""

    def __init__(self, home: Registry, registries: dict[str, Registry] | None = None,
                 trust: TrustTable | None = None) -> None:
        self.home = home
        self.registries = registries or {}
        self.trust = trust or TrustTable()

    def __call__(self, subscriber_id: str, key_id: str) -> Optional[bytes]:
        key = self.home.resolve_key(subscriber_id, key_id)
        if key:
            return key
        for rid in sorted(self.registries):
            if rid != self.home.registry_id and self.trust.trusts(self.home.registry_id, rid):
                key = self.registries[rid].resolve_key(subscriber_id, key_id)
                if key:
                    return key
        return None
