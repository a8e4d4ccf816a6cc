"""Search broadcast under machine-readable policies, with fair listing order."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional, Sequence

from opennet.core.actions import CORE_ACTIONS, ActionRegistry
from opennet.core.codec import context_to_doc, decode_envelope, encode_envelope, load_document
from opennet.core.model import Envelope
from opennet.core.schema import resolve
from opennet.errors import (
    EmptyInput,
    MalformedDocument,
    MalformedPolicy,
    NotASearch,
    SenderUnverified,
    UnknownAction,
)
from opennet.registry import Registry, Role, Status, SubscriberRecord
from opennet.signing import Verdict


class Effect(str, Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"


class SkipReason(str, Enum):
    POLICY_DENIED = "POLICY_DENIED"
    SUSPENDED = "SUSPENDED"
    DOMAIN_MISMATCH = "DOMAIN_MISMATCH"
    UNREACHABLE = "UNREACHABLE"


OPS = ("equals", "in", "within")
ROOTS = ("context", "message", "target")


@dataclass(frozen=True)
class Predicate:
    path: str
    op: str
    values: tuple = ()
    bbox: Optional[tuple[float, float, float, float]] = None

    def test(self, doc: dict[str, Any]) -> bool:
        found = resolve(doc, self.path)
        if self.op in ("equals", "in"):
            return any(v in self.values for v in found)
        return any(self._within(v) for v in found)

    def _within(self, value: Any) -> bool:
        if value in self.values:
            return True
        if self.bbox is None or not isinstance(value, str):
            return False
        try:
            lat, lon = (float(x) for x in value.split(","))
        except ValueError:
            return False
        lat0, lon0, lat1, lon1 = self.bbox
        return lat0 <= lat <= lat1 and lon0 <= lon <= lon1


@dataclass(frozen=True)
class Rule:
    match: Predicate
    effect: Effect
    exceptions: tuple[Predicate, ...] = ()


@dataclass(frozen=True)
class Policy:
    policy_id: str
    rules: tuple[Rule, ...]
    domain: Optional[str] = None
    action: Optional[str] = None

    def in_scope(self, e: Envelope) -> bool:
        return (self.domain is None or e.context.domain == self.domain) and (
            self.action is None or e.context.action == self.action
        )


@dataclass(frozen=True)
class PolicyDecision:
    effect: Effect
    reason: str = ""
    policy_id: str = ""

    @property
    def allowed(self) -> bool:
        return self.effect is Effect.ALLOW


ALLOW = PolicyDecision(Effect.ALLOW)


def _predicate(doc: Any, where: str) -> Predicate:
    if not isinstance(doc, dict):
        raise MalformedPolicy(f"{where}: predicate must be an object")
    path, op = doc.get("path"), doc.get("op")
    if not isinstance(path, str) or path.split(".")[0].rstrip("[]") not in ROOTS:
        raise MalformedPolicy(f"{where}: path must start with one of {ROOTS}")
    if op not in OPS:
        raise MalformedPolicy(f"{where}: unknown op {op!r}")
    if op == "equals":
        if "value" not in doc:
            raise MalformedPolicy(f"{where}: equals needs 'value'")
        return Predicate(path, op, (doc["value"],))
    if op == "in":
        if not isinstance(doc.get("values"), list):
            raise MalformedPolicy(f"{where}: in needs a 'values' list")
        return Predicate(path, op, tuple(doc["values"]))
    zone = doc.get("zone")
    if not isinstance(zone, dict) or not ({"area_codes", "bbox"} & set(zone)):
        raise MalformedPolicy(f"{where}: within needs a zone with area_codes and/or bbox")
    bbox = zone.get("bbox")
    if bbox is not None:
        if not (isinstance(bbox, list) and len(bbox) == 4 and all(isinstance(x, (int, float)) for x in bbox)):
            raise MalformedPolicy(f"{where}: bbox is [min_lat, min_lon, max_lat, max_lon]")
        bbox = tuple(float(x) for x in bbox)
    return Predicate(path, op, tuple(zone.get("area_codes", ())), bbox)


def load_policy(doc: Any) -> Policy:
    if isinstance(doc, (bytes, str)):
        try:
            doc = load_document(doc)
        except MalformedDocument as exc:
            raise MalformedPolicy(str(exc)) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("policy_id"), str):
        raise MalformedPolicy("policy needs a string policy_id")
    pid = doc["policy_id"]
    scope = doc.get("scope", {})
    if not isinstance(scope, dict) or set(scope) - {"domain", "action"}:
        raise MalformedPolicy(f"{pid}: scope may only name domain and action")
    rules_doc = doc.get("rules")
    if not isinstance(rules_doc, list):
        raise MalformedPolicy(f"{pid}: rules must be a list")
    rules = []
    for i, r in enumerate(rules_doc):
        where = f"{pid}.rules[{i}]"
        if not isinstance(r, dict):
            raise MalformedPolicy(f"{where}: rule must be an object")
        try:
            effect = Effect(r.get("effect"))
        except ValueError:
            raise MalformedPolicy(f"{where}: effect must be ALLOW or DENY") from None
        exc_docs = r.get("exceptions", [])
        if not isinstance(exc_docs, list):
            raise MalformedPolicy(f"{where}: exceptions must be a list")
        rules.append(
            Rule(
                match=_predicate(r.get("match"), where + ".match"),
                effect=effect,
                exceptions=tuple(_predicate(x, f"{where}.exceptions[{j}]") for j, x in enumerate(exc_docs)),
            )
        )
    return Policy(pid, tuple(rules), scope.get("domain"), scope.get("action"))


def _policy_doc(e: Envelope, target: Optional[SubscriberRecord]) -> dict[str, Any]:
    doc: dict[str, Any] = {"context": context_to_doc(e.context), "message": e.payload}
    if target is not None:
        doc["target"] = target.to_doc()
    return doc


def evaluate_policy(p: Policy, e: Envelope, target: Optional[SubscriberRecord] = None) -> PolicyDecision:
    """First matching rule decides; a firing exception turns DENY into ALLOW."""
    if not p.in_scope(e):
        return ALLOW
    doc = _policy_doc(e, target)
    for i, rule in enumerate(p.rules):
        if not rule.match.test(doc):
            continue
        if rule.effect is Effect.DENY and not any(x.test(doc) for x in rule.exceptions):
            return PolicyDecision(Effect.DENY, f"{p.policy_id}: rule {i} denies", p.policy_id)
        return PolicyDecision(Effect.ALLOW, f"{p.policy_id}: rule {i}", p.policy_id)
    return ALLOW


def evaluate_all(policies: Iterable[Policy], e: Envelope, target=None) -> PolicyDecision:
    for p in policies:
        d = evaluate_policy(p, e, target)
        if not d.allowed:
            return d
    return ALLOW


def fairness_key(fairness_seed: int | str, transaction_id: str, subscriber_id: str) -> bytes:
    key = hashlib.sha256(str(fairness_seed).encode()).digest()
    msg = f"{transaction_id}\x00{subscriber_id}".encode()
    return hashlib.blake2b(msg, key=key, digest_size=16).digest()


def fair_order(records: Sequence[SubscriberRecord], fairness_seed: int | str, transaction_id: str) -> list:
    """Keyed pseudo-random permutation, reproducible from (seed, transaction)."""
    if not records:
        raise EmptyInput("nothing to order")
    return sorted(records, key=lambda r: (fairness_key(fairness_seed, transaction_id, r.subscriber_id),
                                          r.subscriber_id))


@dataclass
class BroadcastReport:
    transaction_id: str
    targets: list[str] = field(default_factory=list)
    skipped: list[tuple[str, SkipReason]] = field(default_factory=list)

    def to_doc(self) -> dict[str, Any]:
        return {
            "skipped": [{"reason": r.value, "subscriber_id": s} for s, r in self.skipped],
            "targets": list(self.targets),
            "transaction_id": self.transaction_id,
        }


Send = Callable[[SubscriberRecord, bytes], bool]


def broadcast_search(
    e: Envelope,
    registry: Registry,
    policies: Sequence[Policy],
    send: Send,
    *,
    fairness_seed: int | str = 0,
    verify: Optional[Callable[[Envelope], Verdict]] = None,
) -> BroadcastReport:
    """Fan a search out to every eligible provider and account for the rest.

    ``send(record, data)`` delivers the untouched canonical bytes and
    reports success. Candidates are all BPP records of the registry; each
    ends up in exactly one of ``targets`` or ``skipped``.
    """
    if e.context.action != "search":
        raise NotASearch(f"gateway only broadcasts search, got {e.context.action!r}")
    if verify is not None:
        verdict = verify(e)
        if not verdict.ok:
            raise SenderUnverified(f"{e.context.bap_id}: {verdict.value}")
    data = encode_envelope(e)
    report = BroadcastReport(e.context.transaction_id)
    candidates = registry.candidates(Role.BPP)
    if not candidates:
        return report
    for record in fair_order(candidates, fairness_seed, e.context.transaction_id):
        sid = record.subscriber_id
        if record.status is not Status.ACTIVE:
            report.skipped.append((sid, SkipReason.SUSPENDED))
        elif e.context.domain not in record.domains:
            report.skipped.append((sid, SkipReason.DOMAIN_MISMATCH))
        elif not evaluate_all(policies, e, record).allowed:
            report.skipped.append((sid, SkipReason.POLICY_DENIED))
        elif send(record, data):
            report.targets.append(sid)
        else:
            report.skipped.append((sid, SkipReason.UNREACHABLE))
    return report


class Gateway:
    """A stateless gateway: configuration only, nothing per transaction."""

    def __init__(
        self,
        subscriber_id: str,
        registry: Registry,
        policies: Sequence[Policy] = (),
        fairness_seed: int | str = 0,
        *,
        keys: Optional[Callable[[str, str], Optional[bytes]]] = None,
        actions: ActionRegistry = CORE_ACTIONS,
        independent: bool = True,
    ) -> None:
        if not independent:
            raise ValueError("gateway operator must be independent of buyer and seller participants")
        self.subscriber_id = subscriber_id
        self.registry = registry
        self.policies = tuple(policies)
        self.fairness_seed = fairness_seed
        self.keys = keys or registry.resolve_key
        self.actions = actions

    def verifier(self, now=None) -> Callable[[Envelope], Verdict]:
        from opennet.signing import verify_envelope

        return lambda e: verify_envelope(e, e.signature, self.keys, now=now)

    def handle(self, data: bytes, send: Send, *, now=None) -> BroadcastReport:
        e = decode_envelope(data, self.actions, canonical=True)
        return broadcast_search(e, self.registry, self.policies, send,
                                fairness_seed=self.fairness_seed, verify=self.verifier(now))


class GatewayNode:
    """A gateway on the network: receipt checks, then broadcast via retrying sends."""

    role = Role.BG

    def __init__(self, gateway: Gateway, endpoint: str, *, transport, clock=None, retry=None,
                 log=None, on_report: Optional[Callable[[BroadcastReport], None]] = None) -> None:
        from opennet.clock import ManualClock
        from opennet.node import Peer, RetryPolicy

        self.gateway = gateway
        self.subscriber_id = gateway.subscriber_id
        self.endpoint = endpoint
        self._peer = Peer(gateway.subscriber_id, endpoint, keys=gateway.keys, transport=transport,
                          clock=clock or ManualClock(), retry=retry or RetryPolicy(),
                          actions=gateway.actions, log=log)
        self.on_report = on_report

    @property
    def clock(self):
        return self._peer.clock

    @clock.setter
    def clock(self, value) -> None:
        self._peer.clock = value

    def log(self, direction: str, ctx, verdict: str, **kw) -> None:
        self._peer.log(direction, ctx, verdict, **kw)

    def accept(self, data: bytes, *, now=None):
        from opennet.node import Ack, ErrorCode

        now = now or self._peer.clock.now()
        try:
            e = decode_envelope(data, self.gateway.actions, canonical=True)
        except (MalformedDocument, UnknownAction) as exc:
            return Ack.nack(ErrorCode.INVALID_MESSAGE, str(exc)), None
        if e.context.action != "search":
            return Ack.nack(ErrorCode.INVALID_MESSAGE, "gateway only accepts search"), e
        verdict = self.gateway.verifier(now)(e)
        if not verdict.ok:
            return Ack.nack(ErrorCode.SIGNATURE_INVALID, verdict.value), e
        if e.context.is_expired(now):
            return Ack.nack(ErrorCode.TTL_EXPIRED), e
        decision = evaluate_all(self.gateway.policies, e)
        if not decision.allowed:
            return Ack.nack(ErrorCode.POLICY_DENIED, decision.reason), e
        return Ack(), e

    def process(self, e: Envelope) -> BroadcastReport:
        from opennet.errors import TransportFailure

        ctx = e.context

        def send(record: SubscriberRecord, data: bytes) -> bool:
            try:
                return self._peer.send(record.endpoint, data, ctx, peer=record.subscriber_id).ok
            except TransportFailure:
                return False

        self._peer.log("in", ctx, "broadcast", peer=ctx.bap_id)
        report = broadcast_search(e, self.gateway.registry, self.gateway.policies, send,
                                  fairness_seed=self.gateway.fairness_seed)
        for sid, reason in report.skipped:
            self._peer.log("out", ctx, f"skipped:{reason.value}", peer=sid)
        if self.on_report:
            self.on_report(report)
        return report

    def receive(self, data: bytes):
        ack, e = self.accept(data)
        self._peer.log("in", e.context if e else None, str(ack), peer=e.context.bap_id if e else "")
        if ack.ok:
            self.process(e)
        return ack
