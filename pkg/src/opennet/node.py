"""BAP and BPP node engines.

A node splits receipt in two:

* :meth:`Node.accept` is the synchronous receipt. It depends only on the
  bytes, the node's configuration and the registry (decoding, signature,
  ttl, domain support) and yields ACK or NACK.
* :meth:`Node.process` is the stateful half run once the message has
  arrived: deduplication, correlation, lifecycle, business logic and the
  asynchronous callback.

In-process transports call both back to back (:meth:`Node.receive`); the
simulator evaluates the receipt at send time and queues the processing at
arrival time.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Callable, Iterable, Optional, Protocol

from opennet.clock import Clock, ManualClock
from opennet.core.actions import CORE_ACTIONS, ActionRegistry
from opennet.core.codec import canonical_bytes, decode_envelope, encode_envelope, load_document
from opennet.core.lifecycle import OrderLifecycle, order_transition
from opennet.core.model import (
    CORE_VERSION,
    Context,
    Envelope,
    IdFactory,
    format_timestamp,
    new_context,
    random_id,
)
from opennet.core.schema import resolve
from opennet.errors import (
    IllegalTransition,
    MalformedDocument,
    NonMonotonicHistory,
    ProtocolError,
    TransportFailure,
    Undeliverable,
    UnknownAction,
)
from opennet.registry import Role
from opennet.signing import KeyPair, KeyResolver, sign, verify_envelope


class ErrorCode(str, Enum):
    DOMAIN_NOT_SUPPORTED = "DOMAIN_NOT_SUPPORTED"
    SIGNATURE_INVALID = "SIGNATURE_INVALID"
    TTL_EXPIRED = "TTL_EXPIRED"
    ILLEGAL_STATE = "ILLEGAL_STATE"
    POLICY_DENIED = "POLICY_DENIED"
    INVALID_MESSAGE = "INVALID_MESSAGE"


@dataclass(frozen=True)
class Ack:
    status: str = "ACK"
    code: Optional[ErrorCode] = None
    message: str = ""

    @classmethod
    def nack(cls, code: ErrorCode, message: str = "") -> "Ack":
        return cls("NACK", ErrorCode(code), message)

    @property
    def ok(self) -> bool:
        return self.status == "ACK"

    def __str__(self) -> str:
        return "ACK" if self.ok else f"NACK:{self.code.value}"

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"status": self.status}
        if self.code is not None:
            doc["error"] = {"code": self.code.value, "message": self.message}
        return doc

    def encode(self) -> bytes:
        return canonical_bytes(self.to_doc())

    @classmethod
    def decode(cls, data: bytes) -> "Ack":
        doc = load_document(data)
        if not isinstance(doc, dict) or doc.get("status") not in ("ACK", "NACK"):
            raise MalformedDocument("not an ack")
        err = doc.get("error")
        if err is None:
            return cls(doc["status"])
        return cls(doc["status"], ErrorCode(err["code"]), err.get("message", ""))


ACK = Ack()


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    backoff_base: float = 0.1  # seconds

    def __post_init__(self) -> None:
        if self.max_attempts < 1 or self.backoff_base < 0:
            raise ValueError("max_attempts >= 1 and backoff_base >= 0 required")

    def delay(self, attempt: int) -> float:
        return self.backoff_base * 2 ** (attempt - 1)


@dataclass(frozen=True)
class NodeConfig:
    subscriber_id: str
    role: Role
    endpoint: str
    supported_domains: frozenset[str] = frozenset()
    region: str = ""
    key: Optional[KeyPair] = None
    registries: tuple[str, ...] = ()
    retry: RetryPolicy = RetryPolicy()
    dedupe_window: float = 600.0
    core_version: str = CORE_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "supported_domains", frozenset(self.supported_domains))
        if self.role not in (Role.BAP, Role.BPP):
            raise ValueError("a node is either a BAP or a BPP")
        if self.role is Role.BPP and not self.supported_domains:
            raise ValueError(f"{self.subscriber_id}: a BPP must support at least one domain")


class Transport(Protocol):
    def request(self, sender: str, endpoint: str, data: bytes) -> Ack: ...


class Receiver(Protocol):
    def receive(self, data: bytes) -> Ack: ...


class DirectTransport:
    """Synchronous in-process transport keyed by endpoint.

    ``fault(sender, endpoint, attempt_no)`` may return True to lose a
    delivery attempt; ``attempts`` counts every attempt per endpoint.
    """

    def __init__(self, fault: Optional[Callable[[str, str, int], bool]] = None) -> None:
        self.endpoints: dict[str, Receiver] = {}
        self.fault = fault
        self.attempts: dict[str, int] = {}
        self.sent: list[tuple[str, str, bytes]] = []

    def bind(self, endpoint: str, receiver: Receiver) -> None:
        self.endpoints[endpoint] = receiver

    def request(self, sender: str, endpoint: str, data: bytes) -> Ack:
        n = self.attempts[endpoint] = self.attempts.get(endpoint, 0) + 1
        if endpoint not in self.endpoints or (self.fault and self.fault(sender, endpoint, n)):
            raise Undeliverable(endpoint)
        self.sent.append((sender, endpoint, data))
        return self.endpoints[endpoint].receive(data)


@dataclass
class PendingEntry:
    transaction_id: str
    message_id: str
    action: str
    expected: str
    deadline: datetime
    attempts: int = 1  # transmissions of the request, retransmissions included
    multi_shot: bool = False
    matches: int = 0
    data: bytes = b""
    endpoints: tuple[str, ...] = ()


class PendingTable:
    def __init__(self) -> None:
        self._entries: dict[tuple[str, str], PendingEntry] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[PendingEntry]:
        return list(self._entries.values())

    def get(self, transaction_id: str, message_id: str) -> Optional[PendingEntry]:
        return self._entries.get((transaction_id, message_id))

    def add(self, entry: PendingEntry) -> None:
        with self._lock:
            self._entries[(entry.transaction_id, entry.message_id)] = entry

    def discard(self, transaction_id: str, message_id: str) -> None:
        with self._lock:
            self._entries.pop((transaction_id, message_id), None)

    def match(self, transaction_id: str, callback: str, now: datetime) -> Optional[PendingEntry]:
        with self._lock:
            for key, entry in self._entries.items():
                if entry.transaction_id == transaction_id and entry.expected == callback and now <= entry.deadline:
                    entry.matches += 1
                    if not entry.multi_shot:
                        del self._entries[key]
                    return entry
        return None

    def expire(self, now: datetime) -> list[PendingEntry]:
        """Remove and return entries past their deadline (each exactly once)."""
        with self._lock:
            gone = [k for k, e in self._entries.items() if now > e.deadline]
            return [self._entries.pop(k) for k in gone]


class Dedupe(str, Enum):
    FRESH = "Fresh"
    DUPLICATE = "Duplicate"


class DedupeStore:
    """Remembers (transaction_id, message_id, action) for ``window`` seconds."""

    def __init__(self, window: float) -> None:
        self.window = timedelta(seconds=window)
        self._seen: dict[tuple[str, str, str], datetime] = {}
        self._lock = threading.Lock()

    def check(self, ctx: Context, now: datetime) -> Dedupe:
        key = (ctx.transaction_id, ctx.message_id, ctx.action)
        with self._lock:
            seen = self._seen.get(key)
            if seen is not None and now - seen <= self.window:
                return Dedupe.DUPLICATE
            self._seen[key] = now
            if len(self._seen) > 4096:
                self._prune(now)
            return Dedupe.FRESH

    def _prune(self, now: datetime) -> None:
        for k in [k for k, t in self._seen.items() if now - t > self.window]:
            del self._seen[k]


class Outcome(str, Enum):
    MATCHED = "matched"
    ORPHAN = "orphan"
    DUPLICATE = "duplicate"
    STALE = "stale"
    ERROR = "error"
    HANDLED = "handled"
    SILENT = "silent"


@dataclass(frozen=True)
class TransactionHandle:
    transaction_id: str
    domain: str
    message_id: str = ""
    bpp_id: Optional[str] = None
    bpp_uri: Optional[str] = None


@dataclass(frozen=True)
class Offer:
    bpp_id: str
    bpp_uri: str
    payload: dict
    received: datetime


class Mutator:
    """Identity hooks on a node's outbound path; conformance mutants override them."""

    def callback_action(self, action: str, request: Envelope) -> Optional[str]:
        return action

    def before_sign(self, callback: str, payload: dict) -> dict:
        return payload

    def after_sign(self, e: Envelope) -> Envelope:
        return e

    def on_ack(self, ack: Ack, e: Optional[Envelope]) -> Ack:
        return ack


Business = Callable[[str, dict, Context], Optional[dict]]
Listener = Callable[["Node", Envelope, Outcome], None]
LogSink = Callable[[dict], None]


def fulfillment_state(payload: dict) -> Optional[str]:
    codes = resolve(payload, "order.fulfillments[].state.descriptor.code")
    if not codes:
        return None
    return codes[0] if len(set(codes)) == 1 else "mixed"


def form_link(payload: dict) -> Optional[str]:
    urls = resolve(payload, "order.xinput.form.url")
    return urls[0] if urls else None


class Peer:
    """Shared plumbing: signing, logging and retrying sends."""

    role: Role

    def __init__(self, subscriber_id: str, endpoint: str, *, keys: KeyResolver, transport: Transport,
                 clock: Clock, retry: RetryPolicy, actions: ActionRegistry, log: Optional[LogSink]) -> None:
        self.subscriber_id = subscriber_id
        self.endpoint = endpoint
        self.keys = keys
        self.transport = transport
        self.clock = clock
        self.retry = retry
        self.actions = actions
        self._log = log

    def log(self, direction: str, ctx: Optional[Context], verdict: str, *, peer: str = "",
            at: Optional[datetime] = None, **extra: Any) -> None:
        if self._log is None:
            return
        rec = {
            "t": format_timestamp(at or self.clock.now()),
            "node": self.subscriber_id,
            "dir": direction,
            "peer": peer,
            "action": ctx.action if ctx else "",
            "txn": ctx.transaction_id if ctx else "",
            "msg": ctx.message_id if ctx else "",
            "verdict": verdict,
        }
        rec.update(extra)
        self._log(rec)

    def send(self, endpoint: str, data: bytes, ctx: Context, *, peer: str = "") -> Ack:
        """Deliver with exponential backoff; raises TransportFailure when exhausted."""
        in_doubt = False
        for attempt in range(1, self.retry.max_attempts + 1):
            try:
                ack = self.transport.request(self.subscriber_id, endpoint, data)
            except Undeliverable as exc:
                in_doubt = in_doubt or exc.in_doubt
                self.log("out", ctx, "lost", peer=peer or endpoint, attempt=attempt)
                if attempt < self.retry.max_attempts:
                    self.clock.sleep(self.retry.delay(attempt))
                continue
            self.log("out", ctx, str(ack), peer=peer or endpoint, attempt=attempt)
            return ack
        verdict = "in-doubt" if in_doubt else "undeliverable"
        self.log("out", ctx, verdict, peer=peer or endpoint, attempt=self.retry.max_attempts)
        raise TransportFailure(endpoint, self.retry.max_attempts, in_doubt=in_doubt)


class Node(Peer):
    def __init__(
        self,
        config: NodeConfig,
        *,
        keys: KeyResolver,
        transport: Transport,
        clock: Optional[Clock] = None,
        business: Optional[Business] = None,
        actions: ActionRegistry = CORE_ACTIONS,
        ids: IdFactory = random_id,
        log: Optional[LogSink] = None,
        mutator: Optional[Mutator] = None,
    ) -> None:
        if config.key is None:
            raise ValueError(f"{config.subscriber_id}: node needs a key pair")
        super().__init__(config.subscriber_id, config.endpoint, keys=keys, transport=transport,
                         clock=clock or ManualClock(), retry=config.retry, actions=actions, log=log)
        self.config = config
        self.role = config.role
        self.business = business
        self.ids = ids
        self.mutator = mutator or Mutator()
        self.lifecycles: dict[str, OrderLifecycle] = {}
        self.pending = PendingTable()
        self.dedupe = DedupeStore(config.dedupe_window)
        self.offers: dict[str, list[Offer]] = {}
        self.last_callback: dict[str, Envelope] = {}
        self.errors: dict[str, list[dict]] = {}
        self.listeners: list[Listener] = []
        self._replies: dict[tuple[str, str, str], tuple[str, bytes, Context, datetime]] = {}
        self._lock = threading.RLock()

    def __repr__(self) -> str:
        return f"Node({self.subscriber_id!r}, {self.role.value})"

    # -- receipt ---------------------------------------------------------
    def accept(self, data: bytes, *, now: Optional[datetime] = None) -> tuple[Ack, Optional[Envelope]]:
        now = now or self.clock.now()
        env = None
        try:
            env = decode_envelope(data, self.actions, canonical=True)
            ack = self._check(env, now)
        except (MalformedDocument, UnknownAction) as exc:
            ack = Ack.nack(ErrorCode.INVALID_MESSAGE, str(exc))
        return self.mutator.on_ack(ack, env), env

    def _check(self, env: Envelope, now: datetime) -> Ack:
        ctx = env.context
        if self.role is Role.BPP and not self.actions.is_request(ctx.action):
            return Ack.nack(ErrorCode.INVALID_MESSAGE, f"{ctx.action} is not a request")
        if self.role is Role.BAP:
            if not self.actions.is_callback(ctx.action):
                return Ack.nack(ErrorCode.INVALID_MESSAGE, f"{ctx.action} is not a callback")
            if ctx.bap_id != self.subscriber_id:
                return Ack.nack(ErrorCode.INVALID_MESSAGE, "addressed to another BAP")
        verdict = verify_envelope(env, env.signature, self.keys, now=now)
        if not verdict.ok:
            return Ack.nack(ErrorCode.SIGNATURE_INVALID, verdict.value)
        if ctx.is_expired(now):
            return Ack.nack(ErrorCode.TTL_EXPIRED, f"expired at {format_timestamp(ctx.expires_at())}")
        if self.role is Role.BPP and ctx.domain not in self.config.supported_domains:
            return Ack.nack(ErrorCode.DOMAIN_NOT_SUPPORTED, f"{ctx.domain} not served")
        return ACK

    def receive(self, data: bytes) -> Ack:
        ack, env = self.accept(data)
        self.log("in", env.context if env else None, str(ack), peer=_sender(env))
        if ack.ok and env is not None:
            self.process(env)
        return ack

    def process(self, env: Envelope) -> Outcome:
        with self._lock:
            if self.role is Role.BPP:
                return self._process_request(env)
            return self._process_callback(env)

    def dedupe_check(self, ctx: Context, now: Optional[datetime] = None) -> Dedupe:
        return self.dedupe.check(ctx, now or self.clock.now())

    # -- BAP -------------------------------------------------------------
    def lifecycle(self, transaction_id: str) -> OrderLifecycle:
        return self.lifecycles.get(transaction_id) or OrderLifecycle(transaction_id)

    def request(
        self,
        action: str,
        payload: dict,
        targets: str | Iterable[str],
        *,
        domain: str,
        transaction_id: Optional[str] = None,
        bpp_id: Optional[str] = None,
        bpp_uri: Optional[str] = None,
        ttl: Optional[int] = None,
    ) -> tuple[TransactionHandle, Ack]:
        """Sign and send a request, registering the expected callback first.

        ``targets`` is a gateway or BPP endpoint, or several BPP endpoints
        for a gateway-less search. The returned ack is the first positive
        receipt (or the last negative one). Nothing is recorded if no
        target acknowledged, with one exception: when every send failed but
        some attempt timed out, the request may have arrived, so the pending
        entry and lifecycle step are kept and the raised TransportFailure
        carries ``in_doubt`` and the ``handle``; the entry then either
        matches a callback or times out.
        """
        if self.role is not Role.BAP:
            raise ProtocolError("only a BAP issues requests")
        endpoints = [targets] if isinstance(targets, str) else list(targets)
        with self._lock:
            now = self.clock.now()
            txn = transaction_id or self.ids()
            before = self.lifecycles.get(txn)
            lc = order_transition(self.lifecycle(txn), action, now, actions=self.actions)
            ctx = new_context(domain, action, self.subscriber_id, self.endpoint, txn, ttl,
                              bpp_id=bpp_id, bpp_uri=bpp_uri, now=now, ids=self.ids,
                              actions=self.actions, core_version=self.config.core_version)
            payload = self.mutator.before_sign(action, payload)
            env = sign(Envelope(ctx, payload), self.config.key, self.subscriber_id, ctx.ttl, now=now)
            env = self.mutator.after_sign(env)
            expected = self.actions.pair_callback(action)
            data = encode_envelope(env)
            entry = PendingEntry(txn, ctx.message_id, action, expected, ctx.expires_at(),
                                 multi_shot=(action == "search"), data=data, endpoints=tuple(endpoints))
            self.pending.add(entry)
            self.lifecycles[txn] = lc
        handle = TransactionHandle(txn, domain, ctx.message_id, bpp_id, bpp_uri)
        best: Optional[Ack] = None
        failure: Optional[TransportFailure] = None
        for endpoint in endpoints:
            try:
                ack = self.send(endpoint, data, ctx)
            except TransportFailure as exc:
                if failure is None or exc.in_doubt:
                    failure = exc
                continue
            if best is None or (ack.ok and not best.ok):
                best = ack
        if best is None and failure is not None and failure.in_doubt:
            failure.handle = handle
            raise failure
        if best is None or not best.ok:
            with self._lock:
                self.pending.discard(txn, ctx.message_id)
                if before is None:
                    self.lifecycles.pop(txn, None)
                else:
                    self.lifecycles[txn] = before
            if best is None:
                assert failure is not None
                raise failure
        return handle, best

    def retransmit(self, transaction_id: str, message_id: str) -> Optional[Ack]:
        """Resend an unanswered request byte for byte.

        Receivers recognise the copy as a duplicate and replay their
        callback, so a lost callback is recovered without a second logical
        event. Returns None once the entry is gone (matched or expired) or
        its transmission budget of ``max_attempts`` is spent.
        """
        with self._lock:
            entry = self.pending.get(transaction_id, message_id)
            now = self.clock.now()
            if entry is None or entry.attempts >= self.retry.max_attempts or now > entry.deadline:
                return None
            entry.attempts += 1
        env = decode_envelope(entry.data, self.actions)
        best: Optional[Ack] = None
        for endpoint in entry.endpoints:
            try:
                ack = self.send(endpoint, entry.data, env.context)
            except TransportFailure:
                continue
            if best is None or (ack.ok and not best.ok):
                best = ack
        return best

    def correlate_callback(self, env: Envelope) -> Outcome:
        with self._lock:
            return self._process_callback(env)

    def _process_callback(self, env: Envelope) -> Outcome:
        ctx = env.context
        now = self.clock.now()
        if self.dedupe.check(ctx, now) is Dedupe.DUPLICATE:
            self.log("in", ctx, Outcome.DUPLICATE.value, at=now, peer=ctx.bpp_id or "")
            return Outcome.DUPLICATE
        entry = self.pending.match(ctx.transaction_id, ctx.action, now)
        if entry is None:
            self.log("in", ctx, Outcome.ORPHAN.value, at=now, peer=ctx.bpp_id or "")
            return self._notify(env, Outcome.ORPHAN)
        if isinstance(env.payload.get("error"), dict):
            self.errors.setdefault(ctx.transaction_id, []).append(env.payload["error"])
            self.log("in", ctx, Outcome.ERROR.value, at=now, peer=ctx.bpp_id or "",
                     code=str(env.payload["error"].get("code", "")))
            return self._notify(env, Outcome.ERROR)
        if ctx.action == "on_search":
            self.offers.setdefault(ctx.transaction_id, []).append(
                Offer(ctx.bpp_id or "", ctx.bpp_uri or "", env.payload, now))
        try:
            lc = order_transition(
                self.lifecycle(ctx.transaction_id), ctx.action, now,
                fulfillment_state=fulfillment_state(env.payload),
                form_link=form_link(env.payload), actions=self.actions)
        except (IllegalTransition, NonMonotonicHistory):
            self.log("in", ctx, Outcome.STALE.value, at=now, peer=ctx.bpp_id or "")
            return self._notify(env, Outcome.STALE)
        self.lifecycles[ctx.transaction_id] = lc
        self.last_callback[ctx.transaction_id] = env
        self.log("in", ctx, Outcome.MATCHED.value, at=now, peer=ctx.bpp_id or "", state=lc.state.value)
        return self._notify(env, Outcome.MATCHED)

    def _notify(self, env: Envelope, outcome: Outcome) -> Outcome:
        for listener in list(self.listeners):
            listener(self, env, outcome)
        return outcome

    def expire_pending(self, now: Optional[datetime] = None) -> list[PendingEntry]:
        now = now or self.clock.now()
        expired = self.pending.expire(now)
        for e in expired:
            verdict = "closed" if e.multi_shot and e.matches else "timeout"
            if self._log is not None:
                self._log({"t": format_timestamp(now), "node": self.subscriber_id, "dir": "local",
                           "peer": "", "action": e.expected, "txn": e.transaction_id,
                           "msg": e.message_id, "verdict": verdict})
        return expired

    # -- BPP -------------------------------------------------------------
    def handle(self, data: bytes) -> tuple[Ack, Optional[Envelope]]:
        """Receipt plus processing; returns the ack and the callback sent, if any."""
        ack, env = self.accept(data)
        self.log("in", env.context if env else None, str(ack), peer=_sender(env))
        if not ack.ok or env is None:
            return ack, None
        with self._lock:
            self._last_callback = None
            self._process_request(env)
            return ack, self._last_callback

    def _process_request(self, env: Envelope) -> Outcome:
        ctx = env.context
        now = self.clock.now()
        self._last_callback: Optional[Envelope] = None
        if self.dedupe.check(ctx, now) is Dedupe.DUPLICATE:
            self.log("in", ctx, Outcome.DUPLICATE.value, at=now, peer=ctx.bap_id)
            self._replay(ctx)
            return Outcome.DUPLICATE
        self.log("in", ctx, Outcome.HANDLED.value, at=now, peer=ctx.bap_id)
        callback = self.actions.pair_callback(ctx.action)
        try:
            lc = order_transition(self.lifecycle(ctx.transaction_id), ctx.action, now, actions=self.actions)
        except (IllegalTransition, NonMonotonicHistory) as exc:
            error = {"code": ErrorCode.ILLEGAL_STATE.value, "message": str(exc)}
            self._emit(ctx, callback, {"error": error}, advance=False)
            return Outcome.ERROR
        self.lifecycles[ctx.transaction_id] = lc
        payload = self.business(ctx.action, env.payload, ctx) if self.business else {}
        if payload is None:
            return Outcome.SILENT
        self._emit(ctx, callback, payload, advance=True, request=env)
        return Outcome.HANDLED

    def _replay(self, req: Context) -> None:
        """Answer a repeated request with the callback already sent for it."""
        reply = self._replies.get((req.transaction_id, req.message_id, req.action))
        if reply is None:
            return
        uri, data, ctx, _ = reply
        self.log("out", ctx, "replay", peer=req.bap_id)
        try:
            self.send(uri, data, ctx, peer=req.bap_id)
        except TransportFailure:
            pass

    def _remember(self, req: Context, data: bytes, ctx: Context, now: datetime) -> None:
        self._replies[(req.transaction_id, req.message_id, req.action)] = (req.bap_uri, data, ctx, now)
        if len(self._replies) > 4096:
            window = self.dedupe.window
            for k in [k for k, r in self._replies.items() if now - r[3] > window]:
                del self._replies[k]

    def _emit(self, req: Context, callback: str, payload: dict, *, advance: bool,
              request: Optional[Envelope] = None) -> Optional[Envelope]:
        if request is not None:
            callback = self.mutator.callback_action(callback, request)
            if callback is None:
                return None
        payload = self.mutator.before_sign(callback, payload)
        now = self.clock.now()
        ctx = Context(
            domain=req.domain, action=callback, core_version=self.config.core_version,
            bap_id=req.bap_id, bap_uri=req.bap_uri, bpp_id=self.subscriber_id, bpp_uri=self.endpoint,
            transaction_id=req.transaction_id, message_id=self.ids(), timestamp=now, ttl=req.ttl,
        )
        env = sign(Envelope(ctx, payload), self.config.key, self.subscriber_id, ctx.ttl, now=now)
        env = self.mutator.after_sign(env)
        if advance:
            try:
                self.lifecycles[req.transaction_id] = order_transition(
                    self.lifecycle(req.transaction_id), callback, now,
                    fulfillment_state=fulfillment_state(payload), form_link=form_link(payload),
                    actions=self.actions)
            except (IllegalTransition, UnknownAction, NonMonotonicHistory):
                pass
        self._last_callback = env
        data = encode_envelope(env)
        self._remember(req, data, ctx, now)
        try:
            self.send(req.bap_uri, data, ctx, peer=req.bap_id)
        except TransportFailure:
            pass
        return env


def _sender(env: Optional[Envelope]) -> str:
    if env is None:
        return ""
    ctx = env.context
    return (ctx.bpp_id or "") if ctx.action.startswith("on_") else ctx.bap_id
