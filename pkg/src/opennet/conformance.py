"""Certification bot.

The bot plays the counterpart of a target node (a BAP against a BPP and
vice versa), follows a scripted suite, grades every message it receives
and probes error handling with deliberately broken messages. Suites are
data; nothing here is specific to a domain.

Each step is graded by the first failing check in the fixed order
ENVELOPE, SIGNATURE, FSM_ORDER, ADAPTATION, ERROR_CODE.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field, replace
from datetime import timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from opennet.adaptation import DomainAdaptation, check_compat, validate_payload
from opennet.business import DEFAULT_INTENTS, ReferenceBuyer, ReferenceSeller
from opennet.clock import ManualClock
from opennet.core.actions import CORE_ACTIONS
from opennet.core.codec import decode_envelope, encode_envelope, load_document
from opennet.core.lifecycle import OrderLifecycle, order_transition
from opennet.core.model import Context, Envelope, new_context, seeded_ids
from opennet.core.schema import check_core_path, delete_path, resolve, set_path
from opennet.errors import (
    IllegalTransition,
    MalformedConfig,
    MalformedDocument,
    NonMonotonicHistory,
    TargetUnreachable,
    TransportFailure,
    Undeliverable,
    UnknownAction,
)
from opennet.node import Ack, DirectTransport, ErrorCode, Mutator, Node, NodeConfig
from opennet.registry import Registry, Role, SubscriberRecord
from opennet.signing import generate_keypair, sign, verify_envelope

SUITES_DIR = Path(__file__).parent / "data" / "suites"


class Check(str, Enum):
    ENVELOPE = "ENVELOPE"
    SIGNATURE = "SIGNATURE"
    FSM_ORDER = "FSM_ORDER"
    ADAPTATION = "ADAPTATION"
    ERROR_CODE = "ERROR_CODE"


FAULT_CODES = {
    "unsigned": ErrorCode.SIGNATURE_INVALID,
    "tampered": ErrorCode.SIGNATURE_INVALID,
    "wrong_domain": ErrorCode.DOMAIN_NOT_SUPPORTED,
    "expired": ErrorCode.TTL_EXPIRED,
    "out_of_order": ErrorCode.ILLEGAL_STATE,
}
# faults a BAP can be held to: it has no domain list and no request lifecycle to violate
BAP_FAULTS = frozenset({"unsigned", "tampered", "expired"})


# -- suites ----------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    step_id: str
    action: str
    payload: Optional[dict] = None
    assertions: tuple[dict, ...] = ()


@dataclass(frozen=True)
class Flow:
    flow_id: str
    steps: tuple[Step, ...]


@dataclass(frozen=True)
class Fault:
    fault_id: str
    kind: str
    action: str = "search"
    expect_code: ErrorCode = ErrorCode.SIGNATURE_INVALID
    domain: Optional[str] = None


@dataclass(frozen=True)
class CertSuite:
    suite_id: str
    domain: str
    target_role: Role
    flows: tuple[Flow, ...]
    fault_injections: tuple[Fault, ...] = ()

    def step_names(self) -> list[str]:
        names = [f"{f.flow_id}/{s.step_id}" for f in self.flows for s in f.steps]
        return names + [f"fault/{x.fault_id}" for x in self.fault_injections]

    def search_payload(self) -> dict:
        for f in self.flows:
            for s in f.steps:
                if s.action == "search" and s.payload is not None:
                    return s.payload
        return DEFAULT_INTENTS.get(self.domain, {"intent": {}})


def _assertion(doc: Any, where: str) -> dict:
    if not isinstance(doc, dict) or not isinstance(doc.get("path"), str):
        raise MalformedConfig(f"{where}: assertion needs a path")
    if len({"equals", "in", "present"} & set(doc)) != 1:
        raise MalformedConfig(f"{where}: assertion needs exactly one of equals, in, present")
    check_core_path(doc["path"])
    return doc


def load_suite(source: Union[bytes, str, Path, Mapping[str, Any]]) -> CertSuite:
    if isinstance(source, Path):
        source = source.read_bytes()
    if isinstance(source, (bytes, str)):
        try:
            source = load_document(source)
        except MalformedDocument as exc:
            raise MalformedConfig(str(exc)) from None
    doc = source
    if not isinstance(doc, Mapping):
        raise MalformedConfig("suite must be an object")
    try:
        suite_id, domain = doc["suite_id"], doc["domain"]
        role = Role(doc.get("target_role", "BPP"))
        flows = []
        for f in doc["flows"]:
            steps = []
            for s in f["steps"]:
                action = s["action"]
                if not CORE_ACTIONS.is_request(action):
                    raise MalformedConfig(f"{suite_id}: step {s.get('step_id')} is not a request action")
                where = f"{suite_id}/{f['flow_id']}/{s.get('step_id', action)}"
                steps.append(Step(s.get("step_id", action), action, s.get("payload"),
                                  tuple(_assertion(a, where) for a in s.get("assert", []))))
            flows.append(Flow(f["flow_id"], tuple(steps)))
        faults = []
        for x in doc.get("fault_injections", []):
            kind = x["kind"]
            if kind not in FAULT_CODES:
                raise MalformedConfig(f"{suite_id}: unknown fault kind {kind!r}")
            if role is Role.BAP and kind not in BAP_FAULTS:
                raise MalformedConfig(f"{suite_id}: fault {kind!r} does not apply to a BAP")
            faults.append(Fault(x.get("fault_id", kind), kind, x.get("action", "search"),
                                ErrorCode(x.get("expect_code", FAULT_CODES[kind])), x.get("domain")))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MalformedConfig):
            raise
        raise MalformedConfig(f"malformed suite: {exc}") from None
    if role not in (Role.BAP, Role.BPP):
        raise MalformedConfig("target_role is BAP or BPP")
    suite = CertSuite(suite_id, domain, role, tuple(flows), tuple(faults))
    names = suite.step_names()
    if len(names) != len(set(names)):
        raise MalformedConfig(f"{suite_id}: step names must be unique")
    return suite


def shipped_suites() -> list[CertSuite]:
    return [load_suite(p) for p in sorted(SUITES_DIR.glob("*.json"))]


# -- reports ---------------------------------------------------------------

@dataclass(frozen=True)
class StepVerdict:
    step: str
    check: Check
    passed: bool
    detail: str = ""

    def to_doc(self) -> dict:
        return {"check": self.check.value, "detail": self.detail, "passed": self.passed, "step": self.step}


@dataclass
class CertReport:
    suite_id: str
    target: str
    steps: list[StepVerdict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.steps)

    @property
    def failures(self) -> list[StepVerdict]:
        return [s for s in self.steps if not s.passed]

    def first_failure(self) -> Optional[StepVerdict]:
        fails = self.failures
        return fails[0] if fails else None

    def to_doc(self) -> dict:
        return {"passed": self.passed, "steps": [s.to_doc() for s in self.steps],
                "suite_id": self.suite_id, "target": self.target}

    def summary(self) -> str:
        lines = [f"{self.suite_id} against {self.target}: {'PASS' if self.passed else 'FAIL'}"]
        for s in self.steps:
            mark = "ok  " if s.passed else "FAIL"
            lines.append(f"  {mark} {s.step:<28} {s.check.value:<10} {s.detail}")
        return "\n".join(lines)


class _Fail(Exception):
    def __init__(self, check: Check, detail: str) -> None:
        super().__init__(detail)
        self.check = check
        self.detail = detail


# -- targets ---------------------------------------------------------------

@dataclass
class Target:
    """A node under test reachable through an in-process transport."""

    node: Node
    transport: DirectTransport
    registry: Registry
    buyer: ReferenceBuyer = field(default_factory=ReferenceBuyer)

    @property
    def subscriber_id(self) -> str:
        return self.node.subscriber_id

    @property
    def endpoint(self) -> str:
        return self.node.endpoint

    @property
    def role(self) -> Role:
        return self.node.role

    def trigger(self, action: str, *, domain: str, transaction_id: Optional[str], counterpart: str,
                counterpart_uri: str, payload: Optional[dict], intent: dict) -> None:
        """Ask a BAP target to send its next request to the bot."""
        node = self.node
        if payload is None:
            txn = transaction_id or ""
            last = node.last_callback.get(txn)
            offers = node.offers.get(txn) or []
            payload = self.buyer.next_payload(
                action, intent=intent, offer=offers[0].payload if offers else None,
                last=last.payload if last else None, form_link=node.lifecycle(txn).form_link)
        bpp = {} if action == "search" else {"bpp_id": counterpart, "bpp_uri": counterpart_uri}
        node.request(action, payload, counterpart_uri, domain=domain, transaction_id=transaction_id, **bpp)


def reference_target(role: Union[Role, str], domain: str, *, mutator: Optional[Mutator] = None,
                     subscriber_id: Optional[str] = None) -> Target:
    role = Role(role)
    sid = subscriber_id or f"ref-{role.value.lower()}.{domain}"
    registry = Registry(f"cert-registry.{domain}")
    kp = generate_keypair("test-deterministic", seed=sid)
    domains = {domain} if role is Role.BPP else set()
    endpoint = f"mem://{sid}"
    registry.register(SubscriberRecord(sid, role, domains, endpoint, kp.key_id, kp.verification_key))
    transport = DirectTransport()
    business = ReferenceSeller(f"provider.{domain}", domain) if role is Role.BPP else None
    node = Node(NodeConfig(sid, role, endpoint, domains, key=kp), keys=registry.resolve_key,
                transport=transport, clock=ManualClock(), business=business,
                ids=seeded_ids(sid), mutator=mutator)
    transport.bind(endpoint, node)
    return Target(node, transport, registry)


# -- the bot ---------------------------------------------------------------

class _Inbox:
    def __init__(self) -> None:
        self.items: list[bytes] = []

    def receive(self, data: bytes) -> Ack:
        self.items.append(data)
        return Ack()


@dataclass
class _Received:
    env: Envelope
    check: Optional[_Fail] = None


class CertBot:
    ATTEMPTS = 3

    def __init__(self, target: Target, suite: CertSuite, adaptation: Optional[DomainAdaptation], *,
                 subscriber_id: str = "certbot") -> None:
        if target.role is not suite.target_role:
            raise MalformedConfig(f"suite {suite.suite_id} certifies a {suite.target_role.value}, "
                                  f"target is a {target.role.value}")
        self.target = target
        self.suite = suite
        self.adaptation = adaptation
        self.subscriber_id = subscriber_id
        self.role = Role.BAP if suite.target_role is Role.BPP else Role.BPP
        self.endpoint = f"mem://{subscriber_id}"
        self.key = generate_keypair("test-deterministic", seed=f"{subscriber_id}:{suite.suite_id}")
        self.ids = seeded_ids(f"{subscriber_id}:{suite.suite_id}")
        self.clock = target.node.clock
        self.inbox = _Inbox()
        self.transcript: list[tuple[str, Envelope]] = []
        record = SubscriberRecord(subscriber_id, self.role, {suite.domain} if self.role is Role.BPP else set(),
                                  self.endpoint, self.key.key_id, self.key.verification_key)
        known = target.registry.get(subscriber_id)
        if known is None:
            target.registry.register(record)
        elif known.key_id != self.key.key_id:
            raise MalformedConfig(f"{subscriber_id} already registered with another key")
        target.transport.bind(self.endpoint, self.inbox)
        self.seller = ReferenceSeller(f"certbot.{suite.domain}", suite.domain)

    # plumbing
    def _send(self, endpoint: str, data: bytes) -> Ack:
        for _ in range(self.ATTEMPTS):
            try:
                return self.target.transport.request(self.subscriber_id, endpoint, data)
            except Undeliverable:
                continue
        raise TargetUnreachable(endpoint)

    def _sign(self, ctx: Context, payload: dict) -> Envelope:
        return sign(Envelope(ctx, payload), self.key, self.subscriber_id, ctx.ttl, now=self.clock.now())

    def _context(self, action: str, txn: Optional[str], *, domain: Optional[str] = None,
                 bap: Optional[tuple[str, str]] = None) -> Context:
        now = self.clock.now()
        if self.role is Role.BAP:
            bpp = {} if action == "search" else {"bpp_id": self.target.subscriber_id,
                                                 "bpp_uri": self.target.endpoint}
            return new_context(domain or self.suite.domain, action, self.subscriber_id, self.endpoint, txn,
                               now=now, ids=self.ids, **bpp)
        bap_id, bap_uri = bap or (self.target.subscriber_id, self.target.endpoint)
        return new_context(domain or self.suite.domain, action, bap_id, bap_uri, txn, now=now, ids=self.ids,
                           bpp_id=self.subscriber_id, bpp_uri=self.endpoint)

    def _decode(self, data: bytes, txn: Optional[str]) -> _Received:
        """ENVELOPE then SIGNATURE checks for one inbound message."""
        try:
            env = decode_envelope(data, CORE_ACTIONS, canonical=True)
        except (MalformedDocument, UnknownAction) as exc:
            raise _Fail(Check.ENVELOPE, f"undecodable message: {exc}") from None
        ctx = env.context
        if txn is not None and ctx.transaction_id != txn:
            raise _Fail(Check.ENVELOPE, f"transaction {ctx.transaction_id} is not {txn}")
        if ctx.domain != self.suite.domain:
            raise _Fail(Check.ENVELOPE, f"domain {ctx.domain!r} is not {self.suite.domain!r}")
        own = ctx.bpp_id if self.role is Role.BAP else ctx.bap_id
        if own != self.target.subscriber_id:
            raise _Fail(Check.ENVELOPE, f"sender field names {own!r}")
        verdict = verify_envelope(env, env.signature, self.target.registry.resolve_key, now=self.clock.now())
        if not verdict.ok:
            raise _Fail(Check.SIGNATURE, f"signature {verdict.value}")
        if env.signature.subscriber_id != self.target.subscriber_id:
            raise _Fail(Check.SIGNATURE, f"signed by {env.signature.subscriber_id}")
        return _Received(env)

    def _grade(self, step_name: str, received: list[bytes], txn: Optional[str], expected: str,
               lc: OrderLifecycle) -> tuple[list[Envelope], OrderLifecycle]:
        if not received:
            raise _Fail(Check.FSM_ORDER, f"no {expected} received")
        envs, first_fail = [], None
        seen = set()
        for data in received:
            try:
                env = self._decode(data, txn).env
            except _Fail as f:
                first_fail = first_fail or f
                try:
                    env = decode_envelope(data, CORE_ACTIONS)
                except (MalformedDocument, UnknownAction):
                    continue
            if env.context.message_id in seen:
                continue
            seen.add(env.context.message_id)
            envs.append(env)
            self.transcript.append((step_name, env))
        if first_fail:
            raise _Fail(first_fail.check, first_fail.detail)
        actions = [e.context.action for e in envs]
        if any(a != expected for a in actions):
            raise _Fail(Check.FSM_ORDER, f"expected {expected}, got {','.join(actions)}")
        if len(envs) > 1 and expected != "on_search":
            raise _Fail(Check.FSM_ORDER, f"{len(envs)} distinct {expected} messages")
        return envs, lc

    def _content(self, action: str, payload: dict, assertions: Sequence[dict]) -> None:
        if isinstance(payload.get("error"), dict):
            raise _Fail(Check.ERROR_CODE, f"unexpected error {payload['error'].get('code')}")
        if self.adaptation is not None:
            blocking = [v for v in validate_payload(self.adaptation, action, payload) if v.blocking]
            if blocking:
                raise _Fail(Check.ADAPTATION, "; ".join(str(v) for v in blocking[:3]))
        for a in assertions:
            found = resolve(payload, a["path"])
            if "present" in a:
                ok = bool(found) == bool(a["present"])
            elif "equals" in a:
                ok = bool(found) and all(v == a["equals"] for v in found)
            else:
                ok = bool(found) and all(v in a["in"] for v in found)
            if not ok:
                raise _Fail(Check.ADAPTATION, f"assertion on {a['path']} failed: found {found!r}")

    # runs
    def run(self) -> CertReport:
        report = CertReport(self.suite.suite_id, self.target.subscriber_id)
        for flow in self.suite.flows:
            if self.role is Role.BAP:
                self._run_bpp_flow(flow, report)
            else:
                self._run_bap_flow(flow, report)
        for fault in self.suite.fault_injections:
            name = f"fault/{fault.fault_id}"
            try:
                self._run_fault(fault)
                report.steps.append(StepVerdict(name, Check.ERROR_CODE, True, f"{fault.expect_code.value} as expected"))
            except _Fail as f:
                report.steps.append(StepVerdict(name, f.check, False, f.detail))
        return report

    def _run_bpp_flow(self, flow: Flow, report: CertReport) -> None:
        """Bot is the BAP; the target answers each request with a callback."""
        txn = self.ids()
        lc = OrderLifecycle(txn)
        buyer = ReferenceBuyer()
        offer: Optional[dict] = None
        last: Optional[dict] = None
        intent = self.suite.search_payload()
        for step in flow.steps:
            name = f"{flow.flow_id}/{step.step_id}"
            expected = CORE_ACTIONS.pair_callback(step.action)
            try:
                payload = copy.deepcopy(step.payload) if step.payload is not None else buyer.next_payload(
                    step.action, intent=intent, offer=offer, last=last, form_link=lc.form_link)
                try:
                    lc = order_transition(lc, step.action, self.clock.now())
                except (IllegalTransition, NonMonotonicHistory):
                    raise _Fail(Check.FSM_ORDER, f"{step.action} not possible from {lc.state.value}") from None
                env = self._sign(self._context(step.action, txn), payload)
                mark = len(self.inbox.items)
                ack = self._send(self.target.endpoint, encode_envelope(env))
                if not ack.ok:
                    raise _Fail(Check.ERROR_CODE, f"valid {step.action} refused with {ack}")
                envs, _ = self._grade(name, self.inbox.items[mark:], txn, expected, lc)
                for e in envs:
                    if e.context.action == "on_search" and offer is None:
                        offer = e.payload
                    last = e.payload
                for e in envs:
                    self._content(expected, e.payload, step.assertions)
                for e in envs:
                    try:
                        lc = order_transition(lc, expected, self.clock.now(),
                                              fulfillment_state=_fulfillment(e.payload),
                                              form_link=_form_link(e.payload))
                    except (IllegalTransition, NonMonotonicHistory) as exc:
                        raise _Fail(Check.FSM_ORDER, str(exc)) from None
                report.steps.append(StepVerdict(name, Check.ADAPTATION, True, f"{expected} -> {lc.state.value}"))
            except _Fail as f:
                report.steps.append(StepVerdict(name, f.check, False, f.detail))

    def _run_bap_flow(self, flow: Flow, report: CertReport) -> None:
        """Bot is the BPP; the target's driver issues each request."""
        txn: Optional[str] = None
        lc: Optional[OrderLifecycle] = None
        intent = self.suite.search_payload()
        for step in flow.steps:
            name = f"{flow.flow_id}/{step.step_id}"
            try:
                mark = len(self.inbox.items)
                try:
                    self.target.trigger(step.action, domain=self.suite.domain, transaction_id=txn,
                                        counterpart=self.subscriber_id, counterpart_uri=self.endpoint,
                                        payload=copy.deepcopy(step.payload) if step.payload else None,
                                        intent=intent)
                except TransportFailure:
                    raise TargetUnreachable(self.target.endpoint) from None
                except (IllegalTransition, NonMonotonicHistory) as exc:
                    raise _Fail(Check.FSM_ORDER, f"target could not send {step.action}: {exc}") from None
                envs, _ = self._grade(name, self.inbox.items[mark:], txn, step.action,
                                      lc or OrderLifecycle(""))
                env = envs[0]
                txn = env.context.transaction_id
                lc = lc or OrderLifecycle(txn)
                try:
                    lc = order_transition(lc, step.action, self.clock.now())
                except (IllegalTransition, NonMonotonicHistory) as exc:
                    raise _Fail(Check.FSM_ORDER, str(exc)) from None
                self._content(step.action, env.payload, step.assertions)
                reply = self.seller(step.action, env.payload, env.context)
                callback = CORE_ACTIONS.pair_callback(step.action)
                ctx = self._context(callback, txn, bap=(env.context.bap_id, env.context.bap_uri))
                ack = self._send(env.context.bap_uri, encode_envelope(self._sign(ctx, reply or {})))
                if not ack.ok:
                    raise _Fail(Check.ERROR_CODE, f"valid {callback} refused with {ack}")
                lc = order_transition(lc, callback, self.clock.now(), fulfillment_state=_fulfillment(reply or {}),
                                      form_link=_form_link(reply or {}))
                report.steps.append(StepVerdict(name, Check.ADAPTATION, True, f"{step.action} -> {lc.state.value}"))
            except _Fail as f:
                report.steps.append(StepVerdict(name, f.check, False, f.detail))

    def _fault_message(self, fault: Fault) -> tuple[bytes, Optional[str]]:
        if self.role is Role.BAP:
            action = fault.action
            payload = (self.suite.search_payload() if action == "search"
                       else ReferenceBuyer().next_payload(action, intent=self.suite.search_payload()))
        else:
            action = "on_search"
            payload = self.seller("search", self.suite.search_payload(), None)
        txn = self.ids()
        domain = fault.domain or (f"unsupported.{self.suite.domain}" if fault.kind == "wrong_domain" else None)
        ctx = self._context(action, txn, domain=domain)
        if fault.kind == "expired":
            ctx = replace(ctx, timestamp=ctx.timestamp - timedelta(seconds=ctx.ttl + 60))
        if fault.kind == "unsigned":
            return encode_envelope(Envelope(ctx, payload)), None
        env = self._sign(ctx, payload)
        if fault.kind == "tampered":
            env = Envelope(env.context, _tamper(env.payload), env.signature)
        return encode_envelope(env), txn

    def _run_fault(self, fault: Fault) -> None:
        data, txn = self._fault_message(fault)
        mark = len(self.inbox.items)
        ack = self._send(self.target.endpoint, data)
        if fault.kind != "out_of_order":
            if ack.ok:
                raise _Fail(Check.ERROR_CODE, f"{fault.kind} message accepted")
            if ack.code is not fault.expect_code:
                raise _Fail(Check.ERROR_CODE, f"expected {fault.expect_code.value}, got {ack.code.value}")
            return
        if not ack.ok:
            if ack.code is fault.expect_code:
                return
            raise _Fail(Check.ERROR_CODE, f"expected {fault.expect_code.value}, got {ack.code.value}")
        received = self.inbox.items[mark:]
        if not received:
            raise _Fail(Check.ERROR_CODE, f"no error reported for out-of-order {fault.action}")
        env = self._decode(received[0], txn).env
        error = env.payload.get("error")
        code = error.get("code") if isinstance(error, dict) else None
        if code != fault.expect_code.value:
            raise _Fail(Check.ERROR_CODE, f"expected {fault.expect_code.value}, got {code}")


def _fulfillment(payload: dict) -> Optional[str]:
    from opennet.node import fulfillment_state

    return fulfillment_state(payload)


def _form_link(payload: dict) -> Optional[str]:
    from opennet.node import form_link

    return form_link(payload)


def _tamper(payload: dict) -> dict:
    """Change one value deep in the payload, keeping the document well formed."""
    out = copy.deepcopy(payload)
    node: Any = out
    while True:
        if isinstance(node, dict) and node:
            k = sorted(node)[0]
            if isinstance(node[k], (dict, list)) and node[k]:
                node = node[k]
                continue
            node[k] = f"{node[k]}~" if isinstance(node[k], str) else "tampered"
            return out
        if isinstance(node, list) and node:
            if isinstance(node[0], (dict, list)) and node[0]:
                node = node[0]
                continue
            node[0] = "tampered"
            return out
        out["tampered"] = True
        return out


def certify(target: Target, suite: CertSuite, adaptation: Optional[DomainAdaptation]) -> CertReport:
    """Run ``suite`` against ``target``; raises TargetUnreachable if it never answers."""
    if target.endpoint not in target.transport.endpoints:
        raise TargetUnreachable(target.endpoint)
    return CertBot(target, suite, adaptation).run()


# -- mutants ---------------------------------------------------------------

MUTANT_KINDS = {
    "bad_enum": Check.ADAPTATION,
    "missing_field": Check.ADAPTATION,
    "bad_signature": Check.SIGNATURE,
    "out_of_order": Check.FSM_ORDER,
    "wrong_error_code": Check.ERROR_CODE,
}
BAD_VALUES = ("BOGUS", "not-a-code", "X9", "undefined")
SIGNATURE_DEFECTS = ("flip", "digest", "key", "signer", "strip")


@dataclass(frozen=True)
class MutantSpec:
    """One seeded defect: ``kind`` applied at ``at`` with argument ``arg``."""

    kind: str
    at: str
    arg: Any = None

    @property
    def mutant_id(self) -> str:
        return f"{self.kind}:{self.at}:{self.arg}"

    @property
    def expected(self) -> Check:
        return MUTANT_KINDS[self.kind]


class SeededMutator(Mutator):
    def __init__(self, spec: MutantSpec) -> None:
        self.spec = spec

    def callback_action(self, action: str, request: Envelope) -> Optional[str]:
        if self.spec.kind == "out_of_order" and action == self.spec.at:
            return None if self.spec.arg == "skip" else self.spec.arg
        return action

    def before_sign(self, callback: str, payload: dict) -> dict:
        kind, at, arg = self.spec.kind, self.spec.at, self.spec.arg
        if kind == "bad_enum" and callback == at:
            path, value = arg
            payload = copy.deepcopy(payload)
            set_path(payload, check_core_path(path), value)
        elif kind == "missing_field" and callback == at:
            payload = copy.deepcopy(payload)
            delete_path(payload, check_core_path(arg))
        elif kind == "wrong_error_code":
            err = payload.get("error")
            if isinstance(err, dict) and err.get("code") == at:
                payload = {**payload, "error": {**err, "code": arg}}
        return payload

    def after_sign(self, e: Envelope) -> Envelope:
        if self.spec.kind != "bad_signature" or e.context.action != self.spec.at:
            return e
        h = e.signature
        if self.spec.arg == "strip":
            return e.unsigned()
        if self.spec.arg == "flip":
            h = replace(h, signature=bytes([h.signature[0] ^ 0x01]) + h.signature[1:])
        elif self.spec.arg == "digest":
            h = replace(h, digest=bytes([h.digest[0] ^ 0x01]) + h.digest[1:])
        elif self.spec.arg == "key":
            h = replace(h, key_id=h.key_id + "-old")
        elif self.spec.arg == "signer":
            h = replace(h, subscriber_id="someone-else")
        return e.with_signature(h)

    def on_ack(self, ack: Ack, e: Optional[Envelope]) -> Ack:
        if self.spec.kind == "wrong_error_code" and not ack.ok and ack.code.value == self.spec.at:
            return Ack.nack(ErrorCode(self.spec.arg), ack.message)
        return ack


def record_reference(suite: CertSuite, adaptation: Optional[DomainAdaptation]) -> list[tuple[str, dict]]:
    """(callback action, payload) pairs a reference BPP produces for ``suite``'s flows."""
    target = reference_target(Role.BPP, suite.domain)
    bot = CertBot(target, replace(suite, fault_injections=()), adaptation)
    bot.run()
    return [(env.context.action, env.payload) for _, env in bot.transcript]


def mutant_candidates(suite: CertSuite, adaptation: DomainAdaptation) -> dict[str, list[MutantSpec]]:
    """Every single-defect mutant that the suite's script can reach, by kind."""
    recorded = record_reference(suite, adaptation)
    callbacks = sorted({a for a, _ in recorded})
    out: dict[str, list[MutantSpec]] = {k: [] for k in MUTANT_KINDS}
    enum_hits = sorted({(a, p) for a, payload in recorded for p in adaptation.enumerations if resolve(payload, p)})
    for (a, p) in enum_hits:
        for v in BAD_VALUES:
            if v not in adaptation.enumerations[p]:
                out["bad_enum"].append(MutantSpec("bad_enum", a, (p, v)))
    req_hits = sorted({(a, p) for a, payload in recorded for p in adaptation.required.get(a, ()) if resolve(payload, p)})
    out["missing_field"] = [MutantSpec("missing_field", a, p) for a, p in req_hits]
    out["bad_signature"] = [MutantSpec("bad_signature", a, d) for a in callbacks for d in SIGNATURE_DEFECTS]
    for a in callbacks:
        out["out_of_order"].append(MutantSpec("out_of_order", a, "skip"))
        out["out_of_order"].extend(MutantSpec("out_of_order", a, b) for b in callbacks if b != a)
    codes = sorted({f.expect_code.value for f in suite.fault_injections})
    out["wrong_error_code"] = [MutantSpec("wrong_error_code", c, o.value) for c in codes for o in ErrorCode
                               if o.value != c]
    return out


def generate_mutants(suite: CertSuite, adaptation: DomainAdaptation, per_kind: int = 10,
                     seed: int = 0) -> list[MutantSpec]:
    rng = random.Random(f"{seed}:{suite.suite_id}")
    chosen = []
    for kind, cands in mutant_candidates(suite, adaptation).items():
        chosen.extend(cands if len(cands) <= per_kind else rng.sample(cands, per_kind))
    return chosen


@dataclass(frozen=True)
class MutantOutcome:
    spec: MutantSpec
    flagged: bool
    check: Optional[Check]

    @property
    def correct(self) -> bool:
        return self.flagged and self.check is self.spec.expected


def run_mutant(spec: MutantSpec, suite: CertSuite, adaptation: DomainAdaptation) -> MutantOutcome:
    target = reference_target(suite.target_role, suite.domain, mutator=SeededMutator(spec))
    report = certify(target, suite, adaptation)
    first = report.first_failure()
    return MutantOutcome(spec, first is not None, first.check if first else None)


# -- protocol evolution ------------------------------------------------------

@dataclass(frozen=True)
class RecordedFlow:
    flow_id: str
    messages: tuple[tuple[str, dict], ...]


@dataclass(frozen=True)
class Regression:
    flow_id: str
    index: int
    action: str
    violations: tuple[str, ...]


@dataclass
class SpecChangeReport:
    compatible: bool
    reasons: tuple[str, ...]
    checked: int = 0
    regressions: list[Regression] = field(default_factory=list)

    @property
    def broken_flows(self) -> list[str]:
        return sorted({r.flow_id for r in self.regressions})

    @property
    def consistent(self) -> bool:
        """A compatible verdict must come with zero regressions."""
        return not (self.compatible and self.regressions)

    def to_doc(self) -> dict:
        return {
            "checked": self.checked,
            "compatible": self.compatible,
            "reasons": list(self.reasons),
            "regressions": [{"action": r.action, "flow_id": r.flow_id, "index": r.index,
                             "violations": list(r.violations)} for r in self.regressions],
        }


def check_spec_change(corpus: Iterable[RecordedFlow], old: DomainAdaptation,
                      new: DomainAdaptation) -> SpecChangeReport:
    """Replay recorded messages against ``new``.

    A message counts as a regression when it is clean under ``old`` (no
    violation of any kind) and draws at least one violation under ``new``.
    """
    compat = check_compat(old, new)
    report = SpecChangeReport(compat.compatible, compat.reasons)
    for flow in corpus:
        for i, (action, payload) in enumerate(flow.messages):
            if validate_payload(old, action, payload):
                continue
            report.checked += 1
            after = validate_payload(new, action, payload)
            if after:
                report.regressions.append(Regression(flow.flow_id, i, action, tuple(str(v) for v in after)))
    return report
