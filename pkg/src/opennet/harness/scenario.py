"""Scenario files and the runner that plays them over the simulator.

A scenario is one canonical JSON document naming registries, gateways,
nodes, scripted lifecycles (flows), assertions and an optional governance
check. Registry and gateway entries are each a self-contained config; the
links that make a registry a root and the pairwise trust assertions are
listed separately, so adding a network only appends entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from opennet.business import DEFAULT_INTENTS, ReferenceBuyer, ReferenceSeller, ScraperSeller
from opennet.core.codec import canonical_bytes, load_document
from opennet.core.lifecycle import TERMINAL, State
from opennet.core.model import UTC, format_timestamp, parse_timestamp, seeded_ids
from opennet.errors import (
    MalformedDocument,
    MalformedPolicy,
    ProtocolError,
    ScenarioConfigError,
    TransportFailure,
)
from opennet.gateway import BroadcastReport, Gateway, GatewayNode, load_policy
from opennet.harness.sim import Simulator
from opennet.harness.telemetry import Anomaly, TelemetryRecord, Thresholds, collect, detect_anomalies
from opennet.harness.transport import US, SimulatedNetwork, TransportConfig
from opennet.node import Node, NodeConfig, Outcome, RetryPolicy
from opennet.registry import KeyDirectory, Registry, Role, Status, SubscriberRecord, TrustTable, resolve_networks
from opennet.signing import generate_keypair

DATA = Path(__file__).resolve().parent.parent / "data"
DEFAULT_SCRIPT = ("search", "select", "init", "confirm", "status")
DISCOVERY_MODES = ("gateway", "direct", "network")


# -- scenario documents ------------------------------------------------------

@dataclass(frozen=True)
class RegistrySpec:
    registry_id: str
    locator: str

    def to_doc(self) -> dict:
        return {"locator": self.locator, "registry_id": self.registry_id}


@dataclass(frozen=True)
class GatewaySpec:
    subscriber_id: str
    registry: str
    fairness_seed: int = 0
    policies: tuple = ()
    region: str = ""
    max_attempts: int = 5

    def to_doc(self) -> dict:
        return {"fairness_seed": self.fairness_seed, "max_attempts": self.max_attempts,
                "policies": list(self.policies), "region": self.region, "registry": self.registry,
                "subscriber_id": self.subscriber_id}


@dataclass(frozen=True)
class NodeSpec:
    subscriber_id: str
    role: Role
    registries: tuple[str, ...]
    domains: tuple[str, ...] = ()
    region: str = ""
    business: str = "reference"
    max_attempts: int = 5
    backoff_ms: float = 100.0


@dataclass(frozen=True)
class FlowSpec:
    flow_id: str
    bap: str
    domain: str
    count: int = 1
    start_ms: float = 0.0
    interval_ms: float = 1000.0
    discovery: str = "gateway"
    gateway: Optional[str] = None
    root: Optional[str] = None
    script: tuple[str, ...] = DEFAULT_SCRIPT
    offer_window_ms: float = 2000.0
    think_ms: float = 50.0
    intent: Optional[dict] = None
    retransmit_ms: float = 4000.0


@dataclass(frozen=True)
class GovernanceSpec:
    check_at_ms: float
    thresholds: Thresholds
    suspend: bool = True


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    start: datetime
    transport: TransportConfig
    registries: tuple[RegistrySpec, ...]
    links: tuple[tuple[str, str], ...]
    trust: tuple[tuple[str, str], ...]
    gateways: tuple[GatewaySpec, ...]
    nodes: tuple[NodeSpec, ...]
    flows: tuple[FlowSpec, ...]
    assertions: tuple[dict, ...] = ()
    governance: Optional[GovernanceSpec] = None
    doc: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def configs(self) -> dict[str, bytes]:
        """Canonical config bytes of every registry and gateway, by id."""
        out = {f"registry:{r.registry_id}": canonical_bytes(r.to_doc()) for r in self.registries}
        out.update({f"gateway:{g.subscriber_id}": canonical_bytes(g.to_doc()) for g in self.gateways})
        return out

    def with_seed(self, seed: int) -> "Scenario":
        doc = dict(self.doc)
        doc["seed"] = seed
        return load_scenario(doc)


def _policy(ref: Any) -> Any:
    if isinstance(ref, str):
        path = DATA / "policies" / f"{ref}.json"
        if not path.exists():
            raise ScenarioConfigError(f"unknown policy {ref!r}")
        return load_document(path.read_bytes())
    return ref


def load_scenario(source: Union[bytes, str, Path, Mapping[str, Any]]) -> Scenario:
    if isinstance(source, Path):
        source = source.read_bytes()
    if isinstance(source, (bytes, str)):
        try:
            source = load_document(source)
        except MalformedDocument as exc:
            raise ScenarioConfigError(str(exc)) from None
    if not isinstance(source, Mapping):
        raise ScenarioConfigError("scenario must be an object")
    doc = source
    try:
        seed = int(doc.get("seed", 0))
        start = parse_timestamp(doc["start"]) if "start" in doc else datetime(2026, 1, 1, tzinfo=UTC)
        tdoc = dict(doc.get("transport") or {})
        tdoc.setdefault("seed", seed)
        transport = TransportConfig.from_doc(tdoc, seed)
        registries = tuple(RegistrySpec(r["registry_id"], r.get("locator") or f"registry://{r['registry_id']}")
                           for r in doc["registries"])
        links = tuple((l["registry"], l["peer"]) for l in doc.get("links", []))
        trust = tuple((a, b) for a, b in doc.get("trust", []))
        gateways = tuple(
            GatewaySpec(g["subscriber_id"], g["registry"], g.get("fairness_seed", 0),
                        tuple(_policy(p) for p in g.get("policies", [])), g.get("region", ""),
                        int(g.get("max_attempts", 5)))
            for g in doc.get("gateways", [])
        )
        nodes = tuple(
            NodeSpec(n["subscriber_id"], Role(n["role"]), tuple(n["registries"]), tuple(n.get("domains", [])),
                     n.get("region", ""), n.get("business", "reference"), int(n.get("max_attempts", 5)),
                     float(n.get("backoff_ms", 100.0)))
            for n in doc.get("nodes", [])
        )
        flows = tuple(
            FlowSpec(f["flow_id"], f["bap"], f["domain"], int(f.get("count", 1)), float(f.get("start_ms", 0)),
                     float(f.get("interval_ms", 1000)), f.get("discovery", "gateway"), f.get("gateway"),
                     f.get("root"), tuple(f.get("script", DEFAULT_SCRIPT)),
                     float(f.get("offer_window_ms", 2000)), float(f.get("think_ms", 50)), f.get("intent"),
                     float(f.get("retransmit_ms", 4000)))
            for f in doc.get("flows", [])
        )
        gov = doc.get("governance")
        governance = None
        if gov is not None:
            governance = GovernanceSpec(
                float(gov["check_at_ms"]),
                Thresholds(int(gov.get("min_search_volume", 100)), float(gov.get("max_search_to_order_ratio", 50))),
                bool(gov.get("suspend", True)))
        assertions = tuple(doc.get("assertions", []))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioConfigError):
            raise
        raise ScenarioConfigError(f"malformed scenario: {type(exc).__name__}: {exc}") from None
    s = Scenario(doc.get("name", "scenario"), seed, start, transport, registries, links, trust, gateways,
                 nodes, flows, assertions, governance, doc)
    _check(s)
    return s


def _check(s: Scenario) -> None:
    reg_ids = [r.registry_id for r in s.registries]
    if len(set(reg_ids)) != len(reg_ids):
        raise ScenarioConfigError("duplicate registry id")
    ids = [g.subscriber_id for g in s.gateways] + [n.subscriber_id for n in s.nodes]
    if len(set(ids)) != len(ids):
        raise ScenarioConfigError("duplicate subscriber id")
    known = set(reg_ids)
    for a, b in s.links + s.trust:
        if a not in known or b not in known:
            raise ScenarioConfigError(f"link or trust names an unknown registry: {a}, {b}")
    for g in s.gateways:
        if g.registry not in known:
            raise ScenarioConfigError(f"{g.subscriber_id}: unknown registry {g.registry}")
        try:
            for p in g.policies:
                load_policy(p)
        except MalformedPolicy as exc:
            raise ScenarioConfigError(f"{g.subscriber_id}: {exc}") from None
    nodes = {n.subscriber_id: n for n in s.nodes}
    for n in s.nodes:
        if not n.registries or set(n.registries) - known:
            raise ScenarioConfigError(f"{n.subscriber_id}: needs known registries")
        if n.role not in (Role.BAP, Role.BPP):
            raise ScenarioConfigError(f"{n.subscriber_id}: role must be BAP or BPP")
        if n.role is Role.BPP and not n.domains:
            raise ScenarioConfigError(f"{n.subscriber_id}: a BPP needs domains")
        if n.business not in ("reference", "scraper"):
            raise ScenarioConfigError(f"{n.subscriber_id}: unknown business {n.business!r}")
    locators = {r.locator for r in s.registries}
    flow_ids = set()
    for f in s.flows:
        if f.flow_id in flow_ids:
            raise ScenarioConfigError(f"duplicate flow {f.flow_id}")
        flow_ids.add(f.flow_id)
        if f.bap not in nodes or nodes[f.bap].role is not Role.BAP:
            raise ScenarioConfigError(f"{f.flow_id}: {f.bap} is not a BAP")
        if f.discovery not in DISCOVERY_MODES:
            raise ScenarioConfigError(f"{f.flow_id}: discovery is one of {DISCOVERY_MODES}")
        if f.discovery == "network" and f.root not in locators:
            raise ScenarioConfigError(f"{f.flow_id}: network discovery needs a known root locator")
        if f.gateway is not None and f.gateway not in {g.subscriber_id for g in s.gateways}:
            raise ScenarioConfigError(f"{f.flow_id}: unknown gateway {f.gateway}")
        if not f.script or f.script[0] != "search" or f.count < 0:
            raise ScenarioConfigError(f"{f.flow_id}: a script starts with search")
        if f.retransmit_ms <= 0 or f.offer_window_ms < 0:
            raise ScenarioConfigError(f"{f.flow_id}: retransmit_ms must be positive")


# -- results -------------------------------------------------------------------

@dataclass
class LifecycleOutcome:
    flow_id: str
    index: int
    transaction_id: str
    state: State
    status: str
    reason: str = ""


@dataclass(frozen=True)
class AssertionVerdict:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ScenarioResult:
    scenario: str
    seed: int
    log: list[dict]
    lifecycles: list[LifecycleOutcome]
    assertions: list[AssertionVerdict]
    telemetry: list[TelemetryRecord]
    anomalies: list[Anomaly]
    reports: list[BroadcastReport]
    suspended: dict[str, str]
    stats: dict[str, int]
    histories: dict[str, list[str]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def log_bytes(self) -> bytes:
        return b"".join(canonical_bytes(rec) + b"\n" for rec in self.log)

    def terminal_states(self) -> dict[str, str]:
        return {lc.transaction_id: lc.state.value for lc in self.lifecycles if lc.transaction_id}

    def of_flow(self, flow_id: str) -> list[LifecycleOutcome]:
        return [lc for lc in self.lifecycles if lc.flow_id == flow_id]


# -- the world -----------------------------------------------------------------

class _Seller:
    """Reference seller per domain for a multi-domain BPP."""

    def __init__(self, sid: str, domains: tuple[str, ...]) -> None:
        self.by_domain = {d: ReferenceSeller(f"{sid}-provider", d, name=f"{sid} ({d})") for d in domains}

    def __call__(self, action, payload, ctx):
        return self.by_domain[ctx.domain](action, payload, ctx)


class World:
    def __init__(self, s: Scenario) -> None:
        self.scenario = s
        self.network = SimulatedNetwork(s.transport)
        self.sim = Simulator(self.network, s.start)
        self.log: list[dict] = []
        self.registries = {r.registry_id: Registry(r.registry_id, r.locator) for r in s.registries}
        self.by_locator = {r.locator: self.registries[r.registry_id] for r in s.registries}
        for a, b in s.links:
            peer = self.registries[b]
            self.registries[a].add_peer(peer.registry_id, peer.locator)
        self.trust = TrustTable(s.trust)
        self.nodes: dict[str, Node] = {}
        self.gateways: dict[str, GatewayNode] = {}
        self.reports: list[BroadcastReport] = []
        self.suspended: dict[str, str] = {}
        self.runs: dict[str, "LifecycleRun"] = {}
        self.all_runs: list[LifecycleRun] = []
        self.anomalies: list[Anomaly] = []
        self._build()

    def keys_for(self, home: str) -> KeyDirectory:
        return KeyDirectory(self.registries[home], self.registries, self.trust)

    def _build(self) -> None:
        s = self.scenario
        for n in s.nodes:
            kp = generate_keypair("test-deterministic", seed=f"{s.seed}:{n.subscriber_id}")
            endpoint = f"sim://{n.subscriber_id}"
            for rid in n.registries:
                self.registries[rid].register(SubscriberRecord(
                    n.subscriber_id, n.role, set(n.domains), endpoint, kp.key_id, kp.verification_key, n.region))
            business = None
            if n.role is Role.BPP:
                business = ScraperSeller() if n.business == "scraper" else _Seller(n.subscriber_id, n.domains)
            cfg = NodeConfig(n.subscriber_id, n.role, endpoint, set(n.domains), n.region, kp, n.registries,
                             RetryPolicy(n.max_attempts, n.backoff_ms / 1000.0))
            node = Node(cfg, keys=self.keys_for(n.registries[0]), transport=self.sim.transport,
                        business=business, ids=seeded_ids(f"{s.seed}:{n.subscriber_id}"), log=self.log.append)
            node.listeners.append(self._dispatch)
            self.nodes[n.subscriber_id] = node
            self.sim.add(node)
        for g in s.gateways:
            reg = self.registries[g.registry]
            kp = generate_keypair("test-deterministic", seed=f"{s.seed}:{g.subscriber_id}")
            endpoint = f"sim://{g.subscriber_id}"
            served = sorted({d for r in reg.records if r.role is Role.BPP for d in r.domains})
            reg.register(SubscriberRecord(g.subscriber_id, Role.BG, set(served), endpoint, kp.key_id,
                                          kp.verification_key, g.region))
            gw = Gateway(g.subscriber_id, reg, [load_policy(p) for p in g.policies], g.fairness_seed,
                         keys=self.keys_for(g.registry))
            node = GatewayNode(gw, endpoint, transport=self.sim.transport, retry=RetryPolicy(g.max_attempts),
                               log=self.log.append, on_report=self.reports.append)
            self.gateways[g.subscriber_id] = node
            self.sim.add(node)

    def _dispatch(self, node: Node, env, outcome: Outcome) -> None:
        run = self.runs.get(env.context.transaction_id)
        if run is not None and run.bap is node:
            run.on_callback(env, outcome)

    # governance
    def governance_check(self, spec: GovernanceSpec) -> None:
        at = format_timestamp(self.sim.to_time(self.sim.now_us))
        nodes = set(self.nodes)
        records = collect(sorted(self.log, key=lambda r: r["t"]), nodes, end=at)
        self.anomalies = detect_anomalies(records, spec.thresholds)
        for a in self.anomalies:
            self.log.append({"t": at, "node": "governance", "dir": "local", "peer": a.subscriber_id,
                             "action": "", "txn": "", "msg": "", "verdict": "flagged:" + a.flag,
                             "search_count": a.search_count, "confirmed_order_count": a.confirmed_order_count})
            if not spec.suspend:
                continue
            for reg in self.registries.values():
                if reg.get(a.subscriber_id) is not None:
                    reg.set_status(a.subscriber_id, Status.SUSPENDED)
                    self.log.append({"t": at, "node": reg.registry_id, "dir": "local", "peer": a.subscriber_id,
                                     "action": "", "txn": "", "msg": "", "verdict": "suspended"})
            self.suspended[a.subscriber_id] = at


class LifecycleRun:
    """Drives one scripted lifecycle on a BAP, event by event."""

    MAX_STATUS_POLLS = 3

    def __init__(self, world: World, flow: FlowSpec, index: int) -> None:
        self.world = world
        self.flow = flow
        self.index = index
        self.bap: Node = world.nodes[flow.bap]
        self.buyer = ReferenceBuyer()
        self.intent = flow.intent or DEFAULT_INTENTS.get(flow.domain, {"intent": {}})
        self.txn = ""
        self.step = 0
        self.awaiting: Optional[str] = None
        self.message_id = ""
        self.offer = None
        self.polls = 0
        self.status = "pending"
        self.reason = ""
        self.search_id = ""
        self.first_offer_pending = False

    @property
    def sim(self) -> Simulator:
        return self.world.sim

    def _later(self, delay_ms: float, fn, *args) -> None:
        t = self.sim.clocks[self.bap.subscriber_id].cursor + int(delay_ms * US)
        self.sim.schedule(t, self.bap.subscriber_id, fn, *args)

    def _fail(self, reason: str) -> None:
        if self.status == "running":
            self.status, self.reason = "failed", reason

    def _targets(self) -> list[str]:
        f = self.flow
        home = self.world.registries[self.bap.config.registries[0]]
        if f.discovery == "gateway":
            if f.gateway:
                return [self.world.gateways[f.gateway].endpoint]
            return sorted(r.endpoint for r in home.lookup(role=Role.BG, domain=f.domain))
        if f.discovery == "direct":
            return sorted(r.endpoint for r in home.lookup(role=Role.BPP, domain=f.domain))
        found = resolve_networks(f.root, self.world.by_locator.__getitem__, domain=f.domain)
        targets: list[str] = []
        for rid, records in found.matches:
            gws = [r for r in records if r.role is Role.BG]
            chosen = gws or [r for r in records if r.role is Role.BPP]
            targets.extend(r.endpoint for r in chosen)
        return sorted(set(targets))

    def begin(self) -> None:
        self.status = "running"
        self.world.all_runs.append(self)
        targets = self._targets()
        if not targets:
            self._fail("no search targets")
            return
        self._request("search", self.buyer.next_payload("search", intent=self.intent), targets)
        if self.status == "running":
            self.search_id = self.message_id
            self.world.runs[self.txn] = self
            self._later(self.flow.offer_window_ms, self.close_offers)

    def _request(self, action: str, payload: dict, targets, **kw) -> None:
        try:
            handle, ack = self.bap.request(action, payload, targets, domain=self.flow.domain,
                                           transaction_id=self.txn or None, **kw)
        except TransportFailure as exc:
            if not exc.in_doubt:
                self._fail(f"{action} undeliverable")
                return
            # it may have arrived: wait for the callback, retransmitting meanwhile
            handle, ack = exc.handle, None
        except ProtocolError as exc:
            self._fail(f"{action}: {exc}")
            return
        if ack is not None and not ack.ok:
            self._fail(f"{action} refused: {ack}")
            return
        self.txn = handle.transaction_id
        self.message_id = handle.message_id
        self.awaiting = self.bap.actions.pair_callback(action)
        entry = self.bap.pending.get(handle.transaction_id, handle.message_id)
        if entry is not None:
            t = (entry.deadline - self.sim.start) // timedelta(microseconds=1) + 1
            self.sim.schedule(t, self.bap.subscriber_id, self.deadline, handle.message_id)
            self._later(self.flow.retransmit_ms, self.retransmit, handle.message_id)

    def retransmit(self, message_id: str) -> None:
        if self.status != "running" or self.message_id != message_id:
            return
        if message_id == self.search_id and self.bap.offers.get(self.txn):
            return
        if self.awaiting is None:
            return
        self.bap.retransmit(self.txn, message_id)
        if self.bap.pending.get(self.txn, message_id) is not None:
            self._later(self.flow.retransmit_ms, self.retransmit, message_id)

    def deadline(self, message_id: str) -> None:
        self.bap.expire_pending()
        if self.status != "running" or self.message_id != message_id:
            return
        if self.first_offer_pending:
            self._fail("no offers")
        elif self.awaiting not in (None, "on_search"):
            self._fail(f"timeout waiting for {self.awaiting}")

    def close_offers(self) -> None:
        if self.status != "running":
            return
        offers = self.bap.offers.get(self.txn) or []
        if not offers:
            # the window passed empty; take the first offer that still arrives before the search expires
            self.first_offer_pending = True
            return
        self.first_offer_pending = False
        self.offer = offers[0]
        self.awaiting = None
        self.step = 1
        self.next_step()

    def next_step(self) -> None:
        if self.status != "running":
            return
        if self.step >= len(self.flow.script):
            self.status = "done"
            return
        action = self.flow.script[self.step]
        last = self.bap.last_callback.get(self.txn)
        payload = self.buyer.next_payload(
            action, intent=self.intent, offer=self.offer.payload,
            last=last.payload if last else None, form_link=self.bap.lifecycle(self.txn).form_link)
        self._request(action, payload, self.offer.bpp_uri, bpp_id=self.offer.bpp_id, bpp_uri=self.offer.bpp_uri)

    def on_callback(self, env, outcome: Outcome) -> None:
        if self.status != "running":
            return
        action = env.context.action
        if action == "on_search" and outcome is Outcome.MATCHED and self.first_offer_pending:
            self.first_offer_pending = False
            self._later(self.flow.think_ms, self.close_offers)
            return
        if outcome is Outcome.ERROR:
            self._fail(f"{action} error {env.payload['error'].get('code')}")
            return
        if outcome is not Outcome.MATCHED or action != self.awaiting or action == "on_search":
            return
        self.awaiting = None
        if action == "on_status" and self.bap.lifecycle(self.txn).state is not State.COMPLETED:
            self.polls += 1
            if self.polls > self.MAX_STATUS_POLLS:
                self._fail("fulfillment never completed")
                return
        else:
            self.step += 1
        self._later(self.flow.think_ms, self.next_step)

    def outcome(self) -> LifecycleOutcome:
        state = self.bap.lifecycle(self.txn).state if self.txn else State.START
        return LifecycleOutcome(self.flow.flow_id, self.index, self.txn, state, self.status, self.reason)


# -- running ---------------------------------------------------------------------

def run_scenario(s: Union[Scenario, Mapping[str, Any], bytes, str, Path]) -> ScenarioResult:
    if not isinstance(s, Scenario):
        s = load_scenario(s)
    world = World(s)
    sim = world.sim
    for f in s.flows:
        for i in range(f.count):
            run = LifecycleRun(world, f, i)
            sim.schedule(int((f.start_ms + i * f.interval_ms) * US), f.bap, run.begin)
    if s.governance is not None:
        sim.schedule(int(s.governance.check_at_ms * US), None, world.governance_check, s.governance)
    sim.run()
    log = sorted(world.log, key=lambda r: r["t"])
    lifecycles = [r.outcome() for r in world.all_runs]
    lifecycles.sort(key=lambda lc: (lc.flow_id, lc.index))
    histories = {r.txn: r.bap.lifecycle(r.txn).events() for r in world.all_runs if r.txn}
    telemetry = collect(log, set(world.nodes))
    result = ScenarioResult(
        scenario=s.name, seed=s.seed, log=log, lifecycles=lifecycles, assertions=[], telemetry=telemetry,
        anomalies=world.anomalies, reports=world.reports, suspended=dict(world.suspended),
        stats={"events": sim.processed, "sent": world.network.sent, "dropped": world.network.dropped,
               "attempts": sim.transport.attempts},
        histories=histories,
    )
    result.assertions = [evaluate_assertion(a, result, world) for a in s.assertions]
    return result


def _fraction(lcs: list[LifecycleOutcome], pred) -> float:
    return sum(1 for lc in lcs if pred(lc)) / len(lcs) if lcs else 0.0


def _accepted_messages(log: list[dict], node: str, txn: str) -> set[str]:
    """Distinct messages a BAP actually took into its history for ``txn``."""
    out = set()
    for rec in log:
        if rec["node"] != node or rec["txn"] != txn:
            continue
        if rec["dir"] == "in" and rec["verdict"] == "matched":
            out.add(rec["msg"])
        elif rec["dir"] == "out" and rec["verdict"] in ("ACK", "in-doubt") and not rec["action"].startswith("on_"):
            out.add(rec["msg"])
    return out


def evaluate_assertion(a: Mapping[str, Any], r: ScenarioResult, world: Optional[World] = None) -> AssertionVerdict:
    kind = a.get("kind")
    name = a.get("name") or kind
    flow = a.get("flow")
    lcs = r.of_flow(flow) if flow else r.lifecycles
    if kind == "terminal_fraction":
        frac = _fraction(lcs, lambda lc: lc.state in TERMINAL)
        ok = frac >= float(a.get("min", 1.0))
        return AssertionVerdict(name, ok, f"{frac:.4f} of {len(lcs)} terminal")
    if kind == "state":
        state = State(a["state"])
        frac = _fraction(lcs, lambda lc: lc.state is state)
        ok = frac >= float(a.get("min", 0.0)) and frac <= float(a.get("max", 1.0))
        return AssertionVerdict(name, ok, f"{frac:.4f} of {len(lcs)} in {state.value}")
    if kind == "exactly_once":
        by_txn = {lc.transaction_id: lc for lc in lcs if lc.transaction_id}
        baps = {f.flow_id: f.bap for f in world.scenario.flows} if world else {}
        bad = []
        for txn, lc in by_txn.items():
            history = r.histories.get(txn, [])
            accepted = _accepted_messages(r.log, baps.get(lc.flow_id, ""), txn)
            if len(history) != len(accepted):
                bad.append(txn)
        return AssertionVerdict(name, not bad, f"{len(bad)} of {len(by_txn)} histories disagree with accepted messages")
    if kind == "pending_drained":
        left = {sid: len(n.pending) for sid, n in (world.nodes.items() if world else []) if len(n.pending)}
        return AssertionVerdict(name, not left, f"pending left: {left}" if left else "all pending tables empty")
    if kind == "retries_observed":
        retries = sum(1 for rec in r.log if rec.get("attempt", 1) > 1)
        return AssertionVerdict(name, retries > 0, f"{retries} retried sends")
    if kind == "flagged":
        sid = a["subscriber"]
        flagged = {x.subscriber_id for x in r.anomalies}
        return AssertionVerdict(name, sid in flagged, f"flagged: {sorted(flagged)}")
    if kind == "not_flagged":
        flagged = {x.subscriber_id for x in r.anomalies}
        wrong = sorted(flagged & set(a["subscribers"]))
        return AssertionVerdict(name, not wrong, f"wrongly flagged: {wrong}")
    if kind == "no_broadcast_after_suspension":
        sid = a["subscriber"]
        since = r.suspended.get(sid)
        if since is None:
            return AssertionVerdict(name, False, f"{sid} was never suspended")
        later = {rec["txn"] for rec in r.log if rec["verdict"] == "broadcast" and rec["t"] > since}
        leaked = [rec for rec in r.log if rec["dir"] == "out" and rec["peer"] == sid and rec["txn"] in later
                  and not rec["verdict"].startswith("skipped")]
        skipped = sum(1 for rec in r.log if rec["peer"] == sid and rec["txn"] in later
                      and rec["verdict"] == "skipped:SUSPENDED")
        return AssertionVerdict(name, not leaked and bool(later),
                                f"{len(later)} later broadcasts, {len(leaked)} reached {sid}, {skipped} skipped")
    raise ScenarioConfigError(f"unknown assertion kind {kind!r}")


def scenario_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    shipped = DATA / "scenarios" / f"{name}.json"
    if shipped.exists():
        return shipped
    raise ScenarioConfigError(f"no scenario {name!r}")
