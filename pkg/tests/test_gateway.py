from __future__ import annotations

import random
from collections import Counter
from datetime import datetime

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opennet import DATA_DIR
from opennet.clock import ManualClock
from opennet.core.codec import encode_envelope
from opennet.core.model import UTC, Envelope, new_context, seeded_ids
from opennet.errors import EmptyInput, MalformedPolicy, NotASearch, SenderUnverified
from opennet.gateway import (
    Effect,
    Gateway,
    GatewayNode,
    SkipReason,
    broadcast_search,
    evaluate_policy,
    fair_order,
    load_policy,
)
from opennet.node import DirectTransport, ErrorCode
from opennet.registry import Registry, Status, SubscriberRecord
from opennet.signing import generate_keypair, sign

POLICY_DIR = DATA_DIR / "policies"
QUARANTINE = load_policy((POLICY_DIR / "quarantine-zone-z.json").read_bytes())
NOW = datetime(2026, 3, 1, 9, 0, tzinfo=UTC)
BAP_KEY = generate_keypair("test-deterministic", seed="bap")


def rec(sid, domains=("mobility",), role="BPP"):
    kp = generate_keypair("test-deterministic", seed=sid)
    return SubscriberRecord(sid, role, set(domains), f"mem://{sid}", kp.key_id, kp.verification_key)


def ride_search(end_location: dict, *, domain="mobility", action="search", txn=None, ids=None):
    ctx = new_context(domain, action, "bap", "mem://bap", transaction_id=txn, now=NOW, ids=ids or seeded_ids(txn or 0))
    payload = {"intent": {"fulfillment": {"start": {"location": {"gps": "12.97,77.59"}},
                                          "end": {"location": end_location}}}}
    return sign(Envelope(ctx, payload), BAP_KEY, "bap", 60, now=NOW)


def registry_with(*records) -> Registry:
    reg = Registry("reg")
    reg.register(SubscriberRecord("bap", "BAP", set(), "mem://bap", BAP_KEY.key_id, BAP_KEY.verification_key))
    for r in records:
        reg.register(r)
    return reg


def collect():
    delivered: list[tuple[str, bytes]] = []

    def send(record, data):
        delivered.append((record.subscriber_id, data))
        return True

    return delivered, send


# -- policy ------------------------------------------------------------------------

def test_quarantine_examples():
    hospital = ride_search({"area_code": "560011", "descriptor": {"code": "hospital"}})
    restaurant = ride_search({"area_code": "560011", "descriptor": {"code": "restaurant"}})
    outside = ride_search({"area_code": "560300", "descriptor": {"code": "restaurant"}})
    assert evaluate_policy(QUARANTINE, hospital).effect is Effect.ALLOW
    denied = evaluate_policy(QUARANTINE, restaurant)
    assert denied.effect is Effect.DENY and denied.policy_id == "quarantine-zone-z"
    assert evaluate_policy(QUARANTINE, outside).effect is Effect.ALLOW


def test_quarantine_by_coordinates():
    inside = ride_search({"gps": "12.93,77.60", "descriptor": {"code": "mall"}})
    inside_hospital = ride_search({"gps": "12.93,77.60", "descriptor": {"code": "healthcare-facility"}})
    assert evaluate_policy(QUARANTINE, inside).effect is Effect.DENY
    assert evaluate_policy(QUARANTINE, inside_hospital).effect is Effect.ALLOW


def test_out_of_scope_is_allowed():
    retail = ride_search({"area_code": "560011"}, domain="retail")
    assert evaluate_policy(QUARANTINE, retail).effect is Effect.ALLOW


def test_first_matching_rule_wins():
    p = load_policy({"policy_id": "p", "rules": [
        {"effect": "ALLOW", "match": {"op": "equals", "path": "context.bap_id", "value": "bap"}},
        {"effect": "DENY", "match": {"op": "equals", "path": "context.domain", "value": "mobility"}},
    ]})
    assert evaluate_policy(p, ride_search({})).allowed


@pytest.mark.parametrize("doc", [
    {"rules": []},
    {"policy_id": "p", "rules": {}},
    {"policy_id": "p", "scope": {"city": "x"}, "rules": []},
    {"policy_id": "p", "rules": [{"effect": "MAYBE", "match": {"op": "in", "path": "message.a", "values": []}}]},
    {"policy_id": "p", "rules": [{"effect": "DENY", "match": {"op": "near", "path": "message.a"}}]},
    {"policy_id": "p", "rules": [{"effect": "DENY", "match": {"op": "equals", "path": "elsewhere.a", "value": 1}}]},
    {"policy_id": "p", "rules": [{"effect": "DENY", "match": {"op": "within", "path": "message.a", "zone": {}}}]},
])
def test_malformed_policies(doc):
    with pytest.raises(MalformedPolicy):
        load_policy(doc)


# -- broadcast ---------------------------------------------------------------------

def test_accounting_example():
    reg = registry_with(rec("m1"), rec("m2"), rec("m3"), rec("r1", {"retail"}), rec("e1", {"energy"}))
    reg.set_status("m3", Status.SUSPENDED)
    delivered, send = collect()
    report = broadcast_search(ride_search({}), reg, [], send)
    assert sorted(report.targets) == ["m1", "m2"]
    assert dict(report.skipped) == {"m3": SkipReason.SUSPENDED, "r1": SkipReason.DOMAIN_MISMATCH,
                                    "e1": SkipReason.DOMAIN_MISMATCH}
    assert [sid for sid, _ in delivered] == report.targets


def test_not_a_search_and_unverified_sender():
    reg = registry_with(rec("m1"))
    with pytest.raises(NotASearch):
        broadcast_search(ride_search({}, action="confirm"), reg, [], collect()[1])
    gw = Gateway("gw", reg)
    stranger = generate_keypair("test-deterministic", seed="stranger")
    forged = sign(ride_search({}).unsigned(), stranger, "bap", 60, now=NOW)
    with pytest.raises(SenderUnverified):
        gw.handle(encode_envelope(forged), collect()[1], now=NOW)


def test_no_matching_providers():
    report = broadcast_search(ride_search({}), registry_with(rec("r1", {"retail"})), [], collect()[1])
    assert report.targets == [] and len(report.skipped) == 1
    assert broadcast_search(ride_search({}), registry_with(), [], collect()[1]).targets == []


def test_unreachable_provider_is_accounted():
    reg = registry_with(rec("m1"), rec("m2"))
    report = broadcast_search(ride_search({}), reg, [], lambda r, d: r.subscriber_id != "m2")
    assert report.targets == ["m1"] and report.skipped == [("m2", SkipReason.UNREACHABLE)]


def test_gateway_refuses_a_non_independent_operator():
    with pytest.raises(ValueError):
        Gateway("gw", registry_with(), independent=False)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32), st.booleans())
def test_broadcast_invariants(seed, quarantined):
    rng = random.Random(seed)
    records = [rec(f"p{i}", rng.sample(["mobility", "retail", "energy"], rng.randint(1, 2))) for i in range(rng.randint(0, 8))]
    reg = registry_with(*records)
    for r in records:
        if rng.random() < 0.25:
            reg.set_status(r.subscriber_id, Status.SUSPENDED)
    down = {r.subscriber_id for r in records if rng.random() < 0.2}
    code = rng.choice(["hospital", "restaurant", "office"])
    end = {"area_code": "560012" if quarantined else "560300", "descriptor": {"code": code}}
    e = ride_search(end, txn=f"{seed:032x}")
    delivered: list[tuple[str, bytes]] = []

    def send(record, data):
        if record.subscriber_id in down:
            return False
        delivered.append((record.subscriber_id, data))
        return True

    report = broadcast_search(e, reg, [QUARANTINE], send, fairness_seed=seed)
    skipped = [s for s, _ in report.skipped]
    candidates = {r.subscriber_id for r in reg.candidates()} - {"bap"}
    assert not set(report.targets) & set(skipped)
    assert set(report.targets) | set(skipped) == candidates
    assert len(report.targets) + len(skipped) == len(candidates)
    # payload immutability: every copy is the canonical input
    assert all(data == encode_envelope(e) for _, data in delivered)
    denied = quarantined and code != "hospital"
    eligible = {r.subscriber_id for r in reg.lookup(domain="mobility")} - {"bap"}
    if denied:
        assert report.targets == []
    else:
        assert set(report.targets) == eligible - down


def test_stateless_across_restarts():
    reg = registry_with(*(rec(f"m{i}") for i in range(5)))
    e = ride_search({}, txn="ab" * 16)
    first = Gateway("gw", reg, [QUARANTINE], fairness_seed=7).handle(encode_envelope(e), collect()[1], now=NOW)
    again = Gateway("gw", reg, [QUARANTINE], fairness_seed=7).handle(encode_envelope(e), collect()[1], now=NOW)
    assert first == again


# -- fairness ----------------------------------------------------------------------

def test_fair_order_basics():
    records = [rec(f"m{i}") for i in range(5)]
    a = fair_order(records, 3, "txn-1")
    assert a == fair_order(records, 3, "txn-1")
    assert sorted(r.subscriber_id for r in a) == [f"m{i}" for i in range(5)]
    assert fair_order(records[:1], 3, "txn-1") == records[:1]
    with pytest.raises(EmptyInput):
        fair_order([], 3, "txn-1")


def test_first_position_is_uniform():
    records = [rec(f"m{i}") for i in range(5)]
    ids = seeded_ids(2026)
    firsts = Counter(fair_order(records, 42, ids())[0].subscriber_id for _ in range(10_000))
    assert set(firsts) == {r.subscriber_id for r in records}
    for sid, n in firsts.items():
        assert 1850 <= n <= 2150, (sid, n)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(min_size=1, max_size=6), min_size=1, max_size=8, unique=True), st.text(), st.integers())
def test_fair_order_is_a_permutation(sids, txn, seed):
    records = [rec(s) for s in sids]
    out = fair_order(records, seed, txn)
    assert sorted(out, key=lambda r: r.subscriber_id) == sorted(records, key=lambda r: r.subscriber_id)


# -- gateway on the wire -----------------------------------------------------------

def test_gateway_node_receipt_codes():
    reg = registry_with(rec("m1"), rec("m2"))
    transport = DirectTransport()
    inbox: list[bytes] = []

    class Sink:
        def receive(self, data):
            from opennet.node import Ack
            inbox.append(data)
            return Ack()

    for sid in ("m1", "m2"):
        transport.bind(f"mem://{sid}", Sink())
    node = GatewayNode(Gateway("gw", reg, [QUARANTINE]), "mem://gw", transport=transport, clock=ManualClock(NOW))
    ok = ride_search({"area_code": "560300"})
    assert node.receive(encode_envelope(ok)).ok
    assert inbox == [encode_envelope(ok)] * 2
    denied = node.receive(encode_envelope(ride_search({"area_code": "560011", "descriptor": {"code": "bar"}})))
    assert denied.code is ErrorCode.POLICY_DENIED
    assert node.receive(encode_envelope(ride_search({}, action="select"))).code is ErrorCode.INVALID_MESSAGE
    assert node.receive(encode_envelope(ok.unsigned())).code is ErrorCode.SIGNATURE_INVALID
    assert node.receive(b"{").code is ErrorCode.INVALID_MESSAGE
    assert len(inbox) == 2
