from __future__ import annotations

import random
import threading

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opennet.errors import DuplicateSubscriber, InvalidRecord, RootUnreachable, UnknownSubscriber
from opennet.registry import (
    KeyDirectory,
    PeerLink,
    Registry,
    Role,
    Status,
    SubscriberRecord,
    TrustTable,
    load_peers,
    resolve_networks,
)
from opennet.signing import generate_keypair

DOMAINS = ["mobility", "retail", "energy", "financial-services"]
REGIONS = ["", "IN-KA", "IN-MH", "DE-BE"]


def record(sid, role="BPP", domains=("mobility",), region="", kp=None):
    kp = kp or generate_keypair("test-deterministic", seed=sid)
    return SubscriberRecord(sid, role, set(domains), f"mem://{sid}", kp.key_id, kp.verification_key, region)


def random_registry(rng: random.Random, rid: str, n: int) -> Registry:
    reg = Registry(rid)
    for i in range(n):
        role = rng.choice(["BAP", "BPP", "BPP", "BG"])
        domains = set(rng.sample(DOMAINS, rng.randint(1, 2))) if role != "BAP" else set()
        reg.register(record(f"{rid}-s{i}", role, domains, rng.choice(REGIONS)))
        if rng.random() < 0.2:
            reg.set_status(f"{rid}-s{i}", Status.SUSPENDED)
    return reg


# -- records and lookup ------------------------------------------------------------

def test_register_and_lookup_energy():
    reg = Registry("r")
    reg.register(record("ev-bpp", domains={"energy"}))
    assert [r.subscriber_id for r in reg.lookup(domain="energy")] == ["ev-bpp"]
    assert reg.get("ev-bpp").status is Status.ACTIVE


def test_register_errors():
    reg = Registry("r")
    reg.register(record("a"))
    with pytest.raises(DuplicateSubscriber):
        reg.register(record("a"))
    with pytest.raises(InvalidRecord):
        reg.register(record("b", domains=()))
    with pytest.raises(InvalidRecord):
        reg.register(record("", domains=("retail",)))


def test_suspend_and_reinstate():
    reg = Registry("r")
    reg.register(record("a"))
    reg.set_status("a", Status.SUSPENDED)
    assert reg.lookup() == []
    assert reg.resolve_key("a", reg.get("a").key_id) is None
    assert [r.subscriber_id for r in reg.candidates(Role.BPP)] == ["a"]
    reg.set_status("a", "ACTIVE")
    assert [r.subscriber_id for r in reg.lookup()] == ["a"]
    with pytest.raises(UnknownSubscriber):
        reg.set_status("ghost", Status.SUSPENDED)


def test_lookup_three_of_five():
    reg = Registry("r")
    for i in range(3):
        reg.register(record(f"m{i}", domains={"mobility"}))
    for i in range(2):
        reg.register(record(f"r{i}", domains={"retail"}))
    got = {r.subscriber_id for r in reg.lookup(role=Role.BPP, domain="mobility")}
    assert got == {"m0", "m1", "m2"}
    assert len(reg.lookup()) == 5
    assert reg.lookup(domain="unknown") == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 100),
       st.sampled_from([None, *Role]), st.sampled_from([None, *DOMAINS, "unknown"]), st.sampled_from([None, *REGIONS]))
def test_lookup_equals_brute_force_filter(seed, n, role, domain, region):
    reg = random_registry(random.Random(seed), "r", n)
    expected = {
        r.subscriber_id for r in reg.records
        if r.status is Status.ACTIVE
        and (role is None or r.role is role)
        and (domain is None or domain in r.domains)
        and (region is None or r.region == region)
    }
    assert {r.subscriber_id for r in reg.lookup(role, domain, region)} == expected


def test_snapshot_round_trip_keeps_status():
    reg = random_registry(random.Random(3), "r", 30)
    copy = Registry("r2")
    assert copy.load(reg.dump()) == 30
    assert copy.dump() == reg.dump()
    assert {r.subscriber_id: r.status for r in copy.records} == {r.subscriber_id: r.status for r in reg.records}


def test_peer_file_round_trip():
    reg = Registry("root", peers=[PeerLink("a", "registry://a"), PeerLink("b", "registry://b")])
    assert load_peers(reg.dump_peers()) == reg.peers


def test_concurrent_registration_is_serialized():
    reg = Registry("r")

    def worker(k):
        for i in range(50):
            reg.register(record(f"w{k}-{i}"))

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(reg.records) == 400
    assert len(reg.log) == 400


# -- discovery ---------------------------------------------------------------------

def test_three_registry_cycle():
    regs = {}
    for rid in "abc":
        regs[rid] = Registry(rid)
        regs[rid].register(record(f"bpp-{rid}"))
    regs["a"].add_peer("b", "registry://b")
    regs["b"].add_peer("c", "registry://c")
    regs["c"].add_peer("a", "registry://a")
    res = resolve_networks("registry://a", lambda loc: regs[loc.split("//")[1]], domain="mobility")
    assert res.pairs() == {("a", "bpp-a"), ("b", "bpp-b"), ("c", "bpp-c")}
    assert res.visited == ["a", "b", "c"]


def test_empty_root():
    res = resolve_networks("registry://x", lambda loc: Registry("x"))
    assert res.matches == [] and res.unreachable == []


def test_partial_results_and_root_failure():
    regs = {"a": Registry("a"), "b": Registry("b")}
    regs["a"].add_peer("b", "registry://b")
    regs["a"].add_peer("c", "registry://c")
    regs["b"].register(record("bpp-b"))

    def fetch(loc):
        return regs[loc.split("//")[1]]

    res = resolve_networks("registry://a", fetch)
    assert res.pairs() == {("b", "bpp-b")}
    assert [loc for loc, _ in res.unreachable] == ["registry://c"]
    with pytest.raises(RootUnreachable):
        resolve_networks("registry://c", fetch)


def random_graph(rng: random.Random, n: int):
    g = nx.gnp_random_graph(n, rng.uniform(0.05, 0.4), seed=rng.randrange(2**32), directed=True)
    regs = {}
    for node in g.nodes:
        rid = f"r{node}"
        regs[rid] = random_registry(rng, rid, rng.randint(0, 6))
    for u, v in g.edges:
        regs[f"r{u}"].add_peer(f"r{v}", f"registry://r{v}")
    failing = {f"r{node}" for node in g.nodes if node != 0 and rng.random() < 0.1}
    return g, regs, failing


def reachability_oracle(g, regs, failing, domain):
    """Plain BFS over the peer graph; failed registries are reached but not expanded."""
    h = g.copy()
    for rid in failing:
        h.remove_edges_from(list(h.out_edges(int(rid[1:]))))
    reach = {f"r{n}" for n in nx.descendants(h, 0) | {0}}
    pairs = {
        (rid, r.subscriber_id)
        for rid in reach - failing
        for r in regs[rid].records
        if r.status is Status.ACTIVE and (domain is None or domain in r.domains)
    }
    return reach, pairs


@pytest.mark.parametrize("seed", range(25))
def test_resolve_networks_matches_bfs_oracle(seed):
    rng = random.Random(seed)
    g, regs, failing = random_graph(rng, rng.randint(1, 20))
    fetches: list[str] = []

    def fetch(loc):
        rid = loc.split("//")[1]
        fetches.append(rid)
        if rid in failing:
            raise ConnectionError("down")
        return regs[rid]

    domain = rng.choice([None, *DOMAINS])
    res = resolve_networks("registry://r0", fetch, domain=domain)
    reach, pairs = reachability_oracle(g, regs, failing, domain)
    assert res.pairs() == pairs
    assert set(res.visited) == reach - failing
    assert {loc.split("//")[1] for loc, _ in res.unreachable} == reach & failing
    assert len(fetches) == len(set(fetches))  # each registry fetched at most once


def test_fully_connected_twenty():
    regs = {f"r{i}": Registry(f"r{i}") for i in range(20)}
    for a in regs:
        for b in regs:
            if a != b:
                regs[a].add_peer(b, f"registry://{b}")
    calls = []
    res = resolve_networks("registry://r0", lambda loc: calls.append(loc) or regs[loc.split("//")[1]])
    assert len(res.visited) == 20 and len(calls) == 20


# -- trust -------------------------------------------------------------------------

def test_trust_table_is_symmetric():
    t = TrustTable([("a", "b")])
    assert t.trusts("a", "b") and t.trusts("b", "a") and t.trusts("c", "c")
    assert not t.trusts("a", "c")
    t.revoke("b", "a")
    assert not t.trusts("a", "b")


def test_key_directory_consults_trusted_registries_only():
    home, peer, stranger = Registry("a"), Registry("b"), Registry("c")
    kp_b, kp_c = generate_keypair("test-deterministic", seed="b"), generate_keypair("test-deterministic", seed="c")
    peer.register(record("bpp-b", kp=kp_b))
    stranger.register(record("bpp-c", kp=kp_c))
    keys = KeyDirectory(home, {"a": home, "b": peer, "c": stranger}, TrustTable([("a", "b")]))
    assert keys("bpp-b", kp_b.key_id) == kp_b.verification_key
    assert keys("bpp-c", kp_c.key_id) is None
    # distinct keys per registry are allowed for one subscriber
    home.register(record("bpp-b", kp=generate_keypair("test-deterministic", seed="b-home")))
    assert keys("bpp-b", kp_b.key_id) == kp_b.verification_key
