from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import pytest
from hypothesis import strategies as st

from opennet.business import ReferenceSeller
from opennet.clock import ManualClock
from opennet.core.model import UTC, Context, Envelope
from opennet.node import DirectTransport, Node, NodeConfig, RetryPolicy
from opennet.registry import Registry, SubscriberRecord
from opennet.signing import generate_keypair

T0 = datetime(2026, 3, 1, 9, 0, tzinfo=UTC)

# -- hypothesis strategies ----------------------------------------------------

ids = st.text(alphabet="0123456789abcdef", min_size=8, max_size=32)
names = st.text(st.characters(codec="utf-8", exclude_categories=("Cs",)), min_size=1, max_size=12)
scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(2**53), max_value=2**53),
    st.floats(allow_nan=False, allow_infinity=False),
    st.text(st.characters(codec="utf-8", exclude_categories=("Cs",)), max_size=20),
)
documents = st.recursive(
    scalars,
    lambda inner: st.one_of(st.lists(inner, max_size=4), st.dictionaries(names, inner, max_size=4)),
    max_leaves=20,
)
payloads = st.dictionaries(names, documents, max_size=5)
timestamps = st.datetimes(min_value=datetime(2000, 1, 1), max_value=datetime(2099, 1, 1),
                          timezones=st.just(UTC))


@st.composite
def contexts(draw, action: str | None = None) -> Context:
    optional_bpp = draw(st.booleans())
    return Context(
        domain=draw(st.sampled_from(["mobility", "retail", "energy", "financial-services"])),
        action=action or draw(st.sampled_from(["search", "on_search", "select", "confirm", "on_status", "rating"])),
        core_version="1.1.0",
        bap_id=draw(names),
        bap_uri="https://" + draw(ids),
        transaction_id=draw(ids),
        message_id=draw(ids),
        timestamp=draw(timestamps),
        ttl=draw(st.integers(min_value=1, max_value=86400)),
        bpp_id=draw(names) if optional_bpp else None,
        bpp_uri=("https://" + draw(ids)) if optional_bpp else None,
    )


@st.composite
def envelopes(draw, action: str | None = None) -> Envelope:
    return Envelope(draw(contexts(action)), draw(payloads))


def random_envelope(rng: random.Random) -> Envelope:
    """Plain seeded generator, used where hypothesis shrinking is not wanted."""

    def value(depth: int):
        kind = rng.randrange(7 if depth < 3 else 4)
        if kind == 0:
            return rng.randint(-10**9, 10**9)
        if kind == 1:
            return rng.choice([True, False, None])
        if kind == 2:
            return round(rng.uniform(-1e6, 1e6), rng.randrange(6))
        if kind == 3:
            return "".join(rng.choice("abcdefxyz é€ \"\\/\n") for _ in range(rng.randrange(12)))
        if kind in (4, 5):
            return {f"k{rng.randrange(100)}": value(depth + 1) for _ in range(rng.randrange(1, 5))}
        return [value(depth + 1) for _ in range(rng.randrange(4))]

    payload = {f"f{i}": value(0) for i in range(rng.randrange(1, 6))}
    ctx = Context(
        domain=rng.choice(["mobility", "retail", "energy"]),
        action=rng.choice(["search", "select", "init", "confirm", "on_status"]),
        core_version="1.1.0",
        bap_id=f"bap-{rng.randrange(1000)}",
        bap_uri=f"https://bap-{rng.randrange(1000)}.example",
        transaction_id=f"{rng.getrandbits(128):032x}",
        message_id=f"{rng.getrandbits(128):032x}",
        timestamp=T0 + timedelta(seconds=rng.randrange(10**6), microseconds=rng.randrange(10**6)),
        ttl=rng.randrange(1, 3600),
    )
    return Envelope(ctx, payload)


# -- a small in-process network -----------------------------------------------

@dataclass
class Net:
    registry: Registry = field(default_factory=lambda: Registry("reg"))
    transport: DirectTransport = field(default_factory=DirectTransport)
    clock: ManualClock = field(default_factory=lambda: ManualClock(T0))
    nodes: dict[str, Node] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)

    def add(self, sid: str, role: str, domains=(), *, retry: RetryPolicy = RetryPolicy(), **kw) -> Node:
        kp = generate_keypair("test-deterministic", seed=sid)
        endpoint = f"mem://{sid}"
        self.registry.register(SubscriberRecord(sid, role, set(domains), endpoint, kp.key_id, kp.verification_key))
        business = kw.pop("business", None)
        if role == "BPP" and business is None:
            business = ReferenceSeller(f"{sid}-provider", sorted(domains)[0])
        node = Node(NodeConfig(sid, role, endpoint, set(domains), key=kp, retry=retry),
                    keys=self.registry.resolve_key, transport=self.transport, clock=self.clock,
                    business=business, log=self.log.append, **kw)
        self.transport.bind(endpoint, node)
        self.nodes[sid] = node
        return node

    def __getitem__(self, sid: str) -> Node:
        return self.nodes[sid]


@pytest.fixture
def net() -> Net:
    return Net()
