"""Seeded lossy transport model: latency, drops, loss windows and partitions."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Optional

from opennet.errors import ScenarioConfigError

US = 1_000  # microseconds per millisecond


@dataclass(frozen=True)
class Partition:
    start_ms: float
    end_ms: float
    pairs: frozenset[frozenset[str]]

    def blocks(self, a: str, b: str, now_ms: float) -> bool:
        if not (self.start_ms <= now_ms < self.end_ms):
            return False
        for pair in self.pairs:
            names = set(pair)
            if "*" in names:
                rest = names - {"*"}
                if not rest or rest & {a, b}:
                    return True
            elif names == {a, b}:
                return True
        return False


@dataclass(frozen=True)
class LossWindow:
    start_ms: float
    end_ms: float
    probability: float


@dataclass(frozen=True)
class TransportConfig:
    latency_ms: tuple[float, float] = (10.0, 10.0)
    drop_probability: float = 0.0
    ack_timeout_ms: float = 200.0
    partitions: tuple[Partition, ...] = ()
    loss_windows: tuple[LossWindow, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_probability < 1.0:
            raise ScenarioConfigError("drop_probability must lie in [0, 1)")
        lo, hi = self.latency_ms
        if lo < 0 or hi < lo:
            raise ScenarioConfigError("latency range must satisfy 0 <= low <= high")
        for w in self.loss_windows:
            if not 0.0 <= w.probability <= 1.0:
                raise ScenarioConfigError("loss window probability must lie in [0, 1]")

    @classmethod
    def from_doc(cls, doc: Optional[dict[str, Any]], seed: int = 0) -> "TransportConfig":
        doc = doc or {}
        lat = doc.get("latency_ms", {"fixed": 10})
        if isinstance(lat, (int, float)):
            latency = (float(lat), float(lat))
        elif isinstance(lat, dict) and "fixed" in lat:
            latency = (float(lat["fixed"]), float(lat["fixed"]))
        elif isinstance(lat, dict) and "uniform" in lat and len(lat["uniform"]) == 2:
            latency = (float(lat["uniform"][0]), float(lat["uniform"][1]))
        else:
            raise ScenarioConfigError("latency_ms is a number, {fixed: x} or {uniform: [lo, hi]}")
        try:
            partitions = tuple(
                Partition(float(p["start_ms"]), float(p["end_ms"]),
                          frozenset(frozenset(pair) for pair in p["pairs"]))
                for p in doc.get("partitions", [])
            )
            windows = tuple(
                LossWindow(float(w["start_ms"]), float(w["end_ms"]), float(w["probability"]))
                for w in doc.get("loss_windows", [])
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioConfigError(f"bad partition or loss window: {exc}") from None
        return cls(
            latency_ms=latency,
            drop_probability=float(doc.get("drop_probability", 0.0)),
            ack_timeout_ms=float(doc.get("ack_timeout_ms", 200.0)),
            partitions=partitions,
            loss_windows=windows,
            seed=int(doc.get("seed", seed)),
        )


@dataclass(frozen=True)
class Delivery:
    status: str  # Delivered | Dropped | Partitioned
    at: Optional[int] = None  # arrival, microseconds of virtual time

    @property
    def delivered(self) -> bool:
        return self.status == "Delivered"


DROPPED = Delivery("Dropped")
PARTITIONED = Delivery("Partitioned")


class SimulatedNetwork:
    """Draws every delivery outcome from one seeded stream."""

    def __init__(self, config: TransportConfig) -> None:
        self.config = config
        self.rng = random.Random(config.seed)
        self.sent = 0
        self.dropped = 0

    def deliver(self, src: str, dst: str, data: bytes, now_us: int) -> Delivery:
        cfg = self.config
        self.sent += 1
        now_ms = now_us / US
        if any(p.blocks(src, dst, now_ms) for p in cfg.partitions):
            self.dropped += 1
            return PARTITIONED
        p = cfg.drop_probability
        for w in cfg.loss_windows:
            if w.start_ms <= now_ms < w.end_ms:
                p = w.probability
        if p > 0 and self.rng.random() < p:
            self.dropped += 1
            return DROPPED
        lo, hi = cfg.latency_ms
        latency = lo if lo == hi else self.rng.uniform(lo, hi)
        return Delivery("Delivered", now_us + max(1, int(round(latency * US))))


def deliver(network: SimulatedNetwork, src: str, dst: str, data: bytes, now_us: int) -> Delivery:
    return network.deliver(src, dst, data, now_us)
