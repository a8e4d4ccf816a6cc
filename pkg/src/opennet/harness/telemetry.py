"""Traffic telemetry from node event logs and a threshold scraping detector."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

# log verdicts that mark a message as actually handled by the subscriber
_COUNTED_IN = {"handled", "matched"}


@dataclass
class TelemetryRecord:
    subscriber_id: str
    counters: dict[str, int] = field(default_factory=dict)
    window: tuple[str, str] = ("", "")

    @property
    def search_count(self) -> int:
        return self.counters.get("search", 0)

    @property
    def confirmed_order_count(self) -> int:
        return self.counters.get("on_confirm", 0)

    def to_doc(self) -> dict:
        return {
            "confirmed_order_count": self.confirmed_order_count,
            "counters": dict(sorted(self.counters.items())),
            "search_count": self.search_count,
            "subscriber_id": self.subscriber_id,
            "window": list(self.window),
        }


@dataclass(frozen=True)
class Thresholds:
    min_search_volume: int = 100
    max_search_to_order_ratio: float = 50.0


@dataclass(frozen=True)
class Anomaly:
    subscriber_id: str
    flag: str
    search_count: int
    confirmed_order_count: int

    @property
    def evidence(self) -> dict[str, int]:
        return {"confirmed_order_count": self.confirmed_order_count, "search_count": self.search_count}


def collect(log: Iterable[dict], subscribers: Optional[set[str]] = None,
            start: str = "", end: str = "") -> list[TelemetryRecord]:
    """Count distinct messages each subscriber sent (acknowledged) or handled.

    ``start``/``end`` bound the window on the RFC3339 ``t`` field, which
    sorts lexicographically; empty means unbounded.
    """
    seen: dict[str, set[tuple[str, str, str]]] = defaultdict(set)
    for rec in log:
        t = rec.get("t", "")
        if (start and t < start) or (end and t > end):
            continue
        node = rec.get("node", "")
        if subscribers is not None and node not in subscribers:
            continue
        counted = (rec["dir"] == "in" and rec["verdict"] in _COUNTED_IN) or (
            rec["dir"] == "out" and rec["verdict"] == "ACK"
        )
        if counted:
            seen[node].add((rec["action"], rec["txn"], rec["msg"]))
    out = []
    for node in sorted(seen if subscribers is None else subscribers):
        counters: dict[str, int] = defaultdict(int)
        for action, _, _ in seen.get(node, ()):
            counters[action] += 1
        out.append(TelemetryRecord(node, dict(counters), (start, end)))
    return out


def detect_anomalies(records: Iterable[TelemetryRecord], thresholds: Thresholds) -> list[Anomaly]:
    out = []
    for r in records:
        s, o = r.search_count, r.confirmed_order_count
        if s >= thresholds.min_search_volume and s / max(1, o) > thresholds.max_search_to_order_ratio:
            out.append(Anomaly(r.subscriber_id, "SCRAPING_SUSPECTED", s, o))
    return out
