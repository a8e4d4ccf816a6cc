"""Scenario reports: delimited tables plus matplotlib figures, written side by side."""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from opennet.core.model import parse_timestamp  # noqa: E402

RC = {
    "figure.figsize": (6.4, 3.6),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _seconds(log: list[dict]) -> list[float]:
    if not log:
        return []
    t0 = parse_timestamp(log[0]["t"])
    return [(parse_timestamp(r["t"]) - t0).total_seconds() for r in log]


def tables(result, out: Path) -> list[Path]:
    written = [
        write_csv(out / "lifecycles.csv", ("flow_id", "index", "transaction_id", "state", "status", "reason"),
                  ((lc.flow_id, lc.index, lc.transaction_id, lc.state.value, lc.status, lc.reason)
                   for lc in result.lifecycles)),
        write_csv(out / "assertions.csv", ("assertion", "passed", "detail"),
                  ((a.name, a.passed, a.detail) for a in result.assertions)),
    ]
    actions = sorted({a for rec in result.telemetry for a in rec.counters})
    written.append(write_csv(
        out / "telemetry.csv",
        ("subscriber_id", "search_count", "confirmed_order_count", *actions),
        ((rec.subscriber_id, rec.search_count, rec.confirmed_order_count,
          *(rec.counters.get(a, 0) for a in actions)) for rec in result.telemetry)))
    attempts = Counter(rec.get("attempt", 1) for rec in result.log if rec["dir"] == "out" and "attempt" in rec)
    written.append(write_csv(out / "attempts.csv", ("attempt", "sends"), sorted(attempts.items())))
    return written


def fig_states(result, path: Path) -> Path:
    by_flow: dict[str, Counter] = defaultdict(Counter)
    for lc in result.lifecycles:
        by_flow[lc.flow_id][lc.state.value] += 1
    flows = sorted(by_flow)
    states = sorted({s for c in by_flow.values() for s in c})
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        bottom = [0] * len(flows)
        for s in states:
            counts = [by_flow[f][s] for f in flows]
            ax.bar(flows, counts, bottom=bottom, label=s)
            bottom = [b + c for b, c in zip(bottom, counts)]
        ax.set_ylabel("lifecycles")
        ax.set_title("final lifecycle state by flow")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def fig_completions(result, path: Path) -> Path:
    """Cumulative terminal transitions over virtual time."""
    done = [r for r in result.log if r["verdict"] == "matched" and r.get("state") in ("COMPLETED", "CANCELLED")]
    xs = _seconds(result.log[:1] + done)[1:]
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.step(xs, range(1, len(xs) + 1), where="post")
        ax.set_xlabel("virtual time (s)")
        ax.set_ylabel("lifecycles terminal")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def fig_traffic(result, path: Path) -> Path:
    recs = [r for r in result.telemetry if r.counters]
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        names = [r.subscriber_id for r in recs]
        ax.barh(names, [r.search_count for r in recs], label="search")
        ax.barh(names, [r.confirmed_order_count for r in recs], label="on_confirm")
        ax.set_xlabel("messages")
        ax.set_title("search volume against confirmed orders")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def write_report(result, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = tables(result, out)
    written.append(fig_states(result, out / "lifecycle_states.png"))
    written.append(fig_completions(result, out / "completions.png"))
    written.append(fig_traffic(result, out / "traffic.png"))
    return written
