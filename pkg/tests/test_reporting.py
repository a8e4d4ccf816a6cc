from __future__ import annotations

import csv

from opennet.harness import run_scenario, scenario_path
from opennet.reporting import write_report

PNG = b"\x89PNG\r\n\x1a\n"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_report_tables_and_figures(tmp_path):
    result = run_scenario(scenario_path("scraper"))
    written = write_report(result, tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == ["assertions.csv", "attempts.csv", "completions.png", "lifecycle_states.png",
                     "lifecycles.csv", "telemetry.csv", "traffic.png"]
    for p in written:
        if p.suffix == ".png":
            assert p.read_bytes()[:8] == PNG and p.stat().st_size > 2000

    lifecycles = rows(tmp_path / "out" / "lifecycles.csv")
    assert len(lifecycles) == len(result.lifecycles)
    assert {r["state"] for r in lifecycles} == {lc.state.value for lc in result.lifecycles}
    assert [r["passed"] for r in rows(tmp_path / "out" / "assertions.csv")] == ["True"] * len(result.assertions)
    tele = {r["subscriber_id"]: r for r in rows(tmp_path / "out" / "telemetry.csv")}
    scraper = next(t for t in result.telemetry if t.subscriber_id == "bpp-scraper")
    assert int(tele["bpp-scraper"]["search_count"]) == scraper.search_count
    sends = sum(int(r["sends"]) for r in rows(tmp_path / "out" / "attempts.csv"))
    assert sends == sum(1 for rec in result.log if rec["dir"] == "out" and "attempt" in rec)


def test_report_is_repeatable(tmp_path):
    result = run_scenario(scenario_path("single-network"))
    write_report(result, tmp_path / "a")
    write_report(result, tmp_path / "b")
    for name in ("lifecycles.csv", "assertions.csv", "telemetry.csv", "attempts.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
