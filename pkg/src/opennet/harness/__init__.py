"""Deterministic multi-network simulation: transport, scheduler, scenarios, telemetry."""

from opennet.harness.scenario import (
    AssertionVerdict,
    LifecycleOutcome,
    Scenario,
    ScenarioResult,
    load_scenario,
    run_scenario,
    scenario_path,
)
from opennet.harness.sim import Simulator, SimTransport
from opennet.harness.telemetry import Anomaly, TelemetryRecord, Thresholds, collect, detect_anomalies
from opennet.harness.transport import Delivery, SimulatedNetwork, TransportConfig, deliver

__all__ = [
    "Anomaly",
    "AssertionVerdict",
    "Delivery",
    "LifecycleOutcome",
    "Scenario",
    "ScenarioResult",
    "SimTransport",
    "SimulatedNetwork",
    "Simulator",
    "TelemetryRecord",
    "Thresholds",
    "TransportConfig",
    "collect",
    "deliver",
    "detect_anomalies",
    "load_scenario",
    "run_scenario",
    "scenario_path",
]
