"""Open-network commerce protocol: signed asynchronous messaging between buyer
and provider platforms, registries, search gateways, domain adaptations,
certification and a deterministic network simulator."""

from pathlib import Path

__version__ = "0.1.0"

DATA_DIR = Path(__file__).parent / "data"
