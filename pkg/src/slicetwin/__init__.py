"""slicetwin: slot-based network slicing simulator with per-slice digital
twins, demand forecasting, and predictive resource orchestration."""

from .domain import (ScenarioConfig, SLASpec, SliceClass, TelemetryVector,
                     default_config, load, save, validate)
from .engine import run_experiment, run_scenario, run_sweep

__version__ = "0.1.0"

__all__ = [
    "ScenarioConfig", "SLASpec", "SliceClass", "TelemetryVector",
    "default_config", "load", "save", "validate",
    "run_experiment", "run_scenario", "run_sweep", "__version__",
]
