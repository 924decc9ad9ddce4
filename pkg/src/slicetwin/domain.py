"""Core vocabulary: slice classes, SLA targets, telemetry, scenario configuration.

A scenario is fully described by a ScenarioConfig.  Configs are immutable
after validation, serialize to a flat ``key = value`` text format with
dotted paths for nested sections, and round-trip exactly.
"""

from __future__ import annotations

import enum
import math
import typing
from dataclasses import dataclass, fields, replace


class SliceClass(enum.Enum):
    EMBB = "eMBB"
    URLLC = "URLLC"
    MMTC = "mMTC"


class ConfigError(ValueError):
    """Raised when a scenario config fails validation; message lists every violation."""


@dataclass(frozen=True)
class SLASpec:
    """Per-class service level targets.

    latency_threshold_ms bounds the per-request sojourn time, the
    satisfaction threshold is the minimum acceptable fraction of traffic
    inside that bound, and safety_fraction scales the demand level at
    which proactive provisioning engages.
    """

    latency_threshold_ms: float
    satisfaction_threshold: float = 0.95
    safety_fraction: float = 0.8


@dataclass(frozen=True)
class TelemetryVector:
    """One slot of slice measurements: arrival rate (req/ms), utilization,
    channel quality and observed SLA satisfaction, all finite."""

    lambda_: float
    rho: float
    gamma: float
    eta: float

    def validate(self) -> None:
        vals = (self.lambda_, self.rho, self.gamma, self.eta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"telemetry has non-finite component: {vals}")
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lambda_}")
        for name, v in (("rho", self.rho), ("gamma", self.gamma), ("eta", self.eta)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass
class SliceRuntime:
    """Mutable per-slice state the engine owns during a run."""

    id: str
    class_: SliceClass
    sla: SLASpec
    allocated_units: int
    base_rate: float  # pre-burst mean demand, req/ms, before load scaling
    transport_offset_ms: float
    telemetry: TelemetryVector
    steering_fraction: float = 0.0


_CLASS_ORDER = (SliceClass.EMBB, SliceClass.URLLC, SliceClass.MMTC)

FORECASTER_KINDS = ("last_value", "ar", "recurrent", "oracle")
CONTROLLER_KINDS = ("dtaas", "rso", "cdrl")
RISK_MODES = ("final_step", "horizon_mean")
FORECAST_FEATURES = ("full", "rate_only")


@dataclass(frozen=True)
class ScenarioConfig:
    # Horizon and control cadence (one slot = 1 s; latency math in ms)
    horizon_slots: int = 5000
    slot_ms: float = 1000.0
    prediction_horizon: int = 5
    twin_update_interval_slots: int = 1
    sync_delay_slots: int = 1

    # Workload
    num_slices: int = 3
    base_rate_embb: float = 0.30
    base_rate_urllc: float = 0.10
    base_rate_mmtc: float = 0.20
    load_scale: float = 1.0
    burst_factor: float = 1.5
    burst_enter_prob: float = 0.05
    burst_exit_prob: float = 0.2

    # Radio channel quality model
    channel_ar_coeff: float = 0.9
    channel_noise_std: float = 0.02
    channel_gamma_min: float = 0.3

    # Edge resources and the queueing abstraction
    edge_capacity_units: int = 100
    unit_service_rate: float = 0.02  # req/ms served per allocated unit at gamma=1
    min_units: int = 1
    latency_cap_ms: float = 1000.0
    transport_offset_embb_ms: float = 3.0
    transport_offset_urllc_ms: float = 0.5
    transport_offset_mmtc_ms: float = 5.0

    # SLA targets per class
    sla_embb: SLASpec = SLASpec(latency_threshold_ms=20.0)
    sla_urllc: SLASpec = SLASpec(latency_threshold_ms=5.0)
    sla_mmtc: SLASpec = SLASpec(latency_threshold_ms=50.0)

    # Traffic steering
    steering_penalty_ms: float = 2.0
    overflow_margin_rate: float = 0.1  # service headroom of the shared overflow pool, req/ms

    # Twin and risk estimation
    history_window: int = 50
    rate_scale: float = 1.0  # divides rate components inside fidelity norms
    risk_samples: int = 200
    risk_mode: str = "horizon_mean"

    # Forecasting
    forecaster_kind: str = "ar"
    forecast_features: str = "full"
    ar_order: int = 3
    recurrent_hidden_size: int = 64
    recurrent_learning_rate: float = 0.001
    recurrent_window: int = 8

    # Provisioning weights and DTaaS controller tuning
    alpha: float = 0.4
    beta: float = 0.6
    dtaas_release_fraction: float = 0.7
    dtaas_release_persist: int = 10
    dtaas_reconfig_risk: float = 0.05

    # Reactive baseline tuning
    rso_step: int = 2
    rso_low_util: float = 0.5
    rso_persist: int = 5

    # Centralized baseline tuning
    cdrl_period: int = 10
    cdrl_delay: int = 2
    cdrl_smoothing: float = 0.9
    cdrl_headroom: float = 1.2
    cdrl_delay_per_slices: int = 5  # extra actuation delay = num_slices // this

    # Experiment control
    controller_kind: str = "dtaas"
    seed: int = 12345
    repetitions: int = 10


def default_config() -> ScenarioConfig:
    return ScenarioConfig()


def _check(errors: list[str], ok: bool, field: str, value, constraint: str) -> None:
    if not ok:
        errors.append(f"{field}: {constraint} (got {value!r})")


def validate(config: ScenarioConfig) -> list[str]:
    """Return every constraint violation; an empty list means the config is valid."""
    e: list[str] = []
    c = config
    _check(e, c.horizon_slots >= 0, "horizon_slots", c.horizon_slots, "must be >= 0")
    _check(e, c.slot_ms > 0, "slot_ms", c.slot_ms, "must be > 0")
    _check(e, c.prediction_horizon >= 1, "prediction_horizon", c.prediction_horizon, "must be >= 1")
    _check(e, c.twin_update_interval_slots >= 1, "twin_update_interval_slots",
           c.twin_update_interval_slots, "must be >= 1")
    _check(e, c.sync_delay_slots >= 0, "sync_delay_slots", c.sync_delay_slots, "must be >= 0")
    _check(e, c.num_slices >= 1, "num_slices", c.num_slices, "must be >= 1")
    for name in ("base_rate_embb", "base_rate_urllc", "base_rate_mmtc"):
        _check(e, getattr(c, name) >= 0, name, getattr(c, name), "must be >= 0")
    _check(e, c.load_scale > 0, "load_scale", c.load_scale, "must be > 0")
    _check(e, c.burst_factor >= 1, "burst_factor", c.burst_factor, "must be >= 1")
    for name in ("burst_enter_prob", "burst_exit_prob"):
        _check(e, 0.0 <= getattr(c, name) <= 1.0, name, getattr(c, name), "must be in [0, 1]")
    _check(e, 0.0 < c.channel_ar_coeff < 1.0, "channel_ar_coeff", c.channel_ar_coeff,
           "must be in (0, 1)")
    _check(e, c.channel_noise_std >= 0, "channel_noise_std", c.channel_noise_std, "must be >= 0")
    _check(e, 0.0 < c.channel_gamma_min <= 1.0, "channel_gamma_min", c.channel_gamma_min,
           "must be in (0, 1]")
    _check(e, c.edge_capacity_units >= 1, "edge_capacity_units", c.edge_capacity_units,
           "must be >= 1")
    _check(e, c.unit_service_rate > 0, "unit_service_rate", c.unit_service_rate, "must be > 0")
    _check(e, c.min_units >= 0, "min_units", c.min_units, "must be >= 0")
    _check(e, c.min_units <= c.edge_capacity_units, "min_units", c.min_units,
           "must be <= edge_capacity_units")
    _check(e, c.latency_cap_ms > 0, "latency_cap_ms", c.latency_cap_ms, "must be > 0")
    for name in ("transport_offset_embb_ms", "transport_offset_urllc_ms",
                 "transport_offset_mmtc_ms"):
        v = getattr(c, name)
        _check(e, v >= 0, name, v, "must be >= 0")
        _check(e, v < c.latency_cap_ms, name, v, "must be < latency_cap_ms")
    for cls in ("embb", "urllc", "mmtc"):
        sla = getattr(c, f"sla_{cls}")
        _check(e, sla.latency_threshold_ms > 0, f"sla_{cls}.latency_threshold_ms",
               sla.latency_threshold_ms, "must be > 0")
        _check(e, 0.0 < sla.satisfaction_threshold < 1.0, f"sla_{cls}.satisfaction_threshold",
               sla.satisfaction_threshold, "must be in (0, 1)")
        _check(e, 0.0 < sla.safety_fraction <= 1.0, f"sla_{cls}.safety_fraction",
               sla.safety_fraction, "must be in (0, 1]")
    _check(e, c.steering_penalty_ms >= 0, "steering_penalty_ms", c.steering_penalty_ms,
           "must be >= 0")
    _check(e, c.overflow_margin_rate > 0, "overflow_margin_rate", c.overflow_margin_rate,
           "must be > 0")
    _check(e, c.history_window >= 1, "history_window", c.history_window, "must be >= 1")
    _check(e, c.rate_scale > 0, "rate_scale", c.rate_scale, "must be > 0")
    _check(e, c.risk_samples >= 1, "risk_samples", c.risk_samples, "must be >= 1")
    _check(e, c.risk_mode in RISK_MODES, "risk_mode", c.risk_mode,
           f"must be one of {RISK_MODES}")
    _check(e, c.forecaster_kind in FORECASTER_KINDS, "forecaster_kind", c.forecaster_kind,
           f"must be one of {FORECASTER_KINDS}")
    _check(e, c.forecast_features in FORECAST_FEATURES, "forecast_features",
           c.forecast_features, f"must be one of {FORECAST_FEATURES}")
    _check(e, c.ar_order >= 1, "ar_order", c.ar_order, "must be >= 1")
    _check(e, c.recurrent_hidden_size >= 1, "recurrent_hidden_size", c.recurrent_hidden_size,
           "must be >= 1")
    _check(e, c.recurrent_learning_rate > 0, "recurrent_learning_rate",
           c.recurrent_learning_rate, "must be > 0")
    _check(e, c.recurrent_window >= 1, "recurrent_window", c.recurrent_window, "must be >= 1")
    _check(e, c.alpha >= 0, "alpha", c.alpha, "must be >= 0")
    _check(e, c.beta >= 0, "beta", c.beta, "must be >= 0")
    _check(e, 0.0 < c.dtaas_release_fraction <= 1.0, "dtaas_release_fraction",
           c.dtaas_release_fraction, "must be in (0, 1]")
    _check(e, c.dtaas_release_persist >= 1, "dtaas_release_persist", c.dtaas_release_persist,
           "must be >= 1")
    _check(e, 0.0 <= c.dtaas_reconfig_risk <= 1.0, "dtaas_reconfig_risk",
           c.dtaas_reconfig_risk, "must be in [0, 1]")
    _check(e, c.rso_step >= 1, "rso_step", c.rso_step, "must be >= 1")
    _check(e, 0.0 < c.rso_low_util < 1.0, "rso_low_util", c.rso_low_util, "must be in (0, 1)")
    _check(e, c.rso_persist >= 1, "rso_persist", c.rso_persist, "must be >= 1")
    _check(e, c.cdrl_period >= 1, "cdrl_period", c.cdrl_period, "must be >= 1")
    _check(e, c.cdrl_delay >= 0, "cdrl_delay", c.cdrl_delay, "must be >= 0")
    _check(e, 0.0 < c.cdrl_smoothing < 1.0, "cdrl_smoothing", c.cdrl_smoothing,
           "must be in (0, 1)")
    _check(e, c.cdrl_headroom >= 1.0, "cdrl_headroom", c.cdrl_headroom, "must be >= 1")
    _check(e, c.cdrl_delay_per_slices >= 1, "cdrl_delay_per_slices", c.cdrl_delay_per_slices,
           "must be >= 1")
    _check(e, c.controller_kind in CONTROLLER_KINDS, "controller_kind", c.controller_kind,
           f"must be one of {CONTROLLER_KINDS}")
    _check(e, 0 <= c.seed < 2 ** 64, "seed", c.seed, "must fit in 64 unsigned bits")
    _check(e, c.repetitions >= 1, "repetitions", c.repetitions, "must be >= 1")
    return e


def require_valid(config: ScenarioConfig) -> ScenarioConfig:
    errors = validate(config)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return config


# --- text serialization -------------------------------------------------

def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text: str, typ):
    if typ is float:
        return float(text)
    if typ is int:
        return int(text)
    if typ is bool:
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    return text


def to_text(config: ScenarioConfig) -> str:
    """Serialize to the scenario file format: one dotted key per line."""
    lines = ["# slicetwin scenario"]
    for f in fields(ScenarioConfig):
        v = getattr(config, f.name)
        if isinstance(v, SLASpec):
            for sub in fields(SLASpec):
                lines.append(f"{f.name}.{sub.name} = {_format_value(getattr(v, sub.name))}")
        else:
            lines.append(f"{f.name} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


_TOP_TYPES = typing.get_type_hints(ScenarioConfig)
_SLA_TYPES = typing.get_type_hints(SLASpec)


def apply_settings(config: ScenarioConfig, settings: dict[str, str]) -> ScenarioConfig:
    """Apply ``dotted.key -> text value`` overrides.  Unknown keys are errors."""
    top: dict[str, object] = {}
    nested: dict[str, dict[str, object]] = {}
    errors: list[str] = []
    for key, raw in settings.items():
        head, _, tail = key.partition(".")
        if tail:
            if head not in _TOP_TYPES or _TOP_TYPES[head] is not SLASpec:
                errors.append(f"unknown key {key!r}")
                continue
            if tail not in _SLA_TYPES:
                errors.append(f"unknown key {key!r}")
                continue
            try:
                nested.setdefault(head, {})[tail] = _parse_value(raw, _SLA_TYPES[tail])
            except ValueError as exc:
                errors.append(f"{key}: {exc}")
        else:
            if head not in _TOP_TYPES or _TOP_TYPES[head] is SLASpec:
                errors.append(f"unknown key {key!r}")
                continue
            try:
                top[head] = _parse_value(raw, _TOP_TYPES[head])
            except ValueError as exc:
                errors.append(f"{key}: {exc}")
    if errors:
        raise ConfigError("bad settings:\n  " + "\n  ".join(errors))
    cfg = replace(config, **top) if top else config
    for name, subs in nested.items():
        cfg = replace(cfg, **{name: replace(getattr(cfg, name), **subs)})
    return cfg


def from_text(text: str) -> ScenarioConfig:
    """Parse the scenario file format; unknown keys and malformed lines are errors."""
    settings: dict[str, str] = {}
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw!r}")
            continue
        key, _, value = line.partition("=")
        settings[key.strip()] = value.strip()
    if errors:
        raise ConfigError("bad scenario file:\n  " + "\n  ".join(errors))
    return apply_settings(ScenarioConfig(), settings)


def save(config: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_text(config))


def load(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_text(fh.read())


# --- derived views ------------------------------------------------------

def class_sla(config: ScenarioConfig, cls: SliceClass) -> SLASpec:
    return {
        SliceClass.EMBB: config.sla_embb,
        SliceClass.URLLC: config.sla_urllc,
        SliceClass.MMTC: config.sla_mmtc,
    }[cls]


def class_base_rate(config: ScenarioConfig, cls: SliceClass) -> float:
    return {
        SliceClass.EMBB: config.base_rate_embb,
        SliceClass.URLLC: config.base_rate_urllc,
        SliceClass.MMTC: config.base_rate_mmtc,
    }[cls]


def class_offset(config: ScenarioConfig, cls: SliceClass) -> float:
    return {
        SliceClass.EMBB: config.transport_offset_embb_ms,
        SliceClass.URLLC: config.transport_offset_urllc_ms,
        SliceClass.MMTC: config.transport_offset_mmtc_ms,
    }[cls]


def build_slices(config: ScenarioConfig) -> list[SliceRuntime]:
    """Instantiate slice runtimes by cycling the three classes.

    Per-class rates are divided by num_slices/3 so the total offered load
    stays constant as the slice count grows.
    """
    idle = TelemetryVector(0.0, 0.0, 1.0, 1.0)
    scale = config.num_slices / len(_CLASS_ORDER)
    slices = []
    for i in range(config.num_slices):
        cls = _CLASS_ORDER[i % len(_CLASS_ORDER)]
        slices.append(SliceRuntime(
            id=f"{cls.value}-{i}",
            class_=cls,
            sla=class_sla(config, cls),
            allocated_units=config.min_units,
            base_rate=class_base_rate(config, cls) / scale,
            transport_offset_ms=class_offset(config, cls),
            telemetry=idle,
        ))
    return slices
