"""The three orchestration policies behind one decide() interface.

The twin-driven controller provisions proactively by minimizing a
weighted objective of over-allocation and violation risk whenever the
forecast approaches what the current allocation can serve compliantly.
The reactive baseline scales only after observed degradation.  The
centralized baseline is a deterministic surrogate for a learned
allocator: periodic, delayed, demand-smoothed targets with headroom.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .domain import ScenarioConfig, SLASpec, SliceRuntime
from .netmodel import ResourcePool, eta_analytic_array, service_rate
from .twin import ForecastUnavailable, SliceTwin, risk_for_units

STEERING_CANDIDATES = (0.0, 0.1, 0.2, 0.3)


class Trigger(enum.Enum):
    SAFETY_THRESHOLD = "SAFETY_THRESHOLD"
    SLA_BREACH = "SLA_BREACH"
    PERIODIC = "PERIODIC"
    NONE = "NONE"


class Unsatisfiable(Exception):
    """Required units exceed total edge capacity: structural overload."""

    def __init__(self, needed_units: int, message: str):
        super().__init__(message)
        self.needed_units = needed_units


@dataclass(frozen=True)
class ProvisioningDecision:
    slice_id: str
    delta_units: int
    trigger: Trigger
    objective_value: float
    clamped: bool = False


@dataclass(frozen=True)
class ReconfigAction:
    slice_id: str
    steering_fraction: float
    predicted_violation_sum: float


def required_margin(sla: SLASpec) -> float:
    """Service-rate headroom (req/ms) a queue needs beyond its demand to
    keep the satisfaction ratio at the threshold."""
    return math.log(1.0 / (1.0 - sla.satisfaction_threshold)) / sla.latency_threshold_ms


def sustainable_rate(mu: float, sla: SLASpec) -> float:
    """Largest demand the queue carries while still meeting its target."""
    return max(0.0, mu - required_margin(sla))


def r_needed(lambda_hat: float, sla: SLASpec, unit_rate: float, gamma: float,
             min_units: int = 1, capacity_units: int | None = None) -> int:
    """Smallest allocation whose analytic satisfaction meets the threshold.

    Starts from the closed form ceil((lambda + margin) / (unit_rate * gamma))
    and nudges by one if floating point put the boundary on the wrong side,
    so the minimality pair holds exactly.
    """
    per_unit = unit_rate * gamma
    if per_unit <= 0.0:
        raise Unsatisfiable(capacity_units + 1 if capacity_units else 1 << 30,
                            "no serviceable capacity at gamma=0")
    if lambda_hat <= 0.0:
        r = min_units
    else:
        mu_req = lambda_hat + required_margin(sla)
        r = max(min_units, math.ceil(mu_req / per_unit))
        theta = sla.satisfaction_threshold
        thr = sla.latency_threshold_ms
        while _eta_scalar(lambda_hat, r * per_unit, thr) < theta:
            r += 1
        while r > min_units and _eta_scalar(lambda_hat, (r - 1) * per_unit, thr) >= theta:
            r -= 1
    if capacity_units is not None and r > capacity_units:
        raise Unsatisfiable(r, f"need {r} units, capacity is {capacity_units}")
    return r


def _eta_scalar(lam: float, mu: float, threshold_ms: float) -> float:
    if lam <= 0.0:
        return 1.0
    if lam >= mu:
        return 0.0
    return 1.0 - math.exp(-(mu - lam) * threshold_ms)


def _lazy_noise(seed: int, purpose: int, slice_index: int, slot: int, shape):
    """Memoized noise draw: most slots are gated out and never pay for it."""
    cache: list[np.ndarray] = []

    def get() -> np.ndarray:
        if not cache:
            cache.append(streams.decision_rng(seed, purpose, slice_index, slot)
                         .standard_normal(shape))
        return cache[0]
    return get


def _objective_over(deltas: np.ndarray, twin: SliceTwin, slice_rt: SliceRuntime,
                    needed: int, config: ScenarioConfig, noise):
    """Provisioning objective over candidate deltas, with shared noise."""
    forecast = twin.last_forecast
    units = slice_rt.allocated_units + deltas
    noise = noise() if callable(noise) else noise
    risks = risk_for_units(units, np.array(forecast.point), forecast.residual_std,
                           twin.mirrored.gamma, slice_rt.sla, config, noise)
    overalloc = np.maximum(0, units - needed) / config.edge_capacity_units
    return config.alpha * overalloc + config.beta * risks, risks


def _provision_scan(twin: SliceTwin, slice_rt: SliceRuntime, pool: ResourcePool,
                    config: ScenarioConfig, noise: np.ndarray):
    """Exhaustive objective scan; returns (decision, risk at the choice)."""
    forecast = twin.last_forecast
    if forecast is None:
        raise ForecastUnavailable(f"{slice_rt.id}: no forecast yet")
    sla = slice_rt.sla
    gamma = twin.mirrored.gamma
    r = slice_rt.allocated_units
    mu_now = service_rate(r, config.unit_service_rate, gamma)
    peak = max(forecast.point)
    lam_safe = sla.safety_fraction * sustainable_rate(mu_now, sla)
    if peak <= lam_safe:
        return ProvisioningDecision(slice_rt.id, 0, Trigger.NONE, 0.0), None

    free = pool.available()
    try:
        needed = r_needed(peak, sla, config.unit_service_rate, gamma,
                          config.min_units, config.edge_capacity_units)
    except Unsatisfiable:
        # Structural overload: grab whatever is left and flag it.
        return ProvisioningDecision(slice_rt.id, free, Trigger.SAFETY_THRESHOLD,
                                    math.nan, clamped=True), None

    deltas = np.arange(config.min_units - r, free + 1)
    objective, risks = _objective_over(deltas, twin, slice_rt, needed, config, noise)
    best = int(np.argmin(objective))  # first minimum = smallest delta
    decision = ProvisioningDecision(slice_rt.id, int(deltas[best]),
                                    Trigger.SAFETY_THRESHOLD, float(objective[best]))
    return decision, float(risks[best])


def dtaas_provision(twin: SliceTwin, slice_rt: SliceRuntime, pool: ResourcePool,
                    config: ScenarioConfig, rng: np.random.Generator | None = None,
                    noise: np.ndarray | None = None) -> ProvisioningDecision:
    """Proactive scaling decision for one slice (objective-minimizing scan)."""
    if noise is None:
        if rng is None:
            raise ValueError("need rng or noise")
        noise = rng.standard_normal((config.risk_samples, config.prediction_horizon))
    decision, _ = _provision_scan(twin, slice_rt, pool, config, noise)
    return decision


def steering_violation_sums(twin: SliceTwin, slice_rt: SliceRuntime, units_after: int,
                            config: ScenarioConfig, noise: np.ndarray) -> list[float]:
    """Expected count of violating horizon steps for each steering candidate."""
    forecast = twin.last_forecast
    if forecast is None:
        raise ForecastUnavailable(f"{slice_rt.id}: no forecast yet")
    sla = slice_rt.sla
    gamma = twin.mirrored.gamma
    mu = service_rate(units_after, config.unit_service_rate, gamma)
    point = np.array(forecast.point)
    lam = np.maximum(point[None, :] + forecast.residual_std * noise, 0.0)  # (N, h)
    theta = sla.satisfaction_threshold
    thr = sla.latency_threshold_ms
    effective = thr - config.steering_penalty_ms
    sums = []
    for phi in STEERING_CANDIDATES:
        if phi == 0.0:
            eta = eta_analytic_array(lam, np.asarray(mu), thr)
        else:
            local = eta_analytic_array((1.0 - phi) * lam, np.asarray(mu), thr)
            steered = phi * lam
            if effective <= 0.0:
                overflow = np.zeros_like(local)
            else:
                overflow = eta_analytic_array(steered, steered + config.overflow_margin_rate,
                                              effective)
            eta = (1.0 - phi) * local + phi * overflow
        sums.append(float(np.mean(eta < theta, axis=0).sum()))
    return sums


def dtaas_reconfigure(twin: SliceTwin, slice_rt: SliceRuntime, units_after: int,
                      config: ScenarioConfig, rng: np.random.Generator | None = None,
                      noise: np.ndarray | None = None) -> ReconfigAction:
    """Pick the steering fraction minimizing predicted violations over the horizon."""
    if noise is None:
        if rng is None:
            raise ValueError("need rng or noise")
        noise = rng.standard_normal((config.risk_samples, config.prediction_horizon))
    sums = steering_violation_sums(twin, slice_rt, units_after, config, noise)
    best = min(range(len(STEERING_CANDIDATES)), key=lambda i: (sums[i], i))
    return ReconfigAction(slice_rt.id, STEERING_CANDIDATES[best], sums[best])


@dataclass
class Observation:
    """What a controller sees about one slice at decision time."""

    index: int
    slice: SliceRuntime
    eta: float
    rho: float
    lambda_: float
    gamma: float
    twin: SliceTwin | None = None


class DtaasController:
    """Twin-driven proactive provisioning with steering fallback and
    persistence-gated scale-down."""

    name = "dtaas"
    extra_apply_delay = 0

    def __init__(self, config: ScenarioConfig, twins: list[SliceTwin], seed: int):
        self.config = config
        self.twins = twins
        self.seed = seed
        self._release_count = [0] * len(twins)

    def decide(self, slot: int, observations: list[Observation], pool: ResourcePool):
        cfg = self.config
        provisions: list[ProvisioningDecision] = []
        reconfigs: list[ReconfigAction] = []
        risks: dict[int, float] = {}
        for obs in observations:
            twin = self.twins[obs.index]
            sl = obs.slice
            noise = _lazy_noise(self.seed, streams.RISK, obs.index, slot,
                                (cfg.risk_samples, cfg.prediction_horizon))
            decision, risk = _provision_scan(twin, sl, pool, cfg, noise)
            if decision.trigger == Trigger.SAFETY_THRESHOLD:
                self._release_count[obs.index] = 0
                provisions.append(decision)
                if risk is not None:
                    risks[obs.index] = risk
                if risk is None or risk >= cfg.dtaas_reconfig_risk:
                    units_after = sl.allocated_units + decision.delta_units
                    rnoise = streams.decision_rng(self.seed, streams.RECONFIG, obs.index, slot) \
                        .standard_normal((cfg.risk_samples, cfg.prediction_horizon))
                    reconfigs.append(dtaas_reconfigure(twin, sl, units_after, cfg, noise=rnoise))
                elif sl.steering_fraction > 0.0:
                    reconfigs.append(ReconfigAction(sl.id, 0.0, math.nan))
            else:
                release = self._maybe_release(obs, twin, noise)
                if release is not None:
                    provisions.append(release)
                if sl.steering_fraction > 0.0:
                    reconfigs.append(ReconfigAction(sl.id, 0.0, math.nan))
        return provisions, reconfigs, risks

    def _maybe_release(self, obs: Observation, twin: SliceTwin,
                       noise: np.ndarray) -> ProvisioningDecision | None:
        """Scale-down path: after sustained low demand, drop to the level the
        provisioning objective itself prefers (scan restricted to releases).

        Releasing to the bare requirement would flap: the safety gate would
        re-provision the risk margin right back on the next slot.
        """
        cfg = self.config
        sl = obs.slice
        forecast = twin.last_forecast
        if forecast is None:
            return None
        peak = max(forecast.point)
        gamma = twin.mirrored.gamma
        mu_now = service_rate(sl.allocated_units, cfg.unit_service_rate, gamma)
        if peak < cfg.dtaas_release_fraction * mu_now:
            self._release_count[obs.index] += 1
        else:
            self._release_count[obs.index] = 0
            return None
        if self._release_count[obs.index] < cfg.dtaas_release_persist:
            return None
        self._release_count[obs.index] = 0
        try:
            needed = r_needed(peak, sl.sla, cfg.unit_service_rate, gamma, cfg.min_units)
        except Unsatisfiable:
            return None
        deltas = np.arange(cfg.min_units - sl.allocated_units, 1)
        objective, _ = _objective_over(deltas, twin, sl, needed, cfg, noise)
        best = int(np.argmin(objective))
        if deltas[best] >= 0:
            return None
        return ProvisioningDecision(sl.id, int(deltas[best]), Trigger.PERIODIC,
                                    float(objective[best]))


class RsoController:
    """Reactive threshold rules on last slot's outcome: scale up after an
    observed breach, creep down after sustained low utilization."""

    name = "rso"
    extra_apply_delay = 0

    def __init__(self, config: ScenarioConfig, n_slices: int):
        self.config = config
        self._prev: list[tuple[float, float] | None] = [None] * n_slices
        self._low_count = [0] * n_slices

    def decide(self, slot: int, observations: list[Observation], pool: ResourcePool):
        cfg = self.config
        provisions: list[ProvisioningDecision] = []
        for obs in observations:
            prev = self._prev[obs.index]
            self._prev[obs.index] = (obs.eta, obs.rho)
            if prev is None:
                continue
            eta_prev, rho_prev = prev
            if rho_prev < cfg.rso_low_util:
                self._low_count[obs.index] += 1
            else:
                self._low_count[obs.index] = 0
            if eta_prev < obs.slice.sla.satisfaction_threshold:
                provisions.append(ProvisioningDecision(
                    obs.slice.id, cfg.rso_step, Trigger.SLA_BREACH, 0.0))
            elif self._low_count[obs.index] >= cfg.rso_persist:
                self._low_count[obs.index] = 0
                if obs.slice.allocated_units - 1 >= cfg.min_units:
                    provisions.append(ProvisioningDecision(
                        obs.slice.id, -1, Trigger.PERIODIC, 0.0))
        return provisions, [], {}


class CdrlController:
    """Deterministic surrogate for a centrally trained allocator.

    Acts on a fixed period from observations delayed by a control lag,
    smoothing demand exponentially and targeting headroom times the
    allocation that demand needs; oversubscribed targets are scaled
    proportionally and floor-quantized.  Decision application lags an
    extra num_slices // cdrl_delay_per_slices slots, modeling centralized
    inference cost growing with fleet size.
    """

    name = "cdrl"

    def __init__(self, config: ScenarioConfig, n_slices: int):
        self.config = config
        self.extra_apply_delay = n_slices // config.cdrl_delay_per_slices
        self._snapshots: deque[list[tuple[float, float]]] = deque(maxlen=config.cdrl_delay + 1)
        self._smoothed: list[float | None] = [None] * n_slices

    def decide(self, slot: int, observations: list[Observation], pool: ResourcePool):
        cfg = self.config
        self._snapshots.append([(obs.lambda_, obs.gamma) for obs in observations])
        if slot % cfg.cdrl_period != 0:
            return [], [], {}
        delayed = self._snapshots[0]
        for obs in observations:
            lam, _ = delayed[obs.index]
            old = self._smoothed[obs.index]
            self._smoothed[obs.index] = lam if old is None else \
                cfg.cdrl_smoothing * old + (1.0 - cfg.cdrl_smoothing) * lam
        targets = []
        for obs in observations:
            lam, gamma = delayed[obs.index]
            base = r_needed(self._smoothed[obs.index], obs.slice.sla,
                            cfg.unit_service_rate, gamma, cfg.min_units)
            targets.append(math.ceil(cfg.cdrl_headroom * base))
        total = sum(targets)
        if total > cfg.edge_capacity_units:
            scale = cfg.edge_capacity_units / total
            targets = [max(cfg.min_units, math.floor(t * scale)) for t in targets]
        provisions = []
        for obs, target in zip(observations, targets):
            delta = target - obs.slice.allocated_units
            if delta != 0:
                provisions.append(ProvisioningDecision(
                    obs.slice.id, delta, Trigger.PERIODIC, 0.0))
        return provisions, [], {}


def make_controller(kind: str, config: ScenarioConfig, twins: list[SliceTwin], seed: int):
    if kind == "dtaas":
        return DtaasController(config, twins, seed)
    if kind == "rso":
        return RsoController(config, len(twins))
    if kind == "cdrl":
        return CdrlController(config, len(twins))
    raise ValueError(f"unknown controller kind {kind!r}")
