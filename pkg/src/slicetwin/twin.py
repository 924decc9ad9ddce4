"""Per-slice digital twin: mirrored state, fidelity and prediction-error
scoring, and Monte Carlo SLA-risk estimation.

The twin mirrors telemetry with a configurable update interval and sync
delay, feeds the mirrored stream to its forecaster, and publishes the
forecast the orchestrator acts on.  Risk is the estimated probability
that the satisfaction ratio falls below its threshold at the end of the
prediction horizon (or averaged over it), sampling demand from a
Gaussian around the point forecast with the tracked residual scale.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from .domain import ScenarioConfig, SLASpec, TelemetryVector
from .forecast import Forecast, Forecaster, HistoryWindow
from .netmodel import eta_analytic_array
from .textio import round9


class ForecastUnavailable(Exception):
    pass


def fidelity(actual: TelemetryVector, mirrored: TelemetryVector,
             rate_scale: float = 1.0) -> float:
    """Scaled Euclidean distance between actual and mirrored telemetry."""
    d_rate = (actual.lambda_ - mirrored.lambda_) / rate_scale
    d_rho = actual.rho - mirrored.rho
    d_gamma = actual.gamma - mirrored.gamma
    d_eta = actual.eta - mirrored.eta
    return math.sqrt(d_rate ** 2 + d_rho ** 2 + d_gamma ** 2 + d_eta ** 2)


class SliceTwin:
    """Digital replica of one slice, owned by the engine loop."""

    def __init__(self, slice_id: str, slice_index: int, forecaster: Forecaster,
                 config: ScenarioConfig):
        self.slice_id = slice_id
        self.slice_index = slice_index
        self.forecaster = forecaster
        self.history = HistoryWindow(config.history_window)
        self.mirrored: TelemetryVector | None = None
        self.mirrored_slot = -1
        self.staleness_slots = 0
        self.last_forecast: Forecast | None = None
        self.last_fidelity = 0.0
        self.fidelity_log: list[float] = []
        self._interval = config.twin_update_interval_slots
        self._delay = config.sync_delay_slots
        self._horizon = config.prediction_horizon
        self._rate_scale = config.rate_scale
        self._buffer: deque[tuple[int, TelemetryVector]] = deque(maxlen=config.sync_delay_slots + 1)
        self._pending: dict[int, float] = {}
        self._last_slot = -1

    def sync(self, telemetry: TelemetryVector, slot: int) -> None:
        """Ingest this slot's telemetry, refresh the mirror and the forecast."""
        if slot <= self._last_slot:
            raise ValueError(f"sync slots must be strictly increasing, got {slot}")
        self._last_slot = slot
        self._buffer.append((slot, telemetry))
        if self.mirrored is None or slot % self._interval == 0:
            self.mirrored_slot, self.mirrored = self._buffer[0]
        self.staleness_slots = slot - self.mirrored_slot
        self.forecaster.observe(self.mirrored)
        self.history.push(self.mirrored)
        self.last_forecast = self.forecaster.predict(self._horizon)
        for j, value in enumerate(self.last_forecast.point, start=1):
            self._pending[self.mirrored_slot + j] = value
        for key in [k for k in self._pending if k < slot]:
            del self._pending[key]

    def record_fidelity(self, actual: TelemetryVector) -> float:
        score = round9(fidelity(actual, self.mirrored, self._rate_scale))
        self.last_fidelity = score
        self.fidelity_log.append(score)
        return score

    def prediction_error(self, actual: TelemetryVector, slot: int) -> float | None:
        """Distance between the forecast made for this slot and what happened.

        Only the demand component is forecast, so the norm reduces to the
        scaled rate gap.  Returns None when no forecast targeted the slot.
        """
        predicted = self._pending.get(slot)
        if predicted is None:
            return None
        return round9(abs(predicted - actual.lambda_) / self._rate_scale)


def aggregate_fidelity(twins) -> float:
    """Current total mismatch across all twins; the monitored objective."""
    return sum(t.last_fidelity for t in twins)


def risk_for_units(units, point: np.ndarray, residual_std: float, gamma: float,
                   sla: SLASpec, config: ScenarioConfig, noise: np.ndarray) -> np.ndarray:
    """Violation probability for each candidate allocation, with shared noise.

    Reusing one noise matrix across candidates makes risk exactly
    non-increasing in the allocation, sample by sample.
    """
    units = np.atleast_1d(np.asarray(units, dtype=float))
    lam = np.maximum(point[None, :] + residual_std * noise, 0.0)  # (N, h)
    mu = units * config.unit_service_rate * gamma  # (C,)
    theta = sla.satisfaction_threshold
    if config.risk_mode == "final_step":
        eta = eta_analytic_array(lam[None, :, -1], mu[:, None], sla.latency_threshold_ms)
        return np.mean(eta < theta, axis=1)
    eta = eta_analytic_array(lam[None, :, :], mu[:, None, None], sla.latency_threshold_ms)
    return np.mean(eta < theta, axis=(1, 2))


def sla_risk(twin: SliceTwin, candidate_units: int, sla: SLASpec, config: ScenarioConfig,
             rng: np.random.Generator | None = None,
             noise: np.ndarray | None = None) -> float:
    """Monte Carlo violation probability at a candidate allocation."""
    if twin.last_forecast is None:
        raise ForecastUnavailable(f"{twin.slice_id}: no forecast yet")
    point = np.array(twin.last_forecast.point)
    if noise is None:
        if rng is None:
            raise ValueError("need rng or noise")
        noise = rng.standard_normal((config.risk_samples, len(point)))
    risks = risk_for_units(np.array([candidate_units]), point,
                           twin.last_forecast.residual_std,
                           twin.mirrored.gamma, sla, config, noise)
    return float(risks[0])
