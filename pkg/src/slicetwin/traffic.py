"""Per-slot workload and channel generation.

Arrivals follow a two-state Markov-modulated Poisson process: a slice is
either in its normal regime or in a burst that multiplies the rate by the
burst factor.  Channel quality follows a mean-reverting AR(1) clamped to
[gamma_min, 1].  Everything is driven by per-slice streams derived from
the run seed, so traces are reproducible and independent of both the
controller and the number of other slices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import streams
from .domain import ScenarioConfig, SliceRuntime
from .textio import round9


@dataclass(frozen=True)
class BurstState:
    in_burst: bool
    enter_prob: float
    exit_prob: float


@dataclass(frozen=True)
class ChannelState:
    gamma: float
    ar_coeff: float
    noise_std: float
    gamma_min: float = 0.3


def burst_step(state: BurstState, rng: np.random.Generator) -> BurstState:
    """One Markov transition of the burst regime."""
    u = rng.random()
    if state.in_burst:
        if u < state.exit_prob:
            return replace(state, in_burst=False)
    else:
        if u < state.enter_prob:
            return replace(state, in_burst=True)
    return state


def effective_rate(base_rate: float, load_scale: float, state: BurstState,
                   burst_factor: float) -> float:
    """Demand rate for one slot, req/ms."""
    rate = base_rate * load_scale
    if state.in_burst:
        rate *= burst_factor
    return rate


def sample_arrivals(rate: float, slot_ms: float, rng: np.random.Generator) -> int:
    """Poisson arrival count for one slot."""
    if rate <= 0.0:
        return 0
    return int(rng.poisson(rate * slot_ms))


def channel_step(state: ChannelState, rng: np.random.Generator) -> ChannelState:
    """Mean-reverting AR(1) step toward gamma = 1, clamped to [gamma_min, 1]."""
    g = state.ar_coeff * state.gamma + (1.0 - state.ar_coeff) * 1.0
    if state.noise_std > 0.0:
        g += state.noise_std * rng.standard_normal()
    g = min(1.0, max(state.gamma_min, g))
    return replace(state, gamma=g)


@dataclass
class TrafficTrace:
    """Pre-generated workload for one run: arrays indexed [slice][slot]."""

    rate: list[np.ndarray]
    arrivals: list[np.ndarray]
    in_burst: list[np.ndarray]
    gamma: list[np.ndarray]

    @property
    def horizon(self) -> int:
        return len(self.rate[0]) if self.rate else 0


def generate_trace(config: ScenarioConfig, slices: list[SliceRuntime],
                   seed: int) -> TrafficTrace:
    """Generate the full workload for a run up front.

    Pre-generation keeps traffic identical across controllers on the same
    seed and gives perfect-foresight forecasters something to read.
    """
    horizon = config.horizon_slots
    rates, counts, bursts, gammas = [], [], [], []
    for idx, sl in enumerate(slices):
        burst_rng = streams.traffic_rng(seed, streams.BURST, idx)
        chan_rng = streams.traffic_rng(seed, streams.CHANNEL, idx)
        arr_rng = streams.traffic_rng(seed, streams.ARRIVALS, idx)

        bstate = BurstState(False, config.burst_enter_prob, config.burst_exit_prob)
        cstate = ChannelState(1.0, config.channel_ar_coeff, config.channel_noise_std,
                              config.channel_gamma_min)
        in_burst = np.empty(horizon, dtype=bool)
        gamma = np.empty(horizon, dtype=float)
        for t in range(horizon):
            bstate = burst_step(bstate, burst_rng)
            cstate = channel_step(cstate, chan_rng)
            in_burst[t] = bstate.in_burst
            gamma[t] = cstate.gamma

        rate = sl.base_rate * config.load_scale * np.where(in_burst, config.burst_factor, 1.0)
        arrivals = arr_rng.poisson(rate * config.slot_ms).astype(np.int64)
        # Snap published values to their on-disk precision so everything
        # recomputed from logs matches the run exactly.
        rate = np.array([round9(v) for v in rate])
        gamma = np.array([round9(v) for v in gamma])
        rates.append(rate)
        counts.append(arrivals)
        bursts.append(in_burst)
        gammas.append(gamma)
    return TrafficTrace(rates, counts, bursts, gammas)


def export_csv(trace: TrafficTrace, slices: list[SliceRuntime], path) -> None:
    """Optional trace dump: one row per (slot, slice)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "slice_id", "rate", "arrivals", "in_burst", "gamma"])
        for t in range(trace.horizon):
            for k, sl in enumerate(slices):
                w.writerow([t, sl.id, f"{trace.rate[k][t]:.9g}", int(trace.arrivals[k][t]),
                            int(trace.in_burst[k][t]), f"{trace.gamma[k][t]:.9g}"])
