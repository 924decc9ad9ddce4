"""Analytic queueing abstraction and the shared edge resource pool.

Each slice is a single queue with exponential service: the fraction of
traffic finishing inside the latency bound is the sojourn-time CDF
1 - exp(-(mu - lambda) * threshold), zero at or past saturation.  Traffic
steered away from the local queue is absorbed by a shared overflow pool
with a fixed service-rate margin and a fixed latency penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CapacityExceeded(Exception):
    pass


class BelowMinimum(Exception):
    pass


def service_rate(units: int, unit_rate: float, gamma: float,
                 steering_fraction: float = 0.0) -> float:
    """Service rate (req/ms) of a slice's local queue.

    Steering does not change the service rate; it reduces the offered load
    the caller presents to this queue.
    """
    del steering_fraction
    return units * unit_rate * gamma


def eta_analytic(lambda_: float, mu: float, latency_threshold_ms: float) -> float:
    """Fraction of traffic with sojourn time inside the threshold."""
    if lambda_ <= 0.0:
        return 1.0
    if lambda_ >= mu:
        return 0.0
    return 1.0 - math.exp(-(mu - lambda_) * latency_threshold_ms)


def eta_analytic_array(lam: np.ndarray, mu: np.ndarray, latency_threshold_ms: float) -> np.ndarray:
    """Vectorized eta_analytic with broadcasting."""
    lam, mu = np.broadcast_arrays(lam, mu)
    gap = np.maximum(mu - lam, 0.0)
    eta = 1.0 - np.exp(-gap * latency_threshold_ms)
    eta = np.where(lam >= mu, 0.0, eta)
    return np.where(lam <= 0.0, 1.0, eta)


def mean_latency_ms(lambda_: float, mu: float, offset_ms: float, cap_ms: float) -> float:
    """Mean sojourn time plus the fixed transport/core offset; cap past saturation."""
    if lambda_ < mu:
        return offset_ms + 1.0 / (mu - lambda_)
    return cap_ms


def utilization(lambda_: float, mu: float) -> float:
    if lambda_ <= 0.0:
        return 0.0
    if mu <= 0.0:
        return 1.0
    return min(lambda_ / mu, 1.0)


def eta_with_steering(lambda_: float, mu: float, phi: float, latency_threshold_ms: float,
                      overflow_margin_rate: float, penalty_ms: float) -> float:
    """Slice-level satisfaction when a fraction phi of traffic is steered.

    The local queue sees (1-phi)*lambda; the steered share is served by an
    overflow pool whose rate always exceeds its load by a fixed margin and
    whose traffic pays penalty_ms of extra latency against the threshold.
    """
    if phi <= 0.0 or lambda_ <= 0.0:
        return eta_analytic(lambda_, mu, latency_threshold_ms)
    local = eta_analytic((1.0 - phi) * lambda_, mu, latency_threshold_ms)
    effective = latency_threshold_ms - penalty_ms
    if effective <= 0.0:
        overflow = 0.0
    else:
        steered = phi * lambda_
        overflow = eta_analytic(steered, steered + overflow_margin_rate, effective)
    return (1.0 - phi) * local + phi * overflow


def latency_with_steering(lambda_: float, mu: float, phi: float, offset_ms: float,
                          cap_ms: float, overflow_margin_rate: float,
                          penalty_ms: float) -> float:
    """Arrival-weighted mean latency across the local queue and overflow pool."""
    if phi <= 0.0 or lambda_ <= 0.0:
        return mean_latency_ms(lambda_, mu, offset_ms, cap_ms)
    local = mean_latency_ms((1.0 - phi) * lambda_, mu, offset_ms, cap_ms)
    overflow = offset_ms + penalty_ms + 1.0 / overflow_margin_rate
    return (1.0 - phi) * local + phi * overflow


@dataclass(frozen=True)
class SlotOutcome:
    slice_id: str
    offered_rate: float
    service_rate: float
    eta: float
    mean_latency_ms: float
    utilization: float
    compliant: bool


class ResourcePool:
    """Edge resource units shared by all slices; the allocation sum never
    exceeds capacity and no slice drops below the configured minimum."""

    def __init__(self, capacity_units: int, min_units: int = 1):
        if capacity_units < 1:
            raise ValueError("capacity_units must be >= 1")
        self.capacity_units = capacity_units
        self.min_units = min_units
        self.allocations: dict[str, int] = {}

    def register(self, slice_id: str, units: int) -> None:
        if units < self.min_units:
            raise BelowMinimum(f"{slice_id}: initial {units} < min {self.min_units}")
        if self.total() + units > self.capacity_units:
            raise CapacityExceeded(f"{slice_id}: initial allocation overflows capacity")
        self.allocations[slice_id] = units

    def total(self) -> int:
        return sum(self.allocations.values())

    def available(self) -> int:
        return self.capacity_units - self.total()

    def allocation(self, slice_id: str) -> int:
        return self.allocations[slice_id]


def try_allocate(pool: ResourcePool, slice_id: str, delta_units: int) -> ResourcePool:
    """Apply a delta to one slice or raise, leaving the pool unchanged on failure."""
    current = pool.allocations[slice_id]
    target = current + delta_units
    if target < pool.min_units:
        raise BelowMinimum(
            f"{slice_id}: {current}{delta_units:+d} would drop under min {pool.min_units}")
    if pool.total() + delta_units > pool.capacity_units:
        raise CapacityExceeded(
            f"{slice_id}: {current}{delta_units:+d} would exceed capacity "
            f"{pool.capacity_units} (in use {pool.total()})")
    pool.allocations[slice_id] = target
    return pool
