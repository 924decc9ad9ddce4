import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mm1_oracle import empirical_eta
from slicetwin.netmodel import (BelowMinimum, CapacityExceeded, ResourcePool,
                                eta_analytic, eta_analytic_array, eta_with_steering,
                                latency_with_steering, mean_latency_ms, service_rate,
                                try_allocate, utilization)
from slicetwin.streams import make_rng


def test_service_rate_examples():
    assert service_rate(0, 0.02, 1.0) == 0.0
    assert service_rate(10, 0.02, 1.0) == pytest.approx(0.2)
    assert service_rate(10, 0.02, 0.5) == pytest.approx(0.1)


def test_eta_analytic_examples():
    assert eta_analytic(0.0, 0.7, 20.0) == 1.0
    assert eta_analytic(0.2, 0.2, 20.0) == 0.0
    assert eta_analytic(0.5, 1.0, 5.0) == pytest.approx(1.0 - math.exp(-2.5))
    assert eta_analytic(0.5, 1.0, 5.0) == pytest.approx(0.917915, abs=1e-6)


def test_eta_analytic_against_event_simulation():
    rng = make_rng(42, 0)
    for lam, mu, thr in [(0.5, 1.0, 5.0), (0.09, 0.1, 30.0), (0.3, 0.4, 20.0)]:
        analytic = eta_analytic(lam, mu, thr)
        measured = empirical_eta(lam, mu, thr, 400_000, rng)
        assert abs(analytic - measured) < 0.005


def test_mean_latency_examples():
    assert mean_latency_ms(0.5, 1.0, 0.0, 1000.0) == pytest.approx(2.0)
    assert mean_latency_ms(0.2, 0.2, 3.0, 1000.0) == 1000.0
    assert mean_latency_ms(0.0, 1.0, 3.0, 1000.0) == pytest.approx(4.0)


def test_utilization_examples():
    assert utilization(0.1, 0.2) == pytest.approx(0.5)
    assert utilization(0.3, 0.2) == 1.0
    assert utilization(0.0, 0.0) == 0.0
    assert utilization(0.1, 0.0) == 1.0


@settings(max_examples=300, deadline=None)
@given(lam=st.floats(0.0, 1.0), mu=st.floats(0.0, 1.0), thr=st.floats(0.1, 100.0),
       bump=st.floats(0.0, 0.5))
def test_eta_monotonicity(lam, mu, thr, bump):
    base = eta_analytic(lam, mu, thr)
    assert eta_analytic(lam + bump, mu, thr) <= base + 1e-12
    assert eta_analytic(lam, mu + bump, thr) >= base - 1e-12
    assert eta_analytic(lam, mu, thr + bump) >= base - 1e-12


def test_eta_array_matches_scalar():
    lam = np.array([0.0, 0.1, 0.2, 0.5])
    mu = np.array([0.3, 0.3, 0.1, 0.5])
    out = eta_analytic_array(lam, mu, 10.0)
    for i in range(len(lam)):
        assert out[i] == pytest.approx(eta_analytic(lam[i], mu[i], 10.0))


def test_pool_boundary_accept():
    pool = ResourcePool(100, min_units=1)
    pool.register("a", 90)
    try_allocate(pool, "a", 10)
    assert pool.allocation("a") == 100


def test_pool_capacity_exceeded_leaves_state():
    pool = ResourcePool(100, min_units=1)
    pool.register("a", 90)
    with pytest.raises(CapacityExceeded):
        try_allocate(pool, "a", 11)
    assert pool.allocation("a") == 90


def test_pool_below_minimum():
    pool = ResourcePool(100, min_units=1)
    pool.register("a", 1)
    with pytest.raises(BelowMinimum):
        try_allocate(pool, "a", -1)
    assert pool.allocation("a") == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(-8, 8)), max_size=60))
def test_pool_conservation_under_random_ops(ops):
    pool = ResourcePool(30, min_units=1)
    for sid in ("a", "b", "c"):
        pool.register(sid, 5)
    names = ("a", "b", "c")
    for which, delta in ops:
        before = dict(pool.allocations)
        try:
            try_allocate(pool, names[which], delta)
        except (CapacityExceeded, BelowMinimum):
            assert pool.allocations == before  # failures leave the pool unchanged
        assert pool.total() <= pool.capacity_units
        assert all(v >= pool.min_units for v in pool.allocations.values())


def test_steering_phi_zero_is_identity():
    assert eta_with_steering(0.3, 0.5, 0.0, 20.0, 0.1, 2.0) == \
        pytest.approx(eta_analytic(0.3, 0.5, 20.0))
    assert latency_with_steering(0.3, 0.5, 0.0, 3.0, 1000.0, 0.1, 2.0) == \
        pytest.approx(mean_latency_ms(0.3, 0.5, 3.0, 1000.0))


def test_steering_relieves_saturated_local_queue():
    # offered just above capacity: without steering eta is 0, with 30%
    # steered the local queue clears and the mixture recovers
    lam, mu = 0.30, 0.29
    assert eta_with_steering(lam, mu, 0.0, 50.0, 0.1, 2.0) == 0.0
    mixed = eta_with_steering(lam, mu, 0.3, 50.0, 0.1, 2.0)
    assert mixed > 0.9


@settings(max_examples=200, deadline=None)
@given(lam=st.floats(0.0, 1.0), mu=st.floats(0.0, 1.0),
       phi=st.sampled_from([0.0, 0.1, 0.2, 0.3]), thr=st.floats(0.5, 60.0))
def test_steering_eta_stays_in_unit_interval(lam, mu, phi, thr):
    eta = eta_with_steering(lam, mu, phi, thr, 0.1, 2.0)
    assert 0.0 <= eta <= 1.0
