"""Discrete-event single-queue oracle used to validate the analytic model.

Simulates individual customers with exponential interarrivals and service
via the Lindley recursion, vectorized as a running minimum of cumulative
sums.  Independent of the package's closed-form path on purpose.
"""

import numpy as np


def simulate_sojourn_times(lam: float, mu: float, n_customers: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Sojourn times (ms) of n customers through an M/M/1 queue."""
    inter = rng.exponential(1.0 / lam, size=n_customers)
    service = rng.exponential(1.0 / mu, size=n_customers)
    # Waiting time W_n = max(0, W_{n-1} + S_{n-1} - A_n), solved in closed
    # form: with X_n = S_{n-1} - A_n and C the cumulative sum of X,
    # W_n = C_n - min(C_0..C_n).
    x = service[:-1] - inter[1:]
    c = np.concatenate(([0.0], np.cumsum(x)))
    waits = c - np.minimum.accumulate(c)
    return waits + service


def empirical_eta(lam: float, mu: float, threshold_ms: float, n_customers: int,
                  rng: np.random.Generator) -> float:
    """Fraction of customers finishing inside the latency threshold."""
    sojourn = simulate_sojourn_times(lam, mu, n_customers, rng)
    return float(np.mean(sojourn <= threshold_ms))
