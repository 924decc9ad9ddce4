"""Deterministic RNG stream splitting.

Every random draw in a run comes from a generator keyed by
(seed, purpose, slice_index[, slot]).  Streams for a given slice never
depend on how many other slices exist, so adding slices leaves existing
traffic untouched, and streams never depend on the controller, so all
controllers see identical traffic for a given seed.
"""

from __future__ import annotations

import numpy as np

# Purpose tags.  These are part of the stream-splitting contract: changing
# them invalidates recorded traces.
ARRIVALS = 1
BURST = 2
CHANNEL = 3
RISK = 4
RECONFIG = 5
MODEL_INIT = 6


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *key)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed,) + key)))


def traffic_rng(seed: int, purpose: int, slice_index: int) -> np.random.Generator:
    return make_rng(seed, purpose, slice_index)


def decision_rng(seed: int, purpose: int, slice_index: int, slot: int) -> np.random.Generator:
    """Per-decision stream, re-derivable from logs for exact replay."""
    return make_rng(seed, purpose, slice_index, slot)


def repetition_seed(master_seed: int, repetition: int) -> int:
    """Seed for repetition ``repetition`` of an experiment."""
    return master_seed + repetition
