"""Numeric formatting shared by the engine, logs and verification.

Every float that crosses a module boundary or lands in a CSV is first
snapped to 9 significant digits via round9, so values recomputed from
persisted files match in-memory values exactly.
"""

from __future__ import annotations

import math


def fmt9(x: float) -> str:
    return f"{x:.9g}"


def round9(x: float) -> float:
    """Snap to the double nearest the 9-significant-digit decimal form."""
    if math.isnan(x):
        return x
    return float(f"{x:.9g}")
