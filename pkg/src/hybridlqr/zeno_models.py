"""Zeno times of the two affine model problems and a series-based estimator.

``first_order`` is the transverse model ``x' = a, y' = -b`` with reset
``(x, 0) -> (0, c x)``; ``second_order`` is the bouncing ball
``x' = y, y' = -g`` with ``y+ = -e y-`` at ``x = 0``.  Both are simulated with
their exact piecewise-linear / parabolic arcs so the series comparison carries
no integrator error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

UNRELIABLE_RESIDUAL = 1e-3
MIN_JUMPS = 8


def _check_first_order(a, b, c, x0, y0):
    if not (a > 0 and b > 0):
        raise ValueError("first-order model needs a, b > 0")
    if not 0 < c < 1:
        raise ValueError("first-order model needs 0 < c < 1")
    if x0 < 0 or y0 < 0 or (x0 == 0 and y0 == 0):
        raise ValueError("initial condition must lie in the closed first quadrant, away from 0")


def zeno_time_first_order(a: float, b: float, c: float, x0: float, y0: float) -> Optional[float]:
    """Closed-form Zeno time, or ``None`` when ``c a >= b`` (no Zeno)."""
    _check_first_order(a, b, c, x0, y0)
    if c * a >= b:
        return None
    return y0 / b + c / (b - c * a) * (x0 + a / b * y0)


class SecondOrderZenoTime(NamedTuple):
    printed: float  # coefficient 3, as published
    derived: float  # coefficient (1 + e), summed bounce series


def zeno_time_second_order(g: float, e: float, x0: float, y0: float) -> SecondOrderZenoTime:
    if g <= 0:
        raise ValueError("g must be positive")
    if not 0 < e < 1:
        raise ValueError("need 0 < e < 1")
    if x0 < 0 or (x0 == 0 and y0 < 0):
        raise ValueError("state must satisfy x0 >= 0 and be admissible")
    root = math.sqrt(y0 * y0 + 2.0 * g * x0)
    printed = y0 / g + 3.0 / (g * (1.0 - e)) * root
    derived = y0 / g + (1.0 + e) / (g * (1.0 - e)) * root
    return SecondOrderZenoTime(printed, derived)


def first_order_jump_times(a, b, c, x0, y0, n_jumps: int) -> np.ndarray:
    """Reset times of the first-order model from exact straight-line arcs."""
    _check_first_order(a, b, c, x0, y0)
    t, x, y = 0.0, float(x0), float(y0)
    times = []
    for _ in range(n_jumps):
        dt = y / b
        t += dt
        x_hit = x + a * dt
        times.append(t)
        x, y = 0.0, c * x_hit
        if y == 0.0:
            break
    return np.array(times)


def bounce_times(g, e, x0, y0, n_jumps: int) -> np.ndarray:
    """Impact times of the bouncing ball from exact parabolic arcs."""
    zeno_time_second_order(g, e, x0, y0)
    speed0 = math.sqrt(y0 * y0 + 2.0 * g * x0)
    t = (y0 + speed0) / g
    v = speed0
    times = [t]
    for _ in range(n_jumps - 1):
        v *= e
        t += 2.0 * v / g
        times.append(t)
    return np.array(times)


@dataclass
class ZenoEstimate:
    jump_times: list
    partial_sums: list  # extrapolated limit after each fitted gap
    extrapolated_time: float
    ratio: float
    residual: float
    reliable: bool
    gaps_used: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "jump_count": len(self.jump_times),
            "extrapolated_time": self.extrapolated_time,
            "ratio": self.ratio,
            "fit_residual": self.residual,
            "reliable": self.reliable,
            "gaps_used": self.gaps_used,
            "notes": list(self.notes),
        }


def _resolvable(times: np.ndarray) -> int:
    """Number of leading gaps that sit well above floating-point resolution."""
    gaps = np.diff(times)
    floor = 1e6 * np.finfo(float).eps * np.maximum(1.0, np.abs(times[1:]))
    ok = gaps > floor
    if ok.all():
        return len(gaps)
    return int(np.argmin(ok))


def estimate_zeno_time(suspected) -> ZenoEstimate:
    """Fit a geometric tail to the inter-jump gaps and extrapolate its limit.

    ``suspected`` is a ``SuspectedZenoReport`` or a sequence of jump times.
    The ratio comes from a log-linear least-squares fit to the last half of
    the gaps that are resolvable in double precision.
    """
    times = getattr(suspected, "jump_times", suspected)
    times = np.asarray(list(times), dtype=float)
    if times.size < MIN_JUMPS:
        raise ValueError(f"need at least {MIN_JUMPS} jump times, got {times.size}")
    if np.any(np.diff(times) < 0):
        raise ValueError("jump times must be nondecreasing")
    notes = []
    usable = _resolvable(times)
    if usable < len(times) - 1:
        notes.append(f"{len(times) - 1 - usable} trailing gaps below double-precision resolution")
    gaps = np.diff(times)[:usable]
    if usable < 2:
        return ZenoEstimate(times.tolist(), [], math.inf, math.nan, math.inf, False, usable, notes)
    k = math.ceil(usable / 2)
    tail = gaps[-k:] if k >= 2 else gaps[-2:]
    idx = np.arange(tail.size, dtype=float)
    slope, intercept = np.polyfit(idx, np.log(tail), 1)
    fitted = intercept + slope * idx
    residual = float(np.sqrt(np.mean((np.log(tail) - fitted) ** 2)))
    ratio = float(math.exp(slope))
    t_end = times[usable]
    if 0.0 < ratio < 1.0:
        extrapolated = float(t_end + tail[-1] * ratio / (1.0 - ratio))
        partial = [
            float(times[usable - tail.size + j + 1] + tail[j] * ratio / (1.0 - ratio))
            for j in range(tail.size)
        ]
    else:
        extrapolated = math.inf
        partial = []
    reliable = residual <= UNRELIABLE_RESIDUAL and 0.0 < ratio < 1.0 and abs(1.0 - ratio) > 1e-6
    if not reliable:
        notes.append("gap sequence is not a converging geometric series")
    return ZenoEstimate(times.tolist(), partial, extrapolated, ratio, residual, reliable, int(tail.size), notes)
