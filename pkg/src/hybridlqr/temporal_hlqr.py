"""Hybrid LQR/AQR with jumps at prescribed times.

The backward sweep restarts at every scheduled time with ``S- = C^T S+ C``
and ``c- = C^T (S+ kappa + c+)``; it never looks at a state trajectory, so one
solution serves every initial condition.  The jump matrix may be singular
here because nothing is inverted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._numerics import as_matrix, as_vector
from .hybrid_system import HybridTrajectory, JumpRecord
from .lqr_core import QuadraticCost, RiccatiSolution, reconstruct_segment, sweep_arc, tilde


@dataclass(frozen=True)
class JumpSchedule:
    times: tuple
    t0: float
    tf: float

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if any(not np.isfinite(t) for t in times):
            raise ValueError("jump times must be finite")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("jump times must be strictly increasing")
        if times and (times[0] <= self.t0 or times[-1] >= self.tf):
            raise ValueError("jump times must lie strictly inside (t0, tf)")
        object.__setattr__(self, "times", times)

    @classmethod
    def within(cls, times: Sequence[float], t_span: Sequence[float]) -> "JumpSchedule":
        return cls(tuple(times), float(t_span[0]), float(t_span[1]))

    @property
    def min_gap(self) -> float:
        """Smallest separation between consecutive jumps or a jump and an endpoint."""
        pts = (self.t0,) + self.times + (self.tf,)
        return float(np.min(np.diff(pts)))


def _affine_parts(n, affine):
    if affine is None:
        return None, np.zeros(n)
    b, kappa = affine
    b = None if b is None else as_vector(b, n, name="b")
    kappa = np.zeros(n) if kappa is None else as_vector(kappa, n, name="kappa")
    return b, kappa


def solve_temporal_costate(
    A, B, cost: QuadraticCost, sched: JumpSchedule, C, t_span=None, step=None, affine=None
) -> RiccatiSolution:
    """Backward sweep with jump maps applied exactly at the scheduled times.

    ``affine`` is an optional ``(b, kappa)`` pair.  The returned solution holds
    both one-sided values at each jump (left sample first).
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    C = as_matrix(C, shape=(n, n), name="C")
    t0, tf = (sched.t0, sched.tf) if t_span is None else (float(t_span[0]), float(t_span[1]))
    if (t0, tf) != (sched.t0, sched.tf):
        raise ValueError("schedule horizon does not match t_span")
    step = (tf - t0) / 2000.0 if step is None else float(step)
    if step <= 0.0:
        raise ValueError("step must be positive")
    td = tilde(cost, A, B)
    b, kappa = _affine_parts(n, affine)

    bounds = (t0,) + sched.times + (tf,)
    pieces = []
    S_T, c_T = np.array(cost.F), np.array(cost.r)
    for k in range(len(bounds) - 1, 0, -1):
        piece = sweep_arc(td, bounds[k - 1], bounds[k], S_T, c_T, step, b)
        pieces.append(piece)
        if k > 1:
            S_plus, c_plus = piece[1][0], piece[2][0]
            S_T = C.T @ S_plus @ C
            c_T = C.T @ (S_plus @ kappa + c_plus)
    pieces.reverse()

    segments, start = [], 0
    for piece in pieces:
        segments.append((start, start + len(piece[0]) - 1))
        start += len(piece[0])
    stack = [np.concatenate([p[i] for p in pieces]) for i in range(5)]
    return RiccatiSolution(*stack, jump_times=list(sched.times), segments=segments)


def reconstruct_temporal(
    A, B, cost: QuadraticCost, sched: JumpSchedule, C, sol: RiccatiSolution, x0, affine=None
) -> HybridTrajectory:
    """Closed-loop forward pass with ``x+ = C x- (+ kappa)`` at each scheduled time."""
    A = as_matrix(A, name="A")
    n = A.shape[0]
    C = as_matrix(C, shape=(n, n), name="C")
    if list(sol.jump_times) != list(sched.times):
        raise ValueError("solution was computed for a different schedule")
    td = tilde(cost, A, B)
    b, kappa = _affine_parts(n, affine)
    x = as_vector(x0, n, name="x0")
    arcs, jumps = [], []
    for k in range(len(sol.segments)):
        arc = reconstruct_segment(td, sol, k, x, b)
        arcs.append(arc)
        if k == len(sol.segments) - 1:
            break
        x_pre = arc.x[-1]
        x = C @ x_pre + kappa
        i_plus = sol.segments[k + 1][0]
        p_post = sol.S[i_plus] @ x + sol.c[i_plus]
        jumps.append(JumpRecord(float(sol.jump_times[k]), x_pre, x, p_pre=arc.p[-1], p_post=p_post))
    return HybridTrajectory(arcs, jumps, float(sol.t[0]), float(sol.t[-1]))
