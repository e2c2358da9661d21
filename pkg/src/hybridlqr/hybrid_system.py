"""Linear and affine hybrid systems with hyperplane guards.

A system flows by ``x' = Ax + Bu + b`` while ``lam @ x != a`` and resets by
``x -> Cx + kappa`` on the guard.  Resets are iterated while the image stays on
the guard (beating); the number of extra applications is the beating depth.

Autonomous arcs are propagated exactly with the matrix exponential.  Arcs
driven by a feedback law use fixed-step RK4.  Guard crossings are bracketed on
consecutive samples and refined with Brent's method on the propagator itself
(the exponential for exact arcs, a shortened RK4 step otherwise).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from ._numerics import (
    as_matrix,
    as_vector,
    augmented_expm,
    frozen,
    rk4_step,
    uniform_nodes,
)
from .errors import BlockedState, DivergenceError, SingularJumpMap, SuspectedZeno

log = logging.getLogger(__name__)

GUARD_RTOL = 1e-10
DET_RTOL = 1e-12
MAX_JUMPS = 10_000
BISECTION_MAXITER = 60

Feedback = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class LinearHybridSystem:
    """``x' = Ax + Bu`` off the guard ``lam @ x = 0``, ``x+ = C x-`` on it.

    ``direction`` gates which crossings trigger a reset: 0 for any sign change
    of ``lam @ x``, -1 only when it falls through the guard, +1 only when it
    rises.  ``allow_singular_C`` waives the invertibility check for systems
    that are only simulated (or used with time-triggered jumps).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    lam: np.ndarray
    direction: int = 0
    allow_singular_C: bool = False

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        n = A.shape[0]
        if n < 1 or A.shape != (n, n):
            raise ValueError(f"A must be square with n >= 1, got {A.shape}")
        B = np.array(self.B, dtype=float)
        if B.size == 0:
            B = np.zeros((n, 0))
        B = as_matrix(B, shape=(n, None), name="B")
        C = as_matrix(self.C, shape=(n, n), name="C")
        lam = as_vector(self.lam, n, name="lambda")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(B)) or not np.all(np.isfinite(C)):
            raise ValueError("system matrices must be finite")
        if not np.any(lam != 0.0):
            raise ValueError("guard covector lambda must be nonzero")
        if self.direction not in (-1, 0, 1):
            raise ValueError("direction must be -1, 0 or +1")
        if not self.allow_singular_C and not jump_map_invertible(C):
            raise SingularJumpMap(
                f"jump matrix C is numerically singular (|det C| = {abs(np.linalg.det(C)):.3e})"
            )
        object.__setattr__(self, "A", frozen(A))
        object.__setattr__(self, "B", frozen(B))
        object.__setattr__(self, "C", frozen(C))
        object.__setattr__(self, "lam", frozen(lam))
        object.__setattr__(self, "direction", int(self.direction))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    # uniform accessors shared with AffineHybridSystem
    @property
    def base(self) -> "LinearHybridSystem":
        return self

    @property
    def b(self) -> np.ndarray:
        return np.zeros(self.n)

    @property
    def kappa(self) -> np.ndarray:
        return np.zeros(self.n)

    @property
    def a(self) -> float:
        return 0.0

    @property
    def is_affine(self) -> bool:
        return False


@dataclass(frozen=True, eq=False)
class AffineHybridSystem:
    """``x' = Ax + Bu + b`` off ``lam @ x = a``, ``x+ = C x- + kappa`` on it."""

    base: LinearHybridSystem
    b: np.ndarray
    kappa: np.ndarray
    a: float = 0.0

    def __post_init__(self):
        n = self.base.n
        object.__setattr__(self, "b", frozen(as_vector(self.b, n, name="b")))
        object.__setattr__(self, "kappa", frozen(as_vector(self.kappa, n, name="kappa")))
        object.__setattr__(self, "a", float(self.a))

    A = property(lambda self: self.base.A)
    B = property(lambda self: self.base.B)
    C = property(lambda self: self.base.C)
    lam = property(lambda self: self.base.lam)
    direction = property(lambda self: self.base.direction)
    allow_singular_C = property(lambda self: self.base.allow_singular_C)
    n = property(lambda self: self.base.n)
    m = property(lambda self: self.base.m)

    @property
    def is_affine(self) -> bool:
        return True


HybridSystem = LinearHybridSystem | AffineHybridSystem


def jump_map_invertible(C: np.ndarray) -> bool:
    n = C.shape[0]
    scale = np.linalg.norm(C, 2) ** n
    return abs(np.linalg.det(C)) > DET_RTOL * scale and scale > 0.0


@dataclass
class JumpRecord:
    t: float
    x_pre: np.ndarray
    x_post: np.ndarray
    epsilon: Optional[float] = None
    beating_depth: int = 0
    branch: str = "n/a"
    p_pre: Optional[np.ndarray] = None
    p_post: Optional[np.ndarray] = None


@dataclass
class Arc:
    """Samples of one flow arc; ``p`` and ``u`` are present when tracked."""

    t: np.ndarray
    x: np.ndarray
    p: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.t)


@dataclass
class GuardHit:
    t: float
    x: np.ndarray


@dataclass
class HybridTrajectory:
    arcs: list
    jumps: list
    t0: float
    tf: float
    truncated: bool = False

    @property
    def jump_count(self) -> int:
        return len(self.jumps)

    @property
    def jump_times(self) -> list:
        return [j.t for j in self.jumps]

    @property
    def min_dwell(self) -> float:
        """Smallest time between consecutive resets (inf with fewer than two)."""
        times = self.jump_times
        if len(times) < 2:
            return math.inf
        return float(np.min(np.diff(times)))

    @property
    def x_final(self) -> np.ndarray:
        return self.arcs[-1].x[-1]

    def state_at(self, t: float) -> np.ndarray:
        """Right-continuous linear interpolation of the sampled state."""
        for arc in reversed(self.arcs):
            if arc.t[0] <= t:
                if len(arc.t) == 1:
                    return arc.x[0]
                return np.array([np.interp(t, arc.t, arc.x[:, i]) for i in range(arc.x.shape[1])])
        return self.arcs[0].x[0]


@dataclass
class SuspectedZenoReport:
    jump_times: list
    trajectory: HybridTrajectory
    max_jumps: int


def guard_value(sys: HybridSystem, x: np.ndarray) -> float:
    return float(sys.lam @ x - sys.a)


def guard_scale(sys: HybridSystem, x: np.ndarray) -> float:
    return abs(sys.a) + float(np.linalg.norm(sys.lam)) * float(np.linalg.norm(x))


def on_guard(sys: HybridSystem, x: np.ndarray, rtol: float = GUARD_RTOL) -> bool:
    """Scale-invariant guard membership."""
    return abs(guard_value(sys, x)) <= rtol * guard_scale(sys, x)


def drift_velocity(sys: HybridSystem, x: np.ndarray) -> float:
    """Normal velocity of the uncontrolled drift, ``lam @ (Ax + b)``."""
    return float(sys.lam @ (sys.A @ x + sys.b))


def crosses(direction: int, g_prev: float, g_next: float) -> bool:
    if direction <= 0 and g_prev > 0.0 and g_next <= 0.0:
        return True
    if direction >= 0 and g_prev < 0.0 and g_next >= 0.0:
        return True
    return False


def project_to_guard(sys: HybridSystem, x: np.ndarray) -> np.ndarray:
    lam = sys.lam
    return x - lam * (guard_value(sys, x) / float(lam @ lam))


def _reenters(sys: HybridSystem, x: np.ndarray) -> bool:
    if not on_guard(sys, x):
        return False
    if sys.direction == 0:
        return True
    return drift_velocity(sys, x) * sys.direction > 0.0


def apply_reset(sys: HybridSystem, x_pre) -> tuple[np.ndarray, int]:
    """Apply the reset until the image leaves the guard.

    Returns the post-reset state and the beating depth (number of extra
    applications).  Raises ``BlockedState`` when more than ``n`` extra
    applications would be needed, which cannot happen for a trivially
    blocking linear system.
    """
    x_pre = as_vector(x_pre, sys.n, name="x_pre")
    if abs(guard_value(sys, x_pre)) > 1e-8 * max(guard_scale(sys, x_pre), 1e-300):
        raise ValueError(f"x_pre is not on the guard (lam.x - a = {guard_value(sys, x_pre):.3e})")
    if not sys.is_affine and not np.any(x_pre):
        return np.zeros(sys.n), 0
    C, kappa = sys.C, sys.kappa
    x = C @ x_pre + kappa
    orbit = [x_pre, x]
    depth = 0
    while _reenters(sys, x):
        depth += 1
        if depth > sys.n:
            raise BlockedState(
                f"reset orbit stays on the guard after {depth} applications", orbit=orbit
            )
        x = C @ x + kappa
        orbit.append(x)
    return x, depth


def _check_finite(x: np.ndarray, t: float):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"state became non-finite at t = {t:.6g}", t=t)


def _refine(g, s_hi: float, g_hi: float, v0: Optional[float] = None) -> float:
    if g_hi == 0.0:
        return s_hi
    if v0 is not None:
        # g(0) = 0 on a departing arc: bracket the return with g(s) / s instead
        return brentq(lambda s: v0 if s == 0.0 else g(s) / s, 0.0, s_hi,
                      xtol=1e-300, maxiter=BISECTION_MAXITER, disp=False)
    # relative precision only: near a Zeno accumulation the root is far below the step
    return brentq(g, 0.0, s_hi, xtol=1e-300, maxiter=BISECTION_MAXITER, disp=False)


def flow_arc(
    sys: HybridSystem,
    x0,
    t_span: Sequence[float],
    step: float,
    feedback: Optional[Feedback] = None,
) -> tuple[Arc, Optional[GuardHit]]:
    """Flow from ``x0`` until ``t_span[1]`` or the first (gated) guard crossing.

    Samples stop at the crossing, whose state is refined to the guard and
    returned as ``hit``.
    """
    t0, tf = float(t_span[0]), float(t_span[1])
    if step <= 0.0:
        raise ValueError("step must be positive")
    x0 = as_vector(x0, sys.n, name="x0")
    _check_finite(x0, t0)
    if tf <= t0:
        return Arc(np.array([t0]), x0[None, :].copy(), u=_u_samples(feedback, [t0], [x0], sys.m)), None
    origin_fixed = not sys.is_affine and not np.any(x0)
    if not origin_fixed and _reenters(sys, x0):
        raise ValueError("x0 lies on the guard; apply the reset before flowing")

    nodes = uniform_nodes(t0, tf, step)
    h = nodes[1] - nodes[0]
    direction = sys.direction
    ts = [t0]
    xs = [x0]
    g_prev = guard_value(sys, x0)
    # an arc leaving the guard starts with g = 0; its side is the sign of the
    # normal velocity, and the first step is refined on g(s) / s
    leaving = not origin_fixed and on_guard(sys, x0)
    if leaving:
        u0 = np.zeros(sys.m) if feedback is None else np.atleast_1d(feedback(t0, x0))
        g_prev = float(sys.lam @ (sys.A @ x0 + sys.B @ u0 + sys.b))

    if feedback is None:
        n = sys.n
        prop = augmented_expm(sys.A, sys.b, h)
        Phi, phi = prop[:n, :n], prop[:n, n]
        x = x0
        for k in range(1, len(nodes)):
            x_next = Phi @ x + phi
            _check_finite(x_next, nodes[k])
            g_next = guard_value(sys, x_next)
            if crosses(direction, g_prev, g_next):
                x_base = x

                def g(s):
                    P = augmented_expm(sys.A, sys.b, s)
                    return guard_value(sys, P[:n, :n] @ x_base + P[:n, n])

                s = _refine(g, nodes[k] - nodes[k - 1], g_next, g_prev if leaving and k == 1 else None)
                P = augmented_expm(sys.A, sys.b, s)
                return _finish(sys, ts, xs, nodes[k - 1] + s, P[:n, :n] @ x_base + P[:n, n], None)
            if g_next == 0.0 and g_prev != 0.0:
                log.debug("grazing contact with the guard at t = %.6g", nodes[k])
            ts.append(nodes[k])
            xs.append(x_next)
            x, g_prev = x_next, g_next
        return Arc(np.array(ts), np.array(xs)), None

    A, B, b = sys.A, sys.B, sys.b

    def f(t, x):
        return A @ x + B @ np.atleast_1d(feedback(t, x)) + b

    x = x0
    for k in range(1, len(nodes)):
        t_prev = nodes[k - 1]
        x_next = rk4_step(f, t_prev, x, nodes[k] - t_prev)
        _check_finite(x_next, nodes[k])
        g_next = guard_value(sys, x_next)
        if crosses(direction, g_prev, g_next):
            x_base = x

            def g(s):
                return guard_value(sys, rk4_step(f, t_prev, x_base, s))

            s = _refine(g, nodes[k] - t_prev, g_next, g_prev if leaving and k == 1 else None)
            return _finish(sys, ts, xs, t_prev + s, rk4_step(f, t_prev, x_base, s), feedback)
        ts.append(nodes[k])
        xs.append(x_next)
        x, g_prev = x_next, g_next
    return Arc(np.array(ts), np.array(xs), u=_u_samples(feedback, ts, xs, sys.m)), None


def _u_samples(feedback, ts, xs, m):
    if feedback is None:
        return None
    return np.array([np.atleast_1d(feedback(t, x)) for t, x in zip(ts, xs)]).reshape(len(ts), m)


def _finish(sys, ts, xs, t_hit, x_hit, feedback):
    if abs(guard_value(sys, x_hit)) > GUARD_RTOL * (1.0 + np.linalg.norm(x_hit)):
        log.warning("guard refinement stalled at |g| = %.3e", abs(guard_value(sys, x_hit)))
    x_hit = project_to_guard(sys, x_hit)
    ts = ts + [t_hit]
    xs = xs + [x_hit]
    arc = Arc(np.array(ts), np.array(xs), u=_u_samples(feedback, ts, xs, sys.m))
    return arc, GuardHit(float(t_hit), x_hit)


def simulate(
    sys: HybridSystem,
    x0,
    t_span: Sequence[float],
    step: Optional[float] = None,
    feedback: Optional[Feedback] = None,
    max_jumps: int = MAX_JUMPS,
) -> HybridTrajectory:
    """Alternate flow arcs and resets over ``t_span``.

    Raises ``SuspectedZeno`` (carrying the jump times recorded so far) when a
    reset beyond ``max_jumps`` would be needed.
    """
    t0, tf = float(t_span[0]), float(t_span[1])
    if step is None:
        step = (tf - t0) / 2000.0
    t, x = t0, as_vector(x0, sys.n, name="x0")
    arcs, jumps = [], []
    while True:
        arc, hit = flow_arc(sys, x, (t, tf), step, feedback)
        arcs.append(arc)
        if hit is None:
            break
        if len(jumps) >= max_jumps:
            traj = HybridTrajectory(arcs, jumps, t0, tf, truncated=True)
            report = SuspectedZenoReport([j.t for j in jumps], traj, max_jumps)
            raise SuspectedZeno(
                f"more than {max_jumps} resets before t = {hit.t:.12g}", report
            )
        x_post, depth = apply_reset(sys, hit.x)
        jumps.append(JumpRecord(hit.t, hit.x, x_post, beating_depth=depth))
        t, x = hit.t, x_post
    return HybridTrajectory(arcs, jumps, t0, tf)


def first_return_time(sys: HybridSystem, x, t_max: float = 50.0, step: float = 1e-2) -> float:
    """Earliest ``t`` in ``(0, t_max]`` with ``lam @ expm(A t) x = 0``, else ``inf``.

    Only the continuous linear flow is used (no resets, no drift).
    """
    x = as_vector(x, sys.n, name="x")
    if not np.any(x):
        raise ValueError("first-return time is undefined at the origin")
    if step <= 0.0 or t_max <= 0.0:
        raise ValueError("step and t_max must be positive")
    A, lam, n = sys.A, sys.lam, sys.n
    nodes = uniform_nodes(0.0, t_max, step)
    h = nodes[1] - nodes[0]
    Phi = augmented_expm(A, None, h)[:n, :n]

    def g(s):
        return float(lam @ (augmented_expm(A, None, s)[:n, :n] @ x))

    y = x
    g_prev = float(lam @ x)
    for k in range(1, len(nodes)):
        y = Phi @ y
        g_next = float(lam @ y)
        if g_next == 0.0:
            return float(nodes[k])
        if g_prev != 0.0 and (g_prev > 0.0) != (g_next > 0.0):
            return float(brentq(g, nodes[k - 1], nodes[k], xtol=1e-15, maxiter=BISECTION_MAXITER))
        g_prev = g_next
    return math.inf


def system_to_dict(sys: HybridSystem) -> dict:
    d = {
        "n": sys.n,
        "m": sys.m,
        "A": sys.A.tolist(),
        "B": sys.B.tolist(),
        "C": sys.C.tolist(),
        "lambda": sys.lam.tolist(),
    }
    if sys.is_affine:
        d["b"] = sys.b.tolist()
        d["kappa"] = sys.kappa.tolist()
        d["a"] = sys.a
    if sys.direction:
        d["direction"] = sys.direction
    if sys.allow_singular_C:
        d["allow_singular_C"] = True
    return d


def system_from_dict(d: dict) -> HybridSystem:
    n = int(d["n"])
    m = int(d.get("m", 0))
    B = np.array(d.get("B", [[]] * n), dtype=float).reshape(n, m)
    base = LinearHybridSystem(
        A=d["A"],
        B=B,
        C=d["C"],
        lam=d["lambda"],
        direction=int(d.get("direction", 0)),
        allow_singular_C=bool(d.get("allow_singular_C", False)),
    )
    if base.A.shape != (n, n):
        raise ValueError(f"'n' = {n} disagrees with A of shape {base.A.shape}")
    if any(key in d for key in ("b", "kappa", "a")):
        return AffineHybridSystem(
            base,
            b=d.get("b", [0.0] * n),
            kappa=d.get("kappa", [0.0] * n),
            a=float(d.get("a", 0.0)),
        )
    return base
