"""Hybrid LQR/AQR with jumps triggered by a guard crossing.

At an impact the co-state jumps as ``p- = C^T p+ + eps * lam`` and the optimal
Hamiltonian is continuous.  Continuity is a scalar quadratic in ``eps``,

    alpha eps^2 + beta eps + gamma = 0,

whose two roots give pre-impact normal velocities ``lam . xdot- = -/+ sqrt(D)``.
The root is picked from the side of the guard the incoming arc lives on.

``solve_spatial`` couples the forward state pass and the backward value
sweep.  Each arc of the value function is represented by its terminal data
and evaluated exactly through the Hamiltonian matrix exponential, so jump
times are never snapped to a grid.  The fixed point is found by damped Picard
iteration followed by a Newton polish, separately for every admissible cap on
the number of impacts; the cheapest converged candidate is returned.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq, root

from ._numerics import as_vector, uniform_nodes
from .errors import (
    BeatingEncountered,
    HybridLQRError,
    IllConditioned,
    NoExtremalJump,
    NonConvergence,
    SingularJumpMap,
    TangentialImpact,
)
from .guard_analysis import has_war, is_trivially_blocking
from .hybrid_system import (
    Arc,
    HybridTrajectory,
    JumpRecord,
    apply_reset,
    guard_scale,
    guard_value,
    jump_map_invertible,
    project_to_guard,
)
from .lqr_core import (
    HamiltonianFlow,
    QuadraticCost,
    RiccatiSolution,
    TildeData,
    hamiltonian,
    riccati_rhs,
    tilde,
    trajectory_cost,
)

log = logging.getLogger(__name__)

DOUBLE_ROOT_RTOL = 1e-12
H_RTOL = 1e-8
GUARD_CHECK_RTOL = 1e-8


@dataclass(frozen=True)
class MultiplierQuadratic:
    alpha: float
    beta: float
    gamma: float
    discriminant: float
    roots: tuple
    regime: str  # two_roots | double_root | no_roots | war_linear

    def normal_velocity(self, eps: float) -> float:
        """``lam . xdot-`` for the multiplier ``eps``."""
        return self.beta + 2.0 * self.alpha * eps


def _affine_parts(n, affine):
    if affine is None:
        return np.zeros(n), np.zeros(n)
    b, kappa = affine
    b = np.zeros(n) if b is None else as_vector(b, n, name="b")
    kappa = np.zeros(n) if kappa is None else as_vector(kappa, n, name="kappa")
    return b, kappa


def _quadratic(alpha, beta, gamma, war: bool, beta_tol: float = 0.0) -> MultiplierQuadratic:
    if war:
        if abs(beta) <= beta_tol:
            raise TangentialImpact(
                f"impact is tangential to the guard (|beta| = {abs(beta):.3e}); the multiplier is undefined"
            )
        return MultiplierQuadratic(0.0, beta, gamma, beta * beta, (-gamma / beta,), "war_linear")
    D = beta * beta - 4.0 * alpha * gamma
    if abs(D) <= DOUBLE_ROOT_RTOL * (beta * beta + abs(4.0 * alpha * gamma) + 1.0):
        return MultiplierQuadratic(alpha, beta, gamma, D, (-beta / (2.0 * alpha),), "double_root")
    if D < 0.0:
        return MultiplierQuadratic(alpha, beta, gamma, D, (), "no_roots")
    sq = math.sqrt(D)
    q = -0.5 * (beta + math.copysign(sq, beta))
    return MultiplierQuadratic(alpha, beta, gamma, D, (q / alpha, gamma / q), "two_roots")


def _beta_tol(td: TildeData, x) -> float:
    return 1e-10 * (1.0 + float(np.linalg.norm(x))) * (1.0 + float(np.linalg.norm(td.A, 2)))


def _check_on_guard(lam, x, a):
    scale = abs(a) + float(np.linalg.norm(lam)) * float(np.linalg.norm(x))
    if abs(float(lam @ x) - a) > GUARD_CHECK_RTOL * max(scale, 1e-300):
        raise ValueError(f"x_minus is not on the guard (lam.x - a = {float(lam @ x) - a:.3e})")


def multiplier_coefficients(
    td: TildeData, C, lam, x_minus, p_plus, affine=None, a: float = 0.0
) -> MultiplierQuadratic:
    """Coefficients of the Hamiltonian-continuity quadratic at an impact.

    ``x_minus`` is the pre-impact state, ``p_plus`` the post-impact co-state.
    ``affine`` is an optional ``(b, kappa)`` pair.  Under weakly actuated
    resets the quadratic term vanishes and ``beta = lam . (A x + b)``.
    """
    n = td.n
    C = np.asarray(C, dtype=float)
    lam = as_vector(lam, n, name="lambda")
    x = as_vector(x_minus, n, name="x_minus")
    p = as_vector(p_plus, n, name="p_plus")
    _check_on_guard(lam, x, a)
    b, kappa = _affine_parts(n, affine)
    Qt, At, Rt = td.Qt, td.At, td.Rt
    comm = C @ At - At @ C
    gamma = (
        0.5 * x @ (Qt - C.T @ Qt @ C) @ x
        + p @ comm @ x
        + 0.5 * p @ (Rt - C @ Rt @ C.T) @ p
        + p @ (C @ b - b)
        - kappa @ (Qt @ (C @ x) + At.T @ p + 0.5 * Qt @ kappa)
    )
    if has_war(td.B, lam):
        beta = float(lam @ (td.A @ x) + lam @ b)
        return _quadratic(0.0, beta, float(gamma), True, _beta_tol(td, x))
    alpha = -0.5 * float(lam @ Rt @ lam)
    beta = float(lam @ (At @ x - Rt @ (C.T @ p)) + lam @ b)
    return _quadratic(alpha, beta, float(gamma), False)


@dataclass(frozen=True)
class ReducedCoefficients:
    """``gamma(x) = x.Gamma.x + v.x + w`` and ``beta(x) = l.x + m`` once ``p+ = S+ x+ + c+``."""

    Gamma: np.ndarray
    v: np.ndarray
    w: float
    beta_row: np.ndarray
    beta_const: float
    alpha: float
    war: bool

    def gamma(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.Gamma @ x + self.v @ x + self.w)

    def beta(self, x) -> float:
        return float(self.beta_row @ np.asarray(x, dtype=float) + self.beta_const)


def reduced_coefficients(td: TildeData, C, lam, S_plus, c_plus, affine=None) -> ReducedCoefficients:
    n = td.n
    C = np.asarray(C, dtype=float)
    lam = as_vector(lam, n, name="lambda")
    S = np.asarray(S_plus, dtype=float)
    b, kappa = _affine_parts(n, affine)
    c_eff = S @ kappa + as_vector(c_plus, n, name="c_plus")
    Qt, At, Rt = td.Qt, td.At, td.Rt
    comm = C @ At - At @ C
    G = Rt - C @ Rt @ C.T
    SC = S @ C
    Gamma = 0.5 * (Qt - C.T @ Qt @ C) + SC.T @ comm + 0.5 * SC.T @ G @ SC
    v = (
        comm.T @ c_eff
        + SC.T @ G @ c_eff
        + SC.T @ (C @ b - b)
        - C.T @ Qt @ kappa
        - SC.T @ At @ kappa
    )
    w = 0.5 * c_eff @ G @ c_eff + c_eff @ (C @ b - b) - kappa @ At.T @ c_eff - 0.5 * kappa @ Qt @ kappa
    war = has_war(td.B, lam)
    if war:
        return ReducedCoefficients(Gamma, v, float(w), lam @ td.A, float(lam @ b), 0.0, True)
    beta_row = lam @ (At - Rt @ C.T @ SC)
    beta_const = float(-lam @ Rt @ C.T @ c_eff + lam @ b)
    return ReducedCoefficients(Gamma, v, float(w), beta_row, beta_const, -0.5 * float(lam @ Rt @ lam), False)


def reduced_quadratic(red: ReducedCoefficients, td: TildeData, x_minus) -> MultiplierQuadratic:
    return _quadratic(red.alpha, red.beta(x_minus), red.gamma(x_minus), red.war, _beta_tol(td, x_minus))


class DiscriminantForm:
    """``D(x, p) = beta^2 - 4 alpha gamma`` as a symmetric form on ``(x, p)``."""

    def __init__(self, matrix: np.ndarray, n: int):
        self.matrix = matrix
        self.n = n

    def __call__(self, x, p) -> float:
        z = np.concatenate([np.asarray(x, dtype=float), np.asarray(p, dtype=float)])
        return float(z @ self.matrix @ z)


def discriminant_form(td: TildeData, C, lam) -> DiscriminantForm:
    n = td.n
    C = np.asarray(C, dtype=float)
    lam = as_vector(lam, n, name="lambda")
    Qt, At, Rt = td.Qt, td.At, td.Rt
    war = has_war(td.B, lam)
    alpha = 0.0 if war else -0.5 * float(lam @ Rt @ lam)
    ell = np.concatenate([At.T @ lam, np.zeros(n) if war else -C @ Rt @ lam])
    comm = C @ At - At @ C
    G = np.zeros((2 * n, 2 * n))
    G[:n, :n] = 0.5 * (Qt - C.T @ Qt @ C)
    G[n:, :n] = 0.5 * comm
    G[:n, n:] = 0.5 * comm.T
    G[n:, n:] = 0.5 * (Rt - C @ Rt @ C.T)
    M = np.outer(ell, ell) - 4.0 * alpha * G
    return DiscriminantForm(0.5 * (M + M.T), n)


class CostateJump(NamedTuple):
    p_minus: np.ndarray
    epsilon: float
    branch: str


def branch_of(quad: MultiplierQuadratic, eps: float) -> str:
    if quad.regime == "war_linear":
        return "unique"
    return "plus" if quad.normal_velocity(eps) < 0.0 else "minus"


def select_root(quad: MultiplierQuadratic, incoming_side: int, override: Optional[str] = None, t=None):
    """Pick ``eps`` so the pre-impact velocity points from the incoming side into the guard."""
    if quad.regime == "no_roots":
        raise NoExtremalJump(
            f"negative discriminant {quad.discriminant:.6g}: no extremal crosses the guard here",
            discriminant=quad.discriminant, t=t,
        )
    if quad.regime == "double_root":
        raise IllConditioned(
            f"discriminant {quad.discriminant:.3e} is numerically zero; the jump is ill-posed",
            discriminant=quad.discriminant, t=t,
        )
    if quad.regime == "war_linear":
        return quad.roots[0], "unique"
    if override is not None:
        if override not in ("plus", "minus"):
            raise ValueError(f"branch override must be 'plus' or 'minus', got {override!r}")
        for eps in quad.roots:
            if branch_of(quad, eps) == override:
                return eps, override
    if incoming_side not in (-1, 1):
        raise ValueError("incoming_side must be +1 or -1")
    for eps in quad.roots:
        if quad.normal_velocity(eps) * incoming_side < 0.0:
            return eps, branch_of(quad, eps)
    raise IllConditioned("no root has a velocity consistent with the incoming side", discriminant=quad.discriminant, t=t)


def resolve_costate_jump(
    td: TildeData, C, lam, x_minus, p_plus, incoming_side: int,
    affine=None, a: float = 0.0, override: Optional[str] = None,
) -> CostateJump:
    quad = multiplier_coefficients(td, C, lam, x_minus, p_plus, affine, a)
    eps, branch = select_root(quad, incoming_side, override)
    lam = np.asarray(lam, dtype=float)
    p_minus = np.asarray(C).T @ np.asarray(p_plus, dtype=float) + eps * lam
    gap = jump_hamiltonian_gap(td, C, x_minus, p_minus, p_plus, affine)
    H_minus = hamiltonian(td, x_minus, p_minus, _affine_parts(td.n, affine)[0])
    if gap > H_RTOL * (1.0 + abs(H_minus)):
        log.warning("Hamiltonian jump %.3e exceeds tolerance at the impact", gap)
    return CostateJump(p_minus, float(eps), branch)


def jump_hamiltonian_gap(td: TildeData, C, x_minus, p_minus, p_plus, affine=None) -> float:
    b, kappa = _affine_parts(td.n, affine)
    x_plus = np.asarray(C) @ np.asarray(x_minus) + kappa
    return abs(hamiltonian(td, x_plus, p_plus, b) - hamiltonian(td, x_minus, p_minus, b))


# ---------------------------------------------------------------- solver


@dataclass
class SpatialOptions:
    step: Optional[float] = None  # forward sampling, default span / 2000
    max_iter: int = 100
    jt_tol: Optional[float] = None
    solver_tol: Optional[float] = None
    max_jumps: int = 50
    branch_override: dict = field(default_factory=dict)  # jump index -> "plus" | "minus"
    explore: bool = True  # also try smaller caps on the number of impacts
    polish: bool = True


@dataclass
class Candidate:
    jump_cap: int
    jump_count: int
    converged: bool
    admissible: bool
    cost: float
    residual: float
    iterations: int
    jump_times: list
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "jump_cap": self.jump_cap, "jump_count": self.jump_count, "converged": self.converged,
            "admissible": self.admissible, "cost": self.cost, "residual": self.residual,
            "iterations": self.iterations, "jump_times": list(self.jump_times), "error": self.error,
        }


@dataclass
class SpatialSolveReport:
    trajectory: HybridTrajectory
    jump_count: int
    branch_choices: list
    iterations: int
    converged: bool
    residual: float
    cost: float = math.nan
    candidates: list = field(default_factory=list)
    riccati: Optional[RiccatiSolution] = None
    tie: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "jump_count": self.jump_count,
            "jump_times": self.trajectory.jump_times,
            "branch_choices": list(self.branch_choices),
            "epsilons": [j.epsilon for j in self.trajectory.jumps],
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "cost": self.cost,
            "tie": self.tie,
            "candidates": [c.to_dict() for c in self.candidates],
            "notes": list(self.notes),
        }


@dataclass
class _Forward:
    traj: HybridTrajectory
    impacts: list  # (t, x_minus, incoming_side)
    suppressed: bool  # a gated crossing occurred after the cap


class _Problem:
    def __init__(self, sys, cost: QuadraticCost, x0, t_span, opts: SpatialOptions):
        self.sys = sys
        self.cost = cost
        self.td = tilde(cost, sys.A, sys.B)
        self.n = sys.n
        self.x0 = as_vector(x0, sys.n, name="x0")
        self.t0, self.tf = float(t_span[0]), float(t_span[1])
        if self.tf <= self.t0:
            raise ValueError("t_span must be increasing")
        span = self.tf - self.t0
        self.step = span / 2000.0 if opts.step is None else float(opts.step)
        self.jt_tol = 1e-8 * span if opts.jt_tol is None else float(opts.jt_tol)
        self.solver_tol = opts.solver_tol
        self.opts = opts
        self.b = np.array(sys.b)
        self.kappa = np.array(sys.kappa)
        self.affine = (self.b, self.kappa) if sys.is_affine else None
        self.flow = HamiltonianFlow(self.td, self.b if sys.is_affine else None)
        self.E_step = self.flow.propagator(self.step)
        self._powers = None
        self.terminal = (self.tf, np.array(cost.F), np.array(cost.r))

    # value-function arcs are (T, S_T, c_T) triples
    def value(self, arcs, j, t):
        T, S_T, c_T = arcs[min(j, len(arcs) - 1)]
        if t == T:
            return S_T, c_T
        return self.flow.value_at(T, S_T, c_T, t)

    def tol(self, x_final):
        if self.solver_tol is not None:
            return self.solver_tol
        return 1e-6 * (1.0 + float(np.linalg.norm(x_final)))

    def _g(self, z):
        return guard_value(self.sys, z[: self.n])

    def _propagators(self, count):
        """Exact propagators for ``0, h, 2h, ..., count*h`` (grown on demand)."""
        if self._powers is None or len(self._powers) <= count:
            k = max(count + 1, int(math.ceil((self.tf - self.t0) / self.step)) + 2)
            self._powers = np.array([self.flow.propagator(i * self.step) for i in range(k)])
        return self._powers[: count + 1]

    def _samples(self, z, t):
        """Flow ``z`` from ``t`` to ``tf`` on nodes ``t + k*h`` plus ``tf``."""
        rest = self.tf - t
        count = int(math.floor(rest / self.step * (1.0 + 1e-12)))
        offs = self.step * np.arange(count + 1)
        zs = self._propagators(count) @ z
        if rest - offs[-1] > 1e-12 * self.step:
            offs = np.append(offs, rest)
            zs = np.vstack([zs, self.flow.propagator(rest) @ z])
        else:
            offs[-1] = rest
        if not np.all(np.isfinite(zs)):
            raise NonConvergence(f"extremal diverged after t = {t:.6g}")
        return t + offs, zs

    def _first_crossing(self, ts, zs):
        """Index ``k`` of the first gated crossing in ``(ts[k], ts[k+1]]`` and its hit."""
        g = zs[:, : self.n] @ self.sys.lam - self.sys.a
        lo, hi = g[:-1], g[1:]
        d = self.sys.direction
        down = (lo > 0.0) & (hi <= 0.0)
        up = (lo < 0.0) & (hi >= 0.0)
        mask = down if d < 0 else up if d > 0 else down | up
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return None
        k = int(idx[0])
        z_base, h = zs[k], ts[k + 1] - ts[k]
        s = brentq(
            lambda s: self._g(self.flow.propagator(s) @ z_base), 0.0, h,
            xtol=1e-300, maxiter=100, disp=False,
        ) if hi[k] != 0.0 else h
        return k, ts[k] + s, self.flow.propagator(s) @ z_base, 1 if lo[k] > 0.0 else -1

    def forward(self, arcs, cap: int) -> _Forward:
        sys, n = self.sys, self.n
        t, x, j = self.t0, self.x0.copy(), 0
        arc_list, jumps, impacts = [], [], []
        suppressed = False
        while True:
            S, c = self.value(arcs, j, t)
            z = np.concatenate([x, S @ x + c, [1.0]])
            ts, zs = self._samples(z, t)
            hit = self._first_crossing(ts, zs)
            if hit is not None and j >= cap:
                suppressed, hit = True, None
            if hit is not None:
                k, t_hit, z_hit, side = hit
                ts = np.append(ts[: k + 1], t_hit)
                zs = np.vstack([zs[: k + 1], z_hit])
                hit = (t_hit, z_hit, side)
            arc_list.append(self._arc(ts, zs))
            if hit is None:
                break
            t_hit, z_hit, side = hit
            x_minus = project_to_guard(sys, z_hit[:n])
            x_plus, depth = apply_reset(sys, x_minus)
            if depth >= 1:
                raise BeatingEncountered(
                    f"impact at t = {t_hit:.9g} lies in the beating set (depth {depth}); "
                    "its co-state boundary problem is not solved",
                    t=t_hit, x_pre=x_minus, depth=depth,
                )
            jumps.append(JumpRecord(float(t_hit), x_minus, x_plus))
            impacts.append((float(t_hit), x_minus, side))
            j += 1
            if j > self.opts.max_jumps:
                raise NonConvergence(f"forward pass exceeded {self.opts.max_jumps} impacts")
            t, x = float(t_hit), x_plus
        return _Forward(HybridTrajectory(arc_list, jumps, self.t0, self.tf), impacts, suppressed)

    def _arc(self, ts, zs) -> Arc:
        n = self.n
        zs = np.array(zs)
        xs, ps = zs[:, :n], zs[:, n : 2 * n]
        us = (-(xs @ self.td.Rinv_NT.T) - ps @ self.td.Rinv_BT.T).reshape(len(ts), -1)
        return Arc(np.array(ts), xs, p=ps, u=us)

    def backward(self, impacts, with_details=False):
        """Value arcs for the impacts ``(t, x_minus, side)``; arcs[k] ends at impact k."""
        K = len(impacts)
        C, lam, td = self.sys.C, self.sys.lam, self.td
        arcs = [None] * (K + 1)
        arcs[K] = self.terminal
        details = [None] * K
        for k in range(K - 1, -1, -1):
            t_k, x_minus, side = impacts[k]
            S_p, c_p = self.value(arcs, k + 1, t_k)
            red = reduced_coefficients(td, C, lam, S_p, c_p, self.affine)
            quad = reduced_quadratic(red, td, x_minus)
            try:
                eps, branch = select_root(quad, side, self.opts.branch_override.get(k), t=t_k)
            except (NoExtremalJump, IllConditioned) as exc:
                exc.t = t_k
                raise
            c_eff = S_p @ self.kappa + c_p
            arcs[k] = (t_k, C.T @ S_p @ C, C.T @ c_eff + eps * lam)
            details[k] = (eps, branch, S_p, c_p)
        return (arcs, details) if with_details else arcs

    def shooting_residual(self, arcs, details, cap):
        """Integrate the state/co-state flow from ``p(t0)`` using the jump law only.

        Returns ``|p(tf) - F x(tf) - r|``; inf when the shot meets a different
        number of impacts than the sweep assumed.
        """
        n, sys = self.n, self.sys
        K = len(details)
        S0, c0 = self.value(arcs, 0, self.t0)
        z = np.concatenate([self.x0, S0 @ self.x0 + c0, [1.0]])
        t, used = self.t0, 0
        C, lam = sys.C, sys.lam
        while True:
            ts, zs = self._samples(z, t)
            hit = self._first_crossing(ts, zs) if used < cap else None
            if hit is not None:
                hit = hit[1:3]
            else:
                z = zs[-1]
            if hit is None:
                break
            if used >= K:
                return math.inf
            t, z_hit = hit
            x_minus = project_to_guard(sys, z_hit[:n])
            eps = details[used][0]
            p_plus = np.linalg.solve(C.T, z_hit[n : 2 * n] - eps * lam)
            z = np.concatenate([C @ x_minus + self.kappa, p_plus, [1.0]])
            used += 1
        if used != K:
            return math.inf
        x_f, p_f = z[:n], z[n : 2 * n]
        return float(np.linalg.norm(p_f - self.cost.F @ x_f - self.cost.r))

    def annotate(self, fwd: _Forward, arcs):
        """Attach co-state jumps consistent with the jump law at the final impacts."""
        C, lam, td = self.sys.C, self.sys.lam, self.td
        branches = []
        for k, (jump, (t_k, x_minus, side)) in enumerate(zip(fwd.traj.jumps, fwd.impacts)):
            S_p, c_p = self.value(arcs, k + 1, t_k)
            p_plus = S_p @ jump.x_post + c_p
            quad = multiplier_coefficients(td, C, lam, x_minus, p_plus, self.affine, self.sys.a)
            eps, branch = select_root(quad, side, self.opts.branch_override.get(k), t=t_k)
            jump.epsilon = float(eps)
            jump.branch = branch
            jump.p_post = p_plus
            jump.p_pre = C.T @ p_plus + eps * lam
            branches.append(branch)
        return branches

    def riccati_samples(self, arcs, jump_times) -> RiccatiSolution:
        f = riccati_rhs(self.td, self.b if self.sys.is_affine else None)
        bounds = [self.t0] + list(jump_times) + [self.tf]
        ts, Ss, cs, dSs, dcs, segments = [], [], [], [], [], []
        for k in range(len(bounds) - 1):
            nodes = uniform_nodes(bounds[k], bounds[k + 1], self.step)
            start = len(ts)
            for t in nodes:
                S, c = self.value(arcs, k, t)
                if t == bounds[k + 1]:
                    S, c = arcs[k][1], arcs[k][2]
                dS, dc = f(S, c)
                ts.append(t)
                Ss.append(S)
                cs.append(c)
                dSs.append(dS)
                dcs.append(dc)
            segments.append((start, len(ts) - 1))
        return RiccatiSolution(np.array(ts), np.array(Ss), np.array(cs), np.array(dSs), np.array(dcs),
                               list(jump_times), segments)


def _impact_vector(impacts):
    return np.concatenate([[t, *x] for t, x, _ in impacts]) if impacts else np.zeros(0)


def _solve_capped(prob: _Problem, cap: int):
    """Fixed point of forward/backward passes with at most ``cap`` impacts."""
    arcs = [prob.terminal]
    fwd = prob.forward(arcs, cap)
    prev_step = math.inf
    damp = False
    best = None
    it = 0
    for it in range(1, prob.opts.max_iter + 1):
        impacts = fwd.impacts
        if damp and best is not None and len(best[0]) == len(impacts):
            impacts = [
                (0.5 * (ta + tb), project_to_guard(prob.sys, 0.5 * (xa + xb)), sb)
                for (ta, xa, _), (tb, xb, sb) in zip(best[0], impacts)
            ]
        arcs = prob.backward(impacts)
        new = prob.forward(arcs, cap)
        if len(new.impacts) == len(impacts):
            step = float(np.max(np.abs(_impact_vector(new.impacts) - _impact_vector(impacts)), initial=0.0))
        else:
            step = math.inf
        damp = step > prev_step and math.isfinite(step)
        prev_step = step
        best = (impacts, arcs)
        fwd = new
        if step <= prob.jt_tol:
            break
        if math.isfinite(step) and step < 1e-4 and prob.opts.polish:
            polished = _polish(prob, cap, new.impacts)
            if polished is not None:
                arcs, fwd = polished
                break
    arcs, details = prob.backward(fwd.impacts, with_details=True)
    final = prob.forward(arcs, cap)
    if len(final.impacts) != len(fwd.impacts):
        residual = math.inf
    else:
        residual = prob.shooting_residual(arcs, details, cap)
        moved = float(np.max(np.abs(_impact_vector(final.impacts) - _impact_vector(fwd.impacts)), initial=0.0))
        if moved > prob.jt_tol:
            residual = max(residual, moved)
    return final, arcs, residual, it


def _polish(prob: _Problem, cap: int, impacts):
    """Newton (hybrid Powell) on the fixed-point residual with the impact count frozen."""
    K = len(impacts)
    if K == 0:
        return None
    sides = [s for _, _, s in impacts]
    n = prob.n

    def unpack(zv):
        return [(zv[k * (n + 1)], zv[k * (n + 1) + 1 : (k + 1) * (n + 1)], sides[k]) for k in range(K)]

    def residual(zv):
        try:
            imp = [(t, project_to_guard(prob.sys, x), s) for t, x, s in unpack(zv)]
            out = prob.forward(prob.backward(imp), cap)
        except HybridLQRError:
            return np.full(zv.shape, 1e3)
        if len(out.impacts) != K:
            return np.full(zv.shape, 1e3)
        return _impact_vector(out.impacts) - zv

    z0 = _impact_vector(impacts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sol = root(residual, z0, method="hybr", options={"xtol": 1e-13})
    if not np.all(np.isfinite(sol.x)) or np.max(np.abs(residual(sol.x))) > prob.jt_tol:
        return None
    imp = [(t, project_to_guard(prob.sys, x), s) for t, x, s in unpack(sol.x)]
    arcs = prob.backward(imp)
    return arcs, prob.forward(arcs, cap)


def solve_spatial(sys, cost: QuadraticCost, x0, t_span, options: Optional[SpatialOptions] = None) -> SpatialSolveReport:
    """Extremal of the hybrid LQR/AQR problem with guard-triggered resets.

    Runs the coupled fixed point with no cap on the number of impacts, then
    (with ``options.explore``) with every smaller cap.  Candidates that
    converge and never cross the guard after their cap are admissible; the
    cheapest one is returned.  All candidates are listed in the report.
    """
    opts = options or SpatialOptions()
    if not jump_map_invertible(sys.C):
        raise SingularJumpMap("spatial co-state jumps require an invertible jump matrix")
    if not is_trivially_blocking(sys.C, sys.lam):
        warnings.warn("system is not trivially blocking; beating impacts may occur", RuntimeWarning)
    prob = _Problem(sys, cost, x0, t_span, opts)
    on_guard_start = abs(guard_value(sys, prob.x0)) <= 1e-10 * max(guard_scale(sys, prob.x0), 1e-300)
    if on_guard_start and np.any(prob.x0):
        raise ValueError("x0 lies on the guard")

    candidates, results, errors = [], {}, []
    caps = [opts.max_jumps]
    tried = set()
    while caps:
        cap = caps.pop(0)
        if cap in tried:
            continue
        tried.add(cap)
        try:
            final, arcs, residual, iters = _solve_capped(prob, cap)
        except (NoExtremalJump, IllConditioned, TangentialImpact, NonConvergence) as exc:
            errors.append(exc)
            candidates.append(Candidate(cap, -1, False, False, math.nan, math.inf, 0, [], error=str(exc)))
            if cap == opts.max_jumps and opts.explore:
                caps.extend(range(0, 4))
            continue
        K = len(final.impacts)
        tol = prob.tol(final.traj.x_final)
        converged = residual <= tol
        cost_value = trajectory_cost(cost, final.traj)
        cand = Candidate(cap, K, converged, converged and not final.suppressed, cost_value,
                         residual, iters, final.traj.jump_times)
        candidates.append(cand)
        results[cap] = (final, arcs, residual, iters, cand)
        if cap == opts.max_jumps and opts.explore:
            caps.extend(range(0, K))
    candidates.sort(key=lambda c: c.jump_cap)

    admissible = [c for c in candidates if c.admissible]
    notes = []
    if admissible:
        chosen = min(admissible, key=lambda c: c.cost)
        ties = [c for c in admissible if c is not chosen and abs(c.cost - chosen.cost) <= 1e-9 * (1 + abs(chosen.cost))]
        tie = bool(ties)
        if tie:
            notes.append("several admissible extremals share the minimal cost")
        if len(admissible) > 1:
            notes.append("admissible extremals: " + ", ".join(f"{c.jump_count} impacts, cost {c.cost:.9g}" for c in admissible))
        report = _report(prob, results[chosen.jump_cap], candidates, True, tie, notes)
        return report
    if not results:
        raise errors[0]
    best_cap = min(results, key=lambda c: results[c][2])
    report = _report(prob, results[best_cap], candidates, False, False, notes)
    raise NonConvergence(
        f"no admissible converged extremal (best residual {report.residual:.3e})", best=report
    )


def _report(prob: _Problem, result, candidates, converged, tie, notes) -> SpatialSolveReport:
    final, arcs, residual, iters, cand = result
    branches = prob.annotate(final, arcs)
    riccati = prob.riccati_samples(arcs, final.traj.jump_times)
    return SpatialSolveReport(
        trajectory=final.traj,
        jump_count=final.traj.jump_count,
        branch_choices=branches,
        iterations=iters,
        converged=converged,
        residual=residual,
        cost=cand.cost,
        candidates=candidates,
        riccati=riccati,
        tie=tie,
        notes=notes,
    )
