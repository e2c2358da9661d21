"""Classical finite-horizon LQR / AQR.

Cost ``1/2 ∫ (x'Qx + u'Ru + 2x'Nu) dt + 1/2 x(tf)'F x(tf) + r'x(tf)`` with
dynamics ``x' = Ax + Bu + b``.  The value function is ``1/2 x'Sx + c'x + q``;
``S`` and ``c`` are swept backward with RK4 and the closed loop is rebuilt
forward.  ``HamiltonianFlow`` gives the exact (matrix exponential) state and
co-state flow between jumps, which the spatial solver and the tests use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import cho_factor, cho_solve, expm

from ._numerics import as_matrix, as_vector, frozen, hermite, rk4_step, uniform_nodes
from .errors import DivergenceError
from .hybrid_system import Arc, HybridTrajectory

SYM_RTOL = 1e-12


def _symmetric(M, name):
    scale = max(np.max(np.abs(M)), 1.0) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > SYM_RTOL * scale:
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    Q: np.ndarray
    R: np.ndarray
    N: np.ndarray
    F: np.ndarray
    r: Optional[np.ndarray] = None

    def __post_init__(self):
        Q = as_matrix(self.Q, name="Q")
        n = Q.shape[0]
        R = np.array(self.R, dtype=float)
        m = 0 if R.size == 0 else (1 if R.ndim == 0 else R.shape[0])
        R = np.zeros((0, 0)) if m == 0 else as_matrix(R, shape=(m, m), name="R")
        N = np.array(self.N, dtype=float)
        N = np.zeros((n, m)) if N.size == 0 else as_matrix(N, shape=(n, m), name="N")
        F = as_matrix(self.F, shape=(n, n), name="F")
        r = np.zeros(n) if self.r is None else as_vector(self.r, n, name="r")
        Q, R, F = _symmetric(Q, "Q"), _symmetric(R, "R"), _symmetric(F, "F")
        if m and np.linalg.eigvalsh(R)[0] <= 0.0:
            raise ValueError("R must be positive definite")
        if np.linalg.eigvalsh(F)[0] <= 0.0:
            raise ValueError("F must be positive definite")
        if np.linalg.eigvalsh(Q)[0] < -1e-12 * max(np.linalg.norm(Q, 2), 1.0):
            raise ValueError("Q must be positive semidefinite")
        for name, val in (("Q", Q), ("R", R), ("N", N), ("F", F), ("r", r)):
            object.__setattr__(self, name, frozen(val))

    @classmethod
    def of(cls, n, m, Q=None, R=None, N=None, F=None, r=None) -> "QuadraticCost":
        """Cost with zero defaults for Q, N, r and identities for R, F."""
        return cls(
            Q=np.zeros((n, n)) if Q is None else Q,
            R=np.eye(m) if R is None else R,
            N=np.zeros((n, m)) if N is None else N,
            F=np.eye(n) if F is None else F,
            r=r,
        )

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def running(self, x, u) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float).reshape(-1)
        return 0.5 * float(x @ self.Q @ x + u @ self.R @ u + 2.0 * x @ self.N @ u)

    def terminal(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ self.F @ x) + float(self.r @ x)

    def to_dict(self) -> dict:
        return {"Q": self.Q.tolist(), "R": self.R.tolist(), "N": self.N.tolist(),
                "F": self.F.tolist(), "r": self.r.tolist()}

    @classmethod
    def from_dict(cls, d: dict, n: int, m: int) -> "QuadraticCost":
        R = d.get("R")
        if R is not None and m == 1 and np.ndim(R) == 0:
            R = [[R]]
        return cls.of(n, m, Q=d.get("Q"), R=R, N=d.get("N"), F=d.get("F"), r=d.get("r"))


@dataclass(frozen=True, eq=False)
class TildeData:
    """Reduced matrices of the optimal Hamiltonian plus what builds the control."""

    Qt: np.ndarray
    At: np.ndarray
    Rt: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Rinv_BT: np.ndarray  # R^{-1} B^T
    Rinv_NT: np.ndarray  # R^{-1} N^T

    @property
    def n(self) -> int:
        return self.At.shape[0]


def tilde(cost: QuadraticCost, A, B) -> TildeData:
    A = as_matrix(A, name="A")
    n = A.shape[0]
    B = np.zeros((n, 0)) if np.size(B) == 0 else as_matrix(B, shape=(n, None), name="B")
    if B.shape[1] != cost.m or cost.n != n:
        raise ValueError("cost dimensions do not match (A, B)")
    if cost.m == 0:
        Rinv_BT = np.zeros((0, n))
        Rinv_NT = np.zeros((0, n))
    else:
        try:
            factor = cho_factor(cost.R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R is numerically singular") from exc
        Rinv_BT = cho_solve(factor, B.T)
        Rinv_NT = cho_solve(factor, cost.N.T)
    Qt = cost.Q - cost.N @ Rinv_NT
    At = A - B @ Rinv_NT
    Rt = B @ Rinv_BT
    return TildeData(
        Qt=0.5 * (Qt + Qt.T), At=At, Rt=0.5 * (Rt + Rt.T), A=A, B=B,
        Rinv_BT=Rinv_BT, Rinv_NT=Rinv_NT,
    )


def hamiltonian(td: TildeData, x, p, b=None) -> float:
    """Optimal Hamiltonian ``1/2 x'Q̃x + p'Ãx - 1/2 p'R̃p`` (``+ p'b`` when affine)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    H = 0.5 * x @ td.Qt @ x + p @ td.At @ x - 0.5 * p @ td.Rt @ p
    if b is not None:
        H = H + p @ np.asarray(b, dtype=float)
    return float(H)


def unoptimized_hamiltonian(A, B, cost: QuadraticCost, x, p, u, b=None) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float).reshape(-1)
    xdot = np.asarray(A) @ x + np.asarray(B).reshape(x.size, -1) @ u
    if b is not None:
        xdot = xdot + b
    return float(np.asarray(p) @ xdot) + cost.running(x, u)


def optimal_control(td: TildeData, S_t, c_t, x) -> np.ndarray:
    """``u* = -R^{-1}(N^T + B^T S) x - R^{-1} B^T c``."""
    x = np.asarray(x, dtype=float)
    c_t = np.zeros_like(x) if c_t is None else np.asarray(c_t, dtype=float)
    return -(td.Rinv_NT @ x + td.Rinv_BT @ (np.asarray(S_t) @ x + c_t))


def control_from_costate(td: TildeData, x, p) -> np.ndarray:
    return -(td.Rinv_NT @ np.asarray(x) + td.Rinv_BT @ np.asarray(p))


@dataclass
class RiccatiSolution:
    """Sampled backward solution; jump times appear twice (left value first)."""

    t: np.ndarray
    S: np.ndarray
    c: np.ndarray
    dS: np.ndarray
    dc: np.ndarray
    jump_times: list = field(default_factory=list)
    segments: list = field(default_factory=list)  # (first, last) sample index per arc

    def segment_for(self, t: float, side: str = "right") -> int:
        for k, (i0, i1) in enumerate(self.segments):
            lo, hi = self.t[i0], self.t[i1]
            if lo < t < hi:
                return k
            if t == lo and (side == "right" or k == 0):
                return k
            if t == hi and (side == "left" or k == len(self.segments) - 1):
                return k
        if t < self.t[0]:
            return 0
        return len(self.segments) - 1

    def at(self, t: float, side: str = "right", segment: Optional[int] = None):
        """``(S(t), c(t))`` by cubic Hermite interpolation inside one arc."""
        k = self.segment_for(t, side) if segment is None else segment
        i0, i1 = self.segments[k]
        ts = self.t[i0 : i1 + 1]
        j = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, max(len(ts) - 2, 0)))
        if len(ts) == 1:
            return self.S[i0], self.c[i0]
        a, b = i0 + j, i0 + j + 1
        S = hermite(self.t[a], self.S[a], self.dS[a], self.t[b], self.S[b], self.dS[b], t)
        c = hermite(self.t[a], self.c[a], self.dc[a], self.t[b], self.c[b], self.dc[b], t)
        return 0.5 * (S + S.T), c

    def one_sided(self, t_jump: float):
        """``((S-, c-), (S+, c+))`` stored at a jump time."""
        for k in range(len(self.segments) - 1):
            left_end = self.segments[k][1]
            right_start = self.segments[k + 1][0]
            if self.t[left_end] == t_jump:
                return (self.S[left_end], self.c[left_end]), (self.S[right_start], self.c[right_start])
        raise KeyError(f"no stored jump at t = {t_jump}")


def riccati_rhs(td: TildeData, b=None):
    At, Rt, Qt = td.At, td.Rt, td.Qt
    bb = np.zeros(td.n) if b is None else np.asarray(b, dtype=float)

    def f(S, c):
        SR = S @ Rt
        dS = -At.T @ S - S @ At + SR @ S - Qt
        dc = -At.T @ c + SR @ c - S @ bb
        return dS, dc

    return f


def sweep_arc(td: TildeData, t_lo: float, t_hi: float, S_T, c_T, step: float, b=None):
    """RK4 backward from ``t_hi`` to ``t_lo``; returns samples in increasing time."""
    f = riccati_rhs(td, b)
    nodes = uniform_nodes(t_lo, t_hi, step)
    k = len(nodes)
    n = td.n
    S_out = np.empty((k, n, n))
    c_out = np.empty((k, n))
    dS_out = np.empty((k, n, n))
    dc_out = np.empty((k, n))
    S = np.array(S_T, dtype=float)
    c = np.array(c_T, dtype=float)
    for i in range(k - 1, -1, -1):
        S_out[i], c_out[i] = S, c
        dS_out[i], dc_out[i] = f(S, c)
        if i == 0:
            break
        h = nodes[i - 1] - nodes[i]
        k1S, k1c = dS_out[i], dc_out[i]
        k2S, k2c = f(S + 0.5 * h * k1S, c + 0.5 * h * k1c)
        k3S, k3c = f(S + 0.5 * h * k2S, c + 0.5 * h * k2c)
        k4S, k4c = f(S + h * k3S, c + h * k3c)
        S = S + (h / 6.0) * (k1S + 2 * k2S + 2 * k3S + k4S)
        c = c + (h / 6.0) * (k1c + 2 * k2c + 2 * k3c + k4c)
        S = 0.5 * (S + S.T)  # symmetrization stabilizer
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(c))):
            raise DivergenceError(
                f"Riccati sweep overflowed near t = {nodes[i - 1]:.6g}", t=float(nodes[i - 1])
            )
    return nodes, S_out, c_out, dS_out, dc_out


def solve_riccati_backward(A, B, cost: QuadraticCost, t_span: Sequence[float], step=None, b=None) -> RiccatiSolution:
    t0, tf = float(t_span[0]), float(t_span[1])
    if tf <= t0:
        raise ValueError("t_span must be increasing")
    step = (tf - t0) / 2000.0 if step is None else float(step)
    if step <= 0.0:
        raise ValueError("step must be positive")
    td = tilde(cost, A, B)
    nodes, S, c, dS, dc = sweep_arc(td, t0, tf, cost.F, cost.r, step, b)
    return RiccatiSolution(nodes, S, c, dS, dc, [], [(0, len(nodes) - 1)])


def reconstruct_segment(td: TildeData, sol: RiccatiSolution, segment: int, x_start, b=None) -> Arc:
    """Closed loop ``x' = Ãx - R̃(Sx + c) + b`` by RK4 on the segment's nodes."""
    i0, i1 = sol.segments[segment]
    ts = sol.t[i0 : i1 + 1]
    bb = np.zeros(td.n) if b is None else np.asarray(b, dtype=float)
    At, Rt = td.At, td.Rt

    def f(t, x):
        S, c = sol.at(t, segment=segment)
        return At @ x - Rt @ (S @ x + c) + bb

    xs = np.empty((len(ts), td.n))
    xs[0] = x_start
    for j in range(len(ts) - 1):
        xs[j + 1] = rk4_step(f, ts[j], xs[j], ts[j + 1] - ts[j])
        if not np.all(np.isfinite(xs[j + 1])):
            raise DivergenceError(f"closed loop diverged near t = {ts[j + 1]:.6g}", t=float(ts[j + 1]))
    ps = np.einsum("kij,kj->ki", sol.S[i0 : i1 + 1], xs) + sol.c[i0 : i1 + 1]
    us = np.array([control_from_costate(td, x, p) for x, p in zip(xs, ps)]).reshape(len(ts), -1)
    return Arc(ts.copy(), xs, p=ps, u=us)


def reconstruct(A, B, cost: QuadraticCost, sol: RiccatiSolution, x0, b=None) -> HybridTrajectory:
    td = tilde(cost, A, B)
    x0 = as_vector(x0, td.n, name="x0")
    arc = reconstruct_segment(td, sol, 0, x0, b)
    return HybridTrajectory([arc], [], float(sol.t[0]), float(sol.t[-1]))


def trajectory_cost(cost: QuadraticCost, traj: HybridTrajectory) -> float:
    """Simpson quadrature of the running cost on every arc plus the terminal cost."""
    total = 0.0
    for arc in traj.arcs:
        if len(arc.t) < 2:
            continue
        u = arc.u if arc.u is not None else np.zeros((len(arc.t), cost.m))
        L = 0.5 * (
            np.einsum("ki,ij,kj->k", arc.x, cost.Q, arc.x)
            + np.einsum("ki,ij,kj->k", u, cost.R, u)
            + 2.0 * np.einsum("ki,ij,kj->k", arc.x, cost.N, u)
        )
        total += float(simpson(L, x=arc.t))
    return total + cost.terminal(traj.x_final)


class HamiltonianFlow:
    """Exact flow of ``x' = Ãx - R̃p + b``, ``p' = -Q̃x - Ã^T p`` on ``(x, p, 1)``."""

    def __init__(self, td: TildeData, b=None):
        n = td.n
        self.n = n
        M = np.zeros((2 * n + 1, 2 * n + 1))
        M[:n, :n] = td.At
        M[:n, n : 2 * n] = -td.Rt
        M[n : 2 * n, :n] = -td.Qt
        M[n : 2 * n, n : 2 * n] = -td.At.T
        if b is not None:
            M[:n, 2 * n] = b
        self.M = M
        self._cache = {}

    def propagator(self, s: float) -> np.ndarray:
        P = self._cache.get(s)
        if P is None:
            P = expm(self.M * s)
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[s] = P
        return P

    def propagate(self, x, p, s: float):
        n = self.n
        z = self.propagator(s) @ np.concatenate([x, p, [1.0]])
        return z[:n], z[n : 2 * n]

    def value_at(self, T: float, S_T, c_T, t: float):
        """``(S(t), c(t))`` of the arc whose terminal data at ``T`` is ``(S_T, c_T)``.

        Every extremal with ``p(T) = S_T x(T) + c_T`` satisfies ``p = S x + c``
        along the flow, so the pair follows from the propagator blocks.
        """
        n = self.n
        E = self.propagator(t - T)
        U = E[: 2 * n, :n] + E[: 2 * n, n : 2 * n] @ S_T
        v = E[: 2 * n, n : 2 * n] @ c_T + E[: 2 * n, 2 * n]
        Ux = U[:n]
        S = np.linalg.solve(Ux.T, U[n:].T).T
        c = v[n:] - S @ v[:n]
        return 0.5 * (S + S.T), c
