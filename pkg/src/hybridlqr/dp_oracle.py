"""First-order grid dynamic programming for hybrid LQR problems.

Forward Euler transitions on a uniform state grid.  A segment that crosses
the guard is cut at the linearly interpolated crossing, reset there, and the
remaining fraction of the step is taken from the post-reset point.  The
value function between nodes is multilinear.  The system is autonomous, so
the transition weights are assembled once into a sparse matrix and every
backward slice is a sparse product followed by a minimum over controls.
"""

from __future__ import annotations

import itertools
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .hybrid_system import Arc, HybridTrajectory, JumpRecord
from .lqr_core import QuadraticCost

log = logging.getLogger(__name__)

MAGIC = b"HLQRVG01"
WEIGHT_FLOOR = 1e-12


def _uniform(axis: np.ndarray, name: str) -> np.ndarray:
    axis = np.asarray(axis, dtype=float).reshape(-1)
    if axis.size < 2:
        raise ValueError(f"{name} needs at least two points")
    d = np.diff(axis)
    if np.any(d <= 0):
        raise ValueError(f"{name} must be strictly increasing")
    if np.max(np.abs(d - d[0])) > 1e-9 * max(abs(d[0]), 1e-300) * axis.size:
        raise ValueError(f"{name} must be uniformly spaced")
    return axis


@dataclass
class GridSpec:
    x_axes: list
    t_grid: np.ndarray
    u_axes: list

    def __post_init__(self):
        self.x_axes = [_uniform(ax, f"x axis {i}") for i, ax in enumerate(self.x_axes)]
        self.t_grid = _uniform(self.t_grid, "t grid")
        self.u_axes = [np.asarray(ax, dtype=float).reshape(-1) for ax in self.u_axes]
        for i, ax in enumerate(self.u_axes):
            if ax.size >= 2:
                _uniform(ax, f"u axis {i}")
            elif ax.size == 0:
                raise ValueError(f"u axis {i} is empty")

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        def axis(spec):
            if isinstance(spec, dict):
                return np.linspace(spec["start"], spec["stop"], int(spec["num"]))
            return np.asarray(spec, dtype=float)

        return cls([axis(a) for a in d["x"]], axis(d["t"]), [axis(a) for a in d.get("u", [])])

    @property
    def shape(self) -> tuple:
        return tuple(ax.size for ax in self.x_axes)

    @property
    def dt(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    @property
    def spacing(self) -> np.ndarray:
        return np.array([ax[1] - ax[0] for ax in self.x_axes])

    @property
    def lower(self) -> np.ndarray:
        return np.array([ax[0] for ax in self.x_axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([ax[-1] for ax in self.x_axes])

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.x_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def controls(self) -> np.ndarray:
        if not self.u_axes:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*self.u_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class ValueGrid:
    grid: GridSpec
    values: np.ndarray  # (len(t), N) with nodes in row-major order of the x axes
    policy: np.ndarray  # (len(t) - 1, N) flat control index
    diagnostics: dict = field(default_factory=dict)

    def slice(self, k: int) -> np.ndarray:
        return self.values[k].reshape(self.grid.shape)

    def value_at(self, k: int, x) -> float:
        return float(interpolate(self.grid, self.values[k], np.asarray(x, dtype=float)[None, :])[0])


# ------------------------------------------------------------ transitions


def _interp_weights(grid: GridSpec, Z: np.ndarray, margin: float = 1.0):
    """Corner indices, multilinear weights and an in-domain mask.

    Points within ``margin`` cells outside the box are clamped onto it; points
    further out are flagged out of domain.
    """
    h = grid.spacing
    lo, hi = grid.lower, grid.upper
    ok = np.all((Z >= lo - margin * h) & (Z <= hi + margin * h), axis=1) & np.all(np.isfinite(Z), axis=1)
    Zc = np.clip(np.nan_to_num(Z), lo, hi)
    shape = grid.shape
    f = (Zc - lo) / h
    base = np.clip(np.floor(f).astype(np.int64), 0, np.array(shape) - 2)
    frac = np.clip(f - base, 0.0, 1.0)
    strides = np.array([int(np.prod(shape[i + 1 :])) for i in range(len(shape))], dtype=np.int64)
    idx, wts = [], []
    for corner in itertools.product((0, 1), repeat=len(shape)):
        corner = np.array(corner)
        idx.append((base + corner) @ strides)
        w = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
        wts.append(w)
    wts = np.stack(wts, axis=1)
    wts[wts < WEIGHT_FLOOR] = 0.0
    return np.stack(idx, axis=1), wts, ok


def interpolate(grid: GridSpec, values: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of flat nodal ``values``; +inf out of domain."""
    idx, wts, ok = _interp_weights(grid, Z)
    live = wts > 0.0
    contrib = np.zeros_like(wts)
    contrib[live] = values[idx[live]] * wts[live]
    out = contrib.sum(axis=1)
    return np.where(ok, out, np.inf)


def _reset_vec(sys, X: np.ndarray):
    """Vectorized reset with beating; rows that stay on the guard are flagged blocked."""
    lam, a = sys.lam, sys.a
    X = X - np.outer(X @ lam - a, lam) / float(lam @ lam)
    Y = X @ sys.C.T + sys.kappa
    depth = np.zeros(len(X), dtype=int)
    blocked = np.zeros(len(X), dtype=bool)
    for it in range(sys.n + 1):
        g = Y @ lam - a
        scale = abs(a) + np.linalg.norm(lam) * np.linalg.norm(Y, axis=1)
        on = np.abs(g) <= 1e-10 * np.maximum(scale, 1e-300)
        if sys.direction:
            drift = (Y @ sys.A.T + sys.b) @ lam
            on &= drift * sys.direction > 0.0
        if not sys.is_affine:
            on &= np.any(Y != 0.0, axis=1)
        if not on.any():
            break
        if it == sys.n:
            blocked = on
            break
        depth[on] += 1
        Y[on] = Y[on] @ sys.C.T + sys.kappa
    return X, Y, depth, blocked


def euler_transition(sys, X: np.ndarray, u: np.ndarray, dt: float):
    """One Euler step from each row of ``X`` under control ``u`` with guard handling.

    ``u`` is a single control vector or one row per state.

    Returns ``(xi, crossed, theta, x_pre, x_post, depth, blocked)``; the last
    five describe the cut segments.
    """
    u = np.asarray(u, dtype=float)
    Bu = (u @ sys.B.T if u.ndim == 2 else sys.B @ u) if sys.m else np.zeros(sys.n)
    drift = X @ sys.A.T + Bu + sys.b
    xi = X + dt * drift
    g0 = X @ sys.lam - sys.a
    g1 = xi @ sys.lam - sys.a
    crossed = np.zeros(len(X), dtype=bool)
    if sys.direction <= 0:
        crossed |= (g0 > 0.0) & (g1 <= 0.0)
    if sys.direction >= 0:
        crossed |= (g0 < 0.0) & (g1 >= 0.0)
    theta = np.ones(len(X))
    n_cross = int(crossed.sum())
    x_pre = x_post = np.zeros((0, sys.n))
    depth = np.zeros(0, dtype=int)
    blocked = np.zeros(len(X), dtype=bool)
    if n_cross:
        theta[crossed] = g0[crossed] / (g0[crossed] - g1[crossed])
        th = theta[crossed][:, None]
        xc = X[crossed] + th * (xi[crossed] - X[crossed])
        x_pre, x_post, depth, blk = _reset_vec(sys, xc)
        rest = (1.0 - th) * dt
        Bc = Bu[crossed] if np.ndim(Bu) == 2 else Bu
        xi[crossed] = x_post + rest * (x_post @ sys.A.T + Bc + sys.b)
        blocked[crossed] = blk
    return xi, crossed, theta, x_pre, x_post, depth, blocked


def _running(cost: QuadraticCost, X: np.ndarray, u: np.ndarray) -> np.ndarray:
    xq = np.einsum("ki,ij,kj->k", X, cost.Q, X)
    if u.size:
        return 0.5 * (xq + u @ cost.R @ u + 2.0 * (X @ cost.N) @ u)
    return 0.5 * xq


def terminal_values(cost: QuadraticCost, X: np.ndarray) -> np.ndarray:
    return 0.5 * np.einsum("ki,ij,kj->k", X, cost.F, X) + X @ cost.r


def dp_solve(sys, cost: QuadraticCost, grid: GridSpec) -> ValueGrid:
    """Backward induction ``V_k(x) = min_u [L(x, u) dt + V_{k+1}(xi(x, u))]``."""
    if len(grid.x_axes) != sys.n:
        raise ValueError(f"grid has {len(grid.x_axes)} state axes, system has n = {sys.n}")
    if len(grid.u_axes) != sys.m:
        raise ValueError(f"grid has {len(grid.u_axes)} control axes, system has m = {sys.m}")
    X = grid.nodes()
    U = grid.controls()
    N, NU = len(X), len(U)
    dt = grid.dt
    L = np.empty((N, NU))
    rows, cols, vals = [], [], []
    for j, u in enumerate(U):
        xi, _, _, _, _, _, blocked = euler_transition(sys, X, u, dt)
        idx, wts, ok = _interp_weights(grid, xi)
        ok &= ~blocked
        L[:, j] = np.where(ok, _running(cost, X, u) * dt, np.inf)
        r = np.arange(N) * NU + j
        rows.append(np.repeat(r, idx.shape[1]))
        cols.append(idx.ravel())
        vals.append(wts.ravel())
    W = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N * NU, N)
    )
    W.eliminate_zeros()

    NT = grid.t_grid.size
    V = np.empty((NT, N))
    policy = np.empty((NT - 1, N), dtype=np.int32)
    V[-1] = terminal_values(cost, X)
    for k in range(NT - 2, -1, -1):
        Qk = (W @ V[k + 1]).reshape(N, NU) + L
        policy[k] = np.argmin(Qk, axis=1)
        V[k] = Qk[np.arange(N), policy[k]]
    unreachable = int(np.sum(~np.isfinite(V[0])))
    if unreachable:
        log.info("%d grid nodes have no admissible transition sequence", unreachable)
    return ValueGrid(grid, V, policy, {"nonfinite_nodes_t0": unreachable, "controls": NU, "nodes": N})


def bellman_residual(sys, cost: QuadraticCost, vg: ValueGrid, k: int, node_index) -> np.ndarray:
    """Recompute the minimized right-hand side at selected nodes of slice ``k``.

    Uses direct interpolation rather than the assembled transition matrix.
    """
    grid = vg.grid
    X = grid.nodes()[np.asarray(node_index)]
    best = np.full(len(X), np.inf)
    for u in grid.controls():
        xi, _, _, _, _, _, blocked = euler_transition(sys, X, u, grid.dt)
        q = _running(cost, X, u) * grid.dt + interpolate(grid, vg.values[k + 1], xi)
        q[blocked] = np.inf
        best = np.minimum(best, q)
    ref = vg.values[k][np.asarray(node_index)]
    gap = np.zeros(len(X))
    finite = np.isfinite(best) | np.isfinite(ref)
    gap[finite] = np.abs(best[finite] - ref[finite])
    return gap


@dataclass
class RolloutResult:
    trajectory: HybridTrajectory
    cost: float
    jump_count: int
    truncated: bool


def dp_rollout(sys, cost: QuadraticCost, vg: ValueGrid, x0, mode: str = "lookahead") -> RolloutResult:
    """Greedy forward rollout with the same Euler/guard stepping as the solve.

    ``mode="lookahead"`` minimizes ``L dt + V_{k+1}`` at the exact current
    state; ``mode="policy"`` applies the stored control of the nearest node.
    """
    grid = vg.grid
    x = np.asarray(x0, dtype=float).reshape(sys.n)
    if np.any(x < grid.lower) or np.any(x > grid.upper):
        raise ValueError("x0 lies outside the grid domain")
    U = grid.controls()
    dt = grid.dt
    ts = grid.t_grid
    arcs, jumps = [], []
    cur_t, cur_x, cur_u = [float(ts[0])], [x.copy()], []
    total = 0.0
    truncated = False
    for k in range(len(ts) - 1):
        X = np.repeat(x[None, :], len(U), axis=0)
        if mode == "policy":
            node = np.clip(np.rint((x - grid.lower) / grid.spacing).astype(int), 0, np.array(grid.shape) - 1)
            j = int(vg.policy[k][np.ravel_multi_index(tuple(node), grid.shape)])
        else:
            xi, _, _, _, _, _, blocked = euler_transition(sys, X, U, dt)
            run = np.array([_running(cost, X[:1], u)[0] for u in U]) * dt
            q = np.where(blocked, np.inf, run + interpolate(grid, vg.values[k + 1], xi))
            j = int(np.argmin(q))
        u = U[j]
        xi, crossed, theta, x_pre, x_post, depth, blocked = euler_transition(sys, x[None, :], u, dt)
        total += float(_running(cost, x[None, :], u)[0]) * dt
        cur_u.append(u.copy())
        if crossed[0]:
            t_hit = float(ts[k] + theta[0] * dt)
            cur_t.append(t_hit)
            cur_x.append(x_pre[0])
            cur_u.append(u.copy())
            arcs.append(Arc(np.array(cur_t), np.array(cur_x), u=np.array(cur_u).reshape(len(cur_t), -1)))
            jumps.append(JumpRecord(t_hit, x_pre[0], x_post[0], beating_depth=int(depth[0])))
            cur_t, cur_x, cur_u = [t_hit], [x_post[0]], [u.copy()]
        x = xi[0]
        cur_t.append(float(ts[k + 1]))
        cur_x.append(x.copy())
        h = grid.spacing
        if not np.all(np.isfinite(x)) or np.any(x < grid.lower - h) or np.any(x > grid.upper + h):
            truncated = True
            break
    cur_u.append(cur_u[-1] if cur_u else np.zeros(sys.m))
    arcs.append(Arc(np.array(cur_t), np.array(cur_x), u=np.array(cur_u).reshape(len(cur_t), -1)))
    total += float(terminal_values(cost, x[None, :])[0])
    traj = HybridTrajectory(arcs, jumps, float(ts[0]), float(cur_t[-1]), truncated=truncated)
    return RolloutResult(traj, total, len(jumps), truncated)


# ---------------------------------------------------------------- storage


def save_value_grid(vg: ValueGrid, path) -> None:
    """Binary layout: magic, int64 header (n, NT, NU, m, axis lengths), then doubles.

    Doubles follow in order: t grid, each x axis, control table (NU x m,
    row-major), values (NT x N, row-major), policy (NT-1 x N) as doubles.
    """
    grid = vg.grid
    U = grid.controls()
    header = [len(grid.x_axes), grid.t_grid.size, len(U), U.shape[1], *grid.shape]
    header += [ax.size for ax in grid.u_axes]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(f"<{len(header)}q", *header))
        for arr in (grid.t_grid, *grid.x_axes, *grid.u_axes, vg.values, vg.policy.astype(np.float64)):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_value_grid(path) -> ValueGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError("not a value-grid file")
    pos = 8
    n, NT, NU, m = struct.unpack_from("<4q", blob, pos)
    pos += 32
    shape = struct.unpack_from(f"<{n}q", blob, pos)
    pos += 8 * n
    u_sizes = struct.unpack_from(f"<{m}q", blob, pos)
    pos += 8 * m

    def take(count):
        nonlocal pos
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(float)
        pos += 8 * count
        return arr

    t_grid = take(NT)
    x_axes = [take(s) for s in shape]
    u_axes = [take(s) for s in u_sizes]
    N = int(np.prod(shape))
    values = take(NT * N).reshape(NT, N)
    policy = take((NT - 1) * N).reshape(NT - 1, N).astype(np.int32)
    return ValueGrid(GridSpec(x_axes, t_grid, u_axes), values, policy)


def section6_grid(n_x: int = 150, n_t: int = 150, n_u: int = 150, x_range=(0.01, 2.5), u_range=(-10.0, 0.0), tf: float = 2.0) -> GridSpec:
    """Uniform grids of the planar example: square state box, nonpositive controls."""
    ax = np.linspace(*x_range, n_x)
    return GridSpec([ax, ax.copy()], np.linspace(0.0, tf, n_t), [np.linspace(*u_range, n_u)])
