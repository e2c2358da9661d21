"""Small numerical helpers shared by the solver modules."""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

RANK_RTOL = 1e-10


def as_matrix(value, shape=None, name="matrix") -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1 and shape is not None and len(shape) == 2:
        # a bare list is a column when the expected shape has one column
        if shape[1] == 1 or (shape[1] is None and shape[0] == arr.size):
            arr = arr.reshape(-1, 1)
        elif shape[0] == 1:
            arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if shape is not None:
        for got, want in zip(arr.shape, shape):
            if want is not None and got != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def as_vector(value, n=None, name="vector") -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(-1)
    if n is not None and arr.size != n:
        raise ValueError(f"{name} has length {arr.size}, expected {n}")
    return arr


def frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Rank from singular values, relative to the largest one."""
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def null_space(M: np.ndarray, n: int, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of ker M, with M given as stacked rows."""
    M = np.asarray(M, dtype=float).reshape(-1, n)
    if M.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    rank = 0 if s[0] == 0.0 else int(np.sum(s > rtol * s[0]))
    return vt[rank:].T.copy()


def normalized_rows(rows) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return rows / norms


def contained(basis_small: np.ndarray, basis_big: np.ndarray, tol: float = 1e-8) -> bool:
    """True when span(basis_small) lies inside span(basis_big) (orthonormal columns)."""
    if basis_small.shape[1] == 0:
        return True
    if basis_big.shape[1] == 0:
        return False
    resid = basis_small - basis_big @ (basis_big.T @ basis_small)
    return float(np.max(np.abs(resid))) <= tol


def augmented_expm(A: np.ndarray, b: np.ndarray | None, s: float) -> np.ndarray:
    """Propagator of x' = Ax + b as an (n+1)x(n+1) matrix acting on (x, 1)."""
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    if b is not None:
        M[:n, n] = b
    return expm(M * s)


def rk4_step(f, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def hermite(t0, y0, d0, t1, y1, d1, t):
    """Cubic Hermite interpolation on [t0, t1] from values and derivatives."""
    h = t1 - t0
    if h == 0.0:
        return y0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


def uniform_nodes(t_lo: float, t_hi: float, step: float) -> np.ndarray:
    """Uniform nodes covering [t_lo, t_hi] with spacing at most ``step``; endpoints exact."""
    span = t_hi - t_lo
    if span <= 0.0:
        return np.array([t_lo])
    count = max(1, int(np.ceil(span / step - 1e-9)))
    nodes = t_lo + span * np.arange(count + 1) / count
    nodes[-1] = t_hi
    return nodes
