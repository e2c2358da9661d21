"""Random instances and independent reference computations shared by the tests."""

import numpy as np
from scipy.linalg import null_space, orth

from hybridlqr import LinearHybridSystem, is_trivially_blocking
from hybridlqr.lqr_core import QuadraticCost


def random_cost(rng, n, m, cross=True):
    G = rng.normal(size=(n, n))
    Q = 0.5 * G @ G.T / n
    H = rng.normal(size=(m, m))
    R = H @ H.T / max(m, 1) + np.eye(m)
    N = 0.1 * rng.normal(size=(n, m)) if cross else np.zeros((n, m))
    # keep the joint weight PSD so Q - N R^-1 N^T stays meaningful
    Q = Q + N @ np.linalg.solve(R, N.T)
    return QuadraticCost.of(n, m, Q=Q, R=R, N=N, F=np.eye(n))


def random_invertible(rng, n, lo=0.6, hi=1.4):
    U, _ = np.linalg.qr(rng.normal(size=(n, n)))
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return U @ np.diag(rng.uniform(lo, hi, n)) @ V


def random_tb_system(rng, n, m=1, spin=3.0, direction=-1):
    """Trivially blocking system whose drift rotates enough to hit the guard often."""
    while True:
        K = rng.normal(size=(n, n))
        A = spin * 0.5 * (K - K.T) + 0.3 * rng.normal(size=(n, n))
        C = random_invertible(rng, n)
        lam = rng.normal(size=n)
        if is_trivially_blocking(C, lam):
            return LinearHybridSystem(A, rng.normal(size=(n, m)), C, lam, direction=direction)


def on_guard_point(rng, lam, a=0.0):
    x = rng.normal(size=lam.size)
    return x - lam * ((lam @ x - a) / (lam @ lam))


def hamiltonian_min(A, B, cost, x, p, b=None):
    """``min_u L(x, u) + p.(Ax + Bu + b)`` by solving the stationarity condition directly."""
    b = np.zeros(len(x)) if b is None else b
    u = -np.linalg.solve(cost.R, B.T @ p + cost.N.T @ x)
    L = 0.5 * x @ cost.Q @ x + 0.5 * u @ cost.R @ u + x @ cost.N @ u
    return float(L + p @ (A @ x + B @ u + b)), u


def velocity(A, B, cost, x, p, b=None):
    _, u = hamiltonian_min(A, B, cost, x, p, b)
    b = np.zeros(len(x)) if b is None else b
    return A @ x + B @ u + b


def blocking_dims_direct(C, lam, tol=1e-9):
    """``dim Sigma_k`` from ``Sigma_k = Sigma ∩ C Sigma_{k-1}`` by explicit subspace intersection."""
    n = C.shape[0]
    sigma = null_space(lam[None, :], rcond=tol)
    current = sigma
    dims = [sigma.shape[1]]
    for _ in range(n + 1):
        if current.shape[1] == 0:
            dims.append(0)
            break
        image = orth(C @ current, rcond=tol)
        # intersection of span(sigma) and span(image)
        M = np.hstack([sigma, -image])
        coeffs = null_space(M, rcond=tol)
        inter = orth(sigma @ coeffs[: sigma.shape[1]], rcond=tol) if coeffs.size else np.zeros((n, 0))
        dims.append(inter.shape[1])
        if inter.shape[1] == current.shape[1]:
            break
        current = inter
    return dims
