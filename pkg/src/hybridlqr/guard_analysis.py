"""Beating, blocking and invariant-guard subspaces of a linear reset.

The k-th beating set is the common kernel of the covectors
``lam^T C^{-j}`` for ``j = 0..k``.  All subspace decisions are made with
singular values against a relative threshold, and subspaces are returned as
orthonormal column bases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ._numerics import (
    RANK_RTOL,
    as_matrix,
    as_vector,
    contained,
    normalized_rows,
    null_space,
    numerical_rank,
)
from .errors import SingularJumpMap
from .hybrid_system import jump_map_invertible


@dataclass
class GuardFlag:
    """Nested beating sets ``Sigma_0 ⊇ Sigma_1 ⊇ ...`` up to stabilization."""

    basis_stack: list  # covectors lam^T C^{-j}, j = 0..k_stabilize + 1
    dims: list  # dim Sigma_j, j = 0..k_stabilize + 1
    bases: list  # orthonormal bases of Sigma_j
    k_stabilize: int
    blocking_dim: int
    trivially_blocking: bool

    @property
    def blocking_basis(self) -> np.ndarray:
        return self.bases[self.k_stabilize]

    def depth_of(self, x, rtol: float = 1e-8) -> int:
        """Largest k with ``x`` in ``Sigma_k`` (-1 when off the guard).

        ``Sigma_k`` collects images of guard points: a pre-reset state ``x-``
        that needs ``k`` extra resets has ``C^k x-`` in ``Sigma_k``.
        """
        x = np.asarray(x, dtype=float)
        scale = max(np.linalg.norm(x), 1e-300)
        depth = -1
        for k, row in enumerate(self.basis_stack):
            if abs(row @ x) > rtol * scale * np.linalg.norm(row):
                break
            depth = k
        return depth

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "k_stabilize": self.k_stabilize,
            "blocking_dim": self.blocking_dim,
            "trivially_blocking": self.trivially_blocking,
            "covectors": [row.tolist() for row in self.basis_stack],
        }


@dataclass
class InvariantGuardReport:
    sigma_A_basis: np.ndarray
    sigma_k_A_bases: list = field(default_factory=list)
    dims: list = field(default_factory=list)
    equality_flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sigma_A_dim": int(self.sigma_A_basis.shape[1]),
            "sigma_A_basis": self.sigma_A_basis.T.tolist(),
            "sigma_k_A_dims": list(self.dims),
            "equality_flags": list(self.equality_flags),
        }


def _factor(C: np.ndarray):
    if not jump_map_invertible(C):
        raise SingularJumpMap("beating analysis requires an invertible jump matrix")
    return lu_factor(C)


def inverse_power_covectors(C, lam, count: int) -> list:
    """``[lam^T C^0, lam^T C^-1, ..., lam^T C^-(count-1)]`` by repeated solves."""
    C = as_matrix(C, name="C")
    lam = as_vector(lam, C.shape[0], name="lambda")
    lu = _factor(C)
    rows = [lam.copy()]
    for _ in range(count - 1):
        # row r C^{-1} solves C^T y = r^T
        rows.append(lu_solve(lu, rows[-1], trans=1))
    return rows


def beating_flag(C, lam, rank_tol: float = RANK_RTOL) -> GuardFlag:
    C = as_matrix(C, name="C")
    n = C.shape[0]
    lam = as_vector(lam, n, name="lambda")
    if not np.any(lam):
        raise ValueError("lambda must be nonzero")
    lu = _factor(C)
    rows = [lam.copy()]
    dims = [n - numerical_rank(normalized_rows(rows), rank_tol)]
    bases = [null_space(normalized_rows(rows), n, rank_tol)]
    k_stabilize = None
    while True:
        rows.append(lu_solve(lu, rows[-1], trans=1))
        stack = normalized_rows(rows)
        dims.append(n - numerical_rank(stack, rank_tol))
        bases.append(null_space(stack, n, rank_tol))
        k = len(dims) - 1
        if k_stabilize is None and dims[k] == dims[k - 1]:
            k_stabilize = k - 1
            break
        if k > n + 1:  # rank can grow at most n times
            k_stabilize = k
            break
    blocking_dim = dims[k_stabilize]
    return GuardFlag(
        basis_stack=rows,
        dims=dims,
        bases=bases,
        k_stabilize=k_stabilize,
        blocking_dim=blocking_dim,
        trivially_blocking=blocking_dim == 0,
    )


def is_trivially_blocking(C, lam, rank_tol: float = RANK_RTOL) -> bool:
    """Kalman rank test on the pair ``((C^T)^{-1}, lam)``."""
    C = as_matrix(C, name="C")
    n = C.shape[0]
    lam = as_vector(lam, n, name="lambda")
    if not jump_map_invertible(C):
        raise SingularJumpMap("trivial-blocking test requires an invertible jump matrix")
    CinvT = np.linalg.solve(C.T, np.eye(n))
    cols = [lam]
    for _ in range(n - 1):
        cols.append(CinvT @ cols[-1])
    ctrb = normalized_rows(cols).T
    return numerical_rank(ctrb, rank_tol) == n


def invariant_guard_report(A, C, lam, rank_tol: float = RANK_RTOL) -> InvariantGuardReport:
    A = as_matrix(A, name="A")
    n = A.shape[0]
    lam = as_vector(lam, n, name="lambda")
    lamA = lam @ A
    sigma_A = null_space(normalized_rows([lam, lamA]), n, rank_tol)
    flag = beating_flag(C, lam, rank_tol)
    report = InvariantGuardReport(sigma_A)
    for k in range(flag.k_stabilize + 1):
        rows = normalized_rows(flag.basis_stack[: k + 1] + [lamA])
        basis = null_space(rows, n, rank_tol)
        report.sigma_k_A_bases.append(basis)
        report.dims.append(int(basis.shape[1]))
        report.equality_flags.append(basis.shape[1] == flag.dims[k])
    return report


def check_containment(report: InvariantGuardReport, flag: GuardFlag, tol: float = 1e-8) -> bool:
    """``Sigma_k^A`` lies in both ``Sigma_k`` and ``Sigma^A`` for every stored k."""
    return all(
        contained(basis, flag.bases[k], tol) and contained(basis, report.sigma_A_basis, tol)
        for k, basis in enumerate(report.sigma_k_A_bases)
    )


def has_war(B, lam, rank_tol: float = RANK_RTOL) -> bool:
    """Weakly actuated resets: ``lam^T B = 0`` up to a relative tolerance."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    B = np.asarray(B, dtype=float)
    if B.size == 0:
        return True
    B = B.reshape(lam.size, -1)
    lhs = np.max(np.abs(lam @ B))
    return bool(lhs <= rank_tol * np.linalg.norm(lam) * np.linalg.norm(B, 2))
