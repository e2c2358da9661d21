"""Canned scenarios: the planar rotating-saddle example, a mechanical impact
system with weakly actuated resets, and the two Zeno models.

Every preset serializes to the same JSON document the command line reads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hybrid_system import AffineHybridSystem, LinearHybridSystem, system_from_dict, system_to_dict
from .lqr_core import QuadraticCost

CONTRACTING_X0 = (0.4883, 0.3903)
EXPANDING_X0 = (0.4925, 0.3640)
FIRST_ORDER_ZENO = {"a": 1.0, "b": 2.0, "c": 0.5, "x0": (1.0, 1.0)}
SECOND_ORDER_ZENO = {"g": 1.0, "e": 0.5, "x0": (1.0, 0.0)}


@dataclass
class ScenarioPreset:
    name: str
    system: object
    cost: Optional[QuadraticCost]
    t_span: tuple
    x0: np.ndarray
    expected: dict = field(default_factory=dict)
    grid: Optional[dict] = None  # default dynamic-programming grid

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "system": system_to_dict(self.system),
            "cost": None if self.cost is None else self.cost.to_dict(),
            "t_span": [float(t) for t in self.t_span],
            "x0": [float(v) for v in self.x0],
            "expected": self.expected,
        }
        if self.grid is not None:
            d["grid"] = self.grid
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioPreset":
        system = system_from_dict(d["system"])
        cost = None
        if d.get("cost") is not None:
            cost = QuadraticCost.from_dict(d["cost"], system.n, system.m)
        return cls(
            name=d["name"],
            system=system,
            cost=cost,
            t_span=tuple(float(t) for t in d["t_span"]),
            x0=np.array(d["x0"], dtype=float),
            expected=d.get("expected", {}),
            grid=d.get("grid"),
        )


def section6_matrices(a: float):
    A = np.array([[1.0, 1.0], [-1.0, 1.0]])
    B = np.array([[0.0], [1.0]])
    C = np.array([[0.0, -1.0], [a, 0.0]])
    lam = np.array([0.0, 1.0])
    return A, B, C, lam


def section6_coefficients(a: float, x: float, px: float, py: float):
    """Closed-form ``(alpha, beta, gamma)`` at the guard point ``(x, 0)`` with ``p+ = (px, py)``."""
    return -0.5, -x + px, (1.0 - a) * x * px + 0.5 * (py * py - px * px)


def section6_discriminant_matrix(a: float) -> np.ndarray:
    """Discriminant as a form in ``(x, p_x, p_y)``."""
    return np.array([[1.0, -a, 0.0], [-a, 0.0, 0.0], [0.0, 0.0, 1.0]])


def section6_grid_config(n_x: int, n_t: int, n_u: int) -> dict:
    """Grid document: square box ``[0.01, 2.5]^2``, horizon ``[0, 2]``, controls in ``[-10, 0]``."""
    axis = {"start": 0.01, "stop": 2.5, "num": n_x}
    return {
        "x": [axis, dict(axis)],
        "t": {"start": 0.0, "stop": 2.0, "num": n_t},
        "u": [{"start": -10.0, "stop": 0.0, "num": n_u}],
    }


def section6(a: float, x0=None, name: Optional[str] = None) -> ScenarioPreset:
    """Rotating saddle ``A = [[1, 1], [-1, 1]]`` with resets on the x-axis.

    Resets fire only when ``y`` falls through zero, which keeps the motion in
    the first quadrant.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    A, B, C, lam = section6_matrices(a)
    system = LinearHybridSystem(A, B, C, lam, direction=-1)
    cost = QuadraticCost.of(2, 1, Q=np.zeros((2, 2)), R=[[1.0]], F=np.diag([1.0, a**-2]))
    expected = {
        "alpha": -0.5,
        "beta": "-x + p_x",
        "gamma": "(1 - a) x p_x + (p_y^2 - p_x^2) / 2",
        "discriminant_matrix": section6_discriminant_matrix(a).tolist(),
        "trivially_blocking": True,
    }
    grid = None
    if x0 is None:
        if a == 0.75:
            x0, name, expected["jump_count"] = CONTRACTING_X0, name or "section6-contracting", 2
            grid = section6_grid_config(150, 150, 150)
        elif a == 1.25:
            x0, name, expected["jump_count"] = EXPANDING_X0, name or "section6-expanding", 3
            grid = section6_grid_config(150, 300, 250)
        else:
            x0 = (0.5, 0.5)
    return ScenarioPreset(
        name or f"section6-a{a:g}", system, cost, (0.0, 2.0), np.array(x0, dtype=float), expected, grid
    )


def section6_uncontrolled(a: float = 1.5) -> ScenarioPreset:
    preset = section6(a, x0=(0.5, 0.5), name="section6-uncontrolled")
    preset.expected["first_jump_time"] = math.pi / 4
    return preset


def mechanical(V, K, Btilde, lambda_tilde, restitution: float = 0.5, x0=None) -> ScenarioPreset:
    """``q' = v, v' = Vq + Kv + B~u`` with impacts at ``lambda~ . q = 0``.

    The reset keeps ``q`` and reflects the normal velocity with the given
    restitution coefficient, ``v+ = (I - (1 + e) P) v-`` where ``P`` projects
    onto ``lambda~``.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    d = V.shape[0]
    K = np.atleast_2d(np.asarray(K, dtype=float)).reshape(d, d)
    Bt = np.asarray(Btilde, dtype=float).reshape(d, -1)
    lt = np.asarray(lambda_tilde, dtype=float).reshape(d)
    if not 0 < restitution <= 1:
        raise ValueError("restitution must lie in (0, 1]")
    A = np.block([[np.zeros((d, d)), np.eye(d)], [V, K]])
    B = np.vstack([np.zeros((d, Bt.shape[1])), Bt])
    P = np.outer(lt, lt) / float(lt @ lt)
    C = np.block([[np.eye(d), np.zeros((d, d))], [np.zeros((d, d)), np.eye(d) - (1.0 + restitution) * P]])
    lam = np.concatenate([lt, np.zeros(d)])
    system = LinearHybridSystem(A, B, C, lam, direction=-1)
    m = B.shape[1]
    cost = QuadraticCost.of(2 * d, m)
    if x0 is None:
        x0 = np.concatenate([lt / np.linalg.norm(lt), np.zeros(d)])
    return ScenarioPreset(
        f"mechanical-{d}dof", system, cost, (0.0, 2.0), np.asarray(x0, dtype=float),
        {"war": True, "alpha": 0.0, "beta": "lambda^T A x"},
    )


def zeno_presets(a=None, b=None, c=None, g=None, e=None):
    """``(first_order, second_order)`` Zeno presets with the shared defaults."""
    a = FIRST_ORDER_ZENO["a"] if a is None else a
    b = FIRST_ORDER_ZENO["b"] if b is None else b
    c = FIRST_ORDER_ZENO["c"] if c is None else c
    g = SECOND_ORDER_ZENO["g"] if g is None else g
    e = SECOND_ORDER_ZENO["e"] if e is None else e
    fo_base = LinearHybridSystem(
        np.zeros((2, 2)), np.zeros((2, 0)), [[0.0, 0.0], [c, 0.0]], [0.0, 1.0],
        direction=-1, allow_singular_C=True,
    )
    fo = ScenarioPreset(
        "zeno-first-order",
        AffineHybridSystem(fo_base, b=[a, -b], kappa=[0.0, 0.0], a=0.0),
        None, (0.0, 2.0), np.array(FIRST_ORDER_ZENO["x0"]),
        {"params": {"a": a, "b": b, "c": c}, "simulation_only": True},
    )
    so_base = LinearHybridSystem(
        [[0.0, 1.0], [0.0, 0.0]], np.zeros((2, 0)), np.diag([1.0, -e]), [1.0, 0.0], direction=-1,
    )
    so = ScenarioPreset(
        "zeno-second-order",
        AffineHybridSystem(so_base, b=[0.0, -g], kappa=[0.0, 0.0], a=0.0),
        None, (0.0, 10.0), np.array(SECOND_ORDER_ZENO["x0"]),
        {"params": {"g": g, "e": e}},
    )
    return fo, so


def _registry():
    return {
        "section6-contracting": lambda: section6(0.75),
        "section6-expanding": lambda: section6(1.25),
        "section6-uncontrolled": section6_uncontrolled,
        "mechanical-1dof": lambda: mechanical([[-1.0]], [[0.0]], [[1.0]], [1.0]),
        "zeno-first-order": lambda: zeno_presets()[0],
        "zeno-second-order": lambda: zeno_presets()[1],
    }


PRESETS = _registry()


def get_preset(name: str) -> ScenarioPreset:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
