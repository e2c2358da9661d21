"""Acceptance suite: one test group per criterion, summarized as PASS/FAIL lines.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary lists every
criterion with the measured quantities.
"""

import math
import time
import warnings

import numpy as np
import pytest

from hybridlqr import (
    AffineHybridSystem,
    JumpSchedule,
    SpatialOptions,
    beating_flag,
    is_trivially_blocking,
    reconstruct_temporal,
    simulate,
    solve_riccati_backward,
    solve_spatial,
    solve_temporal_costate,
)
from hybridlqr.cli import run
from hybridlqr.dp_oracle import GridSpec, dp_rollout, dp_solve
from hybridlqr.errors import NonConvergence, SuspectedZeno
from hybridlqr.lqr_core import HamiltonianFlow, QuadraticCost, reconstruct, tilde, trajectory_cost
from hybridlqr.presets import get_preset, mechanical, section6, zeno_presets
from hybridlqr.spatial_hlqr import (
    discriminant_form,
    multiplier_coefficients,
    reduced_coefficients,
)
from hybridlqr.zeno_models import estimate_zeno_time, zeno_time_first_order, zeno_time_second_order

from helpers import (
    blocking_dims_direct,
    hamiltonian_min,
    on_guard_point,
    random_cost,
    random_invertible,
    random_tb_system,
    velocity,
)

MP_BUDGET = 5.0
DP_BUDGET = 60.0
COST_GAP = 0.10
H_TOL = 1e-8


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def _reproduction(a):
    preset = section6(a)
    mp, t_mp = _timed(solve_spatial, preset.system, preset.cost, preset.x0, preset.t_span, SpatialOptions())
    t0 = time.perf_counter()
    vg = dp_solve(preset.system, preset.cost, GridSpec.from_dict(preset.grid))
    roll = dp_rollout(preset.system, preset.cost, vg, preset.x0)
    t_dp = time.perf_counter() - t0
    return {"preset": preset, "mp": mp, "t_mp": t_mp, "roll": roll, "t_dp": t_dp,
            "gap": abs(roll.cost - mp.cost) / abs(mp.cost)}


@pytest.fixture(scope="module")
def contracting():
    return _reproduction(0.75)


@pytest.fixture(scope="module")
def expanding():
    return _reproduction(1.25)


def _check_reproduction(res, jumps, detail):
    mp, roll = res["mp"], res["roll"]
    detail(
        f"MP {mp.jump_count} jumps cost {mp.cost:.6f} in {res['t_mp']:.2f}s; "
        f"DP {roll.jump_count} jumps cost {roll.cost:.6f} in {res['t_dp']:.1f}s; gap {res['gap']:.3f}"
    )
    assert mp.converged
    assert mp.jump_count == jumps
    assert roll.jump_count == jumps
    assert res["gap"] <= COST_GAP


# ---------------------------------------------------------------- 1, 2


@pytest.mark.criterion(1, "contracting reproduction (a = 3/4)")
def test_criterion_01_contracting(contracting, detail):
    _check_reproduction(contracting, 2, detail)


@pytest.mark.criterion(1, "contracting reproduction (a = 3/4)")
def test_criterion_01_runtime(contracting):
    assert contracting["t_mp"] < MP_BUDGET
    assert contracting["t_dp"] < DP_BUDGET


@pytest.mark.criterion(2, "expanding reproduction (a = 5/4)")
def test_criterion_02_expanding(expanding, detail):
    _check_reproduction(expanding, 3, detail)


@pytest.mark.criterion(2, "expanding reproduction (a = 5/4)")
def test_criterion_02_runtime(expanding):
    assert expanding["t_mp"] < MP_BUDGET
    assert expanding["t_dp"] < DP_BUDGET


# ---------------------------------------------------------------- 3


def _jump_gaps(sys, cost, traj):
    out = []
    for j in traj.jumps:
        H_minus, _ = hamiltonian_min(sys.A, sys.B, cost, j.x_pre, j.p_pre)
        H_plus, _ = hamiltonian_min(sys.A, sys.B, cost, j.x_post, j.p_post)
        out.append(abs(H_plus - H_minus) / (1.0 + abs(H_minus)))
    return out


@pytest.mark.criterion(3, "Hamiltonian conservation at spatial jumps")
def test_criterion_03_presets(contracting, expanding, detail):
    gaps = []
    for res in (contracting, expanding):
        p = res["preset"]
        gaps += _jump_gaps(p.system, p.cost, res["mp"].trajectory)
    detail(f"presets: {len(gaps)} jumps, worst relative gap {max(gaps):.1e}")
    assert len(gaps) == 5
    assert max(gaps) <= H_TOL


@pytest.mark.criterion(3, "Hamiltonian conservation at spatial jumps")
def test_criterion_03_random_systems(detail):
    rng = np.random.default_rng(3)
    gaps, solved, failed = [], 0, 0
    for _ in range(50):
        n = int(rng.integers(2, 5))
        sys = random_tb_system(rng, n)
        cost = QuadraticCost.of(n, 1)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = solve_spatial(sys, cost, rng.normal(size=n), (0.0, 1.0), SpatialOptions())
        except NonConvergence:
            failed += 1
            continue
        solved += 1
        gaps += _jump_gaps(sys, cost, rep.trajectory)
    detail(f"random: {solved} solved, {failed} unsolved, {len(gaps)} accepted jumps, worst {max(gaps):.1e}")
    # the property is about accepted jumps; make sure there are enough of them
    assert len(gaps) >= 10
    assert max(gaps) <= H_TOL


# ---------------------------------------------------------------- 4


def _two_root_instances(rng, count):
    found = 0
    while found < count:
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 3))
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, m))
        C = random_invertible(rng, n)
        lam = rng.normal(size=n)
        cost = random_cost(rng, n, m)
        x = on_guard_point(rng, lam)
        p = rng.normal(size=n)
        td = tilde(cost, A, B)
        quad = multiplier_coefficients(td, C, lam, x, p)
        if quad.regime != "two_roots":
            continue
        found += 1
        yield A, B, C, lam, cost, td, x, p, quad


@pytest.mark.criterion(4, "two extremal impacts: opposite normal speeds, |speed| = sqrt(D)")
def test_criterion_04_normal_velocities(detail):
    rng = np.random.default_rng(4)
    worst_sum = worst_abs = worst_form = 0.0
    for A, B, C, lam, cost, td, x, p, quad in _two_root_instances(rng, 200):
        speeds = [float(lam @ velocity(A, B, cost, x, C.T @ p + eps * lam)) for eps in quad.roots]
        root_D = math.sqrt(quad.discriminant)
        worst_sum = max(worst_sum, abs(speeds[0] + speeds[1]))
        worst_abs = max(worst_abs, *(abs(abs(s) - root_D) for s in speeds))
        D_form = discriminant_form(td, C, lam)(x, p)
        worst_form = max(worst_form, abs(D_form - quad.discriminant) / (1.0 + quad.discriminant))
    detail(f"max |v1 + v2| = {worst_sum:.1e}, max ||v| - sqrt(D)| = {worst_abs:.1e}")
    assert worst_sum <= 1e-10
    assert worst_abs <= 1e-9
    assert worst_form <= 1e-10


# ---------------------------------------------------------------- 5


def _degenerate_pair(rng, n):
    """``C`` with an invariant block that ``lam`` cannot see, so ``Sigma_inf != {0}``."""
    k = int(rng.integers(1, n))
    T = random_invertible(rng, n, 0.5, 2.0)
    D = np.zeros((n, n))
    D[:k, :k] = random_invertible(rng, k)
    D[k:, k:] = random_invertible(rng, n - k)
    mu = np.zeros(n)
    mu[:k] = rng.normal(size=k)
    C = T @ D @ np.linalg.inv(T)
    lam = np.linalg.solve(T.T, mu)
    return C, lam


@pytest.mark.criterion(5, "trivially-blocking rank test vs direct beating-set iteration")
def test_criterion_05_rank_vs_iteration(detail):
    rng = np.random.default_rng(5)
    disagreements, blocking = 0, 0
    for i in range(200):
        n = int(rng.integers(2, 7))
        if i % 2:
            C, lam = _degenerate_pair(rng, n)
        else:
            C, lam = random_invertible(rng, n), rng.normal(size=n)
        dims = blocking_dims_direct(C, lam)
        direct_tb = dims[-1] == 0
        flag = beating_flag(C, lam)
        if is_trivially_blocking(C, lam) != direct_tb or flag.trivially_blocking != direct_tb:
            disagreements += 1
        if flag.blocking_dim != dims[-1]:
            disagreements += 1
        blocking += not direct_tb
    detail(f"{disagreements} disagreements over 200 systems ({blocking} not trivially blocking)")
    assert blocking >= 50
    assert disagreements == 0


@pytest.mark.criterion(5, "trivially-blocking rank test vs direct beating-set iteration")
def test_criterion_05_left_eigenvector(detail):
    rng = np.random.default_rng(55)
    bad = 0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        C0 = random_invertible(rng, n)
        lam = rng.normal(size=n)
        alpha = float(rng.uniform(0.5, 1.5)) * rng.choice([-1, 1])
        C = C0 + np.outer(lam, alpha * lam - lam @ C0) / (lam @ lam)
        if abs(np.linalg.det(C)) < 1e-6:
            continue
        assert np.allclose(lam @ C, alpha * lam)
        flag = beating_flag(C, lam)
        dims = blocking_dims_direct(C, lam)
        ok = flag.dims[1] == n - 1 and flag.blocking_dim == n - 1 and dims[1] == n - 1 and dims[-1] == n - 1
        bad += not ok
    detail(f"left-eigenvector constructions: {bad} with dim Sigma_1 != n-1 or Sigma_inf != Sigma_1")
    assert bad == 0


# ---------------------------------------------------------------- 6


@pytest.mark.criterion(6, "trivially blocking systems are not Zeno (empirical)")
def test_criterion_06_finite_jumps(detail):
    rng = np.random.default_rng(6)
    counts, dwells = [], []
    for _ in range(50):
        n = int(rng.integers(2, 5))
        sys = random_tb_system(rng, n, direction=int(rng.choice([-1, 0, 1])))
        traj = simulate(sys, rng.normal(size=n), (0.0, 10.0), max_jumps=10_000)
        counts.append(traj.jump_count)
        dwells.append(traj.min_dwell)
    multi = [d for c, d in zip(counts, dwells) if c >= 2]
    detail(f"jump counts {min(counts)}..{max(counts)}, smallest dwell {min(multi):.2e}")
    assert all(c < 10_000 for c in counts)
    assert all(d > 0.0 for d in dwells)
    assert len(multi) >= 25


# ---------------------------------------------------------------- 7


def _simulated_times(system, x0, horizon, max_jumps=30):
    try:
        traj = simulate(system, x0, (0.0, horizon), max_jumps=max_jumps)
        return traj.jump_times
    except SuspectedZeno as exc:
        return exc.report.jump_times


@pytest.mark.criterion(7, "Zeno times vs series extrapolation")
def test_criterion_07_first_order(detail):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        a, b = rng.uniform(0.5, 2.0, 2)
        c = float(rng.uniform(0.2, 0.9) * b / a)
        c = min(c, 0.95)
        x0, y0 = rng.uniform(0.1, 2.0, 2)
        zeta = zeno_time_first_order(a, b, c, x0, y0)
        fo, _ = zeno_presets(a=a, b=b, c=c)
        est = estimate_zeno_time(_simulated_times(fo.system, [x0, y0], 3.0 * zeta))
        worst = max(worst, abs(est.extrapolated_time - zeta) / zeta)
    detail(f"zeta1 worst relative error {worst:.1e}")
    assert worst <= 1e-6


@pytest.mark.criterion(7, "Zeno times vs series extrapolation")
def test_criterion_07_second_order(detail):
    rng = np.random.default_rng(77)
    worst, printed_gap = 0.0, []
    for _ in range(50):
        g = float(rng.uniform(0.5, 2.0))
        e = float(rng.uniform(0.2, 0.8))
        x0, y0 = float(rng.uniform(0.1, 2.0)), float(rng.uniform(-1.0, 1.0))
        zt = zeno_time_second_order(g, e, x0, y0)
        _, so = zeno_presets(g=g, e=e)
        est = estimate_zeno_time(_simulated_times(so.system, [x0, y0], 3.0 * zt.derived))
        worst = max(worst, abs(est.extrapolated_time - zt.derived) / zt.derived)
        printed_gap.append((zt.printed - est.extrapolated_time) / est.extrapolated_time)
    detail(
        f"zeta2 (1+e) form worst relative error {worst:.1e}; "
        f"coefficient-3 form overshoots by {min(printed_gap):.0%}..{max(printed_gap):.0%}"
    )
    assert worst <= 1e-6
    # the coefficient-3 expression is a documented discrepancy, reported not asserted equal
    assert min(printed_gap) > 0.0


# ---------------------------------------------------------------- 8


@pytest.mark.criterion(8, "classical LQR/AQR core")
def test_criterion_08_scalar_riccati(detail):
    cost = QuadraticCost.of(1, 1, Q=[[0.0]], R=[[1.0]], F=[[1.0]])
    sol = solve_riccati_backward([[0.0]], [[1.0]], cost, (0.0, 1.0))
    exact = 1.0 / (1.0 + 1.0 - sol.t)
    err = float(np.max(np.abs(sol.S[:, 0, 0] - exact)))
    detail(f"scalar Riccati max error {err:.1e}")
    assert err <= 1e-8


@pytest.mark.criterion(8, "classical LQR/AQR core")
def test_criterion_08_value_identity(detail):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        cost = random_cost(rng, n, m)
        x0 = rng.normal(size=n)
        sol = solve_riccati_backward(A, B, cost, (0.0, 1.0))
        J = trajectory_cost(cost, reconstruct(A, B, cost, sol, x0))
        V = 0.5 * x0 @ sol.S[0] @ x0
        worst = max(worst, abs(J - V) / abs(V))
    detail(f"value identity worst relative error {worst:.1e}")
    assert worst <= 1e-6


@pytest.mark.criterion(8, "classical LQR/AQR core")
def test_criterion_08_aqr_zero_bias(detail):
    rng = np.random.default_rng(88)
    worst = 0.0
    for _ in range(10):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        cost = random_cost(rng, n, m)
        x0 = rng.normal(size=n)
        lqr = solve_riccati_backward(A, B, cost, (0.0, 1.0))
        aqr = solve_riccati_backward(A, B, cost, (0.0, 1.0), b=np.zeros(n))
        xl = reconstruct(A, B, cost, lqr, x0).arcs[0].x
        xa = reconstruct(A, B, cost, aqr, x0, b=np.zeros(n)).arcs[0].x
        worst = max(worst, float(np.max(np.abs(lqr.S - aqr.S))), float(np.max(np.abs(aqr.c))),
                    float(np.max(np.abs(xl - xa))))
    detail(f"AQR(b = 0) vs LQR max deviation {worst:.1e}")
    assert worst <= 1e-10


# ---------------------------------------------------------------- 9


def _temporal_case(rng, singular=False):
    n, m = int(rng.integers(2, 5)), int(rng.integers(1, 3))
    A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
    C = random_invertible(rng, n)
    if singular:
        C[:, 0] = 0.0
    cost = random_cost(rng, n, m)
    times = np.sort(rng.uniform(0.1, 0.9, int(rng.integers(1, 4))))
    sched = JumpSchedule.within(times, (0.0, 1.0))
    affine = (rng.normal(size=n), rng.normal(size=n))
    return A, B, C, cost, sched, affine, rng.normal(size=n)


@pytest.mark.criterion(9, "temporal hybrid sweep")
def test_criterion_09_jump_identities(detail):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        A, B, C, cost, sched, (b, kappa), _ = _temporal_case(rng)
        sol = solve_temporal_costate(A, B, cost, sched, C, affine=(b, kappa))
        for t in sched.times:
            (S_m, c_m), (S_p, c_p) = sol.one_sided(t)
            e1 = np.max(np.abs(S_m - C.T @ S_p @ C)) / (1.0 + np.max(np.abs(S_m)))
            e2 = np.max(np.abs(c_m - C.T @ (S_p @ kappa + c_p))) / (1.0 + np.max(np.abs(c_m)))
            worst = max(worst, e1, e2)
    detail(f"jump identities worst relative residual {worst:.1e}")
    assert worst <= 1e-14


@pytest.mark.criterion(9, "temporal hybrid sweep")
def test_criterion_09_costate_along_reconstruction(detail):
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(10):
        A, B, C, cost, sched, affine, x0 = _temporal_case(rng)
        sol = solve_temporal_costate(A, B, cost, sched, C, affine=affine)
        traj = reconstruct_temporal(A, B, cost, sched, C, sol, x0, affine=affine)
        flow = HamiltonianFlow(tilde(cost, A, B), affine[0])
        for arc in traj.arcs:
            # the exact state/co-state flow from the arc start must stay on p = S x + c
            for k in range(0, len(arc.t), 50):
                x, p = flow.propagate(arc.x[0], arc.p[0], arc.t[k] - arc.t[0])
                scale = 1.0 + np.max(np.abs(arc.p[k]))
                worst = max(worst, np.max(np.abs(p - arc.p[k])) / scale, np.max(np.abs(x - arc.x[k])) / scale)
    detail(f"p = S x + c vs exact extremal flow worst deviation {worst:.1e}")
    assert worst <= 1e-7


@pytest.mark.criterion(9, "temporal hybrid sweep")
def test_criterion_09_singular_jump_map():
    rng = np.random.default_rng(999)
    A, B, C, cost, sched, affine, x0 = _temporal_case(rng, singular=True)
    assert abs(np.linalg.det(C)) < 1e-12
    sol = solve_temporal_costate(A, B, cost, sched, C, affine=affine)
    traj = reconstruct_temporal(A, B, cost, sched, C, sol, x0, affine=affine)
    assert traj.jump_count == len(sched.times)
    assert np.all(np.isfinite(traj.x_final))


# ---------------------------------------------------------------- 10


@pytest.mark.criterion(10, "reduced multiplier coefficients and WAR")
def test_criterion_10_reduced_gamma(detail):
    rng = np.random.default_rng(10)
    worst_direct = worst_hamiltonian = 0.0
    for i in range(100):
        n, m = int(rng.integers(2, 5)), int(rng.integers(1, 3))
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        C = random_invertible(rng, n)
        lam = rng.normal(size=n)
        cost = random_cost(rng, n, m)
        td = tilde(cost, A, B)
        affine = (rng.normal(size=n), rng.normal(size=n)) if i % 2 else None
        b, kappa = affine if affine else (np.zeros(n), np.zeros(n))
        G = rng.normal(size=(n, n))
        S, c = G + G.T, rng.normal(size=n)
        x = on_guard_point(rng, lam)
        x_plus = C @ x + kappa
        p_plus = S @ x_plus + c
        red = reduced_coefficients(td, C, lam, S, c, affine)
        direct = multiplier_coefficients(td, C, lam, x, p_plus, affine)
        # second route: gamma is the Hamiltonian mismatch at eps = 0
        H_minus, _ = hamiltonian_min(A, B, cost, x, C.T @ p_plus, b)
        H_plus, _ = hamiltonian_min(A, B, cost, x_plus, p_plus, b)
        scale = 1.0 + abs(direct.gamma)
        worst_direct = max(worst_direct, abs(red.gamma(x) - direct.gamma) / scale,
                           abs(red.beta(x) - direct.beta) / (1.0 + abs(direct.beta)))
        worst_hamiltonian = max(worst_hamiltonian, abs((H_minus - H_plus) - direct.gamma) / scale)
    detail(f"reduced vs direct {worst_direct:.1e}, direct vs Hamiltonian mismatch {worst_hamiltonian:.1e}")
    assert worst_direct <= 1e-9
    assert worst_hamiltonian <= 1e-9


@pytest.mark.criterion(10, "reduced multiplier coefficients and WAR")
def test_criterion_10_war_presets(detail):
    rng = np.random.default_rng(1010)
    presets = [
        get_preset("mechanical-1dof"),
        mechanical([[-1.0, 0.2], [0.2, -2.0]], np.zeros((2, 2)), [[1.0], [0.5]], [1.0, -1.0]),
    ]
    checked = 0
    for preset in presets:
        base = preset.system
        n = base.n
        affine_sys = AffineHybridSystem(base, b=rng.normal(size=n), kappa=np.zeros(n), a=0.0)
        for sys in (base, affine_sys):
            td = tilde(preset.cost, sys.A, sys.B)
            for _ in range(10):
                x = on_guard_point(rng, sys.lam)
                p = rng.normal(size=n)
                affine = (sys.b, sys.kappa) if sys.is_affine else None
                quad = multiplier_coefficients(td, sys.C, sys.lam, x, p, affine)
                expected_beta = float(sys.lam @ sys.A @ x + sys.lam @ sys.b)
                assert quad.alpha == 0.0
                assert quad.regime == "war_linear"
                assert quad.beta == pytest.approx(expected_beta, rel=1e-14, abs=1e-15)
                checked += 1
    detail(f"{checked} WAR evaluations with alpha == 0")


# ---------------------------------------------------------------- 11


@pytest.mark.criterion(11, "deterministic compare runs")
def test_criterion_11_compare_determinism(tmp_path, detail):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run(["compare", "--preset", "section6-contracting", "--seed", "7", "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    assert {"compare.csv", "costs.csv", "report.json", "trajectory.csv", "trajectory_dp.csv"} <= set(names)
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    detail(f"{len(names)} files byte-identical across two runs")

