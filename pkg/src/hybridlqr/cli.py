"""Command line entry point: ``hybridlqr <task> [--config FILE] [--preset NAME] [--out DIR]``.

Each task writes ``report.json`` (and usually ``trajectory.csv``) into the
output directory.  Failures write ``error.json`` and exit with the code of
their error family.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import zeno_models
from .dp_oracle import GridSpec, dp_rollout, dp_solve, save_value_grid
from .errors import ConfigError, HybridLQRError, SuspectedZeno
from .guard_analysis import beating_flag, has_war, invariant_guard_report, is_trivially_blocking
from .hybrid_system import HybridTrajectory, simulate, system_from_dict
from .lqr_core import QuadraticCost, reconstruct, solve_riccati_backward, trajectory_cost
from .presets import (
    FIRST_ORDER_ZENO,
    PRESETS,
    SECOND_ORDER_ZENO,
    ScenarioPreset,
    get_preset,
    section6,
    zeno_presets,
)
from .serialization import apply_overrides, load_config, write_json, write_table_csv, write_trajectory_csv
from .spatial_hlqr import SpatialOptions, solve_spatial
from .temporal_hlqr import JumpSchedule, reconstruct_temporal, solve_temporal_costate

TASKS = ("analyze", "simulate", "zeno", "lqr", "aqr", "hlqr-temporal", "hlqr-spatial", "dp", "compare", "preset")

log = logging.getLogger("hybridlqr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridlqr", description=__doc__.splitlines()[0])
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", help="JSON config document")
    parser.add_argument("--preset", help="scenario preset name (see the 'preset' task)")
    parser.add_argument("--out", default=".", help="output directory (default: current)")
    parser.add_argument("--seed", type=int, default=0, help="seed recorded in reports")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                        help="override a top-level config field; repeatable")
    parser.add_argument("--branch-override", action="append", default=[], metavar="INDEX:plus|minus",
                        help="force the co-state branch at a jump (hlqr-spatial, compare)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


# ------------------------------------------------------------ scenario


def _scenario(doc: dict) -> ScenarioPreset:
    name = doc.get("preset")
    if name == "section6":
        if "a" not in doc:
            raise ConfigError("preset 'section6' needs a field 'a'")
        base = section6(float(doc["a"]))
    elif name is not None:
        try:
            base = get_preset(name)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
    else:
        base = None
    try:
        system = system_from_dict(doc["system"]) if "system" in doc else (base.system if base else None)
        if system is None:
            raise ConfigError("config needs a 'system' or a 'preset'")
        if "cost" in doc:
            cost = QuadraticCost.from_dict(doc["cost"], system.n, system.m)
        else:
            cost = base.cost if base else None
        t_span = tuple(float(t) for t in doc.get("t_span", base.t_span if base else (0.0, 1.0)))
        x0 = np.array(doc.get("x0", base.x0 if base else np.zeros(system.n)), dtype=float)
    except KeyError as exc:
        raise ConfigError(f"missing field {exc.args[0]!r}") from None
    if x0.size != system.n:
        raise ConfigError(f"field 'x0' has length {x0.size}, expected {system.n}")
    grid = doc.get("grid", base.grid if base else None)
    expected = base.expected if base else {}
    return ScenarioPreset(name or "custom", system, cost, t_span, x0, expected, grid)


def _need_cost(sc: ScenarioPreset) -> QuadraticCost:
    if sc.cost is None:
        raise ConfigError(f"scenario {sc.name!r} has no cost; add a 'cost' field")
    return sc.cost


def _branch_overrides(items) -> dict:
    out = {}
    for item in items:
        idx, sep, br = item.partition(":")
        if not sep or br not in ("plus", "minus"):
            raise ConfigError(f"branch override {item!r} must look like INDEX:plus or INDEX:minus")
        try:
            out[int(idx)] = br
        except ValueError:
            raise ConfigError(f"branch override {item!r} has a non-integer index") from None
    return out


def _spatial_options(doc: dict, overrides: dict) -> SpatialOptions:
    raw = dict(doc.get("solver", {}))
    branch = {int(k): v for k, v in raw.pop("branch_override", {}).items()}
    branch.update(overrides)
    known = {"step", "max_iter", "jt_tol", "solver_tol", "max_jumps", "explore", "polish"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown solver option(s): {sorted(unknown)}")
    return SpatialOptions(branch_override=branch, **raw)


def _grid(sc: ScenarioPreset) -> GridSpec:
    if sc.grid is None:
        raise ConfigError("dynamic programming needs a 'grid' field")
    try:
        return GridSpec.from_dict(sc.grid)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed grid: {exc}") from None


def _affine(sys_):
    return (sys_.b, sys_.kappa) if sys_.is_affine else None


# ------------------------------------------------------------ tasks


def task_analyze(doc, sc, args, out):
    s = sc.system
    flag = beating_flag(s.C, s.lam)
    report = {
        "n": s.n,
        "m": s.m,
        "trivially_blocking": is_trivially_blocking(s.C, s.lam),
        "beating_flag": flag.to_dict(),
        "invariant_guard": invariant_guard_report(s.A, s.C, s.lam).to_dict(),
        "war": has_war(s.B, s.lam),
    }
    return report


def task_simulate(doc, sc, args, out):
    s = sc.system
    max_jumps = int(doc.get("max_jumps", 10_000))
    step = doc.get("step")
    try:
        traj = simulate(s, sc.x0, sc.t_span, step=step, max_jumps=max_jumps)
    except SuspectedZeno as exc:
        write_trajectory_csv(out / "trajectory.csv", exc.report.trajectory, s.n, 0)
        write_json(out / "suspected_zeno.json", {"jump_times": exc.report.jump_times, "max_jumps": max_jumps})
        raise
    write_trajectory_csv(out / "trajectory.csv", traj, s.n, 0)
    return {
        "jump_count": traj.jump_count,
        "jump_times": traj.jump_times,
        "beating_depths": [j.beating_depth for j in traj.jumps],
        "min_dwell": traj.min_dwell,
        "x_final": traj.x_final,
    }


def task_zeno(doc, sc, args, out):
    z = dict(doc.get("zeno", {}))
    model = z.get("model", "first_order")
    n_jumps = int(z.get("max_jumps", 30))
    source = z.get("source", "exact")
    if source not in ("exact", "simulate"):
        raise ConfigError(f"zeno source must be 'exact' or 'simulate', got {source!r}")
    if model == "first_order":
        a, b, c = (float(z.get(k, FIRST_ORDER_ZENO[k])) for k in ("a", "b", "c"))
        x0, y0 = z.get("x0", FIRST_ORDER_ZENO["x0"])
        closed = {"zeta1": zeno_models.zeno_time_first_order(a, b, c, x0, y0)}
        preset = zeno_presets(a=a, b=b, c=c)[0]
        exact = lambda: zeno_models.first_order_jump_times(a, b, c, x0, y0, n_jumps)
    elif model == "second_order":
        g, e = (float(z.get(k, SECOND_ORDER_ZENO[k])) for k in ("g", "e"))
        x0, y0 = z.get("x0", SECOND_ORDER_ZENO["x0"])
        zt = zeno_models.zeno_time_second_order(g, e, x0, y0)
        closed = {"zeta2_printed": zt.printed, "zeta2_derived": zt.derived}
        preset = zeno_presets(g=g, e=e)[1]
        exact = lambda: zeno_models.bounce_times(g, e, x0, y0, n_jumps)
    else:
        raise ConfigError(f"unknown zeno model {model!r}")
    if source == "exact":
        times = exact()
    else:
        try:
            traj = simulate(preset.system, [x0, y0], (0.0, float(z.get("t_max", 100.0))),
                            step=z.get("step"), max_jumps=n_jumps)
            times = np.array(traj.jump_times)
        except SuspectedZeno as exc:
            times = np.array(exc.report.jump_times)
    est = zeno_models.estimate_zeno_time(times)
    write_table_csv(out / "jump_times.csv", ["index", "t"], [[i, t] for i, t in enumerate(times)])
    report = {"model": model, "source": source, "closed_form": closed, "estimate": est.to_dict()}
    if model == "second_order":
        report["printed_minus_estimate"] = closed["zeta2_printed"] - est.extrapolated_time
        report["derived_minus_estimate"] = closed["zeta2_derived"] - est.extrapolated_time
    elif closed["zeta1"] is not None:
        report["zeta1_minus_estimate"] = closed["zeta1"] - est.extrapolated_time
    return report


def _classical(doc, sc, out, affine: bool):
    s, cost = sc.system, _need_cost(sc)
    b = s.b if affine and s.is_affine else None
    sol = solve_riccati_backward(s.A, s.B, cost, sc.t_span, step=doc.get("step"), b=b)
    traj = reconstruct(s.A, s.B, cost, sol, sc.x0, b=b)
    write_trajectory_csv(out / "trajectory.csv", traj, s.n, s.m)
    S0, c0 = sol.S[0], sol.c[0]
    return {
        "cost": trajectory_cost(cost, traj),
        "value_quadratic_part": 0.5 * float(sc.x0 @ S0 @ sc.x0) + float(c0 @ sc.x0),
        "S_t0": S0,
        "c_t0": c0,
        "x_final": traj.x_final,
    }


def task_lqr(doc, sc, args, out):
    return _classical(doc, sc, out, affine=False)


def task_aqr(doc, sc, args, out):
    return _classical(doc, sc, out, affine=True)


def task_temporal(doc, sc, args, out):
    s, cost = sc.system, _need_cost(sc)
    if "jump_times" not in doc:
        raise ConfigError("hlqr-temporal needs a 'jump_times' field")
    sched = JumpSchedule.within(doc["jump_times"], sc.t_span)
    sol = solve_temporal_costate(s.A, s.B, cost, sched, s.C, sc.t_span, step=doc.get("step"), affine=_affine(s))
    traj = reconstruct_temporal(s.A, s.B, cost, sched, s.C, sol, sc.x0, affine=_affine(s))
    write_trajectory_csv(out / "trajectory.csv", traj, s.n, s.m)
    return {
        "jump_times": list(sched.times),
        "min_gap": sched.min_gap,
        "cost": trajectory_cost(cost, traj),
        "S_t0": sol.S[0],
        "c_t0": sol.c[0],
        "x_final": traj.x_final,
    }


def _spatial(doc, sc, args):
    opts = _spatial_options(doc, _branch_overrides(args.branch_override))
    return solve_spatial(sc.system, _need_cost(sc), sc.x0, sc.t_span, opts)


def task_spatial(doc, sc, args, out):
    rep = _spatial(doc, sc, args)
    write_trajectory_csv(out / "trajectory.csv", rep.trajectory, sc.system.n, sc.system.m)
    return rep.to_dict()


def _dp(sc):
    cost = _need_cost(sc)
    grid = _grid(sc)
    vg = dp_solve(sc.system, cost, grid)
    roll = dp_rollout(sc.system, cost, vg, sc.x0)
    return vg, roll


def task_dp(doc, sc, args, out):
    vg, roll = _dp(sc)
    save_value_grid(vg, out / "value_grid.bin")
    write_trajectory_csv(out / "trajectory.csv", roll.trajectory, sc.system.n, sc.system.m)
    return {
        "V_t0_x0": vg.value_at(0, sc.x0),
        "rollout_cost": roll.cost,
        "jump_count": roll.jump_count,
        "jump_times": roll.trajectory.jump_times,
        "truncated": roll.truncated,
        "diagnostics": vg.diagnostics,
    }


def _sample(traj: HybridTrajectory, t: float, field: str):
    for arc in reversed(traj.arcs):
        if arc.t[0] <= t:
            data = getattr(arc, field)
            if len(arc.t) == 1:
                return data[0]
            return np.array([np.interp(t, arc.t, data[:, i]) for i in range(data.shape[1])])
    return getattr(traj.arcs[0], field)[0]


def task_compare(doc, sc, args, out):
    rep = _spatial(doc, sc, args)
    vg, roll = _dp(sc)
    s = sc.system
    rows = []
    for t in vg.grid.t_grid:
        x_mp, x_dp = _sample(rep.trajectory, t, "x"), _sample(roll.trajectory, t, "x")
        u_mp, u_dp = _sample(rep.trajectory, t, "u"), _sample(roll.trajectory, t, "u")
        rows.append([t, *x_mp, *x_dp, *(x_mp - x_dp), *u_mp, *u_dp])
    header = ["t"] + [f"x{i + 1}_mp" for i in range(s.n)] + [f"x{i + 1}_dp" for i in range(s.n)]
    header += [f"dx{i + 1}" for i in range(s.n)] + [f"u{i + 1}_mp" for i in range(s.m)] + [f"u{i + 1}_dp" for i in range(s.m)]
    write_table_csv(out / "compare.csv", header, rows)
    write_trajectory_csv(out / "trajectory.csv", rep.trajectory, s.n, s.m)
    write_trajectory_csv(out / "trajectory_dp.csv", roll.trajectory, s.n, s.m)
    gap = abs(roll.cost - rep.cost) / abs(rep.cost)
    write_table_csv(out / "costs.csv", ["method", "cost", "jump_count"],
                    [["mp", rep.cost, rep.jump_count], ["dp", roll.cost, roll.jump_count]])
    return {
        "jump_count_mp": rep.jump_count,
        "jump_count_dp": roll.jump_count,
        "jump_times_mp": rep.trajectory.jump_times,
        "jump_times_dp": roll.trajectory.jump_times,
        "cost_mp": rep.cost,
        "cost_dp": roll.cost,
        "V_t0_x0_dp": vg.value_at(0, sc.x0),
        "relative_cost_gap": gap,
        "mp": rep.to_dict(),
    }


def task_preset(doc, sc, args, out):
    if sc is None:
        return {"presets": sorted(PRESETS) + ["section6 (with field 'a')"]}
    write_json(out / "preset.json", sc.to_dict())
    return sc.to_dict()


HANDLERS = {
    "analyze": task_analyze,
    "simulate": task_simulate,
    "zeno": task_zeno,
    "lqr": task_lqr,
    "aqr": task_aqr,
    "hlqr-temporal": task_temporal,
    "hlqr-spatial": task_spatial,
    "dp": task_dp,
    "compare": task_compare,
    "preset": task_preset,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    try:
        doc = load_config(args.config) if args.config else {}
        if args.preset:
            doc["preset"] = args.preset
        doc = apply_overrides(doc, args.set)
        needs_scenario = args.task not in ("zeno",) and not (args.task == "preset" and "preset" not in doc)
        sc = _scenario(doc) if needs_scenario else None
        report = HANDLERS[args.task](doc, sc, args, out)
    except HybridLQRError as exc:
        return _fail(out, args, exc, exc.exit_code)
    except (ValueError, TypeError) as exc:
        return _fail(out, args, exc, ConfigError.exit_code)
    report = {"task": args.task, "seed": args.seed, **report}
    write_json(out / "report.json", report)
    if args.task == "preset":
        print(json.dumps(report, indent=2, sort_keys=True, default=str))
    return 0


def _fail(out: Path, args, exc: Exception, code: int) -> int:
    doc = {"task": args.task, "error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    for attr in ("t", "discriminant", "depth"):
        val = getattr(exc, attr, None)
        if val is not None:
            doc[attr] = val
    best = getattr(exc, "best", None)
    if best is not None and hasattr(best, "to_dict"):
        doc["best"] = best.to_dict()
    write_json(out / "error.json", doc)
    print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
