"""Command-line front end: plan a leg, fly a mission, or benchmark the solver.

Exit codes: 0 on success, 1 when planning/simulation fails at runtime,
2 for unusable inputs (bad arguments or malformed files).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import mission as msn
from . import planner
from .bernstein import write_trajectory
from .planner import BoundaryState, PlannerConfig, WaypointSequence
from .qp import dump_problem


def _load_mission(path: str) -> msn.MissionPlan:
    return msn.parse_mission(Path(path).read_text())


def _load_setup(args):
    if getattr(args, "params", None):
        return msn.build_setup(msn.parse_params(Path(args.params).read_text()))
    return msn.build_setup({})


def _first_leg(plan: msn.MissionPlan) -> WaypointSequence:
    """The waypoint sequence the executive would fly for leg 0."""
    if not plan.legs:
        raise msn.MissionFormatError("mission has no transit leg to plan")
    loiter_out, loiter_in = plan.loiters[0], plan.loiters[1]
    interior = plan.legs[0].waypoints
    anchor_out = interior[0] if len(interior) else loiter_in.center
    exit_st = msn.tangent_handoff(loiter_out, anchor_out, plan.cruise_speed, "exit")
    anchor_in = interior[-1] if len(interior) else exit_st.point
    entry_st = msn.tangent_handoff(loiter_in, anchor_in, plan.cruise_speed, "entry")
    return msn._leg_waypoints(exit_st, interior, entry_st)


def _cmd_plan(args) -> int:
    plan = _load_mission(args.mission)
    wps = _first_leg(plan)
    pcfg = PlannerConfig(cruise_speed=plan.cruise_speed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_qp:
        prob, _, _ = planner.assemble(wps, pcfg)
        with open(out / "leg0_qp.txt", "w") as fh:
            dump_problem(prob, fh)
    res = planner.plan(wps, pcfg)
    print(res.summary())
    if not res.ok:
        return 1
    write_trajectory(res.trajectory, out / "leg0_trajectory.txt")
    print(f"trajectory written to {out / 'leg0_trajectory.txt'}")
    return 0


def _cmd_simulate(args) -> int:
    plan = _load_mission(args.mission)
    aero, wind, mcfg = _load_setup(args)
    if args.measure_solve_time:
        mcfg.measure_solve_time = True
    result = msn.run_mission(plan, params=aero, wind=wind, mcfg=mcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    msn.write_csv(result.log, out / "mission_log.csv")
    if result.metrics:
        msn.write_summary(result.metrics, out / "summary.txt")
        for key, val in result.metrics.items():
            print(f"{key} {val:.9g}" if isinstance(val, float) else f"{key} {val}")
    if result.aborted:
        print(f"mission aborted: {result.abort_reason}", file=sys.stderr)
        return 1
    return 0


def waypoint_field(n_waypoints: int, seed: int = 0) -> np.ndarray:
    """Deterministic snaking waypoint field used for solver benchmarks."""
    if n_waypoints < 2:
        raise ValueError("need at least two waypoints")
    rng = np.random.default_rng(seed)
    i = np.arange(n_waypoints)
    pts = np.column_stack([
        60.0 * i,
        35.0 * np.sin(0.8 * i) + rng.uniform(-5.0, 5.0, n_waypoints),
        np.full(n_waypoints, 50.0),
    ])
    return pts


def _field_sequence(pts: np.ndarray, cruise: float) -> WaypointSequence:
    d0 = pts[1] - pts[0]
    d1 = pts[-1] - pts[-2]
    return WaypointSequence(
        pts,
        BoundaryState(pts[0], cruise * d0 / np.linalg.norm(d0), np.zeros(3)),
        BoundaryState(pts[-1], cruise * d1 / np.linalg.norm(d1), np.zeros(3)),
    )


def bench_planner(sizes, seed: int = 0, cruise: float = 14.0):
    """Solve the benchmark field at each size; returns a list of PlanResults."""
    pcfg = PlannerConfig(cruise_speed=cruise)
    results = []
    for n in sizes:
        wps = _field_sequence(waypoint_field(n, seed), cruise)
        results.append(planner.plan(wps, pcfg))
    return results


def linear_fit_r2(x, y):
    """Least-squares line y ~ a*x + b and its coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    if any(s < 2 for s in sizes) or len(sizes) < 2:
        raise msn.MissionFormatError("bench needs at least two sizes, each >= 2")
    results = bench_planner(sizes, seed=args.seed)
    lines = ["n_waypoints n_vars iterations solve_time status"]
    for n, res in zip(sizes, results):
        lines.append(f"{n} {res.n_vars} {res.iterations} "
                     f"{res.solve_time:.6f} {res.status}")
    times = [res.solve_time for res in results]
    a, b, r2 = linear_fit_r2(sizes, times)
    lines.append(f"fit_slope_s_per_wp {a:.6g}")
    lines.append(f"fit_intercept_s {b:.6g}")
    lines.append(f"fit_r2 {r2:.6f}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.txt").write_text(text + "\n")
    return 0 if all(res.ok for res in results) else 1


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="flatwing",
        description="Bernstein-polynomial trajectory planning and "
                    "flatness-based tracking for fixed-wing aircraft.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan the first transit leg of a mission")
    p.add_argument("--mission", required=True, help="mission file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--dump-qp", action="store_true",
                   help="also write the assembled QP in text form")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("simulate", help="fly a mission closed-loop")
    p.add_argument("--mission", required=True, help="mission file")
    p.add_argument("--params", help="parameter file (airframe and wind)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--measure-solve-time", action="store_true",
                   help="log wall-clock replan times instead of the fixed budget")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bench", help="time the planner across problem sizes")
    p.add_argument("--sizes", default="4,8,16,32,64",
                   help="comma-separated waypoint counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="", help="optional output directory")
    p.set_defaults(func=_cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (msn.MissionFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (msn.MissionAbort, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


cli_main = main


if __name__ == "__main__":
    sys.exit(main())
