"""Command-line pipeline: validate, find-run, plan, simulate, compare."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from tlcbf.automaton import NoAcceptingRun, find_accepting_runs
from tlcbf.barriers import InfeasibleGuard
from tlcbf.planner import PlanError, TaskPlan, assign_windows, build_specs, uniform_deadlines
from tlcbf.qp import Infeasible
from tlcbf.qpctrl import Controller, GuardConfig, SpecViolation
from tlcbf.scenario import Scenario, ScenarioError, load_scenario
from tlcbf.simrun import Trajectory, Verdict, extract_trace, monitor, simulate, write_outputs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4

RUN_SEARCH_LIMIT = 10


# ------------------------------------------------------------------ pipeline


def select_run(sc: Scenario, run_index: int | None = None):
    runs = find_accepting_runs(sc.dra, limit=RUN_SEARCH_LIMIT)
    k = sc.run_index if run_index is None else run_index
    if not 0 <= k < len(runs):
        raise ScenarioError(f"run index {k} out of range (found {len(runs)} runs)", "/plan/run_index")
    return runs, runs[k]


def build_plan(sc: Scenario, run_index: int | None = None) -> TaskPlan:
    _, run = select_run(sc, run_index)
    specs = build_specs(sc.dra, run)
    deadlines, period = sc.deadlines, sc.period
    if deadlines is None:
        deadlines, spacing = uniform_deadlines(sc.horizon or sc.sim.t_end, run)
        period = period or spacing
    try:
        return assign_windows(specs, run, deadlines, period)
    except PlanError as err:
        raise ScenarioError(str(err), "/plan/deadlines") from err


def make_controller(sc: Scenario, plan: TaskPlan, guards: bool = True, simultaneous: bool = False) -> Controller:
    cfg = replace(sc.guards, enabled=guards) if isinstance(sc.guards, GuardConfig) else sc.guards
    return Controller(plan, sc.model, sc.props, sc.params, cfg, simultaneous=simultaneous)


def run_pipeline(
    sc: Scenario,
    run_index: int | None = None,
    guards: bool = True,
    simultaneous: bool = False,
    dt: float | None = None,
    t_end: float | None = None,
) -> tuple[TaskPlan, Controller, Trajectory, Verdict]:
    plan = build_plan(sc, run_index)
    ctrl = make_controller(sc, plan, guards, simultaneous)
    traj = simulate(
        ctrl,
        dt if dt is not None else sc.sim.dt,
        t_end if t_end is not None else sc.sim.t_end,
        dra=sc.dra,
        suffix_cycles=sc.sim.suffix_cycles,
    )
    verdict = monitor(sc.dra, extract_trace(traj, sc.props), plan, traj.failure)
    return plan, ctrl, traj, verdict


def plan_document(sc: Scenario, plan: TaskPlan, ctrl: Controller) -> dict:
    """Everything the design step produced: run, formulae, windows, guards, barriers."""
    doc = plan.to_json()
    for entry in doc["specs"]:
        sb = ctrl.barriers(entry["index"])
        entry["guards"] = {
            ("" if lit.positive else "!") + lit.name: (None if g is None else g.to_json())
            for lit, g in sb.guards.items()
        }
        entry["barriers"] = {
            "goal": sb.goal.structure(),
            "stay": None if sb.stay is None else sb.stay.structure(),
        }
        entry["always"] = plan.instance(entry["index"]).always_form
    doc["guard_issues"] = list(ctrl.guard_issues)
    doc["controller"] = {
        "kappa": sc.params.kappa,
        "rho": sc.params.rho,
        "gamma_min": sc.params.gamma_min,
        "margin": sc.params.margin,
        "lambda": sc.params.lam,
        "sharpness": sc.params.sharpness,
        "lookahead": sc.params.lookahead,
    }
    return doc


def _infeasible_at(traj: Trajectory):
    f = traj.failure
    return f["t"] if f is not None and f.get("kind") == "qp_infeasible" else None


# ------------------------------------------------------------------ commands


def _emit(doc, path):
    text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_validate(sc: Scenario, args) -> int:
    _emit(
        {
            "ok": True,
            "name": sc.name,
            "n": sc.model.n,
            "m": sc.model.m,
            "props": list(sc.props),
            "states": list(sc.dra.states),
            "transitions": len(sc.dra.transitions),
            "rabin_pairs": len(sc.dra.rabin_pairs),
        },
        args.out,
    )
    return EXIT_OK


def cmd_find_run(sc: Scenario, args) -> int:
    runs = find_accepting_runs(sc.dra, limit=RUN_SEARCH_LIMIT)
    if args.out:
        _emit(
            [{"index": i, "prefix": list(r.prefix), "suffix": list(r.suffix), "pair_index": r.pair_index,
              "text": str(r)} for i, r in enumerate(runs)],
            args.out,
        )
    else:
        for i, r in enumerate(runs):
            print(f"[{i}] {r}")
    return EXIT_OK


def cmd_plan(sc: Scenario, args) -> int:
    plan = build_plan(sc, args.run_index)
    ctrl = make_controller(sc, plan, guards=not args.no_guards)
    n = plan.n_prefix + plan.n_suffix
    for k in range(n):
        ctrl.barriers(k)
    _emit(plan_document(sc, plan, ctrl), args.out)
    return EXIT_OK


def cmd_simulate(sc: Scenario, args) -> int:
    plan, ctrl, traj, verdict = run_pipeline(sc, args.run_index, not args.no_guards, dt=args.dt, t_end=args.t_end)
    write_outputs(args.out, args.report, traj, verdict)
    if args.report is None:
        _emit(verdict.to_json(), None)
    ok = verdict.failure is None and verdict.run_consistent
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_compare(sc: Scenario, args) -> int:
    """Guarded run against a baseline that imposes every goal from t=0."""
    _, _, g_traj, g_verdict = run_pipeline(sc, args.run_index, True, dt=args.dt, t_end=args.t_end)
    _, _, b_traj, b_verdict = run_pipeline(
        sc, args.run_index, guards=not args.no_guards, simultaneous=True, dt=args.dt, t_end=args.t_end
    )
    report = {
        "baseline": {
            "guards": not args.no_guards,
            "goals": "simultaneous",
            "infeasible_at": _infeasible_at(b_traj),
            "verdict": b_verdict.to_json(),
        },
        "guarded": {
            "infeasible_at": _infeasible_at(g_traj),
            "verdict": g_verdict.to_json(),
        },
        "infeasible_at": _infeasible_at(b_traj),
    }
    if args.out:
        write_outputs(args.out, None, b_traj, b_verdict)
    _emit(report, args.report)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "find-run": cmd_find_run,
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tlcbf", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("scenario", nargs="?", help="scenario JSON (alternative to -c)")
    p.add_argument("-c", "--config", help="scenario JSON")
    p.add_argument("-o", "--out", help="output path (CSV for simulate/compare, JSON otherwise)")
    p.add_argument("--report", help="verdict/report JSON path")
    p.add_argument("--run-index", type=int, default=None, help="accepting run to follow (default: scenario or 0)")
    p.add_argument("--no-guards", action="store_true", help="disable guard functions (M = 0)")
    p.add_argument("--dt", type=float, default=None, help="integration step")
    p.add_argument("--t-end", type=float, default=None, help="simulation end time")
    p.add_argument("--seed", type=int, default=None, help="random seed (fuzzing helpers only)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(code: int, kind: str, message: str, **extra) -> int:
    doc = {"error": kind, "message": message}
    doc.update(extra)
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        np.random.seed(args.seed)
    path = args.config or args.scenario
    if path is None:
        return _fail(EXIT_CONFIG, "config", "a scenario file is required (-c PATH)")
    if args.dt is not None and not args.dt > 0:
        return _fail(EXIT_CONFIG, "config", "--dt must be positive")
    if args.t_end is not None and not args.t_end > 0:
        return _fail(EXIT_CONFIG, "config", "--t-end must be positive")
    try:
        sc = load_scenario(path)
        return COMMANDS[args.command](sc, args)
    except ScenarioError as err:
        return _fail(EXIT_CONFIG, "config", err.message, pointer=err.pointer)
    except NoAcceptingRun as err:
        return _fail(EXIT_CONFIG, "no_accepting_run", str(err))
    except InfeasibleGuard as err:
        return _fail(EXIT_INFEASIBLE, "infeasible_guard", str(err))
    except (SpecViolation, Infeasible) as err:
        return _fail(EXIT_INFEASIBLE, type(err).__name__, str(err))
    except OSError as err:
        return _fail(EXIT_INTERNAL, "io", str(err))
    except Exception as err:  # noqa: BLE001
        return _fail(EXIT_INTERNAL, "internal", f"{type(err).__name__}: {err}")


if __name__ == "__main__":
    sys.exit(main())
