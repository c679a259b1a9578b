"""Closed-loop simulation, trace extraction and automaton monitoring."""
from __future__ import annotations

import csv
import json
import math
import time as _time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from tlcbf.automaton import NO_MOVE, DeterminismError, Dra, step as dra_step
from tlcbf.exprcore import PropositionDef, label
from tlcbf.planner import TaskPlan
from tlcbf.qp import Infeasible
from tlcbf.qpctrl import Controller, SpecViolation, SystemModel

DEFAULT_SUFFIX_CYCLES = 2


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    goal_values: np.ndarray  # (samples, specs) goal barrier of each schedule instance
    pair_values: np.ndarray  # stay-or-goal barrier (nan when a spec has none)
    dra_states: list = field(default_factory=list)
    failure: dict | None = None
    diagnostics: list = field(default_factory=list)
    wall_time: float = 0.0

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class Segment:
    labels: frozenset
    start: float
    end: float


@dataclass
class Verdict:
    specs: list
    run_consistent: bool
    suffix_cycles_completed: int
    failure: dict | None = None
    visited: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "specs": self.specs,
            "run_consistent": self.run_consistent,
            "suffix_cycles_completed": self.suffix_cycles_completed,
            "failure": self.failure,
        }


def rk4_step(model: SystemModel, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step with the input held constant."""
    k1 = model.rhs(x, u)
    k2 = model.rhs(x + 0.5 * dt * k1, u)
    k3 = model.rhs(x + 0.5 * dt * k2, u)
    k4 = model.rhs(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_policy(model: SystemModel, policy, dt: float, t_end: float, x0=None):
    """Closed loop under an arbitrary feedback ``policy(x, t) -> u`` (zero-order hold).

    Returns ``(times, states, inputs)``; the input at the last sample is NaN.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n_steps = int(math.floor(t_end / dt + 1e-9))
    x = np.array(model.x0 if x0 is None else x0, dtype=float)
    times = np.arange(n_steps + 1) * dt
    states = np.empty((n_steps + 1, model.n))
    inputs = np.full((n_steps + 1, model.m), np.nan)
    for i, t in enumerate(times):
        states[i] = x
        if i == n_steps:
            break
        u = np.asarray(policy(x, t), dtype=float)
        inputs[i] = u
        x = rk4_step(model, x, u, dt)
    return times, states, inputs


def horizon(plan: TaskPlan | None, t_end: float, suffix_cycles: int | None = DEFAULT_SUFFIX_CYCLES) -> float:
    """Simulated end time: ``t_end`` clipped to the configured number of suffix cycles."""
    if plan is None or suffix_cycles is None:
        return t_end
    cycle = plan.n_suffix * plan.period
    return min(t_end, plan.suffix_start + suffix_cycles * cycle)


def _n_columns(plan: TaskPlan | None) -> int:
    return 0 if plan is None else plan.n_prefix + plan.n_suffix


def _failure(exc: Exception, t: float) -> dict:
    if isinstance(exc, SpecViolation):
        return {
            "kind": "spec_violation",
            "t": exc.t,
            "spec": exc.spec_index,
            "stay_holds": exc.stay_holds,
            "goal_holds": exc.goal_holds,
            "message": str(exc),
        }
    if isinstance(exc, Infeasible):
        out = {"kind": "qp_infeasible", "t": t, "message": str(exc)}
        rows = getattr(exc, "rows", None)
        if rows is not None:
            out["rows"] = [r.source for r in rows]
            if exc.certificate is not None:
                out["certificate"] = {
                    rows[i].source: float(y)
                    for i, y in enumerate(exc.certificate[: len(rows)])
                    if y != 0.0
                }
        return out
    if isinstance(exc, DeterminismError):
        return {"kind": "nondeterministic", "t": t, "message": str(exc)}
    return {"kind": "numerical", "t": t, "message": f"{type(exc).__name__}: {exc}"}


def simulate(
    controller: Controller,
    dt: float,
    t_end: float,
    dra: Dra | None = None,
    suffix_cycles: int | None = DEFAULT_SUFFIX_CYCLES,
    keep_diagnostics: bool = False,
) -> Trajectory:
    """Integrate the closed loop from ``x0`` with a zero-order hold of period ``dt``.

    Stops at the first spec violation, QP infeasibility or numerical fault and
    records it in ``failure``; the samples up to that point are returned.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    model, plan = controller.model, controller.plan
    t_stop = horizon(plan, t_end, suffix_cycles)
    n_steps = int(math.floor(t_stop / dt + 1e-9))
    n_cols = _n_columns(plan)
    props = controller.props

    times, states, inputs, goals, pairs, dstates, diags = [], [], [], [], [], [], []
    q = dra.initial if dra is not None else None
    x = model.x0.copy()
    failure = None
    wall = _time.perf_counter()
    for i in range(n_steps + 1):
        t = i * dt
        times.append(t)
        states.append(x.copy())
        gv, pv = np.full(n_cols, np.nan), np.full(n_cols, np.nan)
        cache: dict = {}
        for k in range(n_cols):
            sb = controller.barriers(k)
            gv[k] = sb.goal.evaluate(x, t, cache)[0]
            if sb.pair is not None:
                pv[k] = sb.pair.evaluate(x, t, cache)[0]
        goals.append(gv)
        pairs.append(pv)
        if dra is not None:
            if q is not None:
                q = dra_step(dra, q, label(x, props.values()))
            dstates.append(q if q is not None else "")
        if not np.all(np.isfinite(x)):
            failure = {"kind": "numerical", "t": t, "message": "state is not finite"}
            inputs.append(np.full(model.m, np.nan))
            break
        try:
            res = controller.step(x, t)
        except (SpecViolation, Infeasible, DeterminismError, ArithmeticError, np.linalg.LinAlgError) as exc:
            failure = _failure(exc, t)
            inputs.append(np.full(model.m, np.nan))
            break
        u = res.u
        inputs.append(u.copy())
        if keep_diagnostics:
            diags.append(res.diagnostics)
        if i == n_steps:
            break
        x = rk4_step(model, x, u, dt)
    if failure is not None:
        failure.setdefault("t", times[-1])
    return Trajectory(
        times=np.array(times),
        states=np.array(states).reshape(len(times), model.n),
        inputs=np.array(inputs).reshape(len(times), model.m),
        goal_values=np.array(goals).reshape(len(times), n_cols),
        pair_values=np.array(pairs).reshape(len(times), n_cols),
        dra_states=dstates,
        failure=failure,
        diagnostics=diags,
        wall_time=_time.perf_counter() - wall,
    )


def extract_trace(traj: Trajectory, props: Sequence[PropositionDef] | Mapping[str, PropositionDef]) -> list[Segment]:
    """Maximal runs of samples with equal label sets."""
    if isinstance(props, Mapping):
        props = list(props.values())
    segs: list[Segment] = []
    cur, start = None, 0.0
    for t, x in zip(traj.times, traj.states):
        lab = label(x, props)
        if lab != cur:
            if cur is not None:
                segs.append(Segment(cur, start, float(t)))
            cur, start = lab, float(t)
    if cur is not None:
        end = float(traj.times[-1]) if len(traj.times) else 0.0
        segs.append(Segment(cur, start, end))
    return segs


def monitor(d: Dra, trace: Sequence[Segment], plan: TaskPlan, failure: dict | None = None) -> Verdict:
    """Replay the trace on the automaton and score each scheduled hop.

    A hop is achieved when the automaton takes it inside its window; a
    self-loop hop is achieved when its window closes with the automaton still
    in place. The run is consistent iff the visited states follow the planned
    run and every hop due so far happened on time.
    """
    t_final = trace[-1].end if trace else 0.0
    entries: list[dict] = []
    consistent = True
    q = d.initial
    visited = [q]
    k = 0
    stuck = None

    def planned(k):
        spec = plan.instance(k)
        return spec.source, spec.window

    def close_self_loops(upto):
        nonlocal k
        while True:
            (src, dst), (w0, w1) = planned(k)
            if src != dst or w1 > upto:
                return
            entries.append({"index": k, "achieved": q == src, "transition_time": w0 if q == src else None, "deadline": w1})
            k += 1

    for seg in trace:
        close_self_loops(seg.start)
        try:
            nxt = dra_step(d, q, seg.labels)
        except DeterminismError:
            nxt = NO_MOVE
        if nxt is NO_MOVE:
            consistent = False
            stuck = {"kind": "no_move", "t": seg.start, "state": q, "labels": sorted(seg.labels)}
            break
        if nxt == q:
            continue
        (src, dst), (w0, w1) = planned(k)
        if (src, dst) == (q, nxt) and src != dst:
            ok = w0 <= seg.start <= w1
            consistent = consistent and ok
            entries.append({"index": k, "achieved": ok, "transition_time": seg.start, "deadline": w1})
            k += 1
        else:
            consistent = False
            stuck = {"kind": "off_plan", "t": seg.start, "from": q, "to": nxt}
        q = nxt
        visited.append(q)
        if stuck is not None:
            break
    if stuck is None:
        close_self_loops(t_final)
    # hops whose window has closed without being taken
    while stuck is None:
        (src, dst), (w0, w1) = planned(k)
        if w1 > t_final or src == dst:
            break
        entries.append({"index": k, "achieved": False, "transition_time": None, "deadline": w1})
        consistent = False
        k += 1
    cycles = 0
    if plan.n_suffix:
        done = [e for e in entries if e["index"] >= plan.n_prefix]
        run = 0
        for e in done:
            if not e["achieved"]:
                break
            run += 1
        cycles = run // plan.n_suffix
    return Verdict(entries, consistent and failure is None, cycles, failure or stuck, visited)


def write_csv(path, traj: Trajectory) -> None:
    n, m = traj.states.shape[1], traj.inputs.shape[1]
    k = traj.goal_values.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
    header += [f"h_spec{j}" for j in range(k)] + ["dra_state"]
    fmt = "{:.17g}".format
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(traj.times):
            row = [fmt(t)] + [fmt(v) for v in traj.states[i]] + [fmt(v) for v in traj.inputs[i]]
            row += [fmt(v) for v in traj.goal_values[i]]
            row.append(traj.dra_states[i] if i < len(traj.dra_states) else "")
            w.writerow(row)


def write_outputs(out_csv, report, traj: Trajectory, verdict: Verdict) -> None:
    if out_csv is not None:
        write_csv(out_csv, traj)
    if report is not None:
        with open(report, "w") as fh:
            json.dump(verdict.to_json(), fh, indent=2)
            fh.write("\n")
