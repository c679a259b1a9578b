"""Scenario files: JSON description of model, propositions, automaton and settings."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from tlcbf.automaton import Dra, DraSyntaxError, DraValidationError, parse_dra
from tlcbf.exprcore import DEFAULT_NORM_DELTA, ExprSyntaxError, PropositionDef, parse_expr
from tlcbf.qpctrl import CtrlParams, GuardConfig, SystemModel


class ScenarioError(ValueError):
    """Configuration problem located by a JSON pointer."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.message = message
        self.pointer = pointer or "/"

    def to_json(self) -> dict:
        return {"error": "config", "pointer": self.pointer, "message": self.message}


@dataclass
class SimSettings:
    dt: float = 1e-3
    t_end: float = 5.0
    suffix_cycles: int | None = 2


@dataclass
class Scenario:
    name: str
    model: SystemModel
    props: dict[str, PropositionDef]
    dra: Dra
    dra_text: str
    run_index: int = 0
    deadlines: tuple[float, ...] | None = None
    period: float | None = None
    horizon: float | None = None
    params: CtrlParams = field(default_factory=CtrlParams)
    guards: GuardConfig = field(default_factory=GuardConfig)
    sim: SimSettings = field(default_factory=SimSettings)
    source: str | None = None


_CTRL_KEYS = {
    "kappa": "kappa",
    "rho": "rho",
    "gamma_min": "gamma_min",
    "margin": "margin",
    "lambda": "lam",
    "sharpness": "sharpness",
    "lookahead": "lookahead",
    "lookahead_mode": "lookahead_mode",
}


def _get(obj: dict, key: str, ptr: str, kind=None, default: Any = ...):
    if not isinstance(obj, dict):
        raise ScenarioError("expected an object", ptr)
    if key not in obj:
        if default is ...:
            raise ScenarioError(f"missing required field {key!r}", ptr)
        return default
    v = obj[key]
    if kind is not None and not isinstance(v, kind):
        raise ScenarioError(f"expected {_kind_name(kind)}", f"{ptr}/{key}")
    return v


def _kind_name(kind) -> str:
    kinds = kind if isinstance(kind, tuple) else (kind,)
    names = {dict: "an object", list: "an array", str: "a string", int: "an integer", float: "a number", bool: "a boolean"}
    return " or ".join(dict.fromkeys(names.get(k, k.__name__) for k in kinds))


def _number(v, ptr: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioError("expected a finite number", ptr)
    return float(v)


def _vector(v, n: int, ptr: str) -> np.ndarray:
    if not isinstance(v, list) or len(v) != n:
        raise ScenarioError(f"expected an array of {n} numbers", ptr)
    return np.array([_number(x, f"{ptr}/{i}") for i, x in enumerate(v)])


def _expr(text, n: int, ptr: str, delta: float):
    if not isinstance(text, str):
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            text = repr(float(text))
        else:
            raise ScenarioError("expected an expression string", ptr)
    try:
        return parse_expr(text, n, delta)
    except ExprSyntaxError as err:
        raise ScenarioError(str(err), ptr) from err


def _model(doc: dict, delta: float) -> SystemModel:
    ptr = "/model"
    m_doc = _get(doc, "model", "", dict)
    n = _get(m_doc, "n", ptr, int)
    m = _get(m_doc, "m", ptr, int)
    if n < 1 or m < 1:
        raise ScenarioError("state and input dimensions must be positive", ptr)
    f_doc = _get(m_doc, "f", ptr, list)
    if len(f_doc) != n:
        raise ScenarioError(f"expected {n} drift expressions, got {len(f_doc)}", f"{ptr}/f")
    f = [_expr(e, n, f"{ptr}/f/{i}", delta) for i, e in enumerate(f_doc)]
    g_doc = _get(m_doc, "g", ptr, list)
    if len(g_doc) != n:
        raise ScenarioError(f"expected {n} rows, got {len(g_doc)}", f"{ptr}/g")
    g = []
    for i, row in enumerate(g_doc):
        if not isinstance(row, list) or len(row) != m:
            raise ScenarioError(f"expected a row of {m} expressions", f"{ptr}/g/{i}")
        g.append([_expr(e, n, f"{ptr}/g/{i}/{j}", delta) for j, e in enumerate(row)])
    x0 = _vector(_get(m_doc, "x0", ptr), n, f"{ptr}/x0")
    for path, e in [(f"{ptr}/f/{i}", e) for i, e in enumerate(f)] + [
        (f"{ptr}/g/{i}/{j}", e) for i, r in enumerate(g) for j, e in enumerate(r)
    ]:
        if e.uses_time():
            raise ScenarioError("dynamics must not depend on t", path)
    return SystemModel(n, m, f, g, x0)


def _params(doc: dict, m: int) -> tuple[CtrlParams, tuple | None]:
    ptr = "/controller"
    c_doc = _get(doc, "controller", "", dict, {})
    kwargs = {}
    for key, attr in _CTRL_KEYS.items():
        if key in c_doc:
            v = c_doc[key]
            if key == "lookahead":
                if not isinstance(v, int) or isinstance(v, bool):
                    raise ScenarioError("expected an integer", f"{ptr}/{key}")
                kwargs[attr] = v
            elif key == "lookahead_mode":
                kwargs[attr] = v
            else:
                kwargs[attr] = _number(v, f"{ptr}/{key}")
    unknown = set(c_doc) - set(_CTRL_KEYS) - {"P", "input_box"}
    if unknown:
        raise ScenarioError(f"unknown field {sorted(unknown)[0]!r}", ptr)
    if "P" in c_doc:
        flat = c_doc["P"]
        if not isinstance(flat, list) or len(flat) != m * m:
            raise ScenarioError(f"expected {m * m} numbers (row-major {m}x{m})", f"{ptr}/P")
        kwargs["P"] = np.array([_number(v, f"{ptr}/P/{i}") for i, v in enumerate(flat)]).reshape(m, m)
    box = None
    if "input_box" in c_doc:
        b = c_doc["input_box"]
        if not isinstance(b, dict):
            raise ScenarioError("expected {\"lo\": [...], \"hi\": [...]}", f"{ptr}/input_box")
        lo = np.array([-math.inf if v is None else _number(v, f"{ptr}/input_box/lo/{i}")
                       for i, v in enumerate(_get(b, "lo", f"{ptr}/input_box", list))])
        hi = np.array([math.inf if v is None else _number(v, f"{ptr}/input_box/hi/{i}")
                       for i, v in enumerate(_get(b, "hi", f"{ptr}/input_box", list))])
        if lo.shape != (m,) or hi.shape != (m,):
            raise ScenarioError(f"bounds must have {m} entries", f"{ptr}/input_box")
        if np.any(lo > hi):
            raise ScenarioError("lower bound exceeds upper bound", f"{ptr}/input_box")
        box = (lo, hi)
    try:
        return CtrlParams(**kwargs), box
    except ValueError as err:
        key = str(err).split()[0]
        raise ScenarioError(str(err), f"{ptr}/{key}" if key in c_doc else ptr) from err


def _guards(doc: dict, props: dict) -> GuardConfig:
    ptr = "/guards"
    g_doc = _get(doc, "guards", "", dict, {})
    overrides = {}
    for key, val in g_doc.items():
        name = key[1:] if key.startswith("!") else key
        if name not in props:
            raise ScenarioError(f"unknown proposition {name!r}", f"{ptr}/{key}")
        if val is None:
            overrides[key] = None
            continue
        if not isinstance(val, dict):
            raise ScenarioError("expected an object or null", f"{ptr}/{key}")
        entry = {}
        for k, v in val.items():
            if k not in ("E", "b", "c", "eps", "margin", "certify_until"):
                raise ScenarioError(f"unknown guard field {k!r}", f"{ptr}/{key}")
            entry[k] = _number(v, f"{ptr}/{key}/{k}")
        overrides[key] = entry
    return GuardConfig(overrides=overrides)


def _dra_text(doc: dict, base_dir: str | None) -> tuple[str, str]:
    spec = _get(doc, "dra", "", (dict, str))
    if isinstance(spec, str):
        return spec, "/dra"
    if "text" in spec:
        return _get(spec, "text", "/dra", str), "/dra/text"
    path = _get(spec, "file", "/dra", str)
    if not os.path.isabs(path) and base_dir is not None:
        path = os.path.join(base_dir, path)
    try:
        with open(path) as fh:
            return fh.read(), "/dra/file"
    except OSError as err:
        raise ScenarioError(f"cannot read automaton file: {err.strerror}", "/dra/file") from err


def scenario_from_dict(doc: dict, base_dir: str | None = None, source: str | None = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object", "")
    delta = _number(doc.get("norm_delta", DEFAULT_NORM_DELTA), "/norm_delta")
    model = _model(doc, delta)
    p_doc = _get(doc, "props", "", dict)
    if not p_doc:
        raise ScenarioError("at least one proposition is required", "/props")
    props = {}
    for name, text in p_doc.items():
        ptr = f"/props/{name}"
        if not name.isidentifier():
            raise ScenarioError("proposition names must be identifiers", ptr)
        z = _expr(text, model.n, ptr, delta)
        if z.uses_time():
            raise ScenarioError("state functions must not depend on t", ptr)
        props[name] = PropositionDef(name, z)
    text, dptr = _dra_text(doc, base_dir)
    try:
        dra = parse_dra(text, props.values())
    except DraSyntaxError as err:
        raise ScenarioError(str(err), dptr) from err
    except DraValidationError as err:
        raise ScenarioError(str(err), dptr) from err
    params, box = _params(doc, model.m)
    model.input_box = box

    pl = _get(doc, "plan", "", dict, {})
    run_index = _get(pl, "run_index", "/plan", int, 0)
    if run_index < 0:
        raise ScenarioError("must be nonnegative", "/plan/run_index")
    deadlines = period = horizon = None
    if "deadlines" in pl:
        raw = _get(pl, "deadlines", "/plan", list)
        deadlines = tuple(_number(v, f"/plan/deadlines/{i}") for i, v in enumerate(raw))
        prev = 0.0
        for i, t in enumerate(deadlines):
            if not t > prev:
                raise ScenarioError("deadlines must be strictly increasing and positive", f"/plan/deadlines/{i}")
            prev = t
    if "period" in pl:
        period = _number(pl["period"], "/plan/period")
        if not period > 0:
            raise ScenarioError("must be positive", "/plan/period")
    if "horizon" in pl:
        horizon = _number(pl["horizon"], "/plan/horizon")
        if not horizon > 0:
            raise ScenarioError("must be positive", "/plan/horizon")

    s_doc = _get(doc, "sim", "", dict, {})
    sim = SimSettings()
    if "dt" in s_doc:
        sim.dt = _number(s_doc["dt"], "/sim/dt")
        if not sim.dt > 0:
            raise ScenarioError("must be positive", "/sim/dt")
    if "t_end" in s_doc:
        sim.t_end = _number(s_doc["t_end"], "/sim/t_end")
        if not sim.t_end > 0:
            raise ScenarioError("must be positive", "/sim/t_end")
    if "suffix_cycles" in s_doc:
        v = s_doc["suffix_cycles"]
        if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 0):
            raise ScenarioError("expected a nonnegative integer or null", "/sim/suffix_cycles")
        sim.suffix_cycles = v

    return Scenario(
        name=str(doc.get("name", "scenario")),
        model=model,
        props=props,
        dra=dra,
        dra_text=text,
        run_index=run_index,
        deadlines=deadlines,
        period=period,
        horizon=horizon,
        params=params,
        guards=_guards(doc, props),
        sim=sim,
        source=source,
    )


def load_scenario(path) -> Scenario:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ScenarioError(f"cannot read scenario: {err.strerror}", "") from err
    except json.JSONDecodeError as err:
        raise ScenarioError(f"invalid JSON at line {err.lineno} column {err.colno}: {err.msg}", "") from err
    return scenario_from_dict(doc, os.path.dirname(os.path.abspath(path)), path)


def shipped_scenario(name: str = "tworobot") -> str:
    """Path of a scenario bundled with the package."""
    return os.path.join(os.path.dirname(__file__), "scenarios", f"{name}.json")
