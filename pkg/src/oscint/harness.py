"""Run configuration, single solves, convergence sweeps and quadrature demos."""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quadrature as quad
from .integrator import (NumericalFailure, SchemeParams, initial_twist, run,
                         n_steps_for)
from .problems import ProblemError, build_problem, default_config
from .reference import reference_solution

log = logging.getLogger(__name__)

LIMITS = {"l": (1, 4), "N": (1, 64)}
TRAJECTORY_COLUMNS = ["t", "norm_phi", "norm_w", "err_vs_ref"]
CELL_COLUMNS = ["c", "m", "l", "N", "tau", "t_end", "n_steps", "error", "status"]
SLOPE_COLUMNS = ["c", "l", "N", "slope", "n_points", "error_constant", "status"]
QUAD_COLUMNS = ["rule", "param_M", "param_m", "param_N", "test_function", "error"]


class ConfigError(ValueError):
    """Unusable run configuration."""


class InsufficientPoints(ValueError):
    """Too few usable points for a slope fit."""


# ---------------------------------------------------------------------------
# configuration


SCHEME_DEFAULTS = {"l": 2, "c": 100.0, "m": 1, "N": 8, "M": None, "gamma": 0.5,
                   "inner_split": "phase"}
REFERENCE_DEFAULTS = {"enabled": True, "method": "auto"}


@dataclass
class RunConfig:
    problem: dict
    scheme: dict
    t_final: float = 1.0
    output: str = "out"
    reference: dict = field(default_factory=lambda: dict(REFERENCE_DEFAULTS))

    def params(self, **overrides):
        s = {**self.scheme, **overrides}
        try:
            return SchemeParams(l=int(s["l"]), c=float(s["c"]), m=int(s["m"]),
                                N=int(s["N"]), M=s.get("M"), gamma=float(s["gamma"]),
                                inner_split=s["inner_split"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return {"problem": copy.deepcopy(self.problem),
                "scheme": copy.deepcopy(self.scheme),
                "t_final": self.t_final, "output": self.output,
                "reference": copy.deepcopy(self.reference)}


def _check_scheme(s):
    for key, (lo, hi) in LIMITS.items():
        v = s[key]
        if not isinstance(v, int) or isinstance(v, bool) or not lo <= v <= hi:
            raise ConfigError(f"scheme.{key} must be an integer in {lo}..{hi}, got {v!r}")
    if not isinstance(s["m"], int) or isinstance(s["m"], bool) or s["m"] < 1:
        raise ConfigError(f"scheme.m must be an integer >= 1, got {s['m']!r}")
    if not isinstance(s["c"], (int, float)) or isinstance(s["c"], bool) or s["c"] < 1:
        raise ConfigError(f"scheme.c must be a number >= 1, got {s['c']!r}")
    if s["M"] is not None and (not isinstance(s["M"], int) or s["M"] < 1):
        raise ConfigError("scheme.M must be null or a positive integer")
    if not isinstance(s["gamma"], (int, float)) or not 0 < s["gamma"] < 1:
        raise ConfigError("scheme.gamma must lie in (0, 1)")
    if s["inner_split"] not in ("phase", "literal"):
        raise ConfigError("scheme.inner_split must be 'phase' or 'literal'")


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(data) - {"problem", "scheme", "t_final", "output", "reference"}
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    problem = data.get("problem")
    if not isinstance(problem, dict) or "kind" not in problem:
        raise ConfigError("'problem' must be an object with a 'kind'")
    try:
        problem = {**default_config(problem["kind"]), **problem}
    except ProblemError as exc:
        raise ConfigError(str(exc)) from exc
    scheme = data.get("scheme", {})
    if not isinstance(scheme, dict):
        raise ConfigError("'scheme' must be an object")
    extra = set(scheme) - set(SCHEME_DEFAULTS)
    if extra:
        raise ConfigError(f"unknown scheme keys: {sorted(extra)}")
    scheme = {**SCHEME_DEFAULTS, **scheme}
    _check_scheme(scheme)
    t_final = data.get("t_final", 1.0)
    if not isinstance(t_final, (int, float)) or isinstance(t_final, bool) or t_final < 0:
        raise ConfigError("t_final must be a non-negative number")
    ref = {**REFERENCE_DEFAULTS, **data.get("reference", {})}
    if ref["method"] not in ("auto", "picard", "self"):
        raise ConfigError("reference.method must be 'auto', 'picard' or 'self'")
    return RunConfig(problem=problem, scheme=scheme, t_final=float(t_final),
                     output=str(data.get("output", "out")), reference=ref)


def parse_config(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(data)


def serialize_config(cfg):
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def make_problem(cfg, c=None):
    try:
        return build_problem(cfg.problem, cfg.scheme["c"] if c is None else c)
    except ProblemError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# reference solutions

_REFERENCE_CACHE = {}


def reference_method(cfg, problem):
    method = cfg.reference.get("method", "auto")
    if method == "auto":
        return "self" if problem.kind == "kg" else "picard"
    return method


def reference_phi_at(cfg, problem, t_final, times):
    """Reference ``phi`` at each of ``times`` (whole multiples of ``T``).

    Cached per (problem, method, t_final).  ``picard`` solves the full
    system to a fixed point; ``self`` runs ``Psi_3`` with ``m = 1`` and
    ``N`` from the configuration.
    """
    method = reference_method(cfg, problem)
    key = (problem.key(), method, float(t_final), int(cfg.scheme["N"]) if method == "self" else 0)
    if key not in _REFERENCE_CACHE:
        start = time.perf_counter()
        if method == "picard":
            w0 = initial_twist(problem.phi0, problem.dphi0, problem.c, problem.basis)
            ref = reference_solution(problem.basis, problem.nonlinearity, w0,
                                     problem.c, t_final)
            if not ref.converged:
                log.warning("reference iteration did not converge (c=%g)", problem.c)
            entry = ("periods", ref)
        else:
            params = SchemeParams(l=3, c=problem.c, m=1, N=int(cfg.scheme["N"]))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                traj = run(problem, params, t_final)
            entry = ("steps", traj)
        _REFERENCE_CACHE[key] = entry
        log.info("reference %s at c=%g built in %.1fs", method, problem.c,
                 time.perf_counter() - start)
    kind, ref = _REFERENCE_CACHE[key]
    T = 2.0 * math.pi / problem.c ** 2
    out = []
    for t in times:
        j = round(t / T)
        if kind == "periods":
            out.append(0.5 * (ref.w_periods[j, 0] + ref.w_periods[j, 1]))
        else:
            out.append(ref.phi[j])
    return np.array(out)


def clear_reference_cache():
    _REFERENCE_CACHE.clear()


# ---------------------------------------------------------------------------
# single solve


def solve(cfg, out_dir=None):
    """Run one configuration; write ``trajectory.csv`` and ``summary.json``.

    Returns the process exit code (0 success, 2 blow-up or numerical failure).
    """
    out = Path(out_dir or cfg.output)
    params = cfg.params()
    problem = make_problem(cfg)
    summary = {"config": cfg.to_dict(), "T": params.T, "tau": params.tau}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            traj = run(problem, params, cfg.t_final)
        for w in caught:
            log.warning("%s", w.message)
    except (NumericalFailure, FloatingPointError) as exc:
        summary.update(status="numerical_failure", message=str(exc),
                       step=getattr(exc, "step", None))
        _write_json(out / "summary.json", summary)
        log.error("%s", exc)
        return 2
    err = None
    if cfg.reference.get("enabled", True) and traj.n_steps > 0 and not traj.blowup:
        ref = reference_phi_at(cfg, problem, float(traj.t[-1]), traj.t)
        err = np.linalg.norm(traj.phi - ref, axis=-1)
    rows = []
    for k in range(traj.t.size):
        rows.append([_fmt(traj.t[k]), _fmt(traj.norm_phi[k]), _fmt(traj.norm_w[k]),
                     _fmt(err[k]) if err is not None else ""])
    _write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, rows)
    summary.update(
        status="blowup" if traj.blowup else "ok",
        n_steps=traj.n_steps, t_end=float(traj.t[-1]),
        evaluations_per_step=traj.evaluations_per_step, max_depth=traj.depth,
        final_error=float(err[-1]) if err is not None else None,
        max_norm_w=float(np.max(traj.norm_w)), notes=traj.notes)
    _write_json(out / "summary.json", summary)
    return 2 if traj.blowup else 0


# ---------------------------------------------------------------------------
# convergence sweeps


def fit_order(pairs, floor=None):
    """Least-squares slope of ``log(error)`` against ``log(tau)``.

    With ``floor`` given, points with ``error <= 10 * floor`` are dropped.
    """
    pts = [(float(t), float(e)) for t, e in pairs
           if e > 0 and np.isfinite(e) and (floor is None or e > 10.0 * floor)]
    if len(pts) < 3:
        raise InsufficientPoints(f"need at least 3 usable points, got {len(pts)}")
    x, y = np.log(np.array(pts)).T
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class ConvergenceReport:
    cells: list
    slopes: list
    uniformity: dict

    def slope(self, c, l):
        for row in self.slopes:
            if row["c"] == c and row["l"] == l:
                return row["slope"]
        raise KeyError((c, l))


def run_cell(cfg, c, m, l, N):
    """Global error at the last step time not exceeding ``t_final``."""
    cell = {"c": float(c), "m": int(m), "l": int(l), "N": int(N)}
    try:
        params = cfg.params(c=float(c), m=int(m), l=int(l), N=int(N))
    except ConfigError as exc:
        return {**cell, "tau": math.nan, "t_end": math.nan, "n_steps": 0,
                "error": math.nan, "status": f"invalid: {exc}"}
    cell["tau"] = params.tau
    n_steps, _ = n_steps_for(cfg.t_final, params.tau)
    if params.tau >= 1 or n_steps == 0:
        return {**cell, "t_end": 0.0, "n_steps": 0, "error": math.nan,
                "status": "invalid: step does not fit (tau >= 1 or tau > t_final)"}
    problem = make_problem(cfg, c)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            traj = run(problem, params, cfg.t_final)
    except NumericalFailure as exc:
        return {**cell, "t_end": math.nan, "n_steps": 0, "error": math.nan,
                "status": f"failed: {exc}"}
    t_end = float(traj.t[-1])
    try:
        # the reference is built once up to t_final and indexed by period
        ref = reference_phi_at(cfg, problem, cfg.t_final, [t_end])[0]
    except (RuntimeError, ValueError) as exc:
        return {**cell, "t_end": t_end, "n_steps": traj.n_steps, "error": math.nan,
                "status": f"reference failed: {exc}"}
    err = float(np.linalg.norm(traj.phi[-1] - ref))
    status = "blowup" if traj.blowup else "ok"
    return {**cell, "t_end": t_end, "n_steps": traj.n_steps, "error": err,
            "status": status}


def _cell_worker(args):
    data, c, m, l, N = args
    return run_cell(config_from_dict(data), c, m, l, N)


def worker_count():
    try:
        return max(1, int(os.environ.get("OSCINT_THREADS", "1")))
    except ValueError:
        return 1


def converge(cfg, sweep):
    """Sweep over ``sweep`` lists (keys ``m``, ``c``, ``l``, ``N``).

    Missing keys take the configuration value.  Slopes are fitted per
    ``(c, l)`` over ``m``; the error constant of a ``(c, l)`` group is the
    median of ``error / tau^l`` over its valid cells, and the uniformity
    ratio of ``l`` is max/min of those constants across ``c``.
    """
    grid = {k: list(sweep.get(k, [cfg.scheme[k]])) for k in ("c", "m", "l", "N")}
    for k, v in grid.items():
        if not v:
            raise ConfigError(f"sweep list for {k} is empty")
    jobs = [(c, m, l, N) for c in grid["c"] for l in grid["l"]
            for N in grid["N"] for m in grid["m"]]
    workers = worker_count()
    if workers > 1 and len(jobs) > 1:
        data = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell_worker, [(data,) + j for j in jobs]))
    else:
        cells = [run_cell(cfg, *j) for j in jobs]
    cells.sort(key=lambda r: (r["c"], r["l"], r["N"], r["m"]))
    slopes = []
    constants = {}
    for c in sorted(set(grid["c"])):
        for l in sorted(set(grid["l"])):
            for N in sorted(set(grid["N"])):
                group = [r for r in cells if r["c"] == c and r["l"] == l
                         and r["N"] == N and r["status"] == "ok"]
                floor = float(cfg.scheme["gamma"]) ** (2 * N)
                used = [r for r in group if r["error"] > 10 * floor]
                row = {"c": float(c), "l": int(l), "N": int(N), "n_points": len(used)}
                try:
                    row["slope"] = fit_order([(r["tau"], r["error"]) for r in used])
                    row["status"] = "ok"
                except InsufficientPoints as exc:
                    row["slope"] = math.nan
                    row["status"] = str(exc)
                # the floor filter is for slopes only; constants use every valid cell
                scaled = [r["error"] / r["tau"] ** l for r in group
                          if r["error"] > 0 and np.isfinite(r["error"])]
                if scaled:
                    row["error_constant"] = float(np.median(scaled))
                    constants.setdefault((l, N), {})[float(c)] = row["error_constant"]
                else:
                    row["error_constant"] = math.nan
                slopes.append(row)
    uniformity = {}
    for (l, N), per_c in sorted(constants.items()):
        vals = list(per_c.values())
        uniformity[f"l={l},N={N}"] = {
            "ratio": max(vals) / min(vals) if len(vals) > 1 else 1.0,
            "c_values": sorted(per_c)}
    return ConvergenceReport(cells=cells, slopes=slopes, uniformity=uniformity)


def write_report(report, out_dir):
    out = Path(out_dir)
    _write_csv(out / "convergence.csv", CELL_COLUMNS,
               [[_fmt(r[k]) for k in CELL_COLUMNS] for r in report.cells])
    _write_csv(out / "slopes.csv", SLOPE_COLUMNS,
               [[_fmt(r[k]) for k in SLOPE_COLUMNS] for r in report.slopes])
    _write_json(out / "summary.json", {"slopes": report.slopes,
                                       "uniformity": report.uniformity})


# ---------------------------------------------------------------------------
# quadrature demos


def _trap_fn(x):
    return 1.0 / (2.0 + np.cos(2.0 * np.pi * x))


def quad_demo(rule, max_n=None):
    """Error table rows ``[rule, M, m, N, test_function, error]``."""
    rows = []
    if rule == "trapezoid":
        exact = 1.0 / math.sqrt(3.0)
        for N in range(2, (max_n or 24) + 1):
            err = abs(quad.trapezoid_periodic(_trap_fn, N) - exact)
            rows.append([rule, "", "", N, "1/(2+cos(2 pi x)) on [0,1]", err])
    elif rule == "gauss":
        exact = math.e - 1.0
        for N in range(1, (max_n or 10) + 1):
            err = abs(quad.gauss_integrate(np.exp, 0.0, 1.0, N) - exact)
            rows.append([rule, "", "", N, "exp(x) on [0,1]", err])
    elif rule == "gram":
        M, m = 3, 30
        x = quad.equidistant_grid(m)
        r = quad.gram_rule(M, m)
        for d in range(0, min(2 * M, max_n or 2 * M)):
            err = abs((2.0 / m) * np.sum(x ** d) - np.sum(r.weights * r.nodes ** d))
            rows.append([rule, M, m, "", f"x^{d} on {m} points", err])
    elif rule == "double":
        tau, m, M = 0.25, 20, 3
        exact = _double_exact(tau, m)
        for N in range(2, (max_n or 16) + 1):
            val = quad.double_rule(lambda s, x: math.exp(s) * _trap_fn(x), tau, m, M, N)
            rows.append([rule, M, m, N, "exp(s)/(2+cos(2 pi x))", abs(val - exact)])
    else:
        raise ConfigError(f"unknown rule {rule!r}")
    return rows


def _double_exact(tau, m):
    T = tau / m
    return T * sum(math.exp(j * T) for j in range(m)) / math.sqrt(3.0)


def rule_table(rule, n):
    """Node/weight table of the rule demonstrated by :func:`quad_demo`."""
    if rule == "gauss":
        r = quad.gauss_legendre(n)
    elif rule == "gram":
        r = quad.gram_rule(3, 30)
    elif rule == "trapezoid":
        return [(k / n, 1.0 / n) for k in range(n)]
    else:
        r = quad.gram_rule(3, 20)
    return list(zip(r.nodes, r.weights))


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return repr(float(v))


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([[_fmt(v) for v in row] for row in rows])
    return buf.getvalue()


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
