"""Config loading, the five pipeline commands, and deterministic CSV/JSON output.

Every command computes first and writes afterwards, from one thread, so a
failed run never leaves half a set of artifacts behind.  Floats in CSV files
are written with 17 significant digits; JSON uses the shortest repr that
round-trips, which is equally exact and stable across runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .bounds import KAPPA_HAT, build_envelope, curvature_constant, verify_sandwich
from .errors import (
    BadWindow,
    CanardError,
    DegenerateClassification,
    NoCrossing,
    NoExitBeforeT,
    ParseError,
    ValidationError,
    ZeroCoefficient,
)
from .integrator import EPS_MAX, SolverOptions, Termination, integrate, sweep
from .model import (
    AssumptionReport,
    CaseLabel,
    QuadraticCoefficients,
    SimulationWindow,
    SwitchKind,
    check_assumptions,
    classify,
    dual_transform,
    validate,
)
from .slow_analysis import (
    composite_limit,
    crossing_time,
    entry_exit_G,
    entry_exit_G_quad,
    entry_exit_profile,
    entry_flow,
    oracle_grid,
    switch_times,
)

SCHEMA_VERSION = "canard-report/1"

DEFAULT_THETA = 0.5
DEFAULT_DELTA = 0.05
DEFAULT_SANDWICH_EPSILON = 0.02
DEFAULT_OUTPUT_DIR = "canard_out"

COMPOSITE_POINTS = 1001
ORACLE_POINTS = 100
ORACLE_G_TOL = 1e-8
ORACLE_ROOT_TOL = 1e-9

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DEGENERATE = 2
EXIT_VERIFY_FAILED = 3
EXIT_RUNTIME = 4

_COEFF_NAMES = ("A", "B", "C", "D", "E", "F")
_WINDOW_DEFAULTS = {"t0": 0.0, "M": 10.0, "N": 10.0}
_SOLVER_KEYS = ("rel_tol", "abs_tol", "max_step", "min_step", "use_log_fast_variable")
_TOP_KEYS = {
    "name", "description", "expected_label", "coefficients", "window", "epsilons",
    "epsilon", "solver", "theta", "delta", "eta", "sandwich_epsilon", "output_dir", "workers",
}


class UsageError(CanardError):
    """Command invoked without something it needs (e.g. no epsilon for simulate)."""


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    coeffs: QuadraticCoefficients
    window: SimulationWindow
    epsilons: tuple[float, ...]
    solver: SolverOptions = field(default_factory=SolverOptions)
    theta: float = DEFAULT_THETA
    delta: float = DEFAULT_DELTA
    eta: float = 0.02
    output_dir: str = DEFAULT_OUTPUT_DIR
    epsilon: float | None = None
    sandwich_epsilon: float = DEFAULT_SANDWICH_EPSILON
    workers: int = 1
    name: str = ""

    def echo(self) -> dict:
        """Normalized config with every default filled in."""
        c, w, s = self.coeffs, self.window, self.solver
        return {
            "name": self.name,
            "coefficients": {k: float(getattr(c, k)) for k in _COEFF_NAMES},
            "window": {k: float(getattr(w, k)) for k in ("t0", "T", "x0", "y0", "M", "N")},
            "epsilons": list(self.epsilons),
            "epsilon": self.epsilon,
            "solver": {k: getattr(s, k) for k in _SOLVER_KEYS},
            "theta": self.theta,
            "delta": self.delta,
            "eta": self.eta,
            "sandwich_epsilon": self.sandwich_epsilon,
            "workers": self.workers,
        }


def _number(data: dict, key: str, field_name: str, default: Any = ...) -> float:
    if key not in data or data[key] is None:
        if default is ...:
            raise ValidationError(field_name, "required")
        return default
    v = data[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(field_name, f"expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ValidationError(field_name, "must be finite")
    return float(v)


def _epsilon(v: float, field_name: str) -> float:
    if not 0 < v <= EPS_MAX:
        raise ValidationError(field_name, f"must lie in (0, {EPS_MAX}], got {v!r}")
    return v


def _section(data: dict, key: str, required: bool = True) -> dict:
    sec = data.get(key)
    if sec is None and not required:
        return {}
    if not isinstance(sec, dict):
        raise ValidationError(key, "expected an object")
    return sec


def config_from_dict(data: Any) -> RunConfig:
    """Validate a parsed config document and apply defaults."""
    if not isinstance(data, dict):
        raise ValidationError("config", "top level must be an object")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ValidationError(unknown[0], "unknown field")

    co = _section(data, "coefficients")
    coeffs = QuadraticCoefficients(*(_number(co, k, k) for k in _COEFF_NAMES))
    win = _section(data, "window")
    window = SimulationWindow(
        t0=_number(win, "t0", "t0", _WINDOW_DEFAULTS["t0"]),
        T=_number(win, "T", "T"),
        x0=_number(win, "x0", "x0"),
        y0=_number(win, "y0", "y0"),
        M=_number(win, "M", "M", _WINDOW_DEFAULTS["M"]),
        N=_number(win, "N", "N", _WINDOW_DEFAULTS["N"]),
    )
    try:
        validate(coeffs, window)
    except ZeroCoefficient as exc:
        raise ValidationError(exc.field, "must be nonzero") from exc
    except BadWindow as exc:
        raise ValidationError("window", str(exc)) from exc

    raw_eps = data.get("epsilons")
    if not isinstance(raw_eps, list) or not raw_eps:
        raise ValidationError("epsilons", "expected a nonempty list")
    eps = tuple(_epsilon(_number({"e": e}, "e", "epsilons"), "epsilons") for e in raw_eps)
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError("epsilons", "must be strictly decreasing")

    epsilon = data.get("epsilon")
    if epsilon is not None:
        epsilon = _epsilon(_number(data, "epsilon", "epsilon"), "epsilon")

    sol = _section(data, "solver", required=False)
    extra = sorted(set(sol) - set(_SOLVER_KEYS))
    if extra:
        raise ValidationError(f"solver.{extra[0]}", "unknown field")
    try:
        solver = SolverOptions(**sol)
    except (TypeError, ValueError) as exc:
        raise ValidationError("solver", str(exc)) from exc

    theta = _number(data, "theta", "theta", DEFAULT_THETA)
    if not 0 < theta < 1:
        raise ValidationError("theta", "must lie in (0, 1)")
    delta = _number(data, "delta", "delta", DEFAULT_DELTA)
    if not delta > 0:
        raise ValidationError("delta", "must be positive")
    k = curvature_constant(coeffs)
    eta = _number(data, "eta", "eta", min(0.02, delta / k))
    if eta < 0 or eta * k > delta:
        raise ValidationError("eta", f"need 0 <= eta <= delta/k = {delta / k!r}")
    sandwich_eps = _epsilon(_number(data, "sandwich_epsilon", "sandwich_epsilon",
                                    DEFAULT_SANDWICH_EPSILON), "sandwich_epsilon")

    workers = data.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ValidationError("workers", "must be a positive integer")
    out = data.get("output_dir", DEFAULT_OUTPUT_DIR)
    if not isinstance(out, str) or not out:
        raise ValidationError("output_dir", "must be a nonempty string")
    name = data.get("name", "")
    if not isinstance(name, str):
        raise ValidationError("name", "must be a string")

    return RunConfig(coeffs, window, eps, solver, theta, delta, eta, out, epsilon,
                     sandwich_eps, workers, name)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        err = ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")
        err.line, err.column = exc.lineno, exc.colno
        raise err from exc
    return config_from_dict(data)


def bundled_examples() -> dict[str, Path]:
    """Name -> path of the example configs shipped with the package."""
    root = Path(__file__).parent / "examples"
    return {p.stem: p for p in sorted(root.glob("*.json"))}


# -- serialization ---------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if hasattr(obj, "value"):  # str enums
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(doc: dict) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _document(cfg: RunConfig, command: str, body: dict) -> dict:
    return {"schema": SCHEMA_VERSION, "version": __version__, "command": command,
            "config": cfg.echo(), **body}


def _csv_text(header, columns) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


@dataclass
class CommandResult:
    exit_code: int
    message: str
    # file name -> text, written together once the command has finished
    outputs: dict[str, str] = field(default_factory=dict)
    written: list[Path] = field(default_factory=list)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.outputs):
            p = out / name
            with open(p, "w", encoding="utf-8", newline="\n") as f:
                f.write(self.outputs[name])
            self.written.append(p)
        return self.written


def _label_dict(label: CaseLabel | None) -> dict | None:
    if label is None:
        return None
    return {
        "text": str(label),
        "case_tag": label.case_tag.value,
        "switch_kind": label.switch_kind.value,
        "canonical_form": label.canonical_form.value if label.canonical_form else None,
    }


def _assumptions_dict(rep: AssumptionReport) -> dict:
    return {
        "mode": rep.mode,
        "all_passed": rep.all_passed,
        "failures": rep.failures,
        "entries": [
            {"name": e.name, "status": e.status, "witness": e.witness,
             "condition": e.condition, "note": e.note}
            for e in rep.entries
        ],
    }


def _switching(label: CaseLabel) -> bool:
    return label.switch_kind in (SwitchKind.DELAYED, SwitchKind.IMMEDIATE)


# -- commands --------------------------------------------------------------------

def cmd_classify(cfg: RunConfig) -> CommandResult:
    try:
        label = classify(cfg.coeffs, cfg.window)
    except DegenerateClassification as exc:
        doc = _document(cfg, "classify", {"label": None, "reason": f"degenerate: {exc}"})
        return CommandResult(EXIT_DEGENERATE, f"degenerate classification: {exc}",
                             {"classify.json": dumps(doc)})
    doc = _document(cfg, "classify", {"label": _label_dict(label)})
    return CommandResult(EXIT_OK, str(label), {"classify.json": dumps(doc)})


def cmd_analyze(cfg: RunConfig) -> CommandResult:
    try:
        label = classify(cfg.coeffs, cfg.window)
    except DegenerateClassification as exc:
        return CommandResult(EXIT_DEGENERATE, f"degenerate classification: {exc}")
    body: dict[str, Any] = {"label": _label_dict(label)}
    outputs: dict[str, str] = {}

    if label.switch_kind is SwitchKind.DELAYED:
        red = entry_flow(cfg.coeffs, cfg.window, label)
        body.update(t_c=None, t_star=None, G_min=None, blowup_time=red.blowup_time, reason=None)
        try:
            prof = entry_exit_profile(cfg.coeffs, cfg.window)
        except (NoCrossing, NoExitBeforeT) as exc:
            body["reason"] = f"{type(exc).__name__}: {exc}"
            try:
                body["t_c"] = switch_times_partial(cfg, label)
            except NoCrossing:
                pass
            doc = _document(cfg, "analyze", body)
            return CommandResult(EXIT_VERIFY_FAILED, body["reason"], {"analysis.json": dumps(doc)})
        body.update(t_c=prof.t_c, t_star=prof.t_star, G_min=prof.G_min)
        outputs["g_profile.csv"] = _csv_text(("t", "G"), (prof.t, prof.G))
        msg = f"t_c = {prof.t_c!r}, t_star = {prof.t_star!r}, G_min = {prof.G_min!r}"
    elif label.switch_kind is SwitchKind.IMMEDIATE:
        red = entry_flow(cfg.coeffs, cfg.window, label)
        body.update(blowup_time=red.blowup_time, reason=None)
        try:
            t_c, _ = switch_times(cfg.coeffs, cfg.window, label)
        except NoCrossing as exc:
            body.update(t_c=None, reason=f"NoCrossing: {exc}")
            doc = _document(cfg, "analyze", body)
            return CommandResult(EXIT_VERIFY_FAILED, body["reason"], {"analysis.json": dumps(doc)})
        body["t_c"] = t_c
        msg = f"t_c = {t_c!r}"
    else:
        body.update(t_c=None, t_star=None, G_min=None, blowup_time=None,
                    reason=f"no stability switch predicted ({label.switch_kind.value})")
        msg = body["reason"]

    outputs["analysis.json"] = dumps(_document(cfg, "analyze", body))
    return CommandResult(EXIT_OK, msg, outputs)


def _psi(cfg: RunConfig) -> float:
    # the reflection fixes psi, so this is also psi of the factored frame
    return float(-cfg.coeffs.D / cfg.coeffs.F)


def switch_times_partial(cfg: RunConfig, label: CaseLabel) -> float:
    """Crossing time alone, for reporting when the exit root is missing."""
    red = entry_flow(cfg.coeffs, cfg.window, label)
    return crossing_time(red, _psi(cfg), float(cfg.window.T))


def cmd_simulate(cfg: RunConfig, epsilon: float | None = None) -> CommandResult:
    eps = epsilon if epsilon is not None else cfg.epsilon
    if eps is None:
        raise UsageError("simulate needs an epsilon: set \"epsilon\" in the config or pass --epsilon")
    traj = integrate(cfg.coeffs, cfg.window, eps, cfg.solver)
    outputs = {"trajectory.csv": _csv_text(("t", "x", "y", "w"), (traj.t, traj.x, traj.y, traj.w))}
    body: dict[str, Any] = {
        "epsilon": eps, "n_samples": len(traj), "n_steps": traj.n_steps,
        "n_rejected": traj.n_rejected, "termination": traj.termination,
        "composite": None, "composite_reason": None,
    }
    try:
        label = classify(cfg.coeffs, cfg.window)
        body["label"] = _label_dict(label)
        comp = composite_limit(cfg.coeffs, cfg.window, label)
    except CanardError as exc:
        body["composite_reason"] = f"{type(exc).__name__}: {exc}"
    else:
        w = cfg.window.numeric()
        grid = np.linspace(w.t0, w.T, COMPOSITE_POINTS)
        grid = grid[grid < comp.post.domain_end]
        outputs["composite.csv"] = _csv_text(("t", "x_lim", "y_lim"),
                                             (grid, comp.x_lim(grid), comp.y_lim(grid)))
        body["composite"] = {"switch_time": comp.switch_time, "n_points": len(grid)}
    outputs["simulate.json"] = dumps(_document(cfg, "simulate", body))
    msg = f"{len(traj)} samples, {traj.termination.value}"
    return CommandResult(EXIT_OK, msg, outputs)


def _run_sweep(cfg: RunConfig, label: CaseLabel):
    return sweep(cfg.coeffs, cfg.window, label, cfg.epsilons, cfg.solver, cfg.theta,
                 workers=cfg.workers)


def _sweep_dict(res) -> dict:
    s = res.summary
    return {
        "observations": [
            {"epsilon": o.epsilon, "t_sw": o.t_sw, "predicted": o.predicted,
             "abs_error": o.abs_error, "threshold_theta": o.threshold_theta,
             "detection_mode": o.detection_mode, "error": o.error}
            for o in res.observations
        ],
        "summary": {"errors": list(s.errors), "trend_ok": s.trend_ok,
                    "final_error": s.final_error, "slack": s.slack},
    }


def cmd_sweep(cfg: RunConfig) -> CommandResult:
    try:
        label = classify(cfg.coeffs, cfg.window)
    except DegenerateClassification as exc:
        return CommandResult(EXIT_DEGENERATE, f"degenerate classification: {exc}")
    if not _switching(label):
        reason = f"no switch to observe ({label.switch_kind.value})"
        doc = _document(cfg, "sweep", {"label": _label_dict(label), "reason": reason})
        return CommandResult(EXIT_VERIFY_FAILED, reason, {"sweep.json": dumps(doc)})
    try:
        res = _run_sweep(cfg, label)
    except (NoCrossing, NoExitBeforeT) as exc:
        reason = f"{type(exc).__name__}: {exc}"
        doc = _document(cfg, "sweep", {"label": _label_dict(label), "reason": reason})
        return CommandResult(EXIT_VERIFY_FAILED, reason, {"sweep.json": dumps(doc)})
    obs = res.observations
    csv_text = _csv_text(("epsilon", "t_sw", "predicted", "abs_error"),
                         ([o.epsilon for o in obs], [o.t_sw for o in obs],
                          [o.predicted for o in obs], [o.abs_error for o in obs]))
    doc = _document(cfg, "sweep", {"label": _label_dict(label), "reason": None, **_sweep_dict(res)})
    msg = "errors " + ", ".join(f"{e:.3g}" for e in res.summary.errors) + \
        f"; trend_ok = {res.summary.trend_ok}"
    return CommandResult(EXIT_OK, msg, {"convergence.csv": csv_text, "sweep.json": dumps(doc)})


def _check(name: str, status: str, detail: str, **values) -> dict:
    return {"name": name, "status": status, "detail": detail, **values}


def cmd_verify(cfg: RunConfig) -> CommandResult:
    """Assumptions, oracle cross-checks and the sandwich; exit 0 iff nothing fails.

    The verdict document also carries the sweep, so it doubles as the full
    run report for the config.
    """
    c, w = cfg.coeffs, cfg.window.numeric()
    checks: list[dict] = []
    try:
        label = classify(c, cfg.window)
    except DegenerateClassification as exc:
        return CommandResult(EXIT_DEGENERATE, f"degenerate classification: {exc}")
    checks.append(_check("classification", "pass" if _switching(label) else "fail", str(label)))

    report = check_assumptions(c, cfg.window)
    checks.append(_check("assumptions", "pass" if report.all_passed else "fail",
                         "all hypotheses hold" if report.all_passed
                         else "failed: " + ", ".join(report.failures)))

    t_c = t_star = None
    red = None
    if _switching(label):
        red = entry_flow(c, cfg.window, label)
        try:
            t_c, t_star = switch_times(c, cfg.window, label)
        except NoCrossing:
            pass
        except NoExitBeforeT:
            t_c = switch_times_partial(cfg, label)

    # closed-form crossing vs bracketing root finder on the same slow flow
    if t_c is None:
        checks.append(_check("oracle_crossing_bisection", "skipped", "no crossing time"))
    else:
        t_bis = crossing_time(red, _psi(cfg), w.T, method="bisect")
        diff = abs(t_bis - t_c)
        checks.append(_check("oracle_crossing_bisection",
                             "pass" if diff < ORACLE_ROOT_TOL else "fail",
                             f"|closed - bisect| = {diff:.3g}", closed=t_c, bisect=t_bis))

    cf = None
    if label.switch_kind is SwitchKind.DELAYED:
        cf = c.numeric() if c.factored else dual_transform(c, cfg.window)[0].numeric()
        ts = oracle_grid(red, w.T, ORACLE_POINTS)
        closed = entry_exit_G(cf, red, ts)
        quad = np.array([entry_exit_G_quad(cf, red, t) for t in ts])
        gap = float(np.max(np.abs(closed - quad)))
        checks.append(_check("oracle_G_quadrature", "pass" if gap < ORACLE_G_TOL else "fail",
                             f"max |closed - quad| over {len(ts)} points = {gap:.3g}",
                             max_abs_diff=gap))
        if t_star is None:
            checks.append(_check("oracle_exit_residual", "skipped", "no exit root before T"))
        else:
            res = abs(entry_exit_G_quad(cf, red, t_star))
            checks.append(_check("oracle_exit_residual", "pass" if res < ORACLE_G_TOL else "fail",
                                 f"|G_quad(t*)| = {res:.3g}", residual=res))
    else:
        checks.append(_check("oracle_G_quadrature", "n/a", "no entry-exit function"))
        checks.append(_check("oracle_exit_residual", "n/a", "no entry-exit function"))

    sandwich = None
    if label.switch_kind is not SwitchKind.DELAYED:
        checks.append(_check("sandwich", "n/a", "bounds apply to delayed switches"))
    elif not report.all_passed or t_star is None:
        checks.append(_check("sandwich", "skipped", "hypotheses not satisfied"))
    else:
        try:
            prof = entry_exit_profile(c, cfg.window)
            # the reflection leaves t, y and E alone, so either frame gives the same envelope
            env = build_envelope(c, cfg.window, cfg.sandwich_epsilon, cfg.delta, cfg.eta,
                                 profile=prof)
            traj = integrate(c, cfg.window, cfg.sandwich_epsilon, cfg.solver)
            sw = verify_sandwich(traj, env, prof, KAPPA_HAT)
        except CanardError as exc:
            checks.append(_check("sandwich", "fail", f"{type(exc).__name__}: {exc}"))
        else:
            reached = traj.termination is Termination.REACHED_T
            ok = sw.ok and reached
            sandwich = {
                "epsilon": cfg.sandwich_epsilon, "eta": env.eta, "delta": env.delta,
                "k": env.k, "t_delta": env.t_delta_eps, "margin": env.margin,
                "lower_checked": sw.lower_checked, "lower_violations": sw.lower_violations,
                "worst_lower_margin": sw.worst_lower_margin,
                "upper_checked": sw.upper_checked, "upper_violations": sw.upper_violations,
                "worst_upper_margin": sw.worst_upper_margin, "skipped": sw.skipped,
                "kappa_hat": sw.kappa_hat, "termination": traj.termination,
            }
            checks.append(_check(
                "sandwich", "pass" if ok else "fail",
                f"{sw.lower_violations} lower and {sw.upper_violations} upper violations"
                + ("" if reached else f"; integration stopped: {traj.termination.value}")))

    sweep_doc = None
    if _switching(label) and t_c is not None and (label.switch_kind is SwitchKind.IMMEDIATE
                                                  or t_star is not None):
        sweep_doc = _sweep_dict(_run_sweep(cfg, label))

    failed = [ch["name"] for ch in checks if ch["status"] == "fail"]
    body = {
        "verdict": "fail" if failed else "pass",
        "failures": failed,
        "label": _label_dict(label),
        "t_c": t_c,
        "checks": checks,
        "assumptions": _assumptions_dict(report),
        "sandwich": sandwich,
        "sweep": sweep_doc,
    }
    if label.switch_kind is not SwitchKind.IMMEDIATE:
        body["t_star"] = t_star
    doc = _document(cfg, "verify", body)
    msg = "verdict: pass" if not failed else "verdict: fail (" + ", ".join(failed) + ")"
    if report.failures:
        msg += "; assumption failures: " + ", ".join(report.failures)
    return CommandResult(EXIT_VERIFY_FAILED if failed else EXIT_OK, msg,
                         {"verdict.json": dumps(doc)})


COMMANDS = {
    "classify": cmd_classify,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}
