"""Full-system integration, switch detection and eps sweeps.

The fast equation factors as ``eps y' = y (D + E y + F x)``, so with
``w = eps * ln y`` it becomes ``w' = D + E e^{w/eps} + F x`` exactly.  In the
delayed phase y sinks to ~exp(G_min/eps) while w stays O(1), which is what
lets an explicit embedded pair handle eps down to a few 1e-3.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CanardError, InvalidEpsilon
from .model import (
    CaseLabel,
    CriticalManifold,
    QuadraticCoefficients,
    SimulationWindow,
    SwitchKind,
    critical_manifold,
    validate,
)
from .slow_analysis import switch_times

EPS_MAX = 0.2
TREND_SLACK = 1.5

# Dormand-Prince 5(4), propagated at fifth order, first-same-as-last
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = _A[6] + (0.0,)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_ERR = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


class Termination(str, Enum):
    REACHED_T = "ReachedT"
    DOMAIN_EXIT = "DomainExit"
    STEP_UNDERFLOW = "StepUnderflow"


@dataclass(frozen=True)
class SolverOptions:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float | None = None  # None: (T - t0) / 500
    min_step: float = 1e-12
    use_log_fast_variable: bool = True
    domain_guard: tuple[float, float] | None = None  # None: (M, N) of the window

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.min_step > 0:
            raise ValueError("min_step must be positive")
        if self.max_step is not None and not self.min_step <= self.max_step:
            raise ValueError("need 0 < min_step <= max_step")


@dataclass(frozen=True)
class Trajectory:
    epsilon: float
    t: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    n_steps: int = 0
    n_rejected: int = 0
    termination: Termination = Termination.REACHED_T

    def __len__(self):
        return len(self.t)


def _rhs(c: QuadraticCoefficients, eps: float, log_fast: bool):
    A, B, C, D, E, F, s = c.A, c.B, c.C, c.D, c.E, c.F, c.pivot
    if log_fast:
        def f(u):
            x, w = u
            y = math.exp(min(w / eps, 700.0))
            return np.array([(x - s) * (A + B * x + C * y), D + E * y + F * x])
    else:
        def f(u):
            x, y = u
            return np.array([(x - s) * (A + B * x + C * y), y * (D + E * y + F * x) / eps])
    return f


def integrate(coeffs: QuadraticCoefficients, window: SimulationWindow, epsilon: float,
              opts: SolverOptions | None = None) -> Trajectory:
    """Adaptive Dormand-Prince integration of the full system on [t0, T]."""
    if not (isinstance(epsilon, (int, float)) and 0 < epsilon <= EPS_MAX):
        raise InvalidEpsilon(f"epsilon must lie in (0, {EPS_MAX}], got {epsilon!r}")
    validate(coeffs, window)
    opts = opts or SolverOptions()
    c, win = coeffs.numeric(), window.numeric()
    eps = float(epsilon)
    log_fast = opts.use_log_fast_variable
    M, N = opts.domain_guard or (win.M, win.N)
    t0, T = win.t0, win.T
    max_step = opts.max_step or (T - t0) / 500
    f = _rhs(c, eps, log_fast)
    atol, rtol = opts.abs_tol, opts.rel_tol
    positive_x = c.factored

    u = np.array([win.x0, eps * math.log(win.y0) if log_fast else win.y0])
    ts, us = [t0], [u]
    t = t0
    h = min(max_step, 1e-3 * (T - t0))
    k1 = f(u)
    n_steps = n_rejected = 0
    status = Termination.REACHED_T

    while t < T:
        if t + h > T:
            h = T - t
        k = [k1]
        for i in range(1, 7):
            stage = u + h * sum(a * kj for a, kj in zip(_A[i], k) if a != 0.0)
            k.append(f(stage))
        u_new = stage  # row 6 of the tableau is the fifth-order solution
        err = h * sum(e * kj for e, kj in zip(_ERR, k) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(u), np.abs(u_new))
        err_norm = math.sqrt(float(np.mean((err / scale) ** 2)))

        if err_norm <= 1.0 and np.all(np.isfinite(u_new)):
            t = T if t + h >= T else t + h
            u, k1 = u_new, k[6]
            ts.append(t)
            us.append(u)
            n_steps += 1
            x, fast = u
            y = math.exp(fast / eps) if log_fast else fast
            if abs(x) > M or y > N or (positive_x and x <= 0) or (not log_fast and y <= 0):
                status = Termination.DOMAIN_EXIT
                break
            factor = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            h = min(max_step, h * factor)
        else:
            n_rejected += 1
            factor = 0.2 if not math.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** -0.2)
            h *= min(1.0, factor)
            if h < opts.min_step:
                status = Termination.STEP_UNDERFLOW
                break

    t_arr = np.array(ts)
    U = np.array(us)
    x_arr = U[:, 0]
    if log_fast:
        w_arr = U[:, 1]
        y_arr = np.exp(w_arr / eps)
    else:
        y_arr = U[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            w_arr = eps * np.log(y_arr)
    return Trajectory(eps, t_arr, x_arr, y_arr, w_arr, n_steps, n_rejected, status)


# -- switch detection ---------------------------------------------------------

class DetectionMode(str, Enum):
    RISE_TO_PHI = "RiseToPhi"
    FALL_TO_ZERO = "FallToZero"
    NOT_DETECTED = "NotDetected"


@dataclass(frozen=True)
class SwitchObservation:
    epsilon: float
    t_sw: float
    threshold_theta: float
    predicted: float
    abs_error: float
    detection_mode: DetectionMode
    error: str | None = None

    @property
    def detected(self) -> bool:
        return self.detection_mode is not DetectionMode.NOT_DETECTED


def _interp_root(t0, t1, h0, h1):
    if h1 == h0:
        return t1
    return t0 + (t1 - t0) * (-h0) / (h1 - h0)


def detect_switch(traj: Trajectory, manifold: CriticalManifold, label: CaseLabel,
                  theta: float = 0.5, predicted: float = math.nan,
                  t_c: float | None = None) -> SwitchObservation:
    """Observed switch time of a trajectory.

    Delayed: first time after t_c with y >= theta * phi(x) on the exit side
    (phi > 0).  Immediate: first time x crosses psi.  Both are linearly
    interpolated between the bracketing samples.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    t, x, y = traj.t, traj.x, traj.y

    def result(t_sw, mode):
        err = abs(t_sw - predicted) if mode is not DetectionMode.NOT_DETECTED else math.nan
        return SwitchObservation(traj.epsilon, t_sw, theta, predicted, err, mode)

    if label.switch_kind is SwitchKind.DELAYED:
        phi = manifold.phi(x)
        h = y - theta * phi
        ok = (phi > 0) & (h >= 0)
        if t_c is not None:
            ok &= t > t_c
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            return result(math.nan, DetectionMode.NOT_DETECTED)
        i = int(idx[0])
        if i == 0:
            return result(float(t[0]), DetectionMode.RISE_TO_PHI)
        if h[i - 1] < 0:
            t_sw = _interp_root(t[i - 1], t[i], h[i - 1], h[i])
        else:
            # y already above the threshold: the event is phi turning positive
            t_sw = _interp_root(t[i - 1], t[i], phi[i - 1], phi[i])
        if t_c is not None:
            t_sw = max(t_sw, t_c)
        return result(float(t_sw), DetectionMode.RISE_TO_PHI)

    if label.switch_kind is SwitchKind.IMMEDIATE:
        side = 1.0 if x[0] < manifold.psi else -1.0
        d = side * (x - manifold.psi)
        idx = np.flatnonzero(d >= 0)
        if idx.size == 0:
            return result(math.nan, DetectionMode.NOT_DETECTED)
        i = int(idx[0])
        t_sw = t[0] if i == 0 else _interp_root(t[i - 1], t[i], d[i - 1], d[i])
        return result(float(t_sw), DetectionMode.FALL_TO_ZERO)

    return result(math.nan, DetectionMode.NOT_DETECTED)


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceSummary:
    errors: tuple[float, ...]
    trend_ok: bool
    final_error: float
    slack: float = TREND_SLACK


@dataclass(frozen=True)
class SweepResult:
    observations: tuple[SwitchObservation, ...]
    summary: ConvergenceSummary


def summarize(observations, slack: float = TREND_SLACK) -> ConvergenceSummary:
    errs = tuple(o.abs_error for o in observations)
    trend = all(math.isfinite(e) for e in errs) and all(
        b <= slack * a for a, b in zip(errs, errs[1:]))
    return ConvergenceSummary(errs, trend, errs[-1] if errs else math.nan, slack)


def sweep(coeffs: QuadraticCoefficients, window: SimulationWindow, label: CaseLabel,
          epsilons, opts: SolverOptions | None = None, theta: float = 0.5,
          workers: int = 1) -> SweepResult:
    """Integrate once per eps and compare each observed switch with the prediction."""
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ValueError("epsilons must be nonempty")
    if any(not 0 < e <= EPS_MAX for e in eps):
        raise InvalidEpsilon(f"every epsilon must lie in (0, {EPS_MAX}]")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")

    t_c, t_star = switch_times(coeffs, window, label)
    predicted = t_c if t_star is None else t_star
    manifold = critical_manifold(coeffs)
    gate = t_c if t_star is not None else None

    def one(e):
        try:
            traj = integrate(coeffs, window, e, opts)
            return detect_switch(traj, manifold, label, theta, predicted, t_c=gate)
        except CanardError as exc:
            return SwitchObservation(e, math.nan, theta, predicted, math.nan,
                                     DetectionMode.NOT_DETECTED, error=str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            obs = list(pool.map(one, eps))
    else:
        obs = [one(e) for e in eps]
    return SweepResult(tuple(obs), summarize(obs))
