"""Reduced (eps = 0) dynamics: logistic slow flows, entry-exit function, limits.

Every slow flow of the quadratic family is a Bernoulli equation
``x' = x (r + q x)`` whose solution and antiderivative are elementary, so the
closed forms here double as oracles for the numerical paths in the integrator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import NoCrossing, NoExitBeforeT, NotApplicable, OutOfDomain
from .model import (
    CaseLabel,
    QuadraticCoefficients,
    SimulationWindow,
    SwitchKind,
    dual_transform,
)

ROOT_XTOL = 1e-12
PROFILE_POINTS = 1001


class BranchTag(str, Enum):
    PURE_EXPONENTIAL = "PureExponential"
    LOGISTIC_GROWTH = "LogisticGrowth"
    LOGISTIC_DECAY = "LogisticDecay"
    FINITE_BLOWUP = "FiniteBlowup"


@dataclass(frozen=True)
class ReducedSolution:
    """Closed-form solution of x' = x (rate + quad x), x(t0) = x_init."""

    rate: float
    quad: float
    x_init: float
    t0: float
    branch_tag: BranchTag
    blowup_time: float | None = None

    def _growth(self, tau):
        # (e^{r tau} - 1) / r, continuous through r = 0
        if self.rate == 0:
            return tau
        return np.expm1(self.rate * tau) / self.rate

    def _check(self, t):
        if self.blowup_time is not None and np.any(np.asarray(t) >= self.blowup_time):
            raise OutOfDomain(f"t >= blow-up time {self.blowup_time!r}")

    def __call__(self, t):
        self._check(t)
        tau = np.asarray(t, dtype=float) - self.t0
        out = self.x_init * np.exp(self.rate * tau) / (1.0 - self.quad * self.x_init * self._growth(tau))
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t):
        x = self(t)
        return x * (self.rate + self.quad * x)

    def integral(self, t):
        """Closed-form integral of the solution from t0 to t."""
        self._check(t)
        tau = np.asarray(t, dtype=float) - self.t0
        e = self._growth(tau)
        if self.quad == 0:
            out = self.x_init * e
        else:
            out = -np.log1p(-self.quad * self.x_init * e) / self.quad
        return float(out) if np.ndim(out) == 0 else out

    @property
    def domain_end(self) -> float:
        return math.inf if self.blowup_time is None else self.blowup_time


def reduced_solution(linear_rate: float, quadratic_rate: float, x_init: float,
                     t0: float = 0.0) -> ReducedSolution:
    if not x_init > 0:
        raise ValueError(f"x_init must be positive, got {x_init}")
    r, q, x0 = float(linear_rate), float(quadratic_rate), float(x_init)
    blowup = None
    if q > 0:
        if r == 0:
            blowup = t0 + 1.0 / (q * x0)
        else:
            ratio = r / (q * x0)
            if ratio > -1.0:
                blowup = t0 + math.log1p(ratio) / r
    if q == 0:
        tag = BranchTag.PURE_EXPONENTIAL
    elif blowup is not None:
        tag = BranchTag.FINITE_BLOWUP
    elif r + q * x0 >= 0:
        tag = BranchTag.LOGISTIC_GROWTH
    else:
        tag = BranchTag.LOGISTIC_DECAY
    return ReducedSolution(r, q, x0, float(t0), tag, blowup)


def _window_end(reduced: ReducedSolution, T: float) -> float:
    if reduced.blowup_time is None or reduced.blowup_time > T:
        return T
    # stay clear of the pole; the solution is finite just before it
    return reduced.blowup_time - 1e-12 * max(1.0, reduced.blowup_time - reduced.t0)


def crossing_time(reduced: ReducedSolution, psi: float, T: float,
                  method: str = "closed") -> float:
    """Unique t_c in (t0, min(T, blow-up)) with x(t_c) = psi."""
    r, q, x0 = reduced.rate, reduced.quad, reduced.x_init
    toward = (psi - x0) * (r + q * x0)
    if not toward > 0:
        raise NoCrossing(f"solution from {x0!r} does not move toward psi = {psi!r}")
    end = _window_end(reduced, T)
    if method == "closed":
        if r == 0:
            tau = (1.0 / x0 - 1.0 / psi) / q
        else:
            u = psi * (r + q * x0) / (x0 * (r + q * psi))
            tau = math.log(u) / r if u > 0 else math.nan
        t_c = reduced.t0 + tau
        if not (reduced.t0 < t_c < end):
            raise NoCrossing(f"psi = {psi!r} not reached before {end!r}")
        return t_c
    if method == "bisect":
        h = lambda t: reduced(t) - psi  # noqa: E731
        if h(end) * (x0 - psi) > 0:
            raise NoCrossing(f"psi = {psi!r} not reached before {end!r}")
        return optimize.bisect(h, reduced.t0, end, xtol=ROOT_XTOL)
    raise ValueError(f"unknown method {method!r}")


def entry_exit_G(coeffs: QuadraticCoefficients, reduced: ReducedSolution, t):
    """G(t, 0) = integral of g_y(x(s), 0) = D + F x(s) from t0 to t."""
    c = coeffs.numeric()
    tau = np.asarray(t, dtype=float) - reduced.t0
    out = c.D * tau + c.F * reduced.integral(t)
    return float(out) if np.ndim(out) == 0 else out


def entry_exit_G_quad(coeffs: QuadraticCoefficients, reduced: ReducedSolution, t: float) -> float:
    """Same quantity by adaptive Gauss-Kronrod quadrature; used as an oracle."""
    c = coeffs.numeric()
    val, _ = integrate.quad(lambda s: c.D + c.F * reduced(s), reduced.t0, float(t),
                            epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def oracle_grid(reduced: ReducedSolution, T: float, n: int = 100) -> np.ndarray:
    """n uniform times on [t0, T] for cross-checks, stopping at 99% of the way to a blow-up."""
    end = T if reduced.domain_end > T else reduced.t0 + 0.99 * (reduced.domain_end - reduced.t0)
    return np.linspace(reduced.t0, end, n)


def exit_time(coeffs: QuadraticCoefficients, reduced: ReducedSolution, T: float,
              t_c: float | None = None) -> float:
    """Root t* of G(., 0) on the increasing branch after the crossing time."""
    c = coeffs.numeric()
    if t_c is None:
        t_c = crossing_time(reduced, c.psi, T)
    end = _window_end(reduced, T)
    G = lambda t: entry_exit_G(c, reduced, t)  # noqa: E731
    if not G(end) > 0:
        raise NoExitBeforeT(f"G stays negative up to {end!r} (G = {G(end)!r})")
    return optimize.bisect(G, t_c, end, xtol=ROOT_XTOL)


# -- profile ------------------------------------------------------------------

@dataclass(frozen=True)
class EntryExitProfile:
    t0: float
    t_c: float
    t_star: float
    G_min: float
    domain_end: float
    t: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    coeffs: QuadraticCoefficients = field(repr=False)
    reduced: ReducedSolution = field(repr=False)

    def __call__(self, t):
        return entry_exit_G(self.coeffs, self.reduced, t)


def entry_exit_profile(coeffs: QuadraticCoefficients, window: SimulationWindow) -> EntryExitProfile:
    """Sampled G(t, 0) for a delayed-switch input: 1001 grid points plus t_c and t*."""
    c, w = _factored(coeffs, window)
    red = reduced_solution(*c.reduced_rates(), w.x0, w.t0)
    t_c = crossing_time(red, c.psi, w.T)
    t_star = exit_time(c, red, w.T, t_c=t_c)
    end = _window_end(red, w.T)
    grid = np.linspace(w.t0, end, PROFILE_POINTS)
    ts = np.sort(np.concatenate([grid, [t_c, t_star]]), kind="stable")
    return EntryExitProfile(
        t0=w.t0, t_c=t_c, t_star=t_star, G_min=entry_exit_G(c, red, t_c), domain_end=end,
        t=ts, G=entry_exit_G(c, red, ts), coeffs=c, reduced=red,
    )


# -- composite limit ------------------------------------------------------------

@dataclass(frozen=True)
class CompositeLimit:
    """Piecewise eps -> 0 limit: one branch-following slow flow on each side of the switch."""

    kind: SwitchKind
    switch_time: float
    pre: ReducedSolution
    post: ReducedSolution
    pre_on_phi: bool
    phi: Callable[[float], float] = field(repr=False)
    mirror: float | None = None  # 2 psi when the limit was computed in the reflected frame

    def _x(self, t, piece):
        x = piece(t)
        return x if self.mirror is None else self.mirror - x

    def x_lim(self, t):
        t = np.asarray(t, dtype=float)
        before = t < self.switch_time
        out = np.empty_like(t)
        if np.any(before):
            out[before] = self._x(t[before], self.pre)
        if np.any(~before):
            out[~before] = self._x(t[~before], self.post)
        return float(out) if out.ndim == 0 else out

    def y_lim(self, t):
        t = np.asarray(t, dtype=float)
        x = self.x_lim(t)
        on_phi = (t < self.switch_time) == self.pre_on_phi
        out = np.where(on_phi, self.phi(x), 0.0)
        return float(out) if out.ndim == 0 else out

    def x_phi(self, t):
        """The phi-constrained slow solution (post piece if delayed, pre piece if immediate)."""
        return self._x(t, self.pre if self.pre_on_phi else self.post)


def _factored(coeffs, window):
    if coeffs.factored:
        return coeffs.numeric(), window.numeric()
    c, w = dual_transform(coeffs, window)
    if not c.factored:
        raise NotApplicable("pivot is not the reflection about psi")
    return c.numeric(), w.numeric()


def composite_limit(coeffs: QuadraticCoefficients, window: SimulationWindow,
                    label: CaseLabel) -> CompositeLimit:
    if label.switch_kind not in (SwitchKind.DELAYED, SwitchKind.IMMEDIATE):
        raise NotApplicable(f"no composite limit for {label.switch_kind.value}")
    mirror = None if coeffs.factored else float(2 * coeffs.psi)
    c, w = _factored(coeffs, window)
    psi = c.psi
    if label.switch_kind is SwitchKind.DELAYED:
        pre = reduced_solution(*c.reduced_rates(), w.x0, w.t0)
        t_c = crossing_time(pre, psi, w.T)
        t_sw = exit_time(c, pre, w.T, t_c=t_c)
        post = reduced_solution(*c.phi_rates(), pre(t_sw), t_sw)
        pre_on_phi = False
    else:
        pre = reduced_solution(*c.phi_rates(), w.x0, w.t0)
        t_sw = crossing_time(pre, psi, w.T)
        post = reduced_solution(*c.reduced_rates(), pre(t_sw), t_sw)
        pre_on_phi = True
    # x_lim reports the caller's frame, so phi is the caller's too
    return CompositeLimit(label.switch_kind, t_sw, pre, post, pre_on_phi,
                          coeffs.numeric().phi, mirror)


def entry_flow(coeffs: QuadraticCoefficients, window: SimulationWindow,
               label: CaseLabel) -> ReducedSolution:
    """Slow flow on the branch that attracts at x0, in the factored frame.

    Reduced flow on y = 0 for delayed switches, phi-constrained flow for
    immediate ones.
    """
    c, w = _factored(coeffs, window)
    if label.switch_kind is SwitchKind.DELAYED:
        return reduced_solution(*c.reduced_rates(), w.x0, w.t0)
    if label.switch_kind is SwitchKind.IMMEDIATE:
        return reduced_solution(*c.phi_rates(), w.x0, w.t0)
    raise NotApplicable(f"no switch for {label.switch_kind.value}")


def switch_times(coeffs: QuadraticCoefficients, window: SimulationWindow,
                 label: CaseLabel) -> tuple[float, float | None]:
    """(t_c, t*) for delayed switches, (t_c, None) for immediate ones."""
    red = entry_flow(coeffs, window, label)
    c, w = _factored(coeffs, window)
    t_c = crossing_time(red, c.psi, w.T)
    if label.switch_kind is SwitchKind.DELAYED:
        return t_c, exit_time(c, red, w.T, t_c=t_c)
    return t_c, None


def predicted_switch_time(coeffs: QuadraticCoefficients, window: SimulationWindow,
                          label: CaseLabel) -> float:
    """t* for delayed switches, t_c for immediate ones."""
    t_c, t_star = switch_times(coeffs, window, label)
    return t_c if t_star is None else t_star
