"""Upper and lower comparison envelopes for the fast variable, and the sandwich audit.

All arithmetic is in log space: at eps = 0.005 the envelopes routinely sit
near exp(-50).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import AdmissibilityViolated, NoRootBeforeT
from .integrator import Trajectory
from .model import QuadraticCoefficients, SimulationWindow
from .slow_analysis import EntryExitProfile, entry_exit_profile

#: audit slack standing in for the eps-Lipschitz constant of G(t, eps)/eps
KAPPA_HAT = 1.0
MARGIN_FRACTION = 0.05


def curvature_constant(coeffs: QuadraticCoefficients) -> float:
    """k = sup |g_yy| = 2|E| for the quadratic fast field."""
    return 2.0 * abs(float(coeffs.E))


def upper_solution(G: Callable, y_init: float, epsilon: float, t):
    """Return (value, log value) of y_init * exp(G(t, 0) / eps)."""
    log_val = math.log(y_init) + np.asarray(G(t)) / epsilon
    return np.exp(log_val), log_val


def lower_solution(G: Callable, eta: float, delta: float, epsilon: float, t0: float, t,
                   k: float):
    """Return (value, log value) of eta * exp((G(t, 0) - delta (t - t0)) / eps)."""
    if eta * k > delta:
        raise AdmissibilityViolated(f"eta = {eta!r} exceeds delta/k = {delta / k!r}")
    tau = np.asarray(t, dtype=float) - t0
    if eta == 0:
        log_val = np.full(np.shape(tau), -np.inf)
    else:
        log_val = math.log(eta) + (np.asarray(G(t)) - delta * tau) / epsilon
    return np.exp(log_val), log_val


def delayed_exit_root(profile: EntryExitProfile, delta: float, epsilon: float | None = None,
                      T: float | None = None) -> float:
    """Root t(delta) > t* of G(t, 0) - delta (t - t0).

    Only the eps = 0 profile is available, so the root does not depend on
    ``epsilon``; the argument is accepted for symmetry with the envelopes.
    """
    if delta == 0:
        return profile.t_star
    end = profile.domain_end if T is None else min(T, profile.domain_end)
    h = lambda t: profile(t) - delta * (t - profile.t0)  # noqa: E731
    if not h(end) > 0:
        raise NoRootBeforeT(f"G - delta (t - t0) is still nonpositive at t = {end!r}")
    return optimize.bisect(h, profile.t_star, end, xtol=1e-15)


@dataclass(frozen=True)
class BoundEnvelope:
    eta: float
    delta: float
    epsilon: float
    k: float
    t_delta_eps: float
    y_init: float
    t0: float
    t_star: float
    margin: float

    @property
    def lower_validity(self) -> tuple[float, float]:
        return self.t0, self.t_delta_eps

    @property
    def upper_validity(self) -> tuple[float, float]:
        return self.t0 + self.margin, self.t_star - self.margin


def build_envelope(coeffs: QuadraticCoefficients, window: SimulationWindow, epsilon: float,
                   delta: float = 0.05, eta: float | None = None,
                   margin_fraction: float = MARGIN_FRACTION,
                   profile: EntryExitProfile | None = None) -> BoundEnvelope:
    k = curvature_constant(coeffs)
    if eta is None:
        eta = min(0.02, delta / k)
    if eta * k > delta:
        raise AdmissibilityViolated(f"eta = {eta!r} exceeds delta/k = {delta / k!r}")
    w = window.numeric()
    profile = profile or entry_exit_profile(coeffs, window)
    return BoundEnvelope(
        eta=float(eta), delta=float(delta), epsilon=float(epsilon), k=k,
        t_delta_eps=delayed_exit_root(profile, delta, epsilon, w.T),
        y_init=w.y0, t0=w.t0, t_star=profile.t_star,
        margin=margin_fraction * (w.T - w.t0),
    )


@dataclass(frozen=True)
class SandwichReport:
    lower_checked: int
    lower_violations: int
    worst_lower_margin: float
    upper_checked: int
    upper_violations: int
    worst_upper_margin: float
    skipped: int
    kappa_hat: float

    @property
    def ok(self) -> bool:
        return self.lower_violations == 0 and self.upper_violations == 0


def verify_sandwich(traj: Trajectory, envelope: BoundEnvelope, G: Callable,
                    kappa_hat: float = KAPPA_HAT) -> SandwichReport:
    """Check lower <= y on the lower validity interval and y <= upper e^kappa on the upper one.

    Margins are log-space gaps (positive means the bound holds); samples
    outside both intervals are counted as skipped.
    """
    env = envelope
    t = traj.t
    log_y = traj.w / traj.epsilon

    lo_a, lo_b = env.lower_validity
    in_lower = (t >= lo_a) & (t <= lo_b)
    _, log_low = lower_solution(G, env.eta, env.delta, traj.epsilon, env.t0, t[in_lower], env.k)
    lower_gap = log_y[in_lower] - log_low

    up_a, up_b = env.upper_validity
    in_upper = (t >= up_a) & (t <= up_b)
    _, log_up = upper_solution(G, env.y_init, traj.epsilon, t[in_upper])
    upper_gap = log_up + kappa_hat - log_y[in_upper]

    return SandwichReport(
        lower_checked=int(in_lower.sum()),
        lower_violations=int((lower_gap < 0).sum()),
        worst_lower_margin=float(lower_gap.min()) if lower_gap.size else math.inf,
        upper_checked=int(in_upper.sum()),
        upper_violations=int((upper_gap < 0).sum()),
        worst_upper_margin=float(upper_gap.min()) if upper_gap.size else math.inf,
        skipped=int((~(in_lower | in_upper)).sum()),
        kappa_hat=kappa_hat,
    )
