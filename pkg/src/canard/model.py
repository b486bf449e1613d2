"""Quadratic slow-fast predator-prey family, its critical manifold and case table.

The system is

    x' = (x - s) (A + B x + C y)
    eps y' = y (D + E y + F x)

with pivot ``s = 0`` for the ordinary (factored) model.  A nonzero pivot only
arises from :func:`dual_transform`, which reflects the slow variable about the
transcritical line ``x = psi = -D/F``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from fractions import Fraction
from numbers import Real

from .errors import (
    BadWindow,
    DegenerateClassification,
    NoCrossing,
    NoExitBeforeT,
    NotApplicable,
    OutOfDomain,
    ZeroCoefficient,
)

#: relative margin used by every strict inequality in the case table
BOUNDARY_RTOL = 1e-9


@dataclass(frozen=True)
class QuadraticCoefficients:
    A: Real
    B: Real
    C: Real
    D: Real
    E: Real
    F: Real
    pivot: Real = 0

    @property
    def factored(self) -> bool:
        return self.pivot == 0

    @property
    def psi(self):
        return -self.D / self.F

    def numeric(self) -> QuadraticCoefficients:
        """Float copy; coefficients produced by the exact dual may be Fractions."""
        if all(type(getattr(self, f.name)) is float for f in fields(self)):
            return self
        return QuadraticCoefficients(*(float(getattr(self, f.name)) for f in fields(self)))

    def slow(self, x, y):
        return (x - self.pivot) * (self.A + self.B * x + self.C * y)

    def fast(self, x, y):
        return y * (self.D + self.E * y + self.F * x)

    def phi(self, x):
        return -(self.F / self.E) * x - self.D / self.E

    def reduced_rates(self) -> tuple[float, float]:
        """(linear, quadratic) rates of the slow flow on the branch y = 0."""
        self._require_factored()
        c = self.numeric()
        return c.A, c.B

    def phi_rates(self) -> tuple[float, float]:
        """(linear, quadratic) rates of the slow flow constrained to y = phi(x)."""
        self._require_factored()
        c = self.numeric()
        return c.A - c.C * c.D / c.E, c.B - c.C * c.F / c.E

    def _require_factored(self):
        if not self.factored:
            raise NotApplicable("slow flow of a reflected system is not of logistic form; "
                                "use dual_transform to return to the factored frame")


@dataclass(frozen=True)
class SimulationWindow:
    t0: Real
    T: Real
    x0: Real
    y0: Real
    M: Real = 10.0
    N: Real = 10.0

    def numeric(self) -> SimulationWindow:
        if all(type(getattr(self, f.name)) is float for f in fields(self)):
            return self
        return SimulationWindow(*(float(getattr(self, f.name)) for f in fields(self)))


def validate(coeffs: QuadraticCoefficients, window: SimulationWindow | None = None) -> None:
    for name in "ABCDEF":
        v = getattr(coeffs, name)
        if not math.isfinite(v) or v == 0:
            raise ZeroCoefficient(name)
    if not math.isfinite(coeffs.pivot):
        raise ZeroCoefficient("pivot")
    if window is None:
        return
    w = window
    for name in ("t0", "T", "x0", "y0", "M", "N"):
        if not math.isfinite(getattr(w, name)):
            raise BadWindow(f"{name} is not finite")
    if not w.t0 < w.T:
        raise BadWindow(f"need t0 < T, got t0={w.t0}, T={w.T}")
    if not 0 < w.x0 < w.M:
        raise BadWindow(f"need 0 < x0 < M, got x0={w.x0}, M={w.M}")
    if not 0 < w.y0 < w.N:
        raise BadWindow(f"need 0 < y0 < N, got y0={w.y0}, N={w.N}")


# -- critical manifold ------------------------------------------------------

@dataclass(frozen=True)
class CriticalManifold:
    psi: float
    phi_slope: float
    phi_intercept: float
    D: float
    F: float

    def phi(self, x):
        return self.phi_slope * x + self.phi_intercept

    def zero_branch_sign(self, x) -> int:
        """Sign of g_y(x, 0) = D + F x; -1 means y = 0 is attracting."""
        return _sign(self.D + self.F * x)

    def phi_branch_sign(self, x) -> int:
        """Sign of g_y(x, phi(x)) = -(D + F x); -1 means phi is attracting."""
        return -_sign(self.D + self.F * x)

    @property
    def in_quadrant(self) -> bool:
        return self.psi > 0


def _sign(v) -> int:
    return (v > 0) - (v < 0)


def critical_manifold(coeffs: QuadraticCoefficients) -> CriticalManifold:
    c = coeffs.numeric()
    return CriticalManifold(psi=-c.D / c.F, phi_slope=-c.F / c.E, phi_intercept=-c.D / c.E,
                            D=c.D, F=c.F)


# -- classification -----------------------------------------------------------

class CaseTag(str, Enum):
    CASE_1A = "Case1a"
    CASE_1B = "Case1b"
    CASE_2A = "Case2a"
    CASE_2B = "Case2b"
    CASE_1B_DUAL = "Case1bDual"
    CASE_2B_DUAL = "Case2bDual"
    NOT_IN_QUADRANT = "NotInQuadrant"


class SwitchKind(str, Enum):
    DELAYED = "DelayedAtTStar"
    IMMEDIATE = "ImmediateAtTc"
    NONE = "NoSwitch"
    OUT_OF_SCOPE = "OutOfScope"


class CanonicalForm(str, Enum):
    FAST_PREDATOR_A = "FastPredatorA"
    FAST_PREDATOR_B = "FastPredatorB"
    FAST_PREDATOR_C = "FastPredatorC"
    FAST_PREY_A = "FastPreyA"
    FAST_PREY_B = "FastPreyB"
    FAST_PREY_C = "FastPreyC"


_FORMS = {
    (1, 1, 1): CanonicalForm.FAST_PREDATOR_A,
    (1, 1, -1): CanonicalForm.FAST_PREDATOR_B,
    (1, -1, 1): CanonicalForm.FAST_PREDATOR_C,
    (-1, -1, -1): CanonicalForm.FAST_PREY_A,
    (-1, 1, -1): CanonicalForm.FAST_PREY_B,
    (-1, -1, 1): CanonicalForm.FAST_PREY_C,
}


@dataclass(frozen=True)
class CaseLabel:
    case_tag: CaseTag
    switch_kind: SwitchKind
    canonical_form: CanonicalForm | None = None

    def __str__(self):
        parts = [self.case_tag.value, self.switch_kind.value]
        if self.canonical_form is not None:
            parts.append(self.canonical_form.value)
        return " / ".join(parts)


def _strict(value: float, scale: float, what: str) -> int:
    """Sign of ``value`` or DegenerateClassification if it is within the margin."""
    if abs(value) <= BOUNDARY_RTOL * max(scale, 1e-300):
        raise DegenerateClassification(what)
    return _sign(value)


def _case_tag(c: QuadraticCoefficients, x0: float) -> CaseTag:
    psi = -c.D / c.F
    if psi <= 0:
        return CaseTag.NOT_IN_QUADRANT
    below = x0 < psi
    if c.D < 0:
        if c.E > 0:
            return CaseTag.CASE_1A
        return CaseTag.CASE_1B if below else CaseTag.CASE_1B_DUAL
    if c.E > 0:
        return CaseTag.CASE_2A
    return CaseTag.CASE_2B if below else CaseTag.CASE_2B_DUAL


def classify(coeffs: QuadraticCoefficients, window: SimulationWindow) -> CaseLabel:
    """Place (coeffs, x0) in the case table and predict the kind of switch.

    Reflected systems (nonzero pivot) are classified through their factored
    dual: the switch kind and canonical form are those of the dual, the case
    tag describes the reflected geometry itself.
    """
    validate(coeffs, window)
    c, w = coeffs.numeric(), window.numeric()
    psi = -c.D / c.F
    if psi <= 0:
        return CaseLabel(CaseTag.NOT_IN_QUADRANT, SwitchKind.NONE)
    _strict(w.x0 - psi, psi, "x0 lies on the transcritical line x = psi")
    tag = _case_tag(c, w.x0)

    if not coeffs.factored:
        if not _pivot_is_reflection(coeffs):
            return CaseLabel(tag, SwitchKind.OUT_OF_SCOPE)
        rep = classify(*dual_transform(coeffs, window))
        return CaseLabel(tag, rep.switch_kind, rep.canonical_form)

    if tag in (CaseTag.CASE_1A, CaseTag.CASE_2A):
        return CaseLabel(tag, SwitchKind.OUT_OF_SCOPE)

    side = 1 if w.x0 < psi else -1  # +1 when x must increase to reach psi
    rate_at_psi = _strict(c.A + c.B * psi, abs(c.A) + abs(c.B) * psi,
                          "a/b coincides with d/f") * side
    if c.D + c.F * w.x0 < 0:
        # y = 0 attracts at x0: the slow flow is x' = x(A + Bx)
        rate_at_x0 = _strict(c.A + c.B * w.x0, abs(c.A) + abs(c.B) * w.x0,
                             "x0 is an equilibrium of the reduced flow") * side
        if rate_at_x0 < 0 or rate_at_psi < 0:
            return CaseLabel(tag, SwitchKind.NONE)
        if side * c.C >= 0:
            # monotonicity of the slow field in y fails; delayed theory does not apply
            return CaseLabel(tag, SwitchKind.OUT_OF_SCOPE)
        form = _FORMS[(side, _sign(c.A), _sign(c.B))]
        return CaseLabel(tag, SwitchKind.DELAYED, form)

    # phi attracts at x0: the slow flow is x' = x(alpha + beta x)
    alpha, beta = c.phi_rates()
    rate_at_x0 = _strict(alpha + beta * w.x0, abs(alpha) + abs(beta) * w.x0,
                         "x0 is an equilibrium of the phi-constrained flow") * side
    if rate_at_x0 < 0 or rate_at_psi < 0:
        return CaseLabel(tag, SwitchKind.NONE)
    return CaseLabel(tag, SwitchKind.IMMEDIATE)


def _pivot_is_reflection(coeffs: QuadraticCoefficients) -> bool:
    psi = coeffs.psi
    return abs(coeffs.pivot - 2 * psi) <= BOUNDARY_RTOL * abs(psi)


# -- duality ----------------------------------------------------------------

def dual_transform(coeffs: QuadraticCoefficients, window: SimulationWindow):
    """Reflect the slow variable about psi: x = 2 psi - z.

    Computed in exact rational arithmetic, so applying it twice reproduces the
    input exactly.  The result generally has a nonzero pivot, i.e. the slow
    field ``(z - 2 psi)(A + 2 B psi - B z + C y)``.
    """
    q = {f.name: Fraction(getattr(coeffs, f.name)) for f in fields(coeffs)}
    if q["D"] == 0 or q["F"] == 0:
        raise NotApplicable("psi undefined for zero D or F")
    psi = -q["D"] / q["F"]
    if psi <= 0:
        raise NotApplicable(f"psi = {float(psi)} is not positive")
    dual = QuadraticCoefficients(
        A=q["A"] + 2 * q["B"] * psi,
        B=-q["B"],
        C=q["C"],
        D=-q["D"],
        E=q["E"],
        F=-q["F"],
        pivot=2 * psi - q["pivot"],
    )
    new_window = replace(window, x0=2 * psi - Fraction(window.x0))
    return dual, new_window


# -- assumptions --------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionEntry:
    name: str
    status: str  # "pass" | "fail" | "n/a"
    witness: float | None
    condition: str
    note: str

    @property
    def passed(self) -> bool:
        return self.status != "fail"


@dataclass(frozen=True)
class AssumptionReport:
    mode: str  # which switch scenario was checked: "delayed" | "immediate"
    entries: tuple[AssumptionEntry, ...] = field(default_factory=tuple)

    @property
    def all_passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failures(self) -> list[str]:
        return [e.name for e in self.entries if e.status == "fail"]

    def __getitem__(self, name: str) -> AssumptionEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


def _judge(name, witness, condition, note, tol):
    if witness is None or (isinstance(witness, float) and math.isnan(witness)):
        return AssumptionEntry(name, "fail", None, condition, note)
    ok = {
        "> 0": witness > tol,
        "< 0": witness < -tol,
        "== 0": abs(witness) <= tol,
        "structural": True,
    }[condition]
    return AssumptionEntry(name, "pass" if ok else "fail", float(witness), condition, note)


def _na(name, note):
    return AssumptionEntry(name, "n/a", None, "n/a", note)


def check_assumptions(coeffs: QuadraticCoefficients, window: SimulationWindow,
                      tol: float = 1e-9) -> AssumptionReport:
    """Evaluate the structural, geometric and window hypotheses entry by entry.

    The hypothesis set follows the branch that attracts at x0: y = 0 selects
    the delayed-switch set, y = phi the immediate-switch set.  Conditions are
    oriented so that x0 always starts on the entry side of psi.
    """
    # deferred: slow_analysis imports this module
    from . import slow_analysis as sa

    validate(coeffs, window)
    if not coeffs.factored:
        if not _pivot_is_reflection(coeffs):
            raise NotApplicable("pivot is not the reflection about psi")
        coeffs, window = dual_transform(coeffs, window)
    c, w = coeffs.numeric(), window.numeric()
    psi = -c.D / c.F
    side = 1 if w.x0 < psi else -1
    delayed = c.D + c.F * w.x0 < 0
    mode = "delayed" if delayed else "immediate"
    entries = [
        _judge("a1", 2.0, "structural", "polynomial vector field, C^2 everywhere", tol),
        _judge("a2", c.fast(w.x0, 0.0), "== 0", "g(x, 0) = 0 identically", tol),
    ]

    if delayed:
        entries.append(_judge("a3", side * c.C * w.x0, "< 0",
                              "f_y = C x, oriented toward psi; slow field must decrease in y", tol))
        entries.append(_judge("a4", side * c.F, "> 0",
                              "g_x = F y, oriented toward psi; fast field must increase in x", tol))
    else:
        entries.append(_na("a3", "not required for the immediate switch"))
        entries.append(_na("a4", "not required for the immediate switch"))

    if psi <= 0:
        entries.append(_judge("a5", psi, "> 0", "psi = -D/F must lie in the quadrant", tol))
    else:
        s = -1.0 if delayed else 1.0
        entries.append(_judge("a5", s * c.phi(w.x0), "> 0",
                              "phi must be %s on the entry side of psi"
                              % ("negative" if delayed else "positive"), tol))
    entries.append(_judge("a6", -(c.D + c.F * w.x0) if delayed else c.D + c.F * w.x0, "> 0",
                          "branch attracting at x0 (sign of D + F x0)", tol))

    # the crossing / exit witnesses need a window that actually reaches psi
    t_c = t_star = None
    reason_c = reason_s = ""
    if psi > 0:
        rates = c.reduced_rates() if delayed else c.phi_rates()
        red = sa.reduced_solution(*rates, w.x0, w.t0)
        try:
            t_c = sa.crossing_time(red, psi, w.T)
        except (NoCrossing, OutOfDomain) as exc:
            reason_c = str(exc)
        if delayed and t_c is not None:
            try:
                t_star = sa.exit_time(c, red, w.T, t_c=t_c)
            except (NoExitBeforeT, OutOfDomain) as exc:
                reason_s = str(exc)
    else:
        reason_c = reason_s = "psi outside the quadrant"

    slow_name = "reduced flow x' = f(x, 0)" if delayed else "phi-constrained flow"
    entries.append(_judge("a7", None if t_c is None else w.T - t_c, "> 0",
                          f"{slow_name} crosses psi once before T" +
                          (f" ({reason_c})" if reason_c else f" at t_c = {t_c!r}"), tol))
    if delayed:
        entries.append(_judge("a8", None if t_star is None else w.T - t_star, "> 0",
                              "G(., 0) has a root t* before T" +
                              (f" ({reason_s or reason_c})" if t_star is None
                               else f" at t* = {t_star!r}"), tol))
    else:
        entries.append(_na("a8", "switch time is t_c; no exit root is needed"))
    entries.append(_judge("a9", 2 * c.E, "< 0",
                          "g_yy = 2E; g - g_y(x, 0) y = E y^2 <= 0 iff E < 0", tol))
    entries.append(_judge("transversality", side * c.slow(psi, 0.0), "> 0",
                          "slow flow must cross psi from the entry side (f(psi, 0))", tol))
    return AssumptionReport(mode=mode, entries=tuple(entries))
