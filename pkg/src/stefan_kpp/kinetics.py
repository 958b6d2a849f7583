"""KPP reaction terms.

Nonlinearities are polynomials stored as ascending coefficient tables so that
f, f' and the primitive F are all exact.  The truncated term f_A used for a
priori bounds is built on top of any validated nonlinearity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

__all__ = [
    "Nonlinearity",
    "TruncatedNonlinearity",
    "KppReport",
    "make_logistic",
    "make_weighted_logistic",
    "make_polynomial",
    "validate_kpp",
    "minimal_speed",
    "truncate",
    "nonlinearity_from_spec",
]


@dataclass(frozen=True)
class Nonlinearity:
    """Polynomial reaction term ``f(u) = sum_k coeffs[k] * u**k``."""

    coeffs: tuple[float, ...]
    name: str = "polynomial"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = tuple(float(x) for x in np.trim_zeros(np.asarray(self.coeffs, float), "b"))
        object.__setattr__(self, "coeffs", c or (0.0,))

    def eval(self, u):
        return P.polyval(u, self.coeffs)

    __call__ = eval

    def deriv(self, u):
        return P.polyval(u, P.polyder(self.coeffs))

    def primitive(self, u):
        """F(u) = int_0^u f(s) ds."""
        return P.polyval(u, P.polyint(self.coeffs))

    @property
    def fprime0(self) -> float:
        return float(self.deriv(0.0))

    @property
    def fprime1(self) -> float:
        return float(self.deriv(1.0))

    def scaled(self, kappa: float) -> "Nonlinearity":
        return Nonlinearity(
            tuple(kappa * c for c in self.coeffs),
            name=f"{kappa:g}*{self.name}",
            params=dict(self.params, kappa=kappa),
        )

    def describe(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "coeffs": list(self.coeffs)}


def make_logistic() -> Nonlinearity:
    return Nonlinearity((0.0, 1.0, -1.0), name="logistic")


def make_weighted_logistic(a: float) -> Nonlinearity:
    """``u(1-u)(1+a*u)/(1+a)``; KPP-valid for ``a`` in [0, 1]."""
    if a <= -1.0:
        raise ValueError("a must exceed -1")
    base = P.polymul((0.0, 1.0, -1.0), (1.0, a))
    return Nonlinearity(tuple(base / (1.0 + a)), name="weighted_logistic", params={"a": a})


def make_polynomial(coeffs: Sequence[float], name: str = "polynomial") -> Nonlinearity:
    return Nonlinearity(tuple(coeffs), name=name, params={"coeffs": list(coeffs)})


def nonlinearity_from_spec(spec: dict) -> Nonlinearity:
    """Build a nonlinearity from a ``{name, params}`` config block."""
    name = spec.get("name", "logistic")
    params = spec.get("params") or {}
    if name == "logistic":
        f = make_logistic()
    elif name == "weighted_logistic":
        f = make_weighted_logistic(float(params.get("a", 0.0)))
    elif name == "polynomial":
        f = make_polynomial(params["coeffs"])
    else:
        raise ValueError(f"unknown nonlinearity {name!r}")
    kappa = params.get("kappa")
    return f.scaled(float(kappa)) if kappa is not None else f


@dataclass
class KppReport:
    passed: bool
    violation_u: Optional[float] = None
    reason: str = ""
    n_samples: int = 0

    def __bool__(self):
        return self.passed


def _kpp_samples(n_samples: int, upper: float = 4.0) -> np.ndarray:
    n_geo = n_samples // 2
    geo = np.geomspace(1e-8, upper, n_geo)
    uni = np.linspace(0.0, upper, n_samples - n_geo)
    return np.unique(np.concatenate([geo, uni, [0.0, 1.0]]))


def validate_kpp(f: Nonlinearity, n_samples: int = 10_000, exact_tol: float = 1e-12) -> KppReport:
    """Sample-based check of hypothesis (F) on [0, 4].

    Never raises; the first violating sample (smallest u) is reported.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    u = _kpp_samples(n_samples)
    r = f.fprime0
    if not r > 0:
        return KppReport(False, 0.0, f"f'(0) = {r:g} is not positive", len(u))
    if not f.fprime1 < 0:
        return KppReport(False, 1.0, f"f'(1) = {f.fprime1:g} is not negative", len(u))
    for point in (0.0, 1.0):
        if abs(float(f(point))) > exact_tol:
            return KppReport(False, point, f"f({point:g}) != 0", len(u))

    fu = f(u)
    bad = np.zeros(u.shape, dtype=bool)
    reasons = np.full(u.shape, "", dtype=object)

    interior = (u > 0) & (u < 1)
    sign_bad = interior & ~(fu > 0)
    above = u > 1
    sign_bad |= above & ~(fu < 0)
    reasons[sign_bad] = "sign: (1-u) f(u) <= 0"
    bad |= sign_bad

    # relative slack keeps round-off at u=0 from flagging exact tangency
    sub_bad = fu > r * u + 1e-12 * np.maximum(1.0, np.abs(r * u))
    reasons[sub_bad & ~bad] = "subtangency: f(u) > f'(0) u"
    bad |= sub_bad

    ud = u[(u > 0) & (u <= 2.0)]
    h = 1e-5 * np.maximum(1.0, ud)
    fd = (f(ud + h) - f(ud - h)) / (2 * h)
    d = f.deriv(ud)
    dbad = np.abs(d - fd) > 1e-6 * np.maximum(1.0, np.abs(d))
    if dbad.any():
        first = float(ud[dbad][0])
        idx = np.searchsorted(u, first)
        bad[idx] = True
        if not reasons[idx]:
            reasons[idx] = "deriv disagrees with finite differences"

    if bad.any():
        i = int(np.argmax(bad))
        return KppReport(False, float(u[i]), str(reasons[i]), len(u))
    return KppReport(True, None, "", len(u))


def minimal_speed(f: Nonlinearity) -> float:
    r = f.fprime0
    if r <= 0:
        raise ValueError("f'(0) must be positive")
    return 2.0 * math.sqrt(r)


@dataclass(frozen=True)
class TruncatedNonlinearity:
    """Truncated term f_A: linear on [0,1], positive on (1,A), negative past A.

    On [1, A] the blend is the cubic ``f'(0) s (1 - tau^2)``, tau = (s-1)/(A-1),
    i.e. the C1 Hermite cubic through (1, f'(0)) with slope f'(0) and through
    (A, 0) with slope ``-2 f'(0) A/(A-1)``.  Past A it saturates to that slope's
    magnitude: ``m (s-A) / (1 + (s-A))``.
    """

    base: Nonlinearity
    cap: float

    @property
    def fprime0(self) -> float:
        return self.base.fprime0

    @property
    def slope_at_cap(self) -> float:
        A = self.cap
        return -2.0 * self.fprime0 * A / (A - 1.0)

    def eval_A(self, s):
        s = np.asarray(s, dtype=float)
        r, A = self.fprime0, self.cap
        tau = (s - 1.0) / (A - 1.0)
        x = s - A
        out = np.where(
            s <= 1.0,
            r * s,
            np.where(s <= A, r * s * (1.0 - tau**2), self.slope_at_cap * x / (1.0 + np.abs(x))),
        )
        return out if out.ndim else float(out)

    __call__ = eval_A

    def eval(self, s):
        return self.eval_A(s)


def truncate(f: Nonlinearity, sup_u0: float) -> TruncatedNonlinearity:
    if sup_u0 < 0:
        raise ValueError("sup_u0 must be nonnegative")
    A = 2.0 * max(1.0, float(sup_u0))
    fa = TruncatedNonlinearity(f, A)
    s = np.linspace(0.0, 2 * A, 10_001)
    lo, mid, hi = f(s), fa(s), f.fprime0 * s
    tol = 1e-12 * np.maximum(1.0, np.abs(hi))
    if np.any(lo > mid + tol) or np.any(mid > hi + tol):
        raise ValueError(f"f_A ordering f <= f_A <= f'(0)s fails for {f.name} at A={A:g}")
    return fa
