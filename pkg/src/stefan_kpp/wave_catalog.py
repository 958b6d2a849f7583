"""Semi-wave speeds, the critical advection beta*, and the named waves.

For fixed (f, mu, beta) this resolves c*(beta), c_l*(beta), beta*, and the
profiles U*, U_l*, V*, V_delta, W_delta and Q.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import pickle
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from stefan_kpp.kinetics import Nonlinearity, minimal_speed
from stefan_kpp.phase_plane import (
    PhaseParams,
    ShootError,
    StepLimitExceeded,
    WaveProfile,
    compact_bump,
    decreasing_semiwave,
    full_front,
    increasing_semiwave,
    stefan_functional,
    tadpole,
)

__all__ = [
    "ProblemParams",
    "WaveCatalog",
    "Regime",
    "RegimeError",
    "BracketFailed",
    "ConsistencyFailed",
    "CatalogError",
    "rightward_semiwave_speed",
    "fixed_point_residual",
    "semiwave_speed_sensitivity",
    "beta_star",
    "beta_star_by_root",
    "leftward_semiwave_speed",
    "tadpole_star",
    "tadpole_delta",
    "compact_wave_delta",
    "compact_delta_range",
    "classify_regime",
    "build_catalog",
]

CRITICAL_TOL = 1e-9
CACHE_FORMAT = 2  # bump when profile construction changes
SPEED_XTOL = 1e-12


class Regime:
    SMALL = "SmallAdvection"
    CRITICAL = "Critical"
    MEDIUM = "Medium"
    LARGE = "Large"


class CatalogError(RuntimeError):
    pass


class RegimeError(CatalogError):
    pass


class BracketFailed(CatalogError):
    pass


class ConsistencyFailed(CatalogError):
    pass


@dataclass(frozen=True)
class ProblemParams:
    f: Nonlinearity
    mu: float
    beta: float
    q_tol: float = 1e-8
    ode_tol: float = 1e-10
    dz: float = 0.01

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        # beta = 0 is the symmetric no-advection case, kept as a limit/reference
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")

    @property
    def c0(self) -> float:
        return minimal_speed(self.f)

    def phase(self, gamma: float) -> PhaseParams:
        return PhaseParams(gamma, self.f, self.q_tol, self.ode_tol, self.dz)

    def with_beta(self, beta: float) -> "ProblemParams":
        return ProblemParams(self.f, self.mu, beta, self.q_tol, self.ode_tol, self.dz)

    def refined(self) -> "ProblemParams":
        return ProblemParams(self.f, self.mu, self.beta, self.q_tol, self.ode_tol / 2, self.dz / 2)

    def key(self) -> str:
        blob = json.dumps(
            [self.f.describe(), self.mu, self.beta, self.q_tol, self.ode_tol, self.dz], sort_keys=True
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _P(params: ProblemParams, gamma: float) -> float:
    try:
        return stefan_functional(params.phase(gamma), params.mu)
    except StepLimitExceeded:
        # only reachable for gamma within round-off of c0, where P(c0 - 0) = 0
        if gamma > params.c0 - 1e-3:
            return 0.0
        raise


def fixed_point_residual(params: ProblemParams, c: float) -> float:
    return abs(_P(params, c - params.beta) - c)


def rightward_semiwave_speed(params: ProblemParams) -> float:
    """c*(beta): the root of P(c - beta) = c on (0, c0 + beta)."""
    beta, c0 = params.beta, params.c0
    lo, hi = 1e-9, c0 + beta - 1e-9
    F = lambda c: _P(params, c - beta) - c
    f_lo, f_hi = F(lo), F(hi)
    if not (f_lo > 0 > f_hi):
        raise BracketFailed(f"P(c-beta)-c has signs {f_lo:g}, {f_hi:g} at the bracket ends")
    return brentq(F, lo, hi, xtol=SPEED_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)


def semiwave_speed_sensitivity(params: ProblemParams, dbeta: float = 1e-3) -> float:
    if not 1e-4 <= dbeta <= 1e-2:
        raise ValueError("dbeta must lie in [1e-4, 1e-2]")
    up = rightward_semiwave_speed(params.with_beta(params.beta + dbeta))
    down = rightward_semiwave_speed(params.with_beta(params.beta - dbeta))
    return (up - down) / (2 * dbeta)


def beta_star(params: ProblemParams, check: bool = True) -> float:
    """beta* = P(-c0) + c0, cross-checked against c*(beta*) = beta* - c0."""
    c0 = params.c0
    bs = _P(params, -c0) + c0
    if check:
        cs = rightward_semiwave_speed(params.with_beta(bs))
        if abs(cs - (bs - c0)) > 1e-7:
            raise ConsistencyFailed(f"c*(beta*) = {cs!r} but beta* - c0 = {bs - c0!r}")
    return bs


def beta_star_by_root(params: ProblemParams) -> float:
    """beta* as the zero of beta -> c*(beta) - beta + c0 (independent route)."""
    c0 = params.c0
    G = lambda b: rightward_semiwave_speed(params.with_beta(b)) - b + c0
    lo, hi = c0, 2 * c0
    while G(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > 1e4:
            raise BracketFailed("c*(beta) - beta + c0 stays positive")
    return brentq(G, lo, hi, xtol=1e-11, rtol=4 * np.finfo(float).eps)


def leftward_semiwave_speed(params: ProblemParams) -> float:
    """c_l*(beta) in (beta - c0, 0): root of -mu U_l'(0; c - beta) = c."""
    beta, c0, mu = params.beta, params.c0, params.mu
    if beta >= c0:
        raise RegimeError("leftward semi-wave exists only for beta < c0")

    def F(c):
        prof = increasing_semiwave(params.phase(c - beta))
        return -mu * prof.slope_at_zero - c

    lo, hi = beta - c0 + 1e-9, -1e-12
    f_lo, f_hi = F(lo), F(hi)
    if not (f_lo > 0 > f_hi):
        raise BracketFailed(f"leftward Stefan map has signs {f_lo:g}, {f_hi:g}")
    return brentq(F, lo, hi, xtol=SPEED_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200)


def classify_regime(beta: float, c0: float, bstar: float) -> str:
    if abs(beta - c0) <= CRITICAL_TOL:
        return Regime.CRITICAL
    if beta < c0:
        return Regime.SMALL
    if beta < bstar:
        return Regime.MEDIUM
    return Regime.LARGE


def tadpole_star(params: ProblemParams, bstar: Optional[float] = None) -> WaveProfile:
    """V*(z) = V(z; beta - c0, -c0); exists iff c0 < beta < beta*."""
    c0, beta = params.c0, params.beta
    bstar = beta_star(params, check=False) if bstar is None else bstar
    if not c0 < beta < bstar:
        raise RegimeError(f"V* needs c0 < beta < beta* = {bstar:.6g}")
    return tadpole(params.phase(-c0), beta - c0, params.mu)


def tadpole_delta(params: ProblemParams, delta: float) -> WaveProfile:
    c0, beta = params.c0, params.beta
    if not 0 < delta < beta - c0:
        raise RegimeError(f"delta must lie in (0, beta - c0) = (0, {beta - c0:.6g})")
    return tadpole(params.phase(-c0 - delta), beta - c0 - delta, params.mu)


def compact_delta_range(params: ProblemParams, c_star: Optional[float] = None) -> float:
    """Upper end c*(beta) - beta + c0 of the admissible delta range for W_delta."""
    c_star = rightward_semiwave_speed(params) if c_star is None else c_star
    return c_star - params.beta + params.c0


def compact_wave_delta(
    params: ProblemParams, delta: float, c_star: Optional[float] = None, bstar: Optional[float] = None
) -> WaveProfile:
    """W_delta(z) = W(z; beta - c0 + delta, -c0 + delta) for c0 <= beta < beta*."""
    c0, beta = params.c0, params.beta
    bstar = beta_star(params, check=False) if bstar is None else bstar
    if not (beta >= c0 - CRITICAL_TOL and beta < bstar):
        raise RegimeError("W_delta needs c0 <= beta < beta*")
    top = compact_delta_range(params, c_star)
    if not 0 < delta < top:
        raise RegimeError(f"delta must lie in (0, {top:.6g})")
    return compact_bump(params.phase(-c0 + delta), beta - c0 + delta, params.mu)


@dataclass
class WaveCatalog:
    params: ProblemParams
    c0: float
    c_star: float
    beta_star: float
    regime: str
    U_star: WaveProfile
    fixed_point_residual: float
    U_l_star: Optional[WaveProfile] = None
    c_l_star: Optional[float] = None
    V_star: Optional[WaveProfile] = None
    Q_front: Optional[WaveProfile] = None
    W_delta: Optional[WaveProfile] = None
    delta: Optional[float] = None
    delta_range: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def beta(self) -> float:
        return self.params.beta

    @property
    def mu(self) -> float:
        return self.params.mu

    def profiles(self) -> dict[str, WaveProfile]:
        names = {"U_star": self.U_star, "U_l_star": self.U_l_star, "V_star": self.V_star,
                 "Q": self.Q_front, "W_delta": self.W_delta}
        return {k: v for k, v in names.items() if v is not None}

    def summary(self, profile_files: Optional[dict] = None) -> dict:
        out = {
            "nonlinearity": self.params.f.describe(),
            "mu": self.mu,
            "beta": self.beta,
            "c0": self.c0,
            "c_star": self.c_star,
            "beta_star": self.beta_star,
            "regime": self.regime,
            "fixed_point_residual": self.fixed_point_residual,
        }
        if self.c_l_star is not None:
            out["c_l_star"] = self.c_l_star
        if self.delta is not None:
            out["W_delta"] = {"delta": self.delta, "delta_range": self.delta_range,
                              "L_delta": self.W_delta.width, "D_delta": self.W_delta.height}
        out["profiles"] = profile_files if profile_files is not None else {
            k: v.header() for k, v in self.profiles().items()}
        return out


def _cache_dir(cache: Optional[os.PathLike]) -> Optional[Path]:
    if cache is None:
        cache = os.environ.get("STEFAN_KPP_CACHE")
    return Path(cache) if cache else None


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def build_catalog(
    params: ProblemParams, delta_fraction: float = 0.5, cache: Optional[os.PathLike] = None
) -> WaveCatalog:
    cdir = _cache_dir(cache)
    key = f"{params.key()}-{delta_fraction:g}-v{CACHE_FORMAT}"
    if cdir is not None:
        hit = cdir / f"catalog-{key}.pkl"
        if hit.exists():
            return pickle.loads(hit.read_bytes())

    c0, beta = params.c0, params.beta
    try:
        bstar = beta_star(params)
        c_star = rightward_semiwave_speed(params)
        regime = classify_regime(beta, c0, bstar)
        U_star = decreasing_semiwave(params.phase(c_star - beta))
        cat = WaveCatalog(params, c0, c_star, bstar, regime, U_star, fixed_point_residual(params, c_star))
        if regime == Regime.SMALL:
            cl = leftward_semiwave_speed(params)
            cat.c_l_star = cl
            cat.U_l_star = increasing_semiwave(params.phase(cl - beta))
        if regime == Regime.MEDIUM:
            cat.V_star = tadpole_star(params, bstar)
        if regime != Regime.SMALL:
            cat.Q_front = full_front(params.phase(-c0))
        if regime in (Regime.MEDIUM, Regime.CRITICAL):
            top = compact_delta_range(params, c_star)
            cat.delta_range = top
            cat.delta = delta_fraction * top
            cat.W_delta = compact_wave_delta(params, cat.delta, c_star, bstar)
    except (ShootError, CatalogError) as exc:
        raise CatalogError(f"catalog for mu={params.mu:g}, beta={beta:g}: {exc}") from exc

    if cdir is not None:
        _atomic_write_bytes(cdir / f"catalog-{key}.pkl", pickle.dumps(cat))
    return cat
