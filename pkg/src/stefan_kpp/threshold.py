"""Sharp-threshold search over the initial-data multiplier sigma.

Each evaluation is a full simulation classified by live certificates.  The
search doubles sigma from 0.1 until the upper class appears, then bisects.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from stefan_kpp.classifier import (
    CertificateMonitor,
    Classification,
    Verdict,
    classify,
    profile_error,
)
from stefan_kpp.fbp_solver import FbpState, SolverConfig, WindowExceedsDomain, run
from stefan_kpp.wave_catalog import Regime, RegimeError, WaveCatalog

__all__ = [
    "Target",
    "ThresholdError",
    "NoUpperClassFound",
    "Evaluation",
    "ThresholdResult",
    "evaluate_sigma",
    "find_threshold",
    "TransitionEvidence",
    "transition_evidence",
]

SIGMA_START = 0.1
MONITOR_EVERY = 1.0


class Target:
    VANISH_TO_SPREAD = "VanishToSpread"
    VANISH_TO_NONVANISH = "VanishToNonvanish"
    NONVANISH_TO_SPREAD = "NonvanishToSpread"
    ALL = (VANISH_TO_SPREAD, VANISH_TO_NONVANISH, NONVANISH_TO_SPREAD)


class ThresholdError(RuntimeError):
    pass


class NoUpperClassFound(ThresholdError):
    def __init__(self, msg, evaluations=None):
        super().__init__(msg)
        self.evaluations = evaluations or []


@dataclass
class Evaluation:
    sigma: float
    verdict: str
    t_decided: Optional[float]
    t_max: float
    certificate: Optional[str] = None


@dataclass
class ThresholdResult:
    target: str
    regime: str
    sigma_lo: float
    sigma_hi: float
    verdict_lo: str
    verdict_hi: str
    evaluations: list[Evaluation] = field(default_factory=list)
    rel_tol: float = 1e-2

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.sigma_lo + self.sigma_hi)

    @property
    def rel_width(self) -> float:
        return (self.sigma_hi - self.sigma_lo) / self.sigma_hi

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rel_width"] = self.rel_width
        return d


def _side(verdict: str, target: str, regime: str) -> Optional[str]:
    """'lo', 'hi' or None (unresolved) for a verdict under ``target``."""
    if target == Target.VANISH_TO_SPREAD:
        if verdict == Verdict.VANISHING:
            return "lo"
        if verdict in (Verdict.SPREADING, Verdict.VIRTUAL_SPREADING):
            return "hi"
    elif target == Target.VANISH_TO_NONVANISH:
        if verdict == Verdict.VANISHING:
            return "lo"
        if verdict in (Verdict.SPREADING, Verdict.VIRTUAL_SPREADING, Verdict.VIRTUAL_VANISHING):
            return "hi"
    elif target == Target.NONVANISH_TO_SPREAD:
        if verdict in (Verdict.VANISHING, Verdict.VIRTUAL_VANISHING):
            return "lo"
        if verdict in (Verdict.SPREADING, Verdict.VIRTUAL_SPREADING):
            return "hi"
    else:
        raise ValueError(f"unknown target {target!r}")
    return None


def _resolve_undecided(target: str, regime: str) -> str:
    # an undecided run after extension sits near an edge; treat it as the
    # inner band, i.e. on the far side of the requested edge
    if target == Target.NONVANISH_TO_SPREAD:
        return "lo"
    return "hi"


def evaluate_sigma(template: SolverConfig, catalog: WaveCatalog, sigma: float,
                   extend: bool = True) -> tuple[Evaluation, Classification]:
    """Simulate one multiplier with early stopping; extend t_max x2 once if undecided."""
    cfg = template.replace(init=template.init.replace(sigma=sigma))
    mon = CertificateMonitor(catalog, stop=True)
    traj = run(cfg, monitor=mon, monitor_every=MONITOR_EVERY)
    t_max = cfg.t_max
    cls = classify(traj, catalog, mon, diagnostics=False)
    if cls.verdict in (Verdict.UNDECIDED, Verdict.VIRTUAL_VANISHING) and extend and traj.terminal == "ReachedTmax":
        t_max = 2 * cfg.t_max
        traj = run(cfg.replace(t_max=t_max), monitor=mon, monitor_every=MONITOR_EVERY, state=traj.final)
        cls = classify(traj, catalog, mon, diagnostics=False)
    cert = cls.certificate.name if cls.certificate else None
    return Evaluation(float(sigma), cls.verdict, cls.t_decided, t_max, cert), cls


def _eval_job(args):
    template, catalog, sigma = args
    return evaluate_sigma(template, catalog, sigma)[0]


def _ladder(template, catalog, sigmas, jobs):
    if jobs > 1 and len(sigmas) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_eval_job, [(template, catalog, s) for s in sigmas]))
    return [_eval_job((template, catalog, s)) for s in sigmas]


def find_threshold(template: SolverConfig, catalog: WaveCatalog, target: str = Target.VANISH_TO_SPREAD,
                   rel_tol: float = 1e-2, sigma_max: float = 100.0, jobs: int = 1) -> ThresholdResult:
    """Bracket the sigma edge named by ``target`` to relative width ``rel_tol``."""
    if target not in Target.ALL:
        raise ValueError(f"unknown target {target!r}")
    if rel_tol < 1e-3:
        raise ValueError("rel_tol must be at least 1e-3")
    if sigma_max <= 0:
        raise ValueError("sigma_max must be positive")
    regime = catalog.regime
    evals: list[Evaluation] = []

    def side(ev: Evaluation) -> str:
        s = _side(ev.verdict, target, regime)
        return s if s is not None else _resolve_undecided(target, regime)

    lo = hi = None
    # doubling ladder from 0.1, evaluated in batches of `jobs`
    sigmas = []
    s = min(SIGMA_START, sigma_max)
    while True:
        sigmas.append(s)
        if s >= sigma_max:
            break
        s = min(2 * s, sigma_max)
    i = 0
    while i < len(sigmas) and hi is None:
        batch = sigmas[i:i + max(1, jobs)]
        for ev in _ladder(template, catalog, batch, jobs):
            evals.append(ev)
            if side(ev) == "hi":
                hi = ev if hi is None else hi
            elif hi is None:
                lo = ev
        i += len(batch)
    if hi is None:
        raise NoUpperClassFound(
            f"sigma = {sigma_max:g} is still lower class; threshold is infinite operationally", evals)
    # shrink below the start until the lower class appears
    s = hi.sigma
    while lo is None:
        s /= 2
        if s < 1e-8:
            raise ThresholdError("no lower-class sigma found down to 1e-8")
        ev = _eval_job((template, catalog, s))
        evals.append(ev)
        if side(ev) == "lo":
            lo = ev
        else:
            hi = ev
    while (hi.sigma - lo.sigma) / hi.sigma > rel_tol:
        mid = 0.5 * (lo.sigma + hi.sigma)
        ev = _eval_job((template, catalog, mid))
        evals.append(ev)
        if side(ev) == "lo":
            lo = ev
        else:
            hi = ev
    return ThresholdResult(target, regime, lo.sigma, hi.sigma, lo.verdict, hi.verdict, evals, rel_tol)


@dataclass
class TransitionEvidence:
    sigma: float
    t_max: float
    t_best: float
    vstar_error: float
    h_dot_mean: float
    h_dot_target: float
    window: tuple[float, float]
    verdict: str
    h_dot_rel_error: float = math.nan
    passed_h_dot: bool = False
    passed_profile: bool = False
    series: dict = field(default_factory=dict, repr=False)

    def to_dict(self, with_series: bool = False) -> dict:
        d = asdict(self)
        if not with_series:
            d.pop("series")
        return d


class _TransitionMonitor(CertificateMonitor):
    def __init__(self, catalog: WaveCatalog, t_min: float):
        super().__init__(catalog, stop=True)
        self.t_min = t_min
        self.samples: list[tuple[float, float, float]] = []

    def __call__(self, state: FbpState):
        if state.t >= self.t_min:
            try:
                err = profile_error(state, self.catalog.V_star, "front", True, z_window=10.0)
            except WindowExceedsDomain:
                err = math.inf
            self.samples.append((state.t, err, state.h_dot))
        return super().__call__(state)


def transition_evidence(template: SolverConfig, catalog: WaveCatalog, sigma: float,
                        t_max_factor: float = 2.0, window: float = 5.0, t_min: float = 5.0,
                        h_dot_tol: float = 0.10, profile_tol: float = 0.05) -> TransitionEvidence:
    """Evidence for the transition regime at a bisection midpoint.

    The run is stopped once a certificate fires (the solution has left the
    neighborhood of V*).  Statistics are taken at the epoch of closest
    approach to V* over the run, with h_dot averaged over the trailing
    ``window`` before that epoch.
    """
    if catalog.regime != Regime.MEDIUM:
        raise RegimeError("transition evidence needs c0 < beta < beta*")
    cfg = template.replace(init=template.init.replace(sigma=sigma), t_max=t_max_factor * template.t_max)
    mon = _TransitionMonitor(catalog, t_min)
    traj = run(cfg, monitor=mon, monitor_every=0.5)
    cls = classify(traj, catalog, mon, diagnostics=False)
    target = catalog.beta - catalog.c0
    if not mon.samples:
        return TransitionEvidence(sigma, cfg.t_max, math.nan, math.inf, math.nan, target,
                                  (math.nan, math.nan), cls.verdict)
    ts, errs, _ = (np.array(a) for a in zip(*mon.samples))
    k = int(np.argmin(errs))
    t_best = float(ts[k])
    w0 = max(t_best - window, traj.t[0])
    sel = (traj.t >= w0) & (traj.t <= t_best + 1e-9)
    h_dot_mean = float(np.mean(traj.h_dot[sel]))
    rel = abs(h_dot_mean - target) / abs(target)
    return TransitionEvidence(
        float(sigma), cfg.t_max, t_best, float(errs[k]), h_dot_mean, target, (float(w0), t_best),
        cls.verdict, rel, bool(rel <= h_dot_tol), bool(errs[k] <= profile_tol),
        {"t": ts.tolist(), "vstar_error": errs.tolist()},
    )
