"""Long-time behavior verdicts for free-boundary runs.

Verdicts rest on sufficient certificates (domination by a known wave, or a
critical width) plus an operational extinction proxy; speeds and profile
errors are attached as diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from stefan_kpp.fbp_solver import (
    FbpState,
    FbpTrajectory,
    Snapshot,
    WindowExceedsDomain,
    extract_profile,
)
from stefan_kpp.phase_plane import WaveProfile
from stefan_kpp.wave_catalog import Regime, RegimeError, WaveCatalog, compact_wave_delta

__all__ = [
    "Verdict",
    "Certificate",
    "Classification",
    "SpeedFit",
    "InsufficientData",
    "critical_half_width",
    "certify_spreading_small_beta",
    "certify_virtual_spreading",
    "certify_vanishing",
    "dominates_compact",
    "dominated_by_tadpole",
    "measure_speed",
    "profile_error",
    "log_shift_diagnostic",
    "CertificateMonitor",
    "classify",
    "verdict_rank",
]

PROXY_SUP = 1e-6
PROXY_HDOT = 1e-6
PROXY_WINDOW = 10.0


class Verdict:
    SPREADING = "Spreading"
    VANISHING = "Vanishing"
    VIRTUAL_SPREADING = "VirtualSpreading"
    VIRTUAL_VANISHING = "VirtualVanishing"
    UNDECIDED = "Undecided"


def verdict_rank(verdict: str) -> int:
    """0 = vanishing, 1 = inner band, 2 = (virtual) spreading."""
    if verdict == Verdict.VANISHING:
        return 0
    if verdict in (Verdict.SPREADING, Verdict.VIRTUAL_SPREADING):
        return 2
    return 1


class InsufficientData(ValueError):
    pass


@dataclass
class Certificate:
    name: str
    t: float
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = float(self.t)
        self.details = {k: (float(v) if isinstance(v, (np.floating, np.integer)) else v)
                        for k, v in self.details.items()}


@dataclass
class SpeedFit:
    window: tuple[float, float]
    speed: float
    intercept: float
    residual: float
    increment: float


@dataclass
class Classification:
    verdict: str
    certificate: Optional[Certificate] = None
    measured_front_speed: Optional[float] = None
    measured_back_speed: Optional[float] = None
    front_profile_error: Optional[float] = None
    back_profile_error: Optional[float] = None
    log_shift_offset: Optional[float] = None
    t_decided: Optional[float] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def critical_half_width(catalog: WaveCatalog) -> float:
    c0, beta = catalog.c0, catalog.beta
    if beta >= c0:
        raise RegimeError("H* is defined only for beta < c0")
    return math.pi / math.sqrt(c0 * c0 - beta * beta)


def certify_spreading_small_beta(traj: FbpTrajectory, catalog: WaveCatalog) -> Optional[Certificate]:
    """Width of [g, h] beyond 2H* (plus a 2% margin of H*) forces spreading."""
    if catalog.regime != Regime.SMALL:
        raise RegimeError("width certificate applies to beta < c0 only")
    H = critical_half_width(catalog)
    need = 2 * H + 0.02 * H
    width = traj.h - traj.g
    idx = np.nonzero(width >= need)[0]
    if idx.size == 0:
        return None
    i = int(idx[0])
    return Certificate("spreading-width", float(traj.t[i]),
                       {"H_star": H, "width": float(width[i]), "threshold": need})


def _thin(z: np.ndarray, q: np.ndarray, max_points: int = 400):
    k = max(1, int(math.ceil(z.size / max_points)))
    idx = np.unique(np.concatenate([np.arange(0, z.size, k), [z.size - 1, int(np.argmax(q))]]))
    return z[idx], q[idx]


def dominates_compact(snap, W: WaveProfile, tol: float = 0.0) -> Optional[float]:
    """Return a shift x1 with u(x) >= W(x - x1) on [x1 - L, x1], else None."""
    x, u = snap.x, snap.w
    zs, ws = _thin(W.z_grid, W.q_values)
    L = -W.z_grid[0]
    cand = x[(x - L >= x[0]) & (x <= x[-1])]
    if cand.size == 0:
        return None
    best = None
    for chunk in np.array_split(cand, max(1, cand.size // 256)):
        pts = chunk[:, None] + zs[None, :]
        ok = np.all(np.interp(pts, x, u) >= ws[None, :] - tol, axis=1)
        if ok.any():
            best = float(chunk[np.argmax(ok)])
            break
    return best


def dominated_by_tadpole(snap, V: WaveProfile, span: Optional[float] = None, tol: float = 0.0) -> Optional[float]:
    """Return x1 >= h with u(x) <= V(x - x1) on [g, h], else None."""
    x, u = snap.x, snap.w
    dx = x[1] - x[0]
    span = span if span is not None else max(5.0, -V.z_grid[int(np.argmax(V.q_values))] + 5.0)
    shifts = snap.h + np.arange(0.0, span + dx, max(dx, 0.01))
    sel = u > 0
    xs, us = x[sel], u[sel]
    if xs.size == 0:
        return float(snap.h)
    for chunk in np.array_split(shifts, max(1, shifts.size // 128)):
        vals = V(xs[None, :] - chunk[:, None])
        ok = np.all(us[None, :] <= vals + tol, axis=1)
        if ok.any():
            return float(chunk[np.argmax(ok)])
    return None


def _snapshots(traj_or_snaps) -> Sequence[Snapshot]:
    if isinstance(traj_or_snaps, FbpTrajectory):
        return traj_or_snaps.snapshots
    return traj_or_snaps


def _w_delta(catalog: WaveCatalog, delta: Optional[float]) -> tuple[WaveProfile, float]:
    if delta is None or (catalog.delta is not None and abs(delta - catalog.delta) < 1e-15):
        return catalog.W_delta, catalog.delta
    return compact_wave_delta(catalog.params, delta, catalog.c_star, catalog.beta_star), delta


def certify_virtual_spreading(traj_or_snaps, catalog: WaveCatalog, delta: Optional[float] = None
                              ) -> Optional[Certificate]:
    if catalog.regime not in (Regime.CRITICAL, Regime.MEDIUM):
        raise RegimeError("virtual spreading certificate needs c0 <= beta < beta*")
    W, delta = _w_delta(catalog, delta)
    for snap in _snapshots(traj_or_snaps):
        if snap.w.max() < W.height:
            continue
        x1 = dominates_compact(snap, W)
        if x1 is not None:
            return Certificate("virtual-spreading-W_delta", float(snap.t),
                               {"delta": delta, "x1": x1, "L_delta": W.width, "D_delta": W.height})
    return None


def _proxy_vanishing(traj: FbpTrajectory) -> Optional[Certificate]:
    t = traj.t
    quiet = (traj.sup_u < PROXY_SUP) & (traj.h_dot < PROXY_HDOT) & (traj.g_dot > -PROXY_HDOT)
    # first t1 with every sample in [t1, t1 + window] quiet
    bad_after = np.flip(np.maximum.accumulate(np.flip(np.where(~quiet, t, -np.inf))))
    for i in np.nonzero(quiet)[0]:
        if t[-1] - t[i] >= PROXY_WINDOW and bad_after[i] < t[i]:
            return Certificate("vanishing-proxy", float(t[i] + PROXY_WINDOW),
                               {"sup_threshold": PROXY_SUP, "hdot_threshold": PROXY_HDOT,
                                "window": PROXY_WINDOW})
    if traj.terminal == "SupBelowFloor" and traj.h_dot[-1] < PROXY_HDOT and traj.g_dot[-1] > -PROXY_HDOT:
        return Certificate("vanishing-proxy", float(t[-1]),
                           {"sup_threshold": float(traj.sup_u[-1]), "hdot_threshold": PROXY_HDOT,
                            "window": 0.0, "extinct": True})
    return None


def certify_vanishing(traj: FbpTrajectory, catalog: WaveCatalog, which: str = "any"
                      ) -> Optional[Certificate]:
    """(a) domination by a shift of V* [Medium only]; (b) extinction proxy."""
    if which in ("any", "a") and catalog.regime == Regime.MEDIUM and catalog.V_star is not None:
        for snap in traj.snapshots:
            x1 = dominated_by_tadpole(snap, catalog.V_star)
            if x1 is not None:
                return Certificate("vanishing-V_star", float(snap.t), {"x1": x1, "h": float(snap.h)})
    if which in ("any", "b"):
        return _proxy_vanishing(traj)
    return None


def measure_speed(traj: FbpTrajectory, which: str = "h", window_fraction: float = 0.5) -> SpeedFit:
    """Line fit of h (or g, or chi_m) over the final ``window_fraction`` of time."""
    y = {"h": traj.h, "front": traj.h, "g": traj.g, "left": traj.g, "chi": traj.chi_m,
         "back": traj.chi_m}[which]
    t = traj.t
    t1 = t[-1] - window_fraction * (t[-1] - t[0])
    sel = (t >= t1 - 1e-12) & np.isfinite(y)
    if sel.sum() < 3 or t[sel][-1] - t[sel][0] < 10:
        raise InsufficientData(f"need at least 10 time units of {which} data in the window")
    ts, ys = t[sel], y[sel]
    A = np.column_stack([ts, np.ones_like(ts)])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    res = float(np.max(np.abs(A @ coef - ys)))
    inc = float((ys[-1] - ys[0]) / (ts[-1] - ts[0]))
    return SpeedFit((float(ts[0]), float(ts[-1])), float(coef[0]), float(coef[1]), res, inc)


def profile_error(snap, reference: WaveProfile, frame: str = "front", fitted_shift: bool = True,
                  z_window: float = 10.0, level_m: float = 0.2, max_shift: float = 5.0) -> float:
    """Sup-norm distance between the solution in ``frame`` and ``reference``.

    With ``fitted_shift`` the reference is translated by the best s in
    [-max_shift, max_shift] (never worse than s = 0).
    """
    z, u = extract_profile(snap, frame, z_window, level_m=level_m)
    err = lambda s: float(np.max(np.abs(u - reference(z + s))))
    e0 = err(0.0)
    if not fitted_shift:
        return e0
    grid = np.linspace(-max_shift, max_shift, 201)
    vals = np.array([err(s) for s in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(err, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    return min(e0, vals[k], float(res.fun))


def log_shift_diagnostic(traj: FbpTrajectory, catalog: WaveCatalog) -> tuple[np.ndarray, np.ndarray]:
    """Series chi_m(t) - (beta - c0) t - (3/c0) ln t over samples with t > 0."""
    if catalog.regime not in (Regime.CRITICAL, Regime.MEDIUM):
        raise RegimeError("log-shift diagnostic needs c0 <= beta < beta*")
    c0, beta = catalog.c0, catalog.beta
    sel = (traj.t > 0) & np.isfinite(traj.chi_m)
    t = traj.t[sel]
    return t, traj.chi_m[sel] - (beta - c0) * t - (3.0 / c0) * np.log(t)


class CertificateMonitor:
    """Live certificate checks for ``fbp_solver.run(monitor=...)``.

    Returns a stop reason once a decisive certificate fires (if ``stop``).
    """

    def __init__(self, catalog: WaveCatalog, stop: bool = True):
        self.catalog = catalog
        self.stop = stop
        self.certificates: list[Certificate] = []
        self.history: list[tuple[float, float, float, float]] = []

    def first(self) -> Optional[Certificate]:
        return self.certificates[0] if self.certificates else None

    def _fire(self, cert: Certificate) -> Optional[str]:
        if not any(c.name == cert.name for c in self.certificates):
            self.certificates.append(cert)
        return cert.name if self.stop else None

    def __call__(self, state: FbpState) -> Optional[str]:
        cat = self.catalog
        sup = float(state.w.max())
        self.history.append((state.t, sup, state.h_dot, state.g_dot))
        if cat.regime == Regime.MEDIUM and cat.V_star is not None and sup < cat.V_star.height:
            x1 = dominated_by_tadpole(state, cat.V_star)
            if x1 is not None:
                return self._fire(Certificate("vanishing-V_star", state.t, {"x1": x1, "h": state.h}))
        if cat.regime in (Regime.MEDIUM, Regime.CRITICAL) and cat.W_delta is not None:
            if sup >= cat.W_delta.height:
                x1 = dominates_compact(state, cat.W_delta)
                if x1 is not None:
                    return self._fire(Certificate(
                        "virtual-spreading-W_delta", state.t,
                        {"delta": cat.delta, "x1": x1, "L_delta": cat.W_delta.width,
                         "D_delta": cat.W_delta.height}))
        if cat.regime == Regime.SMALL:
            need = 2.02 * critical_half_width(cat)
            if state.width >= need:
                return self._fire(Certificate("spreading-width", state.t,
                                              {"H_star": need / 2.02, "width": state.width,
                                               "threshold": need}))
        # proxy (b) over the monitor history
        quiet_since = None
        for t, s, hd, gd in reversed(self.history):
            if s < PROXY_SUP and hd < PROXY_HDOT and gd > -PROXY_HDOT:
                quiet_since = t
            else:
                break
        if quiet_since is not None and state.t - quiet_since >= PROXY_WINDOW:
            return self._fire(Certificate("vanishing-proxy", state.t,
                                          {"sup_threshold": PROXY_SUP, "hdot_threshold": PROXY_HDOT,
                                           "window": PROXY_WINDOW}))
        return None


_CERT_VERDICT = {
    "vanishing-V_star": Verdict.VANISHING,
    "vanishing-proxy": Verdict.VANISHING,
    "virtual-spreading-W_delta": Verdict.VIRTUAL_SPREADING,
    "spreading-width": Verdict.SPREADING,
}


def _attach_diagnostics(out: Classification, traj: FbpTrajectory, catalog: WaveCatalog) -> None:
    final = traj.final
    try:
        out.measured_front_speed = measure_speed(traj, "h").increment
    except InsufficientData as exc:
        out.notes.append(str(exc))
    try:
        out.front_profile_error = profile_error(final, catalog.U_star, "front", True)
    except WindowExceedsDomain as exc:
        out.notes.append(f"front profile: {exc}")
    if out.verdict == Verdict.SPREADING:
        try:
            out.measured_back_speed = measure_speed(traj, "g").increment
        except InsufficientData as exc:
            out.notes.append(str(exc))
    elif out.verdict == Verdict.VIRTUAL_SPREADING:
        try:
            out.measured_back_speed = measure_speed(traj, "chi").increment
        except InsufficientData as exc:
            out.notes.append(str(exc))
        if catalog.Q_front is not None:
            try:
                out.back_profile_error = profile_error(final, catalog.Q_front, "back", True,
                                                       level_m=traj.config.level_m)
            except WindowExceedsDomain as exc:
                out.notes.append(f"back profile: {exc}")
        t, off = log_shift_diagnostic(traj, catalog)
        half = t >= t[-1] / 2 if t.size else t
        if t.size:
            out.log_shift_offset = float(np.min(off[half]))


def classify(traj: FbpTrajectory, catalog: WaveCatalog, monitor: Optional[CertificateMonitor] = None,
             diagnostics: bool = True) -> Classification:
    """Apply certificates in order: vanishing (a), virtual spreading, width, proxy (b)."""
    cert = None
    if monitor is not None and monitor.first() is not None:
        cert = monitor.first()
    else:
        candidates = []
        if catalog.regime == Regime.MEDIUM:
            candidates.append(certify_vanishing(traj, catalog, "a"))
        if catalog.regime in (Regime.MEDIUM, Regime.CRITICAL):
            candidates.append(certify_virtual_spreading(traj, catalog))
        if catalog.regime == Regime.SMALL:
            candidates.append(certify_spreading_small_beta(traj, catalog))
        candidates.append(certify_vanishing(traj, catalog, "b"))
        fired = [c for c in candidates if c is not None]
        if fired:
            # ordered list; the earliest-firing certificate decides
            cert = min(fired, key=lambda c: c.t)
    if cert is not None:
        out = Classification(_CERT_VERDICT[cert.name], cert, t_decided=cert.t)
    else:
        out = Classification(Verdict.UNDECIDED)
        if catalog.regime == Regime.CRITICAL:
            n = len(traj.t)
            tail = slice(int(0.75 * n), n)
            if n >= 8 and np.all(traj.sup_u[tail] < 1e-3) and np.all(traj.h_dot[tail] > 0):
                out = Classification(
                    Verdict.VIRTUAL_VANISHING,
                    Certificate("virtual-vanishing-trend", float(traj.t[-1]),
                                {"sup_u_max": float(traj.sup_u[tail].max()),
                                 "h_dot_min": float(traj.h_dot[tail].min())}),
                    t_decided=float(traj.t[-1]),
                )
    if diagnostics and out.verdict in (Verdict.SPREADING, Verdict.VIRTUAL_SPREADING):
        _attach_diagnostics(out, traj, catalog)
    return out
