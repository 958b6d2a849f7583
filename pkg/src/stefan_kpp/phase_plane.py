"""Shooting in the (q, p) phase plane of ``q'' + gamma q' + f(q) = 0``.

Every profile family is produced by integrating ``q' = p, p' = -gamma p - f(q)``
from a fixed point (offset along an exact eigenvector) or from a Stefan
boundary point ``(0, -b/mu)``, stopping on a located event.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import DOP853, OdeSolution
from scipy.optimize import brentq

from stefan_kpp.kinetics import Nonlinearity, minimal_speed

__all__ = [
    "PhaseParams",
    "Trajectory",
    "WaveProfile",
    "Event",
    "ShootError",
    "ShootFailed",
    "StepLimitExceeded",
    "NotInS1",
    "NotInS2",
    "integrate",
    "saddle_unstable_direction",
    "saddle_stable_direction",
    "origin_eigenvalues",
    "decreasing_semiwave",
    "increasing_semiwave",
    "stefan_functional",
    "compact_bump",
    "tadpole",
    "full_front",
    "profile_residual",
]

SHOOT_EPS = 1e-8
DZ = 0.01
MAX_STEPS = 1_000_000


class ShootError(RuntimeError):
    pass


class ShootFailed(ShootError):
    pass


class StepLimitExceeded(ShootError):
    pass


class NotInS1(ShootError):
    """``b`` is outside the compact-support range (0, P(gamma))."""


class NotInS2(ShootError):
    """``b`` is outside the tadpole range (0, P(gamma))."""


@dataclass(frozen=True)
class PhaseParams:
    gamma: float
    f: Nonlinearity
    q_tol: float = 1e-8
    ode_tol: float = 1e-10
    dz: float = DZ

    @property
    def c0(self) -> float:
        return minimal_speed(self.f)

    def rhs(self, z, y):
        q, p = y
        return np.array([p, -self.gamma * p - self.f(q)])

    def refined(self) -> "PhaseParams":
        return PhaseParams(self.gamma, self.f, self.q_tol, self.ode_tol / 2, self.dz / 2)


@dataclass(frozen=True)
class Event:
    """Sign-change event ``func(q, p) = 0``.

    ``direction`` restricts to crossings where func goes from positive to
    non-positive (-1) or negative to non-negative (+1); 0 catches both.
    ``arm`` delays detection until ``arm(q, p)`` has been true once.
    """

    name: str
    func: Callable[[float, float], float]
    direction: int = 0
    terminal: bool = True
    arm: Optional[Callable[[float, float], bool]] = None


@dataclass
class Trajectory:
    z: np.ndarray
    q: np.ndarray
    p: np.ndarray
    terminal_event: str
    z_event: float
    dense: OdeSolution
    n_steps: int

    def state(self, z):
        return self.dense(z)


def integrate(
    params: PhaseParams,
    start: Sequence[float],
    direction: str = "forward",
    events: Sequence[Event] = (),
    z_span: float = 1e4,
    node_cap: bool = False,
) -> Trajectory:
    """Adaptive DOP853 integration stopping at the first terminal event.

    Raises StepLimitExceeded when MAX_STEPS pass (or ``z_span`` is used up)
    without any terminal event.
    """
    sign = 1.0 if direction == "forward" else -1.0
    y0 = np.asarray(start, dtype=float)
    solver = DOP853(
        params.rhs, 0.0, y0, sign * z_span, rtol=params.ode_tol, atol=params.ode_tol * 1e-2
    )
    zs, ys = [0.0], [y0.copy()]
    ts, interps = [0.0], []
    armed = [ev.arm is None or ev.arm(*y0) for ev in events]
    vals = [ev.func(*y0) for ev in events]
    terminal, z_event = "step limit", None
    capped_max = solver.max_step
    steps = 0
    while steps < MAX_STEPS:
        if node_cap:
            solver.max_step = 1e-3 if abs(solver.y[0]) < 1e-4 else capped_max
        msg = solver.step()
        steps += 1
        if solver.status == "failed":
            raise ShootFailed(f"integrator failed: {msg}")
        z_old, z_new = solver.t_old, solver.t
        interp = solver.dense_output()
        hit = None
        for i, ev in enumerate(events):
            new = ev.func(*solver.y)
            if not armed[i]:
                armed[i] = ev.arm(*solver.y)
                vals[i] = new
                continue
            old = vals[i]
            crossed = (old > 0 >= new and ev.direction <= 0) or (old < 0 <= new and ev.direction >= 0)
            vals[i] = new
            if crossed and ev.terminal:
                g = lambda z, ev=ev: ev.func(*interp(z))
                zc = brentq(g, z_old, z_new, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
                if hit is None or sign * (zc - hit[1]) < 0:
                    hit = (ev.name, zc)
        if hit is not None:
            name, zc = hit
            if zc != z_old:
                ts.append(zc)
                interps.append(interp)
            yc = interp(zc)
            zs.append(zc)
            ys.append(yc)
            terminal, z_event = name, zc
            break
        ts.append(z_new)
        interps.append(interp)
        zs.append(z_new)
        ys.append(solver.y.copy())
        if solver.status == "finished":
            break
    if z_event is None:
        raise StepLimitExceeded(f"no event after {steps} steps (gamma={params.gamma:g}, start={tuple(y0)})")
    if len(interps) == 0:
        raise ShootFailed("event triggered at the starting point")
    arr = np.asarray(ys)
    dense = OdeSolution(np.asarray(ts), interps)
    return Trajectory(np.asarray(zs), arr[:, 0], arr[:, 1], terminal, z_event, dense, steps)


def _saddle_eigs(params: PhaseParams) -> tuple[float, float]:
    f1 = params.f.fprime1
    if not f1 < 0:
        raise ValueError("f'(1) must be negative for a saddle at (1, 0)")
    g = params.gamma
    disc = math.sqrt(g * g - 4 * f1)
    return (-g + disc) / 2, (-g - disc) / 2


def origin_eigenvalues(params: PhaseParams) -> tuple[complex, complex]:
    g = params.gamma
    disc = complex(g * g - 4 * params.f.fprime0) ** 0.5
    return (-g + disc) / 2, (-g - disc) / 2


def saddle_unstable_direction(params: PhaseParams) -> np.ndarray:
    lam, _ = _saddle_eigs(params)
    v = np.array([1.0, lam])
    return v / np.linalg.norm(v)


def saddle_stable_direction(params: PhaseParams) -> np.ndarray:
    _, lam = _saddle_eigs(params)
    v = np.array([1.0, lam])
    return v / np.linalg.norm(v)


@dataclass
class WaveProfile:
    """Sampled wave profile on a uniform grid containing z = 0."""

    kind: str
    gamma: float
    z_grid: np.ndarray
    q_values: np.ndarray
    support: tuple[float, float]
    b: Optional[float] = None
    slope_at_zero: Optional[float] = None
    height: float = 0.0
    width: float = math.inf
    p_values: Optional[np.ndarray] = None
    tail_rate: Optional[float] = None
    right_rate: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __call__(self, z):
        """Evaluate with the profile extended beyond its sampled grid.

        Outside the support the value is 0.  Beyond a truncated tail the
        profile continues as an exponential at ``tail_rate`` toward its
        limit (0 for decaying tails, 1 for U and Q).
        """
        z = np.asarray(z, dtype=float)
        zg, qg = self.z_grid, self.q_values
        out = np.interp(z, zg, qg)
        lo, hi = self.support
        out = np.where((z < lo) | (z > hi), 0.0, out)
        left = (z < zg[0]) & (z >= lo)
        if left.any():
            rate = self.tail_rate or 0.0
            if self.kind == "U":
                out[left] = 1.0 - (1.0 - qg[0]) * np.exp(rate * (z[left] - zg[0]))
            else:
                out[left] = qg[0] * np.exp(rate * (z[left] - zg[0]))
        right = (z > zg[-1]) & (z <= hi)
        if right.any():
            rate = self.right_rate or 0.0
            # increasing kinds approach 1 from below as z -> +inf
            out[right] = 1.0 - (1.0 - qg[-1]) * np.exp(-rate * (z[right] - zg[-1]))
        return out if out.ndim else float(out)

    def header(self) -> dict:
        def clean(x):
            if x is None:
                return None
            x = float(x)
            return x if math.isfinite(x) else None

        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "b": clean(self.b),
            "slope_at_zero": clean(self.slope_at_zero),
            "height": clean(self.height),
            "width": clean(self.width),
            "tail_rate": clean(self.tail_rate),
            "right_rate": clean(self.right_rate),
            "support": [clean(self.support[0]), clean(self.support[1])],
        }

    def to_csv(self, path) -> None:
        path = Path(path)
        data = np.column_stack([self.z_grid, self.q_values])
        np.savetxt(path, data, delimiter=",", header="z,q", comments="", fmt="%.12g")
        path.with_suffix(".json").write_text(json.dumps(self.header(), indent=2))


def _aligned_grid(z_a: float, z_b: float, dz: float) -> np.ndarray:
    lo, hi = min(z_a, z_b), max(z_a, z_b)
    k0 = math.ceil(lo / dz - 1e-9)
    k1 = math.floor(hi / dz + 1e-9)
    return np.arange(k0, k1 + 1) * dz


def _sample(traj: Trajectory, z_shift: float, grid: np.ndarray):
    y = traj.dense(grid + z_shift)
    return y[0], y[1]


def profile_residual(profile: WaveProfile, f: Optional[Nonlinearity] = None) -> float:
    """Sup-norm of ``q'' + gamma q' + f(q)`` on the interior of the grid.

    Five-point centered stencils; three-point ones carry an O(dz^2 gamma q^(3))
    truncation error near 1e-5 at dz = 0.01, which would mask the ODE error.
    """
    f = f or profile.meta.get("f")
    q = profile.q_values
    h = profile.z_grid[1] - profile.z_grid[0]
    qm2, qm1, q0, qp1, qp2 = q[:-4], q[1:-3], q[2:-2], q[3:-1], q[4:]
    d2 = (-qp2 + 16 * qp1 - 30 * q0 + 16 * qm1 - qm2) / (12 * h**2)
    d1 = (-qp2 + 8 * qp1 - 8 * qm1 + qm2) / (12 * h)
    return float(np.max(np.abs(d2 + profile.gamma * d1 + f(q0))))


def _q_zero(name: str = "q hit 0") -> Event:
    return Event(name, lambda q, p: q, direction=-1, arm=lambda q, p: q > 1e-6)


def _escape(params: PhaseParams, name: str = "q exceeded bound") -> Event:
    return Event(name, lambda q, p: q - (1.0 + params.q_tol), direction=+1)


def decreasing_semiwave(params: PhaseParams) -> WaveProfile:
    """Family (ii): U(z; gamma), decreasing from 1 at -inf to 0 at z = 0."""
    if params.gamma >= params.c0:
        raise ValueError("decreasing semi-wave needs gamma < c0")
    lam, _ = _saddle_eigs(params)
    start = np.array([1.0, 0.0]) - SHOOT_EPS * saddle_unstable_direction(params)
    events = [_q_zero(), _escape(params), Event("p sign change", lambda q, p: -p, direction=-1)]
    tr = integrate(params, start, "forward", events)
    if tr.terminal_event != "q hit 0":
        raise ShootFailed(f"U shooting ended with {tr.terminal_event!r} at gamma={params.gamma:g}")
    slope = float(tr.p[-1])
    grid = _aligned_grid(-tr.z_event, 0.0, params.dz)
    q, p = _sample(tr, tr.z_event, grid)
    q = np.clip(q, 0.0, None)
    q[-1] = 0.0
    return WaveProfile(
        "U", params.gamma, grid, q, (-math.inf, 0.0), slope_at_zero=slope, height=float(q.max()),
        p_values=p, tail_rate=lam, meta={"f": params.f, "n_steps": tr.n_steps},
    )


def stefan_functional(params: PhaseParams, mu: float) -> float:
    """P(gamma) = -mu U'(0; gamma)."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    return -mu * _semiwave_slope(params)


def _semiwave_slope(params: PhaseParams) -> float:
    # slope only; skips grid resampling for the root-finding loops
    if params.gamma >= params.c0:
        raise ValueError("decreasing semi-wave needs gamma < c0")
    start = np.array([1.0, 0.0]) - SHOOT_EPS * saddle_unstable_direction(params)
    events = [_q_zero(), _escape(params), Event("p sign change", lambda q, p: -p, direction=-1)]
    tr = integrate(params, start, "forward", events)
    if tr.terminal_event != "q hit 0":
        raise ShootFailed(f"U shooting ended with {tr.terminal_event!r} at gamma={params.gamma:g}")
    return float(tr.p[-1])


def increasing_semiwave(params: PhaseParams) -> WaveProfile:
    """Family (iii): U_l(z; gamma) on [0, inf), |gamma| < c0."""
    if abs(params.gamma) >= params.c0:
        raise ValueError("increasing semi-wave needs |gamma| < c0")
    _, lam = _saddle_eigs(params)
    start = np.array([1.0, 0.0]) - SHOOT_EPS * saddle_stable_direction(params)
    events = [_q_zero(), _escape(params), Event("p sign change", lambda q, p: p, direction=-1)]
    tr = integrate(params, start, "backward", events)
    if tr.terminal_event != "q hit 0":
        raise ShootFailed(f"U_l shooting ended with {tr.terminal_event!r} at gamma={params.gamma:g}")
    slope = float(tr.p[-1])
    grid = _aligned_grid(0.0, -tr.z_event, params.dz)
    q, p = _sample(tr, tr.z_event, grid)
    q = np.clip(q, 0.0, None)
    q[0] = 0.0
    return WaveProfile(
        "U_l", params.gamma, grid, q, (0.0, math.inf), slope_at_zero=slope, height=float(q.max()),
        p_values=p, right_rate=-lam, meta={"f": params.f, "n_steps": tr.n_steps},
    )


def compact_bump(params: PhaseParams, b: float, mu: float) -> WaveProfile:
    """Family (iv): W(z; b, gamma) on [-L, 0] with -mu W'(0) = b."""
    if abs(params.gamma) >= params.c0:
        raise ValueError("compact bump needs |gamma| < c0")
    if b <= 0 or mu <= 0:
        raise NotInS1(f"b={b:g} must be positive")
    events = [_q_zero(), Event("q exceeded bound", lambda q, p: q - 1.0, direction=+1)]
    tr = integrate(params, (0.0, -b / mu), "backward", events)
    if tr.terminal_event != "q hit 0":
        raise NotInS1(f"trajectory from b={b:g} escapes past q=1 (b >= P(gamma)?)")
    L = -tr.z_event
    # both endpoints on the grid; spacing L/n is at most dz
    grid = np.linspace(tr.z_event, 0.0, int(math.ceil(L / params.dz)) + 1)
    q, p = _sample(tr, 0.0, grid)
    q = np.clip(q, 0.0, None)
    q[0] = q[-1] = 0.0
    return WaveProfile(
        "W", params.gamma, grid, q, (tr.z_event, 0.0), b=b, slope_at_zero=-b / mu,
        height=float(np.max(tr.q)), width=L, p_values=p,
        meta={"f": params.f, "n_steps": tr.n_steps, "L_exact": L},
    )


def _tail_rate(z, q, q_tol) -> float:
    sel = (q > 0) & (q < 10 * q_tol * 100)
    if sel.sum() < 3:
        sel = q > 0
        sel[: max(0, len(q) - 20)] = False
    zz, lq = z[sel], np.log(q[sel])
    return float(np.polyfit(zz, lq, 1)[0])


def tadpole(params: PhaseParams, b: float, mu: float) -> WaveProfile:
    """Family (v): V(z; b, gamma), gamma <= -c0, zero at 0 and at -inf."""
    c0 = params.c0
    if params.gamma > -c0 + 1e-12:
        raise ValueError("tadpole needs gamma <= -c0")
    if b <= 0 or mu <= 0:
        raise NotInS2(f"b={b:g} must be positive")
    qt = params.q_tol
    events = [
        Event("tail reached", lambda q, p: q - qt, direction=-1, arm=lambda q, p: p > 0),
        Event("q exceeded bound", lambda q, p: q - 1.0, direction=+1),
        _q_zero(),
    ]
    node_cap = abs(params.gamma + c0) < 0.05 * c0
    tr = integrate(params, (0.0, -b / mu), "backward", events, node_cap=node_cap)
    if tr.terminal_event != "tail reached":
        raise NotInS2(f"tadpole from b={b:g} ended with {tr.terminal_event!r}")
    imax = int(np.argmax(tr.q))
    tail_q = tr.q[imax:]
    if np.any(tr.p[imax + 1:] < 0):
        raise NotInS2("tail is not monotone")
    decade = tail_q < 10 * qt
    if decade.any() and np.any(np.diff(tail_q[decade]) > 0):
        raise NotInS2("no monotone decay over the last decade")
    grid = _aligned_grid(tr.z_event, 0.0, params.dz)
    q, p = _sample(tr, 0.0, grid)
    q = np.clip(q, 0.0, None)
    q[-1] = 0.0
    rate = _tail_rate(tr.z, tr.q, qt)
    return WaveProfile(
        "V", params.gamma, grid, q, (-math.inf, 0.0), b=b, slope_at_zero=-b / mu,
        height=float(np.max(tr.q)), p_values=p, tail_rate=rate,
        meta={"f": params.f, "n_steps": tr.n_steps},
    )


def full_front(params: PhaseParams) -> WaveProfile:
    """Family (vi): Q(z; gamma), increasing 0 -> 1 on R with Q(0) = 1/2."""
    c0 = params.c0
    if params.gamma > -c0 + 1e-12:
        raise ValueError("full front needs gamma <= -c0")
    _, lam = _saddle_eigs(params)
    qt = params.q_tol
    start = np.array([1.0, 0.0]) - SHOOT_EPS * saddle_stable_direction(params)
    events = [
        Event("tail reached", lambda q, p: q - qt, direction=-1),
        _escape(params),
        Event("p sign change", lambda q, p: p, direction=-1),
    ]
    node_cap = abs(params.gamma + c0) < 0.05 * c0
    tr = integrate(params, start, "backward", events, node_cap=node_cap)
    if tr.terminal_event != "tail reached":
        raise ShootFailed(f"Q shooting ended with {tr.terminal_event!r}")
    # trajectory z runs 0 -> z_event < 0 with q decreasing
    k = int(np.argmax(tr.q < 0.5))
    z_half = brentq(lambda z: tr.dense(z)[0] - 0.5, tr.z[k], tr.z[k - 1], xtol=1e-15)
    grid = _aligned_grid(tr.z_event - z_half, -z_half, params.dz)
    q, p = _sample(tr, z_half, grid)
    q[np.argmin(np.abs(grid))] = 0.5
    rate = _tail_rate(tr.z, tr.q, qt)
    return WaveProfile(
        "Q", params.gamma, grid, q, (-math.inf, math.inf), height=1.0, p_values=p,
        tail_rate=rate, right_rate=-lam, meta={"f": params.f, "n_steps": tr.n_steps},
    )
