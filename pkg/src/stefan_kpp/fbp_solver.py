"""Front-fixing finite differences for the two-sided Stefan problem.

The moving interval [g(t), h(t)] is mapped to xi in [0, 1] by x = g + xi L,
L = h - g, giving

    w_t = w_xixi / L^2 + (g' + xi (h' - g') - beta) w_xi / L + f(w).

Diffusion and advection are implicit (one tridiagonal solve per step), the
reaction is explicit, and the Stefan velocities are lagged one step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from stefan_kpp.kinetics import Nonlinearity, truncate
from stefan_kpp.wave_catalog import ProblemParams

__all__ = [
    "InitialData",
    "SolverConfig",
    "FbpState",
    "Snapshot",
    "FbpTrajectory",
    "SolverError",
    "InvalidInitialData",
    "NumericalBlowup",
    "WindowExceedsDomain",
    "init_state",
    "step",
    "run",
    "extract_profile",
    "level_position",
    "Terminal",
]

log = logging.getLogger(__name__)

SUP_FLOOR = 1e-10
WIDTH_CAP = 1e4
STARTUP_STEPS = 100


def _nodes(g: float, h: float, n: int) -> np.ndarray:
    x = g + np.linspace(0.0, 1.0, n) * (h - g)
    x[-1] = h
    return x


class SolverError(RuntimeError):
    pass


class InvalidInitialData(SolverError):
    pass


class NumericalBlowup(SolverError):
    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


class WindowExceedsDomain(ValueError):
    pass


class Terminal:
    REACHED_TMAX = "ReachedTmax"
    SUP_BELOW_FLOOR = "SupBelowFloor"
    WIDTH_ABOVE_CAP = "WidthAboveCap"
    STOPPED_BY_MONITOR = "StoppedByMonitor"


@dataclass(frozen=True)
class InitialData:
    h0: float
    shape: str = "cosine"
    sigma: float = 1.0
    table: Optional[tuple[tuple[float, float], ...]] = None

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        h0 = self.h0
        inside = np.abs(x) <= h0
        if self.shape == "cosine":
            out = np.cos(np.pi * x / (2 * h0))
        elif self.shape == "quartic":
            out = (1 - (x / h0) ** 2) ** 2
        elif self.shape == "table":
            if not self.table:
                raise InvalidInitialData("table shape needs (x, u) pairs")
            tx, tu = np.asarray(self.table, dtype=float).T
            order = np.argsort(tx)
            out = np.interp(x, tx[order], tu[order], left=0.0, right=0.0)
        else:
            raise InvalidInitialData(f"unknown shape {self.shape!r}")
        out = np.where(inside, out, 0.0)
        return out

    def __call__(self, x):
        return self.sigma * self.phi(x)

    def replace(self, **kw) -> "InitialData":
        return replace(self, **kw)


@dataclass(frozen=True)
class SolverConfig:
    params: ProblemParams
    init: InitialData
    t_max: float
    n_grid: int = 1000
    dt_max: float = 1e-3
    cfl: float = 0.5
    record_every: float = 0.5
    level_m: float = 0.2
    snapshot_every: float = 10.0

    def __post_init__(self):
        if self.n_grid < 100:
            raise ValueError("n_grid must be at least 100")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if not 0 < self.level_m < 1:
            raise ValueError("level_m must lie in (0, 1)")

    def replace(self, **kw) -> "SolverConfig":
        return replace(self, **kw)

    @property
    def cap(self) -> float:
        return 2.0 * max(1.0, self.init.sigma * float(np.max(self.init.phi(self._xi_x()))))

    def _xi_x(self):
        return -self.init.h0 + 2 * self.init.h0 * np.linspace(0, 1, self.n_grid + 2)


@dataclass
class FbpState:
    t: float
    g: float
    h: float
    w: np.ndarray
    g_dot: float = 0.0
    h_dot: float = 0.0
    n_steps: int = 0
    clipped: float = 0.0  # cumulative mass removed by clipping undershoots

    @property
    def xi(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.w.size)

    @property
    def x(self) -> np.ndarray:
        return _nodes(self.g, self.h, self.w.size)

    @property
    def width(self) -> float:
        return self.h - self.g

    def copy(self) -> "FbpState":
        return replace(self, w=self.w.copy())


@dataclass
class Snapshot:
    t: float
    g: float
    h: float
    w: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return _nodes(self.g, self.h, self.w.size)

    @property
    def u(self) -> np.ndarray:
        return self.w

    @classmethod
    def of(cls, state: FbpState) -> "Snapshot":
        return cls(state.t, state.g, state.h, state.w.copy())


@dataclass
class FbpTrajectory:
    t: np.ndarray
    g: np.ndarray
    h: np.ndarray
    g_dot: np.ndarray
    h_dot: np.ndarray
    sup_u: np.ndarray
    chi_m: np.ndarray
    snapshots: list[Snapshot]
    terminal: str
    config: SolverConfig
    final: FbpState
    stop_reason: Optional[str] = None
    clipped_mass: float = 0.0

    COLUMNS = ("t", "g", "h", "g_dot", "h_dot", "sup_u", "chi_m")

    def table(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in self.COLUMNS])

    def to_csv(self, path) -> None:
        np.savetxt(path, self.table(), delimiter=",", header=",".join(self.COLUMNS),
                   comments="", fmt="%.12g")

    def final_snapshot(self) -> Snapshot:
        return Snapshot.of(self.final)


def _velocities(w: np.ndarray, L: float, mu: float) -> tuple[float, float]:
    dxi = 1.0 / (w.size - 1)
    dx = L * dxi
    ux_g = (4 * w[1] - w[2]) / (2 * dx)
    ux_h = (-4 * w[-2] + w[-3]) / (2 * dx)
    return -mu * ux_g, -mu * ux_h


def init_state(config: SolverConfig) -> FbpState:
    init = config.init
    if not init.h0 > 0:
        raise InvalidInitialData("h0 must be positive")
    if init.sigma < 0:
        raise InvalidInitialData("sigma must be nonnegative")
    n = config.n_grid
    xi = np.linspace(0.0, 1.0, n + 2)
    x = -init.h0 + 2 * init.h0 * xi
    w = init(x)
    w[0] = w[-1] = 0.0
    if np.any(w < 0):
        raise InvalidInitialData("initial data must be nonnegative")
    if init.sigma > 0 and not np.any(w > 0):
        raise InvalidInitialData("initial data vanishes identically")
    gd, hd = _velocities(w, 2 * init.h0, config.params.mu)
    return FbpState(0.0, -init.h0, init.h0, w, gd, hd)


def _reaction(config: SolverConfig) -> Callable:
    return config.params.f.eval


def _time_step(state: FbpState, config: SolverConfig) -> float:
    p = config.params
    L = state.width
    dxi = 1.0 / (state.w.size - 1)
    adv = max(abs(state.g_dot - p.beta), abs(state.h_dot - p.beta), 1e-12)
    dt = min(config.dt_max, config.cfl * dxi * L / adv)
    if p.f.fprime0 > 0:
        dt = min(dt, 0.1 / p.f.fprime0)
    if state.n_steps < STARTUP_STEPS:
        dt = min(dt, config.dt_max / 100)
    return dt


def step(
    state: FbpState, config: SolverConfig, dt: Optional[float] = None, freeze_boundaries: bool = False
) -> FbpState:
    """Advance one time step and return the new state (input is not modified)."""
    p = config.params
    w = state.w
    n = w.size - 2
    dxi = 1.0 / (n + 1)
    dt = _time_step(state, config) if dt is None else dt

    gd, hd = (0.0, 0.0) if freeze_boundaries else _velocities(w, state.width, p.mu)
    g_new = state.g + dt * gd
    h_new = state.h + dt * hd
    L = h_new - g_new

    xi = np.arange(1, n + 1) * dxi
    a = (gd + xi * (hd - gd) - p.beta) / L
    diff = 1.0 / (L * L * dxi * dxi)
    adv = a / (2 * dxi)
    ab = np.empty((3, n))
    ab[0, 1:] = -dt * (diff + adv[:-1])
    ab[1, :] = 1.0 + 2.0 * dt * diff
    ab[2, :-1] = -dt * (diff - adv[1:])
    ab[0, 0] = 0.0
    ab[2, -1] = 0.0
    wi = w[1:-1]
    rhs = wi + dt * p.f.eval(wi)
    new_inner = solve_banded((1, 1), ab, rhs, overwrite_ab=True, overwrite_b=True, check_finite=False)

    w_new = np.empty_like(w)
    w_new[0] = w_new[-1] = 0.0
    w_new[1:-1] = new_inner
    neg = w_new < 0
    clipped = state.clipped
    if neg.any():
        clipped -= float(w_new[neg].sum()) * L * dxi
        w_new[neg] = 0.0
    return FbpState(state.t + dt, g_new, h_new, w_new, gd, hd, state.n_steps + 1, clipped)


def level_position(x: np.ndarray, u: np.ndarray, m: float) -> float:
    """min{x : u(x) = m} by linear interpolation; NaN if u never reaches m."""
    above = np.nonzero(u >= m)[0]
    if above.size == 0:
        return math.nan
    i = int(above[0])
    if i == 0:
        return float(x[0])
    x0, x1, u0, u1 = x[i - 1], x[i], u[i - 1], u[i]
    return float(x0 + (m - u0) * (x1 - x0) / (u1 - u0))


def run(
    config: SolverConfig,
    monitor: Optional[Callable[[FbpState], Optional[str]]] = None,
    monitor_every: Optional[float] = None,
    state: Optional[FbpState] = None,
) -> FbpTrajectory:
    """Integrate until t_max, extinction (sup u < 1e-10) or a width of 1e4.

    ``monitor`` is called on the live state every ``monitor_every`` time
    units (default: the record cadence); a non-None return stops the run
    with terminal ``StoppedByMonitor``.
    """
    state = init_state(config) if state is None else state
    p = config.params
    blowup = 10.0 * config.cap
    monitor_every = monitor_every or config.record_every
    rows: list[tuple] = []
    snaps: list[Snapshot] = []

    def record(s: FbpState):
        rows.append((s.t, s.g, s.h, s.g_dot, s.h_dot, float(s.w.max()),
                     level_position(s.x, s.w, config.level_m)))

    record(state)
    snaps.append(Snapshot.of(state))
    next_rec = state.t + config.record_every
    next_snap = state.t + config.snapshot_every
    next_mon = state.t + monitor_every
    terminal, reason = Terminal.REACHED_TMAX, None
    eps = 1e-9
    while state.t < config.t_max - eps:
        dt = _time_step(state, config)
        target = min(next_rec, config.t_max)
        if state.t + dt > target - eps:
            dt = target - state.t
        try:
            state = step(state, config, dt)
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalBlowup(f"step failed at t={state.t:.6g}: {exc}", state.t) from exc
        sup = float(state.w.max())
        if not math.isfinite(sup) or sup > blowup:
            raise NumericalBlowup(f"sup|u| = {sup:.3g} exceeds {blowup:g} at t={state.t:.6g}", state.t)
        if state.t >= next_rec - eps:
            record(state)
            next_rec += config.record_every
            if state.t >= next_snap - eps:
                snaps.append(Snapshot.of(state))
                next_snap += config.snapshot_every
            if monitor is not None and state.t >= next_mon - eps:
                next_mon += monitor_every
                reason = monitor(state)
                if reason:
                    terminal = Terminal.STOPPED_BY_MONITOR
                    break
        if sup < SUP_FLOOR:
            terminal = Terminal.SUP_BELOW_FLOOR
            break
        if state.width > WIDTH_CAP:
            terminal = Terminal.WIDTH_ABOVE_CAP
            break
    if rows[-1][0] != state.t:
        record(state)
    if snaps[-1].t != state.t:
        snaps.append(Snapshot.of(state))
    arr = np.asarray(rows, dtype=float)
    return FbpTrajectory(*(arr[:, i] for i in range(arr.shape[1])), snaps, terminal, config, state, reason,
                         state.clipped)


def extract_profile(state, frame: str = "front", z_window: float = 10.0, dz: float = 0.01,
                    level_m: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Solution in a co-moving frame, resampled to spacing ``dz``.

    front: u(t, h(t) + z) on [-z_window, 0]
    back:  u(t, chi_m(t) + z) on [-z_window, z_window]
    """
    x, u = state.x, state.w
    if frame == "front":
        k = int(round(z_window / dz))
        z = np.arange(-k, 1) * dz
        xs = state.h + z
    elif frame == "back":
        chi = level_position(x, u, level_m)
        if math.isnan(chi):
            raise WindowExceedsDomain(f"u never reaches level {level_m:g}")
        k = int(round(z_window / dz))
        z = np.arange(-k, k + 1) * dz
        xs = chi + z
    else:
        raise ValueError(f"unknown frame {frame!r}")
    if xs[0] < state.g - 1e-12 or xs[-1] > state.h + 1e-12:
        raise WindowExceedsDomain(f"window [{xs[0]:.4g}, {xs[-1]:.4g}] leaves [{state.g:.4g}, {state.h:.4g}]")
    return z, np.interp(xs, x, u)
