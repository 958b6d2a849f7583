import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from stefan_kpp import fbp_solver as fs
from stefan_kpp.fbp_solver import (
    FbpState,
    InitialData,
    InvalidInitialData,
    NumericalBlowup,
    SolverConfig,
    Terminal,
    WindowExceedsDomain,
    extract_profile,
    init_state,
    level_position,
    run,
    step,
)
from stefan_kpp.kinetics import make_polynomial
from stefan_kpp.wave_catalog import ProblemParams


def cfg(f, beta=0.5, h0=2.0, sigma=1.0, shape="cosine", t_max=10.0, n_grid=400, **kw):
    return SolverConfig(ProblemParams(f, 1.0, beta), InitialData(h0, shape, sigma), t_max=t_max,
                        n_grid=n_grid, **kw)


@pytest.fixture(scope="module")
def spread_run(logistic):
    # beta < c0 with h0 above H*: spreading, moderately long
    H = math.pi / math.sqrt(4 - 0.25)
    return run(cfg(logistic, 0.5, 1.2 * H, t_max=40.0, n_grid=600))


def test_config_validation(logistic):
    with pytest.raises(ValueError):
        cfg(logistic, n_grid=50)
    with pytest.raises(ValueError):
        cfg(logistic, t_max=0.0)
    with pytest.raises(ValueError):
        cfg(logistic, level_m=1.5)


def test_init_zero_data(logistic):
    s = init_state(cfg(logistic, sigma=0.0))
    assert np.all(s.w == 0) and s.g_dot == 0 and s.h_dot == 0
    assert (s.g, s.h) == (-2.0, 2.0)


def test_init_cosine_midpoint(logistic):
    s = init_state(cfg(logistic, h0=2.0, n_grid=999))
    assert s.w[500] == pytest.approx(1.0)
    assert s.w[0] == s.w[-1] == 0.0
    assert s.h_dot > 0 > s.g_dot


def test_init_table_data(logistic):
    table = ((-1.0, 0.3), (0.0, 1.0), (1.0, 0.3))
    c = SolverConfig(ProblemParams(logistic, 1.0, 0.5), InitialData(1.0, "table", 1.0, table), t_max=1.0)
    s = init_state(c)
    assert s.w[0] == s.w[-1] == 0.0
    mid = s.w.size // 2
    assert s.w[mid] == pytest.approx(np.interp(s.x[mid], [-1, 0, 1], [0.3, 1.0, 0.3]))


def test_init_rejects_bad_data(logistic):
    with pytest.raises(InvalidInitialData):
        init_state(cfg(logistic, shape="triangle"))
    bad = SolverConfig(ProblemParams(logistic, 1.0, 0.5), InitialData(1.0, "table", 1.0, ((-1, -0.5), (1, -0.5))),
                       t_max=1.0)
    with pytest.raises(InvalidInitialData):
        init_state(bad)


def test_zero_is_equilibrium(logistic):
    c = cfg(logistic, sigma=0.0)
    s = init_state(c)
    s2 = step(s, c, 1e-3)
    assert s2.t == pytest.approx(1e-3)
    assert np.all(s2.w == 0) and (s2.g, s2.h) == (s.g, s.h)


def test_zero_data_stops_immediately(logistic):
    tr = run(cfg(logistic, sigma=0.0))
    assert tr.terminal == Terminal.SUP_BELOW_FLOOR
    assert tr.t[-1] < 1e-3


def test_symmetry_without_advection(logistic):
    tr = run(cfg(logistic, beta=0.0, h0=1.0, t_max=5.0))
    assert np.max(np.abs(tr.g + tr.h)) <= 1e-8 * 5
    w = tr.final.w
    assert np.max(np.abs(w - w[::-1])) <= 1e-8


@pytest.mark.parametrize("beta", [0.0, 0.7])
def test_frozen_heat_step_is_contractive(beta):
    zero = make_polynomial((0.0,))
    c = cfg(zero, beta=beta, h0=1.0, shape="quartic")
    s = init_state(c)
    for _ in range(20):
        s2 = step(s, c, 5e-3, freeze_boundaries=True)
        assert s2.w.max() <= s.w.max() + 1e-15
        assert s2.w.min() >= 0.0
        s = s2


def test_boundaries_monotone_and_center_bound(spread_run):
    tr = spread_run
    h0 = tr.config.init.h0
    assert np.all(np.diff(tr.h) >= 0) and np.all(np.diff(tr.g) <= 0)
    assert np.all(tr.g + tr.h > -2 * h0 - 0.05 * h0)
    assert np.all(np.diff(tr.t) > 0)


def test_left_monotonicity(spread_run):
    h0 = spread_run.config.init.h0
    for snap in spread_run.snapshots[1:]:
        sel = snap.x <= -h0
        assert np.all(np.diff(snap.w[sel]) > -1e-9)


def test_upper_barrier(spread_run, logistic):
    tr = spread_run
    eta = solve_ivp(lambda t, y: logistic(y), (0, tr.t[-1]), [tr.sup_u[0]], t_eval=tr.t,
                    rtol=1e-10, atol=1e-12).y[0]
    assert np.all(tr.sup_u <= eta + 1e-3)


def test_spreading_speed(spread_run, small_catalog):
    tr = spread_run
    assert tr.terminal == Terminal.REACHED_TMAX
    half = np.searchsorted(tr.t, tr.t[-1] / 2)
    speed = (tr.h[-1] - tr.h[half]) / (tr.t[-1] - tr.t[half])
    assert speed == pytest.approx(small_catalog.c_star, rel=0.05)


def test_sigma_comparison(logistic, medium_beta):
    base = cfg(logistic, medium_beta, h0=3.0, t_max=15.0, n_grid=500, snapshot_every=3.0)
    a = run(base.replace(init=base.init.replace(sigma=0.5)))
    b = run(base.replace(init=base.init.replace(sigma=2.0)))
    n = min(a.t.size, b.t.size)
    assert np.all(a.h[:n] <= b.h[:n] + 1e-3)
    assert np.all(a.g[:n] >= b.g[:n] - 1e-3)
    for sa, sb in zip(a.snapshots, b.snapshots):
        if sa.t != sb.t:
            continue
        ub = np.interp(sa.x, sb.x, sb.w, left=0.0, right=0.0)
        assert np.all(sa.w <= ub + 1e-3)


def test_large_advection_plateau(logistic, bstar):
    tr = run(cfg(logistic, 2 * bstar, h0=2.0, sigma=5.0, t_max=30.0))
    assert tr.h_dot[-1] < 1e-6
    assert tr.terminal == Terminal.SUP_BELOW_FLOOR


def test_tiny_data_dies_out(logistic):
    tr = run(cfg(logistic, 2.5, h0=1.0, sigma=1e-3, t_max=60.0))
    assert tr.terminal == Terminal.SUP_BELOW_FLOOR


def test_profiles(spread_run):
    s = spread_run.final
    z, u = extract_profile(s, "front", 10.0)
    assert z[-1] == 0.0 and u[-1] == 0.0
    assert np.allclose(np.diff(z), 0.01)
    # in the small-advection regime chi_m sits close to g
    zb, ub = extract_profile(s, "back", 0.5, level_m=0.2)
    assert ub[np.argmin(np.abs(zb))] == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(WindowExceedsDomain):
        extract_profile(s, "front", 1e3)


def test_level_position():
    x = np.linspace(0, 1, 11)
    u = x.copy()
    assert level_position(x, u, 0.25) == pytest.approx(0.25)
    assert math.isnan(level_position(x, 0 * u, 0.5))


def test_blowup_is_reported(monkeypatch):
    # pure growth with an absurd step overshoots 10 A within a few steps
    grow = make_polynomial((0.0, 1.0))
    monkeypatch.setattr(fs, "_time_step", lambda state, config: 50.0)
    with pytest.raises(NumericalBlowup) as err:
        run(cfg(grow, t_max=1e4))
    assert err.value.t is not None


def test_monitor_stops_run(logistic):
    tr = run(cfg(logistic, t_max=10.0), monitor=lambda s: "stop" if s.t >= 2 else None, monitor_every=1.0)
    assert tr.terminal == Terminal.STOPPED_BY_MONITOR and tr.stop_reason == "stop"
    assert tr.t[-1] == pytest.approx(2.0)


def test_trajectory_csv(tmp_path, logistic):
    tr = run(cfg(logistic, t_max=2.0))
    tr.to_csv(tmp_path / "t.csv")
    head = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == "t,g,h,g_dot,h_dot,sup_u,chi_m"


def test_resume_from_state(logistic):
    c = cfg(logistic, t_max=4.0)
    full = run(c)
    first = run(c.replace(t_max=2.0))
    rest = run(c, state=first.final)
    assert rest.h[-1] == pytest.approx(full.h[-1], rel=1e-6)
