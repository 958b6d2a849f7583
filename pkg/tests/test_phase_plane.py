import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from stefan_kpp import phase_plane as pp
from stefan_kpp.kinetics import make_logistic, make_weighted_logistic

F = make_logistic()
P0 = math.sqrt(1.0 / 3.0)


def params(gamma, f=F, **kw):
    return pp.PhaseParams(gamma, f, **kw)


def bump_width_quadrature(b, f=F):
    """Period integral of the closed orbit through (0, -b) when gamma = 0."""
    qmax = brentq(lambda q: f.primitive(q) - b * b / 2, 0.0, 1.0, xtol=1e-15)

    # q = qmax (1 - s^2) removes the square-root singularity at the turning point
    def integrand(s):
        q = qmax * (1 - s * s)
        return 2 * qmax * s / math.sqrt(max(b * b - 2 * f.primitive(q), 1e-300))

    val, _ = quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2 * val


def test_equilibria_do_not_move():
    depart = pp.Event("moved", lambda q, p: abs(q) + abs(p) - 1e-12, direction=+1)
    with pytest.raises(pp.StepLimitExceeded):
        pp.integrate(params(0.0), (0.0, 0.0), "forward", [depart], z_span=50)
    depart1 = pp.Event("moved", lambda q, p: abs(q - 1) + abs(p) - 1e-12, direction=+1)
    with pytest.raises(pp.StepLimitExceeded):
        pp.integrate(params(0.0), (1.0, 0.0), "forward", [depart1], z_span=50)


def test_energy_identity_on_saddle_orbit():
    pr = params(0.0)
    lam = pp.saddle_unstable_direction(pr)
    start = (1 - 1e-6, -1e-6 * lam[1] / lam[0])
    tr = pp.integrate(pr, start, "forward", [pp.Event("q hit 0", lambda q, p: q, direction=-1)])
    energy = 0.5 * tr.p**2 + F.primitive(tr.q)
    assert np.ptp(energy) < 1e-9
    # p(end)^2 = 2 F(1) up to the O(1e-12) energy of the offset start
    assert tr.p[-1] ** 2 == pytest.approx(2 * quad(F, 0, 1)[0], rel=1e-9)
    assert abs(tr.q[-1]) <= 1e-12


@pytest.mark.parametrize("gamma", [0.0, -1.0, 1.0])
def test_energy_drift_rate_matches_dissipation(gamma):
    # d/dz (p^2/2 + F(q)) = -gamma p^2; with gamma = 0 the energy is conserved
    U = pp.decreasing_semiwave(params(gamma))
    E = 0.5 * U.p_values**2 + F.primitive(U.q_values)
    if gamma == 0.0:
        assert np.max(np.abs(E - F.primitive(1.0))) < 1e-9


def test_saddle_directions():
    u = pp.saddle_unstable_direction(params(0.0))
    s = pp.saddle_stable_direction(params(0.0))
    assert np.allclose(u, np.array([1, 1]) / math.sqrt(2))
    assert np.allclose(s, np.array([1, -1]) / math.sqrt(2))
    u2 = pp.saddle_unstable_direction(params(-2.0))
    assert u2[1] / u2[0] == pytest.approx(1 + math.sqrt(2))


@settings(max_examples=40, deadline=None)
@given(gamma=st.floats(-8, 8), a=st.floats(0, 1))
def test_saddle_eigen_product(gamma, a):
    f = make_weighted_logistic(a)
    pr = params(gamma, f)
    u = pp.saddle_unstable_direction(pr)
    s = pp.saddle_stable_direction(pr)
    lp, lm = u[1] / u[0], s[1] / s[0]
    assert lp > 0 > lm
    assert lp * lm == pytest.approx(f.fprime1, rel=1e-9)


def test_stefan_functional_at_zero():
    assert pp.stefan_functional(params(0.0), 1.0) == pytest.approx(P0, abs=1e-6)
    U = pp.decreasing_semiwave(params(0.0))
    assert U.slope_at_zero == pytest.approx(-P0, abs=1e-6)


def test_stefan_functional_is_linear_in_mu():
    for g in (-2.0, 0.0, 1.0):
        p1 = pp.stefan_functional(params(g), 1.0)
        assert pp.stefan_functional(params(g), 2.0) == 2 * p1
        assert pp.stefan_functional(params(g), 0.37) == pytest.approx(0.37 * p1, rel=1e-15)


def test_stefan_functional_monotone_and_vanishing_at_c0():
    c0 = 2.0
    gammas = np.linspace(-3 * c0, 0.9 * c0, 20)
    P = [pp.stefan_functional(params(g), 1.0) for g in gammas]
    assert np.all(np.diff(P) < 0)
    assert pp.stefan_functional(params(0.99 * c0), 1.0) < 0.05 * P0
    assert pp.stefan_functional(params(-0.5), 1.0) > P0 > pp.stefan_functional(params(0.5), 1.0)


def test_decreasing_semiwave_shape():
    for g in (-6.0, -2.0, 0.0, 1.5):
        U = pp.decreasing_semiwave(params(g))
        assert U.kind == "U" and U.support[1] == 0.0
        assert U.z_grid[-1] == 0.0 and U.q_values[-1] == 0.0
        assert np.all(np.diff(U.q_values) < 0)
        assert U.q_values[0] >= 1 - 1e-6
        assert np.all(U.q_values >= 0)
        assert pp.profile_residual(U) <= 1e-5


def test_decreasing_semiwave_rejects_gamma_above_c0():
    with pytest.raises((ValueError, pp.ShootError)):
        pp.decreasing_semiwave(params(2.5))


def test_increasing_semiwave_symmetry():
    U = pp.decreasing_semiwave(params(0.0))
    Ul = pp.increasing_semiwave(params(0.0))
    assert Ul.slope_at_zero == pytest.approx(P0, abs=1e-6)
    assert np.all(np.diff(Ul.q_values) > 0)
    z = Ul.z_grid[Ul.z_grid <= -U.z_grid[0]]
    assert np.max(np.abs(Ul(z) - U(-z))) <= 1e-8
    assert pp.profile_residual(Ul) <= 1e-5


def test_increasing_semiwave_needs_small_gamma():
    with pytest.raises(ValueError):
        pp.increasing_semiwave(params(-2.5))


@pytest.mark.parametrize("frac", [0.1, 0.3, 0.5])
def test_compact_bump_width_matches_quadrature(frac):
    b = frac * P0
    W = pp.compact_bump(params(0.0), b, 1.0)
    assert W.width == pytest.approx(bump_width_quadrature(b), rel=1e-6)
    assert W.height < 1.0
    assert W.support == (-W.width, 0.0)
    assert W.q_values[0] == pytest.approx(0.0, abs=1e-8) and W.q_values[-1] == 0.0
    assert pp.profile_residual(W) <= 1e-5


def test_compact_bump_fixed_example():
    W = pp.compact_bump(params(0.0), 0.3, 1.0)
    assert W.width == pytest.approx(bump_width_quadrature(0.3), rel=1e-6)


def test_compact_bump_small_amplitude_limit():
    W = pp.compact_bump(params(0.0), 1e-4, 1.0)
    assert W.width == pytest.approx(math.pi, rel=1e-4)


def test_compact_bump_outside_s1():
    with pytest.raises(pp.NotInS1):
        pp.compact_bump(params(0.0), 1.1 * P0, 1.0)


def test_tadpole_shape():
    g = -2.0
    Pg = pp.stefan_functional(params(g), 1.0)
    V = pp.tadpole(params(g), 0.5 * Pg, 1.0)
    assert V.height < 1.0
    q = V.q_values
    k = int(np.argmax(q))
    assert 0 < k < q.size - 1
    assert np.all(np.diff(q[: k + 1]) >= 0) and np.all(np.diff(q[k:]) <= 0)
    assert pp.profile_residual(V) <= 1e-5
    assert V.slope_at_zero == pytest.approx(-0.5 * Pg)


def test_tadpole_height_tends_to_one():
    g = -2.5
    Pg = pp.stefan_functional(params(g), 1.0)
    heights = [pp.tadpole(params(g), frac * Pg, 1.0).height for frac in (0.9, 0.99, 0.9999)]
    assert heights[0] < heights[1] < heights[2]
    assert heights[2] > 0.95


def test_tadpole_outside_s2():
    g = -2.0
    Pg = pp.stefan_functional(params(g), 1.0)
    with pytest.raises(pp.NotInS2):
        pp.tadpole(params(g), 1.05 * Pg, 1.0)


def test_full_front():
    for g in (-2.0, -3.0):
        Q = pp.full_front(params(g))
        assert Q(0.0) == 0.5
        assert np.all(np.diff(Q.q_values) > 0)
        assert pp.profile_residual(Q) <= 1e-5
        assert Q.q_values[-1] >= 1 - 1e-6


def test_profile_extension_limits():
    Q = pp.full_front(params(-2.0))
    assert Q(Q.z_grid[0] - 5) < Q.q_values[0]
    assert 1.0 >= Q(Q.z_grid[-1] + 5) > Q.q_values[-1]
    U = pp.decreasing_semiwave(params(0.0))
    assert U(1.0) == 0.0
    assert 1.0 >= U(U.z_grid[0] - 5) >= U.q_values[0]


def test_profile_csv_roundtrip(tmp_path):
    W = pp.compact_bump(params(0.0), 0.3, 1.0)
    W.to_csv(tmp_path / "W.csv")
    data = np.loadtxt(tmp_path / "W.csv", delimiter=",", skiprows=1)
    assert np.allclose(data[:, 0], W.z_grid)
    import json

    hdr = json.loads((tmp_path / "W.json").read_text())
    assert hdr["kind"] == "W" and hdr["b"] == 0.3 and hdr["width"] == pytest.approx(W.width)


@settings(max_examples=15, deadline=None)
@given(gamma=st.floats(-1.5, 1.5), frac=st.floats(0.05, 0.9))
def test_compact_bump_residual_property(gamma, frac):
    pr = params(gamma)
    b = frac * pp.stefan_functional(pr, 1.0)
    W = pp.compact_bump(pr, b, 1.0)
    assert W.height < 1.0
    assert pp.profile_residual(W) <= 1e-5
