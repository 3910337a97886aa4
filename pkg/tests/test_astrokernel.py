import math
import warnings

import numpy as np
import pytest

from dysonring import astrokernel as ak
from dysonring.astrokernel import CONST, KeplerianElements

MU = CONST.mu_sun
AU = CONST.au


def random_elements(rng, ref_epoch=ak.T_START, prograde=True):
    return KeplerianElements(
        a=rng.uniform(0.5, 3.0),
        e=rng.uniform(0.0, 0.8),
        i=rng.uniform(0.0, 1.2 if prograde else math.pi),
        raan=rng.uniform(0, 2 * math.pi),
        argp=rng.uniform(0, 2 * math.pi),
        M0=rng.uniform(0, 2 * math.pi),
        ref_epoch=ref_epoch,
    )


# ---- independent oracles


def rk_propagate(r, v, dt, n=4000):
    """Fixed-step RK4 integration of two-body motion; independent of the Kepler solver."""

    def f(y):
        rr = y[:3]
        return np.concatenate([y[3:], -MU * rr / np.linalg.norm(rr) ** 3])

    y = np.concatenate([r, v]).astype(float)
    h = dt / n
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y[:3], y[3:]


def invariants(r, v):
    return 0.5 * v @ v - MU / np.linalg.norm(r), np.linalg.norm(np.cross(r, v))


# ---- propagation


def test_circular_speed():
    el = KeplerianElements(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, ak.T_START)
    s = ak.propagate_kepler(el, ak.T_START)
    assert np.linalg.norm(s.v) == pytest.approx(math.sqrt(MU / AU), rel=1e-12)
    assert np.linalg.norm(s.v) == pytest.approx(29.7847, abs=5e-5)


def test_perihelion_at_zero_anomaly():
    rng = np.random.default_rng(1)
    for _ in range(20):
        el = random_elements(rng)
        el = KeplerianElements(el.a, el.e, el.i, el.raan, el.argp, 0.0, el.ref_epoch)
        s = ak.propagate_kepler(el, el.ref_epoch)
        assert np.linalg.norm(s.r) == pytest.approx(el.a * AU * (1 - el.e), rel=1e-12)


def test_one_period_is_identity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        el = random_elements(rng)
        s0 = ak.propagate_kepler(el, el.ref_epoch)
        s1 = ak.propagate_kepler(el, el.ref_epoch + el.period())
        assert np.linalg.norm(s1.r - s0.r) / np.linalg.norm(s0.r) < 1e-10
        assert np.linalg.norm(s1.v - s0.v) / np.linalg.norm(s0.v) < 1e-10


def test_propagation_matches_numerical_integration():
    rng = np.random.default_rng(3)
    for _ in range(5):
        el = random_elements(rng)
        t1 = el.ref_epoch + rng.uniform(10, 200)
        s0 = ak.propagate_kepler(el, el.ref_epoch)
        s1 = ak.propagate_kepler(el, t1)
        r, v = rk_propagate(s0.r, s0.v, (t1 - el.ref_epoch) * CONST.day)
        assert np.linalg.norm(r - s1.r) / np.linalg.norm(s1.r) < 1e-8


def test_invariants_conserved_over_twenty_years():
    rng = np.random.default_rng(4)
    for _ in range(50):
        el = random_elements(rng, prograde=False)
        E0, H0 = invariants(*ak.elements_state(el.a, el.e, el.i, el.raan, el.argp, el.M0, el.ref_epoch, el.ref_epoch))
        ts = el.ref_epoch + np.linspace(0, 7305, 97)
        r, v = ak.elements_state(el.a, el.e, el.i, el.raan, el.argp, el.M0, el.ref_epoch, ts)
        for rr, vv in zip(r, v):
            E, H = invariants(rr, vv)
            assert abs(E - E0) < 1e-10 * abs(E0)
            assert abs(H - H0) < 1e-10 * H0


def test_kepler_nonconvergence_raises():
    with pytest.raises(ak.KeplerConvergenceError):
        ak.solve_kepler(1.0, 0.5, max_iter=1)


def test_element_validation():
    with pytest.raises(ValueError):
        KeplerianElements(-1.0, 0.1, 0.1, 0, 0, 0, ak.T_START)
    with pytest.raises(ValueError):
        KeplerianElements(1.0, 1.0, 0.1, 0, 0, 0, ak.T_START)
    with pytest.raises(ValueError):
        ak.CartesianState(np.zeros(3), np.ones(3), ak.T_START)
    with pytest.raises(ValueError):
        ak.Constants(alpha=0.0)


# ---- conversions


def test_circular_equatorial_mee():
    el = KeplerianElements(1.3, 0.0, 0.0, 0.0, 0.0, 0.4, ak.T_START)
    x = ak.kep_to_mee(el)
    assert (x.f, x.g, x.h, x.k) == (0.0, 0.0, 0.0, 0.0)
    assert x.p == pytest.approx(1.3 * AU, rel=1e-15)


def angle_diff(a, b):
    return abs((a - b + math.pi) % (2 * math.pi) - math.pi)


def test_mee_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(200):
        el = random_elements(rng, prograde=False)
        back = ak.mee_to_kep(ak.kep_to_mee(el), el.ref_epoch)
        assert back.a == pytest.approx(el.a, rel=1e-10)
        assert back.e == pytest.approx(el.e, rel=1e-10, abs=1e-12)
        assert back.i == pytest.approx(el.i, rel=1e-10)
        for name in ("raan", "argp", "M0"):
            assert angle_diff(getattr(back, name), getattr(el, name)) < 1e-9


def test_cart_round_trip_recovers_invariants():
    rng = np.random.default_rng(6)
    for _ in range(200):
        el = random_elements(rng, prograde=False)
        t = el.ref_epoch + rng.uniform(-3000, 3000)
        back = ak.cart_to_kep(ak.propagate_kepler(el, t))
        assert back.a == pytest.approx(el.a, rel=1e-9)
        assert back.e == pytest.approx(el.e, rel=1e-9, abs=1e-11)
        assert back.i == pytest.approx(el.i, rel=1e-9)
        s0 = ak.propagate_kepler(el, t)
        s1 = ak.propagate_kepler(back, t)
        assert np.linalg.norm(s1.r - s0.r) / np.linalg.norm(s0.r) < 1e-10


def test_mee_to_cart_agrees_with_kepler():
    rng = np.random.default_rng(7)
    for _ in range(50):
        el = random_elements(rng)
        s = ak.propagate_kepler(el, el.ref_epoch)
        r, v = ak.mee_to_cart(ak.kep_to_mee(el).as_array(), MU)
        assert np.linalg.norm(r - s.r) / np.linalg.norm(s.r) < 1e-12
        assert np.linalg.norm(v - s.v) / np.linalg.norm(s.v) < 1e-12


def test_singular_conversions_raise():
    with pytest.raises(ValueError):
        ak.cart_to_kep(ak.CartesianState([AU, 0, 0], [1.0, 0, 0], ak.T_START))
    with pytest.raises(ValueError):
        ak.cart_to_kep(ak.CartesianState([AU, 0, 0], [0, 50.0, 0], ak.T_START))
    with pytest.raises(ValueError):
        ak.EquinoctialState(1.0, 0.8, 0.8, 0, 0, 0)


# ---- Lambert


def test_lambert_hohmann():
    r1, r2 = 1.0 * AU, 1.5 * AU
    a = 0.5 * (r1 + r2)
    tof = math.pi * math.sqrt(a**3 / MU)
    with pytest.warns(ak.LambertIllConditioned):
        v1, v2 = ak.lambert([r1, 0, 0], [-r2, 0, 0], tof)
    expected = math.sqrt(MU / r1) * math.sqrt(2 * r2 / (r1 + r2))
    assert np.linalg.norm(v1) == pytest.approx(expected, rel=1e-9)
    assert abs(v1[0]) < 1e-9 * np.linalg.norm(v1)
    assert v1[1] > 0
    assert np.linalg.norm(v1) == pytest.approx(32.626, abs=2e-3)


def test_lambert_quarter_circle():
    r = AU
    period = 2 * math.pi * math.sqrt(r**3 / MU)
    v1, v2 = ak.lambert([r, 0, 0], [0, r, 0], period / 4)
    assert np.linalg.norm(v1) == pytest.approx(math.sqrt(MU / r), rel=1e-10)
    assert abs(v1[0]) < 1e-10 * np.linalg.norm(v1)


def lambert_cases(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        el = random_elements(rng, prograde=False)
        t1 = el.ref_epoch + rng.uniform(0, 1000)
        dt = rng.uniform(0.02, 0.95) * el.period()
        s1 = ak.propagate_kepler(el, t1)
        s2 = ak.propagate_kepler(el, t1 + dt)
        sin_t = np.linalg.norm(np.cross(s1.r, s2.r)) / np.linalg.norm(s1.r) / np.linalg.norm(s2.r)
        if sin_t < 1e-3:
            continue
        out.append((el, s1, s2, dt * CONST.day))
    return out


def test_lambert_recovers_conic_velocities():
    for el, s1, s2, tof in lambert_cases(1000, 8):
        h = np.cross(s1.r, s1.v)
        direction = "prograde" if h[2] >= 0 else "retrograde"
        v1, v2 = ak.lambert(s1.r, s2.r, tof, direction)
        assert np.linalg.norm(v1 - s1.v) / np.linalg.norm(s1.v) < 1e-8
        assert np.linalg.norm(v2 - s2.v) / np.linalg.norm(s2.v) < 1e-8


def test_lambert_endpoint_by_propagation():
    rng = np.random.default_rng(9)
    for _ in range(100):
        r1 = rng.normal(size=3) * AU
        r2 = rng.normal(size=3) * AU
        tof = rng.uniform(30, 400) * CONST.day
        try:
            v1, _ = ak.lambert(r1, r2, tof)
        except ak.LambertError:
            continue
        r, _ = ak.propagate_cartesian(r1, v1, tof)
        assert np.linalg.norm(r - r2) / np.linalg.norm(r2) < 1e-8


def test_lambert_multirev():
    rng = np.random.default_rng(10)
    found = 0
    for _ in range(60):
        el = random_elements(rng)
        el = KeplerianElements(el.a, min(el.e, 0.3), el.i, el.raan, el.argp, el.M0, el.ref_epoch)
        dt = rng.uniform(1.1, 1.9) * el.period()
        s1 = ak.propagate_kepler(el, el.ref_epoch)
        s2 = ak.propagate_kepler(el, el.ref_epoch + dt)
        sols = []
        for branch in ("left", "right"):
            try:
                sols.append(ak.lambert(s1.r, s2.r, dt * CONST.day, revs=1, branch=branch))
            except ak.LambertError:
                pass
        for v1, _ in sols:
            r, _ = ak.propagate_cartesian(s1.r, v1, dt * CONST.day)
            assert np.linalg.norm(r - s2.r) / np.linalg.norm(s2.r) < 1e-8
        if any(np.linalg.norm(v1 - s1.v) < 1e-8 * np.linalg.norm(s1.v) for v1, _ in sols):
            found += 1
    assert found >= 50


def test_lambert_no_solution_for_too_many_revs():
    with pytest.raises(ak.LambertError):
        ak.lambert([AU, 0, 0], [0, AU, 0], 30 * CONST.day, revs=1)
    with pytest.raises(ak.LambertError):
        ak.lambert([AU, 0, 0], [0, AU, 0], -1.0)


def test_lambert_batch_matches_scalar():
    rng = np.random.default_rng(11)
    r1 = rng.normal(size=3) * AU
    r2s = rng.normal(size=(50, 3)) * AU
    tof = 150 * CONST.day
    v1s, v2s, ok = ak.lambert_batch(r1, r2s, tof)
    assert ok.all()
    for j in range(50):
        v1, v2 = ak.lambert(r1, r2s[j], tof)
        np.testing.assert_allclose(v1s[j], v1, rtol=1e-14)
        np.testing.assert_allclose(v2s[j], v2, rtol=1e-14)


def test_lambert_collinear_batch_flags():
    v1s, _, ok = ak.lambert_batch([AU, 0, 0], np.array([[-1.5 * AU, 0, 0]]), 100 * CONST.day)
    assert not ok[0]


# ---- Edelbaum, mass, geometry


def test_edelbaum_identity():
    assert ak.edelbaum(1.0, 1.0, 0.0) == (0.0, 0.0)


def test_edelbaum_one_to_one_oh_five():
    v0 = math.sqrt(MU / AU)
    v1 = math.sqrt(MU / (1.05 * AU))
    dv, tof = ak.edelbaum(1.0, 1.05, 0.0)
    assert dv == pytest.approx(abs(v0 - v1), rel=1e-12)
    assert dv == pytest.approx(0.717809, abs=1e-6)
    assert tof / CONST.day == pytest.approx(83.08, abs=0.01)


def test_edelbaum_plane_change():
    v0 = math.sqrt(MU / AU)
    dv, tof = ak.edelbaum(1.0, 1.0, math.pi / 2)
    assert dv == pytest.approx(v0 * math.sqrt(2 - 2 * math.cos(math.pi**2 / 4)), rel=1e-12)
    assert tof == pytest.approx(dv / 1e-7, rel=1e-12)


def test_edelbaum_lower_bound():
    rng = np.random.default_rng(12)
    for _ in range(200):
        a0, a1 = rng.uniform(0.5, 3.0, 2)
        di = rng.uniform(0, 1.0)
        v0, v1 = math.sqrt(MU / (a0 * AU)), math.sqrt(MU / (a1 * AU))
        dv, _ = ak.edelbaum(a0, a1, di)
        assert dv >= abs(v0 - v1) - 1e-12
        if di > 1e-3:
            assert dv > abs(v0 - v1)


def test_asteroid_mass():
    assert ak.asteroid_mass(1e15, 0.0) == 1e15
    assert ak.asteroid_mass(1e15, 1e7) == pytest.approx(9.4e14, rel=1e-14)
    with pytest.raises(ak.MassDepletedError):
        ak.asteroid_mass(1e15, 1 / CONST.alpha)
    with pytest.raises(ValueError):
        ak.asteroid_mass(1e15, -1.0)


def test_plane_change_angle():
    assert ak.plane_change_angle(0.1, 0.3, 0.1, 0.3) == pytest.approx(0.0, abs=1e-7)
    assert ak.plane_change_angle(0.0, 0.0, 0.2, 1.0) == pytest.approx(0.2, rel=1e-12)
    assert ak.plane_change_angle(0.2, 0.0, 0.2, math.pi) == pytest.approx(0.4, rel=1e-12)


def test_conic_min_radius_detects_perihelion_passage():
    el = KeplerianElements(1.0, 0.5, 0.1, 0.2, 0.3, math.pi, ak.T_START)
    s = ak.propagate_kepler(el, el.ref_epoch)
    half = 0.5 * el.period() * CONST.day
    rmin = ak.conic_min_radius(s.r, s.v, 1.2 * half)
    assert rmin == pytest.approx(0.5 * AU, rel=1e-10)
    rmin2 = ak.conic_min_radius(s.r, s.v, 0.5 * half)
    ts = np.linspace(0, 0.5 * half, 2001)
    radii = [np.linalg.norm(ak.propagate_cartesian(s.r, s.v, t)[0]) for t in ts]
    assert rmin2 == pytest.approx(min(radii), rel=1e-12)
