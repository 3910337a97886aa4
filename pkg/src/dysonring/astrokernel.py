"""
Two-body astrodynamics kernel.

Units at the module boundary: km, km/s, seconds for durations passed to
Lambert, days (MJD) for epochs, AU for semi-major axes.  Angles are radians.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

__all__ = [
    "Constants",
    "CONST",
    "T_START",
    "KeplerianElements",
    "CartesianState",
    "EquinoctialState",
    "KeplerConvergenceError",
    "LambertError",
    "LambertIllConditioned",
    "MassDepletedError",
    "propagate_kepler",
    "kep_to_cart",
    "cart_to_kep",
    "kep_to_mee",
    "mee_to_kep",
    "lambert",
    "lambert_batch",
    "edelbaum",
    "plane_change_angle",
    "asteroid_mass",
    "conic_min_radius",
    "propagate_cartesian",
]

T_START = 95739.0


@dataclass(frozen=True)
class Constants:
    """Problem constants; every value can be overridden from the config file."""

    mu_sun: float = 1.32712440018e11  # km^3/s^2
    au: float = 1.49597870691e8  # km
    day: float = 86400.0  # s
    year_days: float = 365.25
    f_atd: float = 1e-4  # m/s^2
    alpha: float = 6e-9  # 1/s
    v_flyby_max: float = 2.0  # km/s
    v_launch_max: float = 6.0  # km/s
    r_min: float = 0.4  # AU
    a_d_min: float = 0.65  # AU
    atd_delay: float = 30.0  # days
    station_gap_min: float = 90.0  # days
    t_start: float = T_START  # MJD
    mission_years: float = 20.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"constant {name} must be finite and positive, got {value}")

    @property
    def t_end(self) -> float:
        return self.t_start + self.mission_years * self.year_days

    @property
    def f_atd_kms(self) -> float:
        """ATD acceleration in km/s^2."""
        return self.f_atd * 1e-3

    def with_overrides(self, **kw) -> "Constants":
        return replace(self, **kw)


CONST = Constants()


class KeplerConvergenceError(RuntimeError):
    pass


class LambertError(RuntimeError):
    pass


class LambertIllConditioned(UserWarning):
    """Transfer angle within a hair of 0 or 180 degrees; the plane is ill-defined."""


class MassDepletedError(ValueError):
    pass


@dataclass(frozen=True)
class KeplerianElements:
    a: float  # AU
    e: float
    i: float
    raan: float
    argp: float
    M0: float  # mean anomaly at ref_epoch
    ref_epoch: float  # MJD

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"semi-major axis must be positive, got {self.a}")
        if not 0 <= self.e < 1:
            raise ValueError(f"eccentricity must be in [0, 1), got {self.e}")
        if not 0 <= self.i <= math.pi:
            raise ValueError(f"inclination must be in [0, pi], got {self.i}")

    def period(self, const: Constants = CONST) -> float:
        """Orbital period in days."""
        a_km = self.a * const.au
        return 2 * math.pi * math.sqrt(a_km**3 / const.mu_sun) / const.day

    def mean_motion(self, const: Constants = CONST) -> float:
        """Mean motion in rad/day."""
        return 2 * math.pi / self.period(const)


@dataclass(frozen=True)
class CartesianState:
    r: np.ndarray  # km
    v: np.ndarray  # km/s
    epoch: float  # MJD

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if not np.linalg.norm(r) > 0:
            raise ValueError("position must be nonzero")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class EquinoctialState:
    p: float  # km
    f: float
    g: float
    h: float
    k: float
    L: float

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"semi-latus rectum must be positive, got {self.p}")
        if not math.hypot(self.f, self.g) < 1:
            raise ValueError("equinoctial state is not elliptic (sqrt(f^2+g^2) >= 1)")

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.f, self.g, self.h, self.k, self.L])


# ---------------------------------------------------------------- Kepler


def solve_kepler(M, e, tol: float = 1e-13, max_iter: int = 50):
    """Eccentric anomaly for mean anomaly M (scalar or array).

    Newton iteration started at M + e sin M and safeguarded by halving any
    step that leaves the bracket [M - e, M + e] (after wrapping M to
    [-pi, pi)).
    """
    M = np.asarray(M, dtype=float)
    e = np.asarray(e, dtype=float)
    Mw = np.mod(M + np.pi, 2 * np.pi) - np.pi
    lo = Mw - e
    hi = Mw + e
    E = Mw + e * np.sin(Mw)
    for _ in range(max_iter):
        f = E - e * np.sin(E) - Mw
        fp = 1 - e * np.cos(E)
        lo = np.where(f > 0, lo, np.maximum(lo, E))
        hi = np.where(f > 0, np.minimum(hi, E), hi)
        E_new = E - f / fp
        out = (E_new < lo) | (E_new > hi)
        E_new = np.where(out, 0.5 * (lo + hi), E_new)
        done = np.abs(E_new - E) <= tol * np.maximum(1.0, np.abs(E_new))
        E = E_new
        if np.all(done):
            return E + (M - Mw)
    raise KeplerConvergenceError(
        f"Kepler's equation did not converge in {max_iter} iterations (e={e!r})"
    )


def _perifocal_to_inertial(raan, argp, i):
    cO, sO = np.cos(raan), np.sin(raan)
    cw, sw = np.cos(argp), np.sin(argp)
    ci, si = np.cos(i), np.sin(i)
    P = np.stack([cO * cw - sO * sw * ci, sO * cw + cO * sw * ci, sw * si], axis=-1)
    Q = np.stack([-cO * sw - sO * cw * ci, -sO * sw + cO * cw * ci, cw * si], axis=-1)
    return P, Q


def elements_state(a, e, i, raan, argp, M0, ref_epoch, t, const: Constants = CONST):
    """Vectorized Keplerian propagation; a in AU, returns (r [km], v [km/s])."""
    a_km = np.asarray(a, dtype=float) * const.au
    e = np.asarray(e, dtype=float)
    n = np.sqrt(const.mu_sun / a_km**3)
    M = np.asarray(M0) + n * (np.asarray(t) - np.asarray(ref_epoch)) * const.day
    E = solve_kepler(M, e)
    cE, sE = np.cos(E), np.sin(E)
    b = np.sqrt(1 - e * e)
    x = a_km * (cE - e)
    y = a_km * b * sE
    rn = a_km * (1 - e * cE)
    vfac = np.sqrt(const.mu_sun * a_km) / rn
    vx = -vfac * sE
    vy = vfac * b * cE
    P, Q = _perifocal_to_inertial(raan, argp, np.asarray(i))
    r = x[..., None] * P + y[..., None] * Q
    v = vx[..., None] * P + vy[..., None] * Q
    return r, v


def propagate_kepler(el: KeplerianElements, t: float, const: Constants = CONST) -> CartesianState:
    """Two-body state of ``el`` at epoch ``t`` (MJD)."""
    if not math.isfinite(t):
        raise ValueError("epoch must be finite")
    r, v = elements_state(el.a, el.e, el.i, el.raan, el.argp, el.M0, el.ref_epoch, t, const)
    return CartesianState(r, v, float(t))


def kep_to_cart(el: KeplerianElements, t: float | None = None, const: Constants = CONST) -> CartesianState:
    return propagate_kepler(el, el.ref_epoch if t is None else t, const)


def cart_to_kep(s: CartesianState, const: Constants = CONST) -> KeplerianElements:
    """Classical elements of an elliptic state; ``ref_epoch`` is the state's epoch."""
    mu = const.mu_sun
    r = np.asarray(s.r, dtype=float)
    v = np.asarray(s.v, dtype=float)
    rn = np.linalg.norm(r)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if hn <= 1e-12 * rn * np.linalg.norm(v):
        raise ValueError("rectilinear state has no orbital plane")
    energy = 0.5 * v @ v - mu / rn
    if energy >= 0:
        raise ValueError("state is not elliptic")
    a = -mu / (2 * energy)
    e_vec = np.cross(v, h) / mu - r / rn
    e = float(np.linalg.norm(e_vec))
    i = math.acos(max(-1.0, min(1.0, h[2] / hn)))
    node = np.array([-h[1], h[0], 0.0])
    nn = np.linalg.norm(node)
    # equatorial and circular cases fold the undefined angles into M
    if nn > 1e-14 * hn:
        raan = math.atan2(node[1], node[0])
        n_hat = node / nn
    else:
        raan = 0.0
        n_hat = np.array([1.0, 0.0, 0.0])
    w_hat = np.cross(h / hn, n_hat)
    if e > 1e-14:
        argp = math.atan2(e_vec @ w_hat, e_vec @ n_hat)
        e_hat = e_vec / e
    else:
        argp = 0.0
        e_hat = n_hat
    q_hat = np.cross(h / hn, e_hat)
    nu = math.atan2(r @ q_hat, r @ e_hat)
    E = 2 * math.atan2(math.sqrt(1 - e) * math.sin(nu / 2), math.sqrt(1 + e) * math.cos(nu / 2))
    M = E - e * math.sin(E)
    return KeplerianElements(
        a=a / const.au,
        e=e,
        i=i,
        raan=raan % (2 * math.pi),
        argp=argp % (2 * math.pi),
        M0=M % (2 * math.pi),
        ref_epoch=s.epoch,
    )


def true_anomaly(el: KeplerianElements, t: float | None = None, const: Constants = CONST) -> float:
    t = el.ref_epoch if t is None else t
    M = el.M0 + el.mean_motion(const) * (t - el.ref_epoch)
    E = float(solve_kepler(M, el.e))
    return 2 * math.atan2(math.sqrt(1 + el.e) * math.sin(E / 2), math.sqrt(1 - el.e) * math.cos(E / 2))


def kep_to_mee(el: KeplerianElements, t: float | None = None, const: Constants = CONST) -> EquinoctialState:
    """Modified equinoctial elements (p in km) at epoch ``t`` (default ref_epoch)."""
    if el.i >= math.pi:
        raise ValueError("retrograde equatorial orbit is singular in equinoctial elements")
    nu = true_anomaly(el, t, const)
    p = el.a * const.au * (1 - el.e**2)
    lp = el.raan + el.argp
    ti = math.tan(el.i / 2)
    return EquinoctialState(
        p=p,
        f=el.e * math.cos(lp),
        g=el.e * math.sin(lp),
        h=ti * math.cos(el.raan),
        k=ti * math.sin(el.raan),
        L=(lp + nu) % (2 * math.pi),
    )


def mee_to_kep(x: EquinoctialState, ref_epoch: float = T_START, const: Constants = CONST) -> KeplerianElements:
    e = math.hypot(x.f, x.g)
    if e >= 1:
        raise ValueError("equinoctial state is not elliptic")
    a = x.p / (1 - e * e) / const.au
    ti = math.hypot(x.h, x.k)
    i = 2 * math.atan(ti)
    raan = math.atan2(x.k, x.h) if ti > 0 else 0.0
    lp = math.atan2(x.g, x.f) if e > 0 else raan
    argp = lp - raan
    nu = x.L - lp
    E = 2 * math.atan2(math.sqrt(1 - e) * math.sin(nu / 2), math.sqrt(1 + e) * math.cos(nu / 2))
    M = E - e * math.sin(E)
    tau = 2 * math.pi
    return KeplerianElements(a, e, i, raan % tau, argp % tau, M % tau, ref_epoch)


def mee_to_cart(x: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """Position and velocity from an equinoctial array [p, f, g, h, k, L]."""
    p, f, g, h, k, L = x
    cL, sL = math.cos(L), math.sin(L)
    w = 1 + f * cL + g * sL
    r = p / w
    s2 = 1 + h * h + k * k
    a2 = h * h - k * k
    sq = math.sqrt(mu / p)
    rv = r / s2 * np.array(
        [cL + a2 * cL + 2 * h * k * sL, sL - a2 * sL + 2 * h * k * cL, 2 * (h * sL - k * cL)]
    )
    vv = -sq / s2 * np.array(
        [
            sL + a2 * sL - 2 * h * k * cL + g - 2 * f * h * k + a2 * g,
            -cL + a2 * cL + 2 * h * k * sL - f + 2 * g * h * k + a2 * f,
            -2 * (h * cL + k * sL + f * h + g * k),
        ]
    )
    return rv, vv


def propagate_cartesian(r, v, dt_s: float, const: Constants = CONST) -> tuple[np.ndarray, np.ndarray]:
    """Propagate a Cartesian state by ``dt_s`` seconds (elliptic or hyperbolic)."""
    # canonical units (AU, mu = 1) keep the universal anomaly well scaled
    lu = const.au
    vu = math.sqrt(const.mu_sun / lu)
    tu = lu / vu
    r1, v1 = _propagate_universal(np.asarray(r, float) / lu, np.asarray(v, float) / vu, float(dt_s) / tu, 1.0)
    return r1 * lu, v1 * vu


def _stumpff(z):
    if z > 1e-8:
        sz = math.sqrt(z)
        return (1 - math.cos(sz)) / z, (sz - math.sin(sz)) / (sz**3)
    if z < -1e-8:
        sz = math.sqrt(-z)
        return (math.cosh(sz) - 1) / (-z), (math.sinh(sz) - sz) / (sz**3)
    return 0.5 - z / 24 + z * z / 720, 1 / 6 - z / 120 + z * z / 5040


def _propagate_universal(r0, v0, dt, mu):
    rn = np.linalg.norm(r0)
    vr = r0 @ v0 / rn
    alpha = 2 / rn - v0 @ v0 / mu
    sqmu = math.sqrt(mu)
    if alpha > 1e-12:
        # reduce by whole periods so Newton starts within one revolution
        period = 2 * math.pi / math.sqrt(mu * alpha**3)
        dt = math.fmod(dt, period)
        chi = sqmu * dt * alpha
    else:
        chi = sqmu * dt / rn
    for _ in range(100):
        z = alpha * chi * chi
        C, S = _stumpff(z)
        F = rn * vr / sqmu * chi * chi * C + (1 - alpha * rn) * chi**3 * S + rn * chi - sqmu * dt
        dF = rn * vr / sqmu * chi * (1 - z * S) + (1 - alpha * rn) * chi * chi * C + rn
        step = F / dF
        chi -= step
        if abs(step) < 1e-13 * max(1.0, abs(chi)):
            break
    else:
        raise KeplerConvergenceError("universal Kepler equation did not converge")
    z = alpha * chi * chi
    C, S = _stumpff(z)
    f = 1 - chi * chi / rn * C
    g = dt - chi**3 / sqmu * S
    r = f * r0 + g * v0
    r1n = np.linalg.norm(r)
    fd = sqmu / (r1n * rn) * (alpha * chi**3 * S - chi)
    gd = 1 - chi * chi / r1n * C
    v = fd * r0 + gd * v0
    return r, v


def conic_min_radius(r0, v0, dt_s: float, const: Constants = CONST) -> float:
    """Smallest heliocentric distance (km) along the conic arc from (r0, v0) over ``dt_s`` seconds."""
    mu = const.mu_sun
    r0 = np.asarray(r0, float)
    v0 = np.asarray(v0, float)
    r1, v1 = propagate_cartesian(r0, v0, dt_s, const)
    rmin = min(np.linalg.norm(r0), np.linalg.norm(r1))
    h = np.cross(r0, v0)
    e_vec = np.cross(v0, h) / mu - r0 / np.linalg.norm(r0)
    e = np.linalg.norm(e_vec)
    p = h @ h / mu
    rp = p / (1 + e)
    energy = 0.5 * v0 @ v0 - mu / np.linalg.norm(r0)
    if energy < 0 and e > 0:
        # perihelion lies in the arc iff the mean anomaly wraps through 2 pi
        a = -mu / (2 * energy)
        n = math.sqrt(mu / a**3)
        E0 = math.atan2((r0 @ v0) / math.sqrt(mu * a), 1 - np.linalg.norm(r0) / a)
        M0 = (E0 - e * math.sin(E0)) % (2 * math.pi)
        if M0 == 0.0 or M0 + n * dt_s >= 2 * math.pi:
            return float(min(rp, rmin))
    elif r0 @ v0 <= 0 <= r1 @ v1:
        return float(min(rp, rmin))
    return float(rmin)


# ---------------------------------------------------------------- Lambert (Izzo)


@njit(cache=True)
def _hyp2f1b(x):
    if x >= 1.0:
        return np.inf
    res = 1.0
    term = 1.0
    j = 0
    while True:
        term = term * (3.0 + j) * (1.0 + j) / (2.5 + j) * x / (j + 1.0)
        res_old = res
        res = res + term
        j += 1
        if res_old == res or j > 1000:
            return res


@njit(cache=True)
def _x2tof2(x, N, lam):
    a = 1.0 / (1.0 - x * x)
    if a > 0:
        alfa = 2.0 * math.acos(x)
        beta = 2.0 * math.asin(math.sqrt(lam * lam / a))
        if lam < 0.0:
            beta = -beta
        return a * math.sqrt(a) * ((alfa - math.sin(alfa)) - (beta - math.sin(beta)) + 2.0 * math.pi * N) / 2.0
    alfa = 2.0 * math.acosh(x)
    beta = 2.0 * math.asinh(math.sqrt(-lam * lam / a))
    if lam < 0.0:
        beta = -beta
    return -a * math.sqrt(-a) * ((beta - math.sinh(beta)) - (alfa - math.sinh(alfa))) / 2.0


@njit(cache=True)
def _x2tof(x, N, lam):
    dist = abs(x - 1.0)
    if 0.01 < dist < 0.2:
        return _x2tof2(x, N, lam)
    K = lam * lam
    E = x * x - 1.0
    rho = abs(E)
    z = math.sqrt(1.0 + K * E)
    if dist < 0.01:
        eta = z - lam * x
        S1 = 0.5 * (1.0 - lam - x * eta)
        Q = 4.0 / 3.0 * _hyp2f1b(S1)
        return (eta**3 * Q + 4.0 * lam * eta) / 2.0 + N * math.pi / rho**1.5
    y = math.sqrt(rho)
    g = x * z - lam * E
    if E < 0:
        d = N * math.pi + math.acos(g)
    else:
        f = y * (z - lam * x)
        d = math.log(f + g)
    return (x - lam * z - d / y) / E


@njit(cache=True)
def _dtdx(x, T, lam):
    l2 = lam * lam
    l3 = l2 * lam
    umx2 = 1.0 - x * x
    y = math.sqrt(1.0 - l2 * umx2)
    y2 = y * y
    y3 = y2 * y
    d1 = 1.0 / umx2 * (3.0 * T * x - 2.0 + 2.0 * l3 * x / y)
    d2 = 1.0 / umx2 * (3.0 * T + 5.0 * x * d1 + 2.0 * (1.0 - l2) * l3 / y3)
    d3 = 1.0 / umx2 * (7.0 * x * d2 + 8.0 * d1 - 6.0 * (1.0 - l2) * l2 * l3 * x / y3 / y2)
    return d1, d2, d3


@njit(cache=True)
def _householder(T, x0, N, lam, eps, iter_max):
    x = x0
    for _ in range(iter_max):
        tof = _x2tof(x, N, lam)
        d1, d2, d3 = _dtdx(x, tof, lam)
        delta = tof - T
        d12 = d1 * d1
        xnew = x - delta * (d12 - delta * d2 / 2.0) / (d1 * (d12 - delta * d2) + d3 * delta * delta / 6.0)
        err = abs(x - xnew)
        x = xnew
        if err < eps:
            return x, True
    return x, False


@njit(cache=True)
def _lambert_core(r1, r2, ih, tof, mu, retro, revs, right_branch):
    """Izzo's Lambert solver for one (revs, branch) pair; ``ih`` is the unit plane normal."""
    c = r2 - r1
    c_n = math.sqrt(c[0] ** 2 + c[1] ** 2 + c[2] ** 2)
    R1 = math.sqrt(r1[0] ** 2 + r1[1] ** 2 + r1[2] ** 2)
    R2 = math.sqrt(r2[0] ** 2 + r2[1] ** 2 + r2[2] ** 2)
    s = 0.5 * (c_n + R1 + R2)
    ir1 = r1 / R1
    ir2 = r2 / R2
    lam2 = 1.0 - c_n / s
    lam = math.sqrt(max(lam2, 0.0))
    # ih is oriented along +z for the prograde sense; the short/long way follows from r1 x r2
    cr = np.cross(ir1, ir2)
    if cr[0] * ih[0] + cr[1] * ih[1] + cr[2] * ih[2] < 0:
        lam = -lam
    it1 = np.cross(ih, ir1)
    it2 = np.cross(ih, ir2)
    it1 = it1 / math.sqrt(it1[0] ** 2 + it1[1] ** 2 + it1[2] ** 2)
    it2 = it2 / math.sqrt(it2[0] ** 2 + it2[1] ** 2 + it2[2] ** 2)
    if retro:
        lam = -lam
        it1 = -it1
        it2 = -it2
    lam3 = lam * lam2
    T = math.sqrt(2.0 * mu / s**3) * tof

    n_max = math.floor(T / math.pi)
    T00 = math.acos(lam) + lam * math.sqrt(1.0 - lam2)
    T0 = T00 + n_max * math.pi
    T1 = 2.0 / 3.0 * (1.0 - lam3)
    if n_max > 0 and T < T0:
        x_old = 0.0
        x_new = 0.0
        T_min = T0
        for _ in range(15):
            d1, d2, d3 = _dtdx(x_old, T_min, lam)
            if d1 != 0.0:
                x_new = x_old - d1 * d2 / (d2 * d2 - d1 * d3 / 2.0)
            err = abs(x_old - x_new)
            if err < 1e-13:
                break
            T_min = _x2tof(x_new, n_max, lam)
            x_old = x_new
        if T_min > T:
            n_max -= 1
    ok = True
    v1 = np.zeros(3)
    v2 = np.zeros(3)
    if revs > n_max:
        return v1, v2, False
    if revs == 0:
        if T >= T00:
            x0 = -(T - T00) / (T - T00 + 4.0)
        elif T <= T1:
            x0 = T1 * (T1 - T) / (2.0 / 5.0 * (1.0 - lam2 * lam3) * T) + 1.0
        else:
            x0 = (T / T00) ** (0.69314718055994529 / math.log(T1 / T00)) - 1.0
    elif not right_branch:
        tmp = ((revs * math.pi + math.pi) / (8.0 * T)) ** (2.0 / 3.0)
        x0 = (tmp - 1.0) / (tmp + 1.0)
    else:
        tmp = ((8.0 * T) / (revs * math.pi)) ** (2.0 / 3.0)
        x0 = (tmp - 1.0) / (tmp + 1.0)
    x, ok = _householder(T, x0, revs, lam, 1e-13, 40)
    if not ok or not math.isfinite(x):
        return v1, v2, False
    gamma = math.sqrt(mu * s / 2.0)
    rho = (R1 - R2) / c_n
    sigma = math.sqrt(max(1.0 - rho * rho, 0.0))
    y = math.sqrt(1.0 - lam2 + lam2 * x * x)
    vr1 = gamma * ((lam * y - x) - rho * (lam * y + x)) / R1
    vr2 = -gamma * ((lam * y - x) + rho * (lam * y + x)) / R2
    vt = gamma * sigma * (y + lam * x)
    v1 = vr1 * ir1 + vt / R1 * it1
    v2 = vr2 * ir2 + vt / R2 * it2
    return v1, v2, True


_ILL_SIN = 1e-6


def _plane_normal(r1, r2):
    """Unit normal oriented for prograde (+z) motion, and whether the geometry is degenerate."""
    cr = np.cross(r1, r2)
    cn = np.linalg.norm(cr)
    sin_theta = cn / (np.linalg.norm(r1) * np.linalg.norm(r2))
    if sin_theta > _ILL_SIN:
        ih = cr / cn
        if ih[2] < 0:
            ih = -ih
        return ih, False
    # collinear with the Sun: fall back to the ecliptic pole (or x if r1 is polar)
    ref = np.array([0.0, 0.0, 1.0])
    r1h = r1 / np.linalg.norm(r1)
    if abs(r1h @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    ih = ref - (ref @ r1h) * r1h
    return ih / np.linalg.norm(ih), True


def lambert(
    r1,
    r2,
    tof: float,
    direction: str = "prograde",
    revs: int = 0,
    mu: float = CONST.mu_sun,
    branch: str = "left",
) -> tuple[np.ndarray, np.ndarray]:
    """Solve Lambert's problem.

    Parameters
    ----------
    r1, r2 : array_like
        Boundary positions [km].
    tof : float
        Time of flight [s].
    direction : {"prograde", "retrograde"}
        Sense of motion about the +z axis.
    revs : int
        Number of complete revolutions.
    branch : {"left", "right"}
        Multi-revolution branch; ignored when ``revs == 0``.

    Returns
    -------
    v1, v2 : ndarray
        Velocities [km/s] at r1 and r2.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if not tof > 0:
        raise LambertError(f"time of flight must be positive, got {tof}")
    if direction not in ("prograde", "retrograde"):
        raise ValueError(f"unknown direction {direction!r}")
    ih, degenerate = _plane_normal(r1, r2)
    if degenerate:
        warnings.warn(
            "Lambert transfer angle is within 1e-6 rad of 0 or 180 deg; plane taken from the ecliptic pole",
            LambertIllConditioned,
            stacklevel=2,
        )
    v1, v2, ok = _lambert_core(r1, r2, ih, float(tof), float(mu), direction == "retrograde", int(revs), branch == "right")
    if not ok:
        raise LambertError(f"no Lambert solution with {revs} revolution(s)")
    return v1, v2


@njit(cache=True)
def _lambert_batch(r1, r2s, tof, mu, retro):
    n = r2s.shape[0]
    v1s = np.empty((n, 3))
    v2s = np.empty((n, 3))
    ok = np.zeros(n, dtype=np.bool_)
    R1 = math.sqrt(r1[0] ** 2 + r1[1] ** 2 + r1[2] ** 2)
    for j in range(n):
        r2 = r2s[j]
        cr = np.cross(r1, r2)
        cn = math.sqrt(cr[0] ** 2 + cr[1] ** 2 + cr[2] ** 2)
        R2 = math.sqrt(r2[0] ** 2 + r2[1] ** 2 + r2[2] ** 2)
        if cn / (R1 * R2) <= 1e-6:
            v1s[j] = np.nan
            v2s[j] = np.nan
            continue
        ih = cr / cn
        if ih[2] < 0:
            ih = -ih
        v1, v2, good = _lambert_core(r1, r2, ih, tof, mu, retro, 0, False)
        v1s[j] = v1
        v2s[j] = v2
        ok[j] = good
    return v1s, v2s, ok


def lambert_batch(r1, r2s, tof: float, mu: float = CONST.mu_sun, direction: str = "prograde"):
    """Zero-revolution Lambert from one origin to many targets.

    Returns ``(v1s, v2s, ok)``; rows with ``ok == False`` (no solution or
    near-collinear geometry) hold NaN or garbage and must be discarded.
    """
    r1 = np.ascontiguousarray(r1, dtype=float)
    r2s = np.ascontiguousarray(np.atleast_2d(r2s), dtype=float)
    return _lambert_batch(r1, r2s, float(tof), float(mu), direction == "retrograde")


# ---------------------------------------------------------------- low-thrust estimates


def edelbaum(a0: float, a1: float, di: float, const: Constants = CONST) -> tuple[float, float]:
    """Edelbaum delta-v [km/s] and time of flight [s] between circular orbits (radii in AU)."""
    v0 = math.sqrt(const.mu_sun / (a0 * const.au))
    v1 = math.sqrt(const.mu_sun / (a1 * const.au))
    dv2 = v0 * v0 - 2 * v0 * v1 * math.cos(0.5 * math.pi * di) + v1 * v1
    dv = math.sqrt(max(dv2, 0.0))
    return dv, dv / const.f_atd_kms


def edelbaum_tof_days(a0, a1, di, const: Constants = CONST):
    """Vectorized Edelbaum time of flight in days."""
    v0 = np.sqrt(const.mu_sun / (np.asarray(a0) * const.au))
    v1 = np.sqrt(const.mu_sun / (np.asarray(a1) * const.au))
    dv = np.sqrt(np.maximum(v0 * v0 - 2 * v0 * v1 * np.cos(0.5 * np.pi * np.asarray(di)) + v1 * v1, 0.0))
    return dv / const.f_atd_kms / const.day


def plane_change_angle(i1, raan1, i2, raan2):
    """Angle between two orbital planes (vectorized)."""
    c = np.cos(i1) * np.cos(i2) + np.sin(i1) * np.sin(i2) * np.cos(np.asarray(raan1) - raan2)
    return np.arccos(np.clip(c, -1.0, 1.0))


def asteroid_mass(m0: float, dt_thrust: float, const: Constants = CONST) -> float:
    """Asteroid mass [kg] after ``dt_thrust`` seconds of ATD thrusting."""
    if dt_thrust < 0:
        raise ValueError("thrust duration must be non-negative")
    frac = 1.0 - const.alpha * dt_thrust
    if frac <= 1e-12:
        raise MassDepletedError(
            f"asteroid fully consumed after {dt_thrust:.6g} s of thrust (limit {1 / const.alpha:.6g} s)"
        )
    return m0 * frac
