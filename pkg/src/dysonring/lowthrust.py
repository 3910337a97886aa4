"""
Indirect optimal control of constant-acceleration transfers in modified
equinoctial elements.

Internally everything runs in canonical units: length AU, time
TU = sqrt(AU^3 / mu), so mu = 1.  Costates are stored in these units.  Epochs
at the interface are MJD; ``p`` at the interface is in km.

Three shooting problems are provided:

* energy-optimal (warm start): unknown lambda(t0), free final longitude;
* time-optimal, free final longitude: unknowns lambda(t0) and tf;
* time-optimal rendezvous with a ring station: unknowns lambda(t0) and tf,
  final longitude tied to the station.

Trajectories are integrated on a normalized time s in [0, 1] with
dz/ds = dt * f(z), so tf enters the flow smoothly and one forward-mode
Jacobian gives every shooting partial.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np

import jax
import jax.numpy as jnp
from jax import lax

from .astrokernel import CONST, Constants, KeplerianElements, kep_to_mee
from .ring import RingConfig

jax.config.update("jax_enable_x64", True)

__all__ = [
    "Canonical",
    "AugmentedState",
    "TransferSolution",
    "ShootingError",
    "SingularControlError",
    "IntegrationError",
    "mee_matrices",
    "mee_dynamics",
    "costate_rates",
    "optimal_control",
    "hamiltonian_energy",
    "hamiltonian_time",
    "solve_energy_optimal",
    "solve_time_optimal_free_L",
    "solve_time_optimal_rendezvous",
    "propagate_transfer",
    "initial_mee",
]

log = logging.getLogger(__name__)


class ShootingError(RuntimeError):
    """Root finder failed; ``residual`` holds the best scaled residual norm reached."""

    def __init__(self, msg, residual=float("nan"), iterations=0):
        super().__init__(f"{msg} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class SingularControlError(ArithmeticError):
    pass


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Canonical:
    """Unit system with mu = 1."""

    du: float  # km
    tu: float  # s
    facc: float  # ATD acceleration in DU/TU^2

    @classmethod
    def from_constants(cls, const: Constants = CONST) -> "Canonical":
        tu = math.sqrt(const.au**3 / const.mu_sun)
        return cls(const.au, tu, const.f_atd_kms * tu * tu / const.au)

    def days(self, t_can):
        return t_can * self.tu / 86400.0

    def from_days(self, days):
        return days * 86400.0 / self.tu


# ---------------------------------------------------------------- dynamics


def mee_matrices(x, mu=1.0):
    """Drift A(x) and control matrix B(x) (RTN columns) for x = [p, f, g, h, k, L]."""
    p, f, g, h, k, L = x[0], x[1], x[2], x[3], x[4], x[5]
    s = jnp.sqrt(p / mu)
    cL, sL = jnp.cos(L), jnp.sin(L)
    w = 1 + f * cL + g * sL
    s2 = 1 + h * h + k * k
    hk = h * sL - k * cL
    zero = jnp.zeros_like(p)
    A = jnp.stack([zero, zero, zero, zero, zero, jnp.sqrt(mu * p) * (w / p) ** 2])
    B = jnp.stack([
        jnp.stack([zero, 2 * p / w * s, zero]),
        jnp.stack([s * sL, s / w * ((w + 1) * cL + f), -s * g / w * hk]),
        jnp.stack([-s * cL, s / w * ((w + 1) * sL + g), s * f / w * hk]),
        jnp.stack([zero, zero, s * s2 * cL / (2 * w)]),
        jnp.stack([zero, zero, s * s2 * sL / (2 * w)]),
        jnp.stack([zero, zero, s / w * hk]),
    ])
    return A, B


_matrices_j = jax.jit(mee_matrices)


def _np_matrices(x):
    A, B = _matrices_j(jnp.asarray(x, dtype=float))
    return np.asarray(A), np.asarray(B)


def _check_state(x):
    x = np.asarray(x, dtype=float)
    if not x[0] > 0 or math.hypot(x[1], x[2]) >= 1:
        raise ValueError("equinoctial state is singular (p <= 0 or e >= 1)")
    return x


def mee_dynamics(x, accel, mu: float = 1.0) -> np.ndarray:
    """dx/dt = A(x) + B(x) accel, with accel in RTN components (same unit system as x and mu)."""
    x = _check_state(x)
    A, B = (np.asarray(m) for m in mee_matrices(jnp.asarray(x), mu)) if mu != 1.0 else _np_matrices(x)
    return A + B @ np.asarray(accel, dtype=float)


def optimal_control(x, lam):
    """Thrust direction and ratio minimizing the Hamiltonian: -B^T lam / |B^T lam| and |B^T lam|."""
    _, B = _np_matrices(x)
    bl = B.T @ np.asarray(lam, dtype=float)
    nb = float(np.linalg.norm(bl))
    if not nb > 1e-300:
        raise SingularControlError("B^T lambda vanishes; control direction undefined (singular arc)")
    return -bl / nb, nb


def hamiltonian_energy(x, lam, alpha, tau, facc):
    A, B = _np_matrices(x)
    lam = np.asarray(lam, dtype=float)
    return float(0.5 * facc * tau**2 + lam @ A + facc * tau * (lam @ (B @ np.asarray(alpha, dtype=float))))


def hamiltonian_time(x, lam, alpha, facc, tau=1.0):
    A, B = _np_matrices(x)
    lam = np.asarray(lam, dtype=float)
    return float(1.0 + lam @ A + facc * tau * (lam @ (B @ np.asarray(alpha, dtype=float))))


def _lamA(x, lam):
    return lam @ mee_matrices(x)[0]


def _lamBa(x, lam, alpha):
    return lam @ (mee_matrices(x)[1] @ alpha)


_grad_lamA = jax.jit(jax.grad(_lamA))
_grad_lamBa = jax.jit(jax.grad(_lamBa))


def costate_rates(x, lam, control, facc: float, full: bool = True) -> np.ndarray:
    """-d(lam^T A)/dx - facc tau d(lam^T B alpha)/dx with the control held fixed.

    ``full=False`` drops the second term (the simplified energy-problem dynamics).
    """
    x = jnp.asarray(_check_state(x))
    lam = jnp.asarray(lam, dtype=float)
    alpha, tau = control
    out = -_grad_lamA(x, lam)
    if full:
        out = out - facc * tau * _grad_lamBa(x, lam, jnp.asarray(alpha, dtype=float))
    return np.asarray(out)


def _hstar_time(x, lam, facc):
    A, B = mee_matrices(x)
    return 1.0 + lam @ A - facc * jnp.linalg.norm(B.T @ lam)


def _rhs_time(z, facc):
    x, lam = z[:6], z[6:12]
    A, B = mee_matrices(x)
    bl = B.T @ lam
    xd = A - facc * B @ (bl / jnp.linalg.norm(bl))
    ld = -jax.grad(_hstar_time)(x, lam, facc)
    return jnp.concatenate([xd, ld])


def _rhs_energy(z, facc):
    x, lam = z[:6], z[6:12]
    A, B = mee_matrices(x)
    bl = B.T @ lam
    xd = A - facc * B @ bl
    ld = -jax.grad(_lamA)(x, lam)
    return jnp.concatenate([xd, ld, jnp.linalg.norm(bl)[None]])


# ---------------------------------------------------------------- integrator (Dormand-Prince 5(4))

_DP_A = np.zeros((7, 7))
for _i, _row in enumerate([[], [1 / 5], [3 / 40, 9 / 40], [44 / 45, -56 / 15, 32 / 9],
                           [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
                           [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
                           [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]]):
    _DP_A[_i, : len(_row)] = _row
_DP_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_DP_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])

RTOL = 1e-11
ATOL = 1e-13
MAX_STEPS = 200_000


def _integrate(rhs, z0, dt, facc, s_end=1.0, s0=0.0, rtol=RTOL, atol=ATOL, max_steps=MAX_STEPS):
    """Integrate dz/ds = dt * rhs(z) from s0 to s_end; returns (z, s_reached, steps)."""
    A = jnp.asarray(_DP_A)
    b5 = jnp.asarray(_DP_B5)
    b4 = jnp.asarray(_DP_B4)

    def f(z):
        return dt * rhs(z, facc)

    def step(z, h):
        K = jnp.zeros((7, z.shape[0]), dtype=z.dtype)

        def stage(i, K):
            return K.at[i].set(f(z + h * (A[i] @ K)))

        K = lax.fori_loop(0, 7, stage, K)
        z5 = z + h * (b5 @ K)
        return z5, h * ((b5 - b4) @ K)

    def cond(state):
        _, s, _, n = state
        return (s_end - s > 1e-14) & (n < max_steps)

    def body(state):
        z, s, h, n = state
        h = lax.stop_gradient(jnp.minimum(h, s_end - s))
        zn, err = step(z, h)
        scale = atol + rtol * jnp.maximum(jnp.abs(z), jnp.abs(zn))
        en = lax.stop_gradient(jnp.sqrt(jnp.mean((err / scale) ** 2)))
        en = jnp.where(jnp.isfinite(en), en, 1e10)
        ok = en <= 1.0
        fac = jnp.clip(0.9 * jnp.maximum(en, 1e-10) ** -0.2, 0.2, 5.0)
        z = jnp.where(ok, zn, z)
        s = jnp.where(ok, s + h, s)
        return z, s, h * fac, n + 1

    h0 = lax.stop_gradient(jnp.minimum(0.05, 0.05 / jnp.maximum(jnp.abs(dt), 1e-12)))
    z, s, _, n = lax.while_loop(cond, body, (z0, jnp.asarray(s0, dtype=z0.dtype), h0, 0))
    return z, s, n


def _flow_time(z0, dt, facc):
    return _integrate(_rhs_time, z0, dt, facc)


def _flow_energy(z0, dt, facc):
    return _integrate(_rhs_energy, z0, dt, facc)


_flow_time_j = jax.jit(_flow_time)
_flow_energy_j = jax.jit(_flow_energy)


def _with_aux(flow):
    def fn(z0, dt, facc):
        z, s, n = flow(z0, dt, facc)
        return z, (z, s, n)
    return fn


# Jacobians of the final state w.r.t. the initial augmented state and the flight time
_jac_time = jax.jit(jax.jacfwd(_with_aux(_flow_time), argnums=(0, 1), has_aux=True))
_jac_energy = jax.jit(jax.jacfwd(_with_aux(_flow_energy), argnums=(0, 1), has_aux=True))


@partial(jax.jit, static_argnums=(3,))
def _dense_time(z0, dt, facc, n_out):
    def seg(z, k):
        s0 = k / n_out
        z1, s, n = _integrate(_rhs_time, z, dt, facc, s_end=(k + 1) / n_out, s0=s0)
        return z1, (z1, s, n)

    _, (zs, ss, ns) = lax.scan(seg, z0, jnp.arange(n_out, dtype=z0.dtype))
    return zs, ss, ns


def _checked(z, s, n, what="integration"):
    if not (float(s) >= 1.0 - 1e-12 and np.all(np.isfinite(np.asarray(z)))):
        raise IntegrationError(f"{what} stopped at s={float(s):.6g} after {int(n)} steps")
    return np.asarray(z)


# ---------------------------------------------------------------- interface types


@dataclass(frozen=True)
class AugmentedState:
    x: np.ndarray  # canonical MEE at t0
    lam: np.ndarray  # canonical costates at t0
    t0: float  # MJD
    dt: float  # flight time used by the solve, days
    iterations: int = 0  # Newton iterations spent, over all flight-time updates


@dataclass(frozen=True)
class TransferSolution:
    t0: float  # MJD
    tf: float  # MJD
    lam0: np.ndarray  # canonical costates at t0
    dv_equiv: float  # km/s
    target: np.ndarray  # [p (km), f, g, h, k]
    residual: float = 0.0
    iterations: int = 0
    station: Optional[int] = None
    xf: Optional[np.ndarray] = None  # canonical MEE at tf

    def __post_init__(self):
        if self.tf < self.t0:
            raise ValueError("transfer ends before it starts")

    @property
    def duration(self) -> float:
        return self.tf - self.t0


def initial_mee(el: KeplerianElements, t0: float, const: Constants = CONST) -> np.ndarray:
    """Canonical equinoctial state [p/AU, f, g, h, k, L] of ``el`` at ``t0``."""
    x = kep_to_mee(el, t0, const).as_array()
    x[0] /= const.au
    return x


def _slow_canonical(target, const):
    t = np.asarray(target, dtype=float).copy()
    t[0] /= const.au
    return t


# ---------------------------------------------------------------- Newton


def _newton(fun, fun_jac, y0, tol, max_iter, positive_last=True):
    """Damped Newton with backtracking on the residual norm.

    ``fun(y)`` returns the residual (raising on integration failure),
    ``fun_jac(y)`` returns (residual, Jacobian).
    """
    y = np.asarray(y0, dtype=float).copy()
    r, J = fun_jac(y)
    nr = float(np.linalg.norm(r))
    it = 0
    while nr > tol and it < max_iter:
        it += 1
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        alpha = 1.0
        if positive_last and y[-1] + step[-1] <= 0:
            alpha = min(1.0, 0.5 * y[-1] / abs(step[-1]))
        accepted = False
        for _ in range(12):
            y_try = y + alpha * step
            try:
                r_try = fun(y_try)
                n_try = float(np.linalg.norm(r_try))
            except (IntegrationError, FloatingPointError, ValueError):
                n_try = np.inf
            if n_try < (1 - 1e-4 * alpha) * nr:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        y = y_try
        r, J = fun_jac(y)
        nr = float(np.linalg.norm(r))
    return y, nr, it


# ---------------------------------------------------------------- energy-optimal


def _kepler_gramian(x0, dt, n=400):
    """int_0^dt B_s B_s^T dt along the uncontrolled arc (slow rows of B), canonical units."""
    ts = np.linspace(0.0, dt, n)
    # longitude along the coast: integrate with zero costates (no thrust) by Kepler in MEE
    p, f, g = x0[0], x0[1], x0[2]
    e = math.hypot(f, g)
    lp = math.atan2(g, f) if e > 0 else 0.0
    a = p / (1 - e * e)
    nmean = a**-1.5
    nu0 = x0[5] - lp
    E0 = 2 * math.atan2(math.sqrt(1 - e) * math.sin(nu0 / 2), math.sqrt(1 + e) * math.cos(nu0 / 2))
    M = E0 - e * math.sin(E0) + nmean * ts
    from .astrokernel import solve_kepler

    E = solve_kepler(M, e)
    nu = 2 * np.arctan2(np.sqrt(1 + e) * np.sin(E / 2), np.sqrt(1 - e) * np.cos(E / 2))
    Ls = lp + nu
    G = np.zeros((5, 5))
    w = np.full(n, dt / (n - 1))
    w[0] = w[-1] = 0.5 * dt / (n - 1)
    for L, wk in zip(Ls, w):
        xx = np.array(x0, dtype=float)
        xx[5] = L
        Bs = _np_matrices(xx)[1][:5]
        G += wk * Bs @ Bs.T
    return G


def _energy_residual(z_f, target):
    d = z_f[:5] - target
    return np.concatenate([d, [z_f[11]]])


def _energy_solve_fixed_dt(x0, target, dt, facc, lam_guess, tol, max_iter):
    z_tail = np.zeros(1)

    def fun(lam):
        z0 = jnp.asarray(np.concatenate([x0, lam, z_tail]))
        z, s, n = _flow_energy_j(z0, dt, facc)
        return _energy_residual(_checked(z, s, n), target)

    def fun_jac(lam):
        z0 = jnp.asarray(np.concatenate([x0, lam, z_tail]))
        (Jz, _), (z, s, n) = _jac_energy(z0, dt, facc)
        zf = _checked(z, s, n)
        Jz = np.asarray(Jz)
        J = np.vstack([Jz[:5, 6:12], Jz[11:12, 6:12]])
        return _energy_residual(zf, target), J

    lam, nr, it = _newton(fun, fun_jac, lam_guess, tol, max_iter, positive_last=False)
    z0 = jnp.asarray(np.concatenate([x0, lam, z_tail]))
    z, s, n = _flow_energy_j(z0, dt, facc)
    return lam, nr, it, float(np.asarray(z)[12])


def _energy_at_dt(x0, target, dt, facc, lam_guess, tol, max_iter, rng, n_starts):
    """Energy solve for a fixed flight time with a Gramian guess then random multistart."""
    guesses = []
    if lam_guess is not None:
        guesses.append(np.asarray(lam_guess, dtype=float))
    G = _kepler_gramian(x0, dt)
    try:
        lam_s = -np.linalg.solve(G, target - x0[:5]) / facc
        guesses.append(np.concatenate([lam_s, [0.0]]))
    except np.linalg.LinAlgError:
        pass
    for _ in range(n_starts):
        v = rng.normal(size=6)
        v[5] = 0.0
        guesses.append(v / np.linalg.norm(v) * 10 ** rng.uniform(-3, 0))
    best = None
    total_it = 0
    for k, g in enumerate(guesses):
        try:
            lam, nr, it, integral = _energy_solve_fixed_dt(x0, target, dt, facc, g, tol, max_iter)
        except (IntegrationError, np.linalg.LinAlgError):
            continue
        total_it += it
        if best is None or nr < best[1]:
            best = (lam, nr, integral)
        if nr <= tol:
            if k >= 2:
                log.debug("energy problem converged from random start %d", k)
            return lam, nr, total_it, integral
    if best is None:
        raise ShootingError("energy-optimal shooting failed for every start", np.inf, total_it)
    raise ShootingError("energy-optimal shooting did not converge", best[1], total_it)


def solve_energy_optimal(el0: KeplerianElements, t0: float, target_slow5, dt_guess: float,
                         const: Constants = CONST, tol: float = 1e-8, max_iter: int = 30,
                         adjust_dt: bool = True, seed: int = 0, n_starts: int = 8,
                         lam_guess=None) -> AugmentedState:
    """Energy-optimal transfer to the slow elements ``target_slow5`` (p in km), free final longitude.

    ``dt_guess`` is in days.  With ``adjust_dt`` the flight time is moved
    (secant iteration) until the energy solution's delta-v equals facc * dt,
    which makes its costates a usable time-optimal warm start.
    """
    if not dt_guess > 0:
        raise ValueError("dt_guess must be positive")
    cu = Canonical.from_constants(const)
    x0 = initial_mee(el0, t0, const)
    target = _slow_canonical(target_slow5, const)
    rng = np.random.default_rng(seed)
    if np.linalg.norm(x0[:5] - target) < 1e-12:
        return AugmentedState(x0, np.zeros(6), t0, 0.0)
    dt = cu.from_days(dt_guess)
    lam, nr, it, integral = _energy_at_dt(x0, target, dt, cu.facc, lam_guess, tol, max_iter, rng, n_starts)
    total = it
    if adjust_dt:
        # g(dt) = mean thrust ratio - 1; delta-v equivalence means g = 0
        g0 = integral / dt - 1.0
        dt_prev, g_prev = dt, g0
        dt = dt * (1.0 + g0) if abs(g0) < 0.5 else dt * (1.5 if g0 > 0 else 0.67)
        for _ in range(25):
            if abs(g_prev) < 1e-6:
                dt = dt_prev
                break
            lam, nr, it, integral = _energy_at_dt(x0, target, dt, cu.facc, lam, tol, max_iter, rng, n_starts)
            total += it
            g = integral / dt - 1.0
            if abs(g) < 1e-6:
                break
            slope = (g - g_prev) / (dt - dt_prev)
            new = dt - g / slope if slope != 0 else dt * (1 + g)
            new = min(max(new, 0.5 * dt), 2.0 * dt)
            dt_prev, g_prev = dt, g
            dt = new
        else:
            raise ShootingError("flight-time adjustment of the energy problem did not converge", abs(g), 25)
    return AugmentedState(x0, lam, t0, cu.days(dt), total)


# ---------------------------------------------------------------- time-optimal


def _scaled_free(zf, target, facc):
    return np.concatenate([zf[:5] - target, [zf[11] * facc]])


def _renormalize(x0, lam, facc, n_D=0.0):
    """Scale costates so that H(t0) = n_D lambda_L(t0) (zero for the free-longitude problem)."""
    A, B = _np_matrices(x0)
    s0 = float(lam @ A - facc * np.linalg.norm(B.T @ lam))
    denom = s0 - n_D * lam[5]
    if denom < 0:
        return lam * (-1.0 / denom)
    return lam


_hstar_time_j = jax.jit(_hstar_time)
_grad_hstar_j = jax.jit(jax.grad(_hstar_time, argnums=(0, 1)))


def _final_x(x0, lam, dt, facc):
    z, s, n = _flow_time_j(jnp.asarray(np.concatenate([x0, lam])), dt, facc)
    return _checked(z, s, n)[:6]


def _h_time(z, facc):
    return float(_hstar_time_j(jnp.asarray(z[:6]), jnp.asarray(z[6:12]), facc))


def solve_time_optimal_free_L(el0: KeplerianElements, t0: float, target_slow5, warm: AugmentedState,
                              const: Constants = CONST, tol: float = 1e-10, max_iter: int = 40,
                              dt_guess: Optional[float] = None) -> TransferSolution:
    """Minimum-time transfer to the slow elements of ``target_slow5`` with free final longitude."""
    cu = Canonical.from_constants(const)
    facc = cu.facc
    x0 = initial_mee(el0, t0, const)
    target = _slow_canonical(target_slow5, const)
    if np.linalg.norm(x0[:5] - target) < 1e-12:
        return TransferSolution(t0, t0, np.zeros(6), 0.0, np.asarray(target_slow5, float), xf=x0)
    lam0 = _renormalize(x0, np.asarray(warm.lam, dtype=float), facc)
    dt0 = cu.from_days(dt_guess if dt_guess is not None else warm.dt)

    def fun(y):
        z, s, n = _flow_time_j(jnp.asarray(np.concatenate([x0, y[:6]])), y[6], facc)
        zf = _checked(z, s, n)
        return np.concatenate([_scaled_free(zf, target, facc), [_h_time(zf, facc)]])

    def fun_jac(y):
        z0 = jnp.asarray(np.concatenate([x0, y[:6]]))
        (Jz, Jt), (z, s, n) = _jac_time(z0, y[6], facc)
        zf = _checked(z, s, n)
        Jz, Jt = np.asarray(Jz), np.asarray(Jt)
        D = np.hstack([Jz[:, 6:12], Jt[:, None]])  # d z_f / d(lam0, dt)
        gH = np.asarray(_grad_hstar_j(jnp.asarray(zf[:6]), jnp.asarray(zf[6:12]), facc))
        dH = np.concatenate(gH) @ D
        J = np.vstack([D[:5], facc * D[11:12], dH[None]])
        r = np.concatenate([_scaled_free(zf, target, facc), [_h_time(zf, facc)]])
        return r, J

    y, nr, it = _newton(fun, fun_jac, np.concatenate([lam0, [dt0]]), tol, max_iter)
    if not nr <= tol:
        raise ShootingError("time-optimal (free longitude) shooting did not converge", nr, it)
    tf = t0 + cu.days(y[6])
    return TransferSolution(t0, tf, y[:6], const.f_atd_kms * (tf - t0) * const.day,
                            np.asarray(target_slow5, float), nr, it, None, _final_x(x0, y[:6], y[6], facc))


def _ring_slow(ring: RingConfig, const):
    return ring.slow_mee(const)


def _wrap_half(d):
    return math.sin(0.5 * d)


def solve_time_optimal_rendezvous(el0: KeplerianElements, t0: float, ring: RingConfig, station: int,
                                  guess, const: Constants = CONST, tol: float = 1e-10,
                                  max_iter: int = 40) -> TransferSolution:
    """Minimum-time rendezvous with ``station`` of ``ring``; departure epoch fixed.

    ``guess`` supplies ``lam0`` and ``tf`` (MJD); a TransferSolution or any
    object with those attributes works.
    """
    cu = Canonical.from_constants(const)
    facc = cu.facc
    x0 = initial_mee(el0, t0, const)
    target = _slow_canonical(_ring_slow(ring, const), const)
    n_D = ring.mean_motion(const) * cu.tu / const.day  # rad per TU
    L_ref = ring.station_longitude(station, t0, const)

    def station_L(dt):
        return L_ref + n_D * dt

    def resid(zf, dt):
        return np.concatenate([zf[:5] - target, [_wrap_half(zf[5] - station_L(dt)),
                                                 _h_time(zf, facc) - n_D * zf[11]]])

    if np.linalg.norm(x0[:5] - target) < 1e-12 and abs(_wrap_half(x0[5] - L_ref)) < 1e-12:
        return TransferSolution(t0, t0, np.zeros(6), 0.0, _ring_slow(ring, const), 0.0, 0, station, x0)

    def fun(y):
        z, s, n = _flow_time_j(jnp.asarray(np.concatenate([x0, y[:6]])), y[6], facc)
        return resid(_checked(z, s, n), y[6])

    def fun_jac(y):
        z0 = jnp.asarray(np.concatenate([x0, y[:6]]))
        (Jz, Jt), (z, s, n) = _jac_time(z0, y[6], facc)
        zf = _checked(z, s, n)
        Jz, Jt = np.asarray(Jz), np.asarray(Jt)
        D = np.hstack([Jz[:, 6:12], Jt[:, None]])
        gx, gl = _grad_hstar_j(jnp.asarray(zf[:6]), jnp.asarray(zf[6:12]), facc)
        dH = np.concatenate([np.asarray(gx), np.asarray(gl)]) @ D
        dphi = zf[5] - station_L(y[6])
        row_L = 0.5 * math.cos(0.5 * dphi) * D[5]
        row_L[6] -= 0.5 * math.cos(0.5 * dphi) * n_D
        J = np.vstack([D[:5], row_L[None], (dH - n_D * D[11])[None]])
        return resid(zf, y[6]), J

    lam_g = np.asarray(guess.lam0, dtype=float)
    dt_g = cu.from_days(float(guess.tf) - t0)
    if not dt_g > 0:
        raise ValueError("rendezvous guess must end after t0")
    y, nr, it = _newton(fun, fun_jac, np.concatenate([lam_g, [dt_g]]), tol, max_iter)
    if not nr <= tol:
        raise ShootingError("time-optimal rendezvous shooting did not converge", nr, it)
    tf = t0 + cu.days(y[6])
    return TransferSolution(t0, tf, y[:6], const.f_atd_kms * (tf - t0) * const.day,
                            _ring_slow(ring, const), nr, it, station, _final_x(x0, y[:6], y[6], facc))


# ---------------------------------------------------------------- re-integration


def propagate_transfer(el0: KeplerianElements, t0: float, lam0, tf: float, const: Constants = CONST,
                       n_out: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the time-optimal dynamics from (el0 at t0, lam0) to tf.

    Returns epochs (MJD) and canonical augmented states [x, lam] at ``n_out``
    equally spaced output points ending at tf (plus the initial point).
    """
    cu = Canonical.from_constants(const)
    x0 = initial_mee(el0, t0, const)
    z0 = np.concatenate([x0, np.asarray(lam0, dtype=float)])
    dt = cu.from_days(tf - t0)
    ts = t0 + (tf - t0) * np.arange(n_out + 1) / n_out
    if dt == 0:
        return ts, np.repeat(z0[None], n_out + 1, axis=0)
    zs, ss, ns = _dense_time(jnp.asarray(z0), dt, cu.facc, int(n_out))
    zs, ss = np.asarray(zs), np.asarray(ss)
    if not (ss[-1] >= 1.0 - 1e-12 and np.all(np.isfinite(zs))):
        raise IntegrationError("transfer re-integration failed")
    return ts, np.vstack([z0[None], zs])
