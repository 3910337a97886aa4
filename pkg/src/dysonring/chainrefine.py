"""
Chain refinement with a fixed asteroid sequence: encounter epochs (R1), ring
plane and radius, and optimal splitting of flyby impulses (R2).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .astrokernel import CONST, Constants, LambertError, conic_min_radius, lambert, propagate_kepler
from .catalog import EARTH, Catalog, earth_state
from .chainbuilder import (
    ChainLeg,
    MothershipChain,
    Pruning,
    assemble_chain,
    campaign_objective,
    estimated_masses,
    flyby_split_greedy,
    score_ji,
)
from .ring import RingConfig
from .searchkit import PSOParams, SearchSpace, pso_minimize

__all__ = [
    "RingConfig",
    "flyby_split_optimal",
    "split_cost",
    "arrival_velocities",
    "apply_r2",
    "refine_epochs",
    "refine_ring",
    "RingBounds",
    "chain_feasible",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- optimal flyby split


def split_cost(v_minus, v_A, v_plus, v_max: float = 2.0) -> float:
    """Optimal |dv1| + |dv2| for one encounter."""
    dv1, dv2 = flyby_split_optimal(v_minus, v_A, v_plus, v_max)
    return float(np.linalg.norm(dv1) + np.linalg.norm(dv2))


def _segment_ball_entry(a, b, c, r):
    """First point of segment a->b inside the closed ball B(c, r), or None."""
    d = b - a
    dd = d @ d
    ac = a - c
    if ac @ ac <= r * r:
        return a
    if dd == 0.0:
        return None
    # |a + s d - c|^2 = r^2
    B = ac @ d
    C = ac @ ac - r * r
    disc = B * B - dd * C
    if disc < 0:
        return None
    s = (-B - math.sqrt(disc)) / dd
    if 0.0 <= s <= 1.0:
        return a + s * d
    return None


def flyby_split_optimal(v_minus, v_A, v_plus, v_max: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Minimize |dv1| + |dv2| with dv1 + dv2 = v_plus - v_minus and |v_minus + dv1 - v_A| <= v_max.

    With u = v_minus + dv1 the cost is |u - v_minus| + |v_plus - u|, a convex
    function minimized over a ball.  If the segment [v_minus, v_plus] meets
    the ball the straight-line cost is attained.  Otherwise the unique
    minimizer sits on the sphere, in the plane spanned by v_minus, v_plus and
    v_A, so a one-dimensional search over the great circle suffices.
    """
    a = np.asarray(v_minus, dtype=float)
    b = np.asarray(v_plus, dtype=float)
    c = np.asarray(v_A, dtype=float)
    entry = _segment_ball_entry(a, b, c, v_max)
    if entry is not None:
        return entry - a, b - entry

    # in-plane orthonormal basis centred on c
    da, db = a - c, b - c
    e1 = da + db
    n1 = np.linalg.norm(e1)
    if n1 < 1e-12 * (np.linalg.norm(da) + np.linalg.norm(db)):
        e1 = da
        n1 = np.linalg.norm(e1)
    e1 = e1 / n1
    w = da - (da @ e1) * e1
    if np.linalg.norm(w) < 1e-12 * np.linalg.norm(da):
        w = db - (db @ e1) * e1
    if np.linalg.norm(w) < 1e-12 * max(np.linalg.norm(db), 1.0):
        # collinear: the nearest sphere point along the common direction
        u = c + v_max * e1
        return u - a, b - u
    e2 = w / np.linalg.norm(w)

    def f(th):
        u = c + v_max * (math.cos(th) * e1 + math.sin(th) * e2)
        return np.linalg.norm(u - a) + np.linalg.norm(b - u)

    grid = np.linspace(-math.pi, math.pi, 721)
    U = c + v_max * (np.cos(grid)[:, None] * e1 + np.sin(grid)[:, None] * e2)
    vals = np.linalg.norm(U - a, axis=1) + np.linalg.norm(b - U, axis=1)
    k = int(np.argmin(vals))
    h = grid[1] - grid[0]
    res = minimize_scalar(f, bounds=(grid[k] - h, grid[k] + h), method="bounded", options={"xatol": 1e-13})
    th = res.x if res.fun <= vals[k] else grid[k]
    u = c + v_max * (math.cos(th) * e1 + math.sin(th) * e2)
    return u - a, b - u


# ---------------------------------------------------------------- chain plumbing


def _leg_start(chain: MothershipChain, k: int, cat: Catalog, earth, const: Constants):
    """Position and epoch where the last sub-arc of leg ``k`` begins."""
    leg = chain.legs[k]
    if leg.dsm is not None:
        return leg.dsm.r, leg.dsm.epoch
    if k == 0:
        return earth_state(chain.launch_epoch, earth, const).r, chain.launch_epoch
    prev = chain.legs[k - 1]
    return propagate_kepler(cat[prev.target].elements, prev.epoch, const).r, prev.epoch


def arrival_velocities(chain: MothershipChain, cat: Catalog, earth=EARTH, const: Constants = CONST):
    """Incoming heliocentric velocity and asteroid velocity at each encounter."""
    out = []
    for k, leg in enumerate(chain.legs):
        r0, t0 = _leg_start(chain, k, cat, earth, const)
        s = propagate_kepler(cat[leg.target].elements, leg.epoch, const)
        _, v_minus = lambert(r0, s.r, (leg.epoch - t0) * const.day, mu=const.mu_sun)
        out.append((v_minus, s.v))
    return out


def apply_r2(chain: MothershipChain, cat: Catalog, earth=EARTH, const: Constants = CONST) -> MothershipChain:
    """Re-split every interior flyby optimally; arcs are untouched, so the trajectory is unchanged."""
    arr = arrival_velocities(chain, cat, earth, const)
    legs = list(chain.legs)
    for k in range(len(legs) - 1):
        leg = legs[k]
        v_minus, v_A = arr[k]
        v_plus = v_minus + leg.dv1 + leg.dv2
        dv1, dv2 = flyby_split_optimal(v_minus, v_A, v_plus, const.v_flyby_max)
        new = np.linalg.norm(dv1) + np.linalg.norm(dv2)
        old = np.linalg.norm(leg.dv1) + np.linalg.norm(leg.dv2)
        if new < old - 1e-12:
            legs[k] = replace(leg, dv1=dv1, dv2=dv2)
    return replace(chain, legs=tuple(legs))


def chain_feasible(chain: MothershipChain, cat: Catalog, pruning: Pruning = Pruning(), earth=EARTH,
                   const: Constants = CONST, ring: Optional[RingConfig] = None) -> bool:
    """Hard chain rules: launch cap, A2A cap, cumulative cap, perihelion, window."""
    if np.linalg.norm(chain.launch_impulse) > pruning.v_launch_max + 1e-12:
        return False
    costs = chain.leg_costs()
    if any(c > pruning.dv_a2a_max + 1e-12 for c in costs[1:]) or sum(costs) > pruning.dv_total_max + 1e-12:
        return False
    if chain.legs and chain.legs[-1].epoch > const.t_end:
        return False
    times = [chain.launch_epoch, *chain.epochs]
    pos = [earth_state(chain.launch_epoch, earth, const).r]
    pos += [propagate_kepler(cat[a].elements, t, const).r for a, t in zip(chain.ids, chain.epochs)]
    for k in range(len(chain.legs)):
        dt = (times[k + 1] - times[k]) * const.day
        v1, _ = lambert(pos[k], pos[k + 1], dt, mu=const.mu_sun)
        if conic_min_radius(pos[k], v1, dt, const) < const.r_min * const.au:
            return False
    return True


def _chain_mass(chain, cat, ring: RingConfig, const) -> float:
    masses, _ = estimated_masses(cat.subset(chain.ids), ring.a_D, ring.i_D, ring.raan_D, const)
    return float(masses.sum())


# ---------------------------------------------------------------- R1: epochs


@dataclass
class RefineResult:
    chain: MothershipChain
    improved: bool
    J_before: float
    J_after: float


class _EpochObjective:
    def __init__(self, chain, cat, ring, pruning, earth, const, min_sep):
        self.chain = chain
        self.cat = cat
        self.mass = _chain_mass(chain, cat, ring, const)
        self.a_D = ring.a_D
        self.pruning = pruning
        self.earth = earth
        self.const = const
        self.min_sep = min_sep

    def build(self, T) -> Optional[MothershipChain]:
        times = np.concatenate([[self.chain.launch_epoch], T])
        if np.any(np.diff(times) < self.min_sep):
            return None
        try:
            new = assemble_chain(self.cat, self.chain.launch_epoch, self.chain.ids, [float(t) for t in T],
                                 earth=self.earth, const=self.const)
        except LambertError:
            return None
        if not chain_feasible(new, self.cat, self.pruning, self.earth, self.const):
            return None
        return new

    def __call__(self, T):
        new = self.build(T)
        if new is None:
            return np.inf
        return -score_ji(self.mass, new.dv_total(self.const.v_launch_max), self.a_D)


def refine_epochs(chain: MothershipChain, cat: Catalog, ring: RingConfig,
                  pso_params: PSOParams = PSOParams(swarm=30, iters=60, stall_limit=15),
                  window: float = 30.0, min_sep: float = 1.0, pruning: Pruning = Pruning(),
                  earth=EARTH, const: Constants = CONST) -> RefineResult:
    """PSO over encounter epochs within +-``window`` days; launch epoch fixed.

    The input point seeds the swarm.  The result is accepted only if it does
    not lower the per-ship score and does not raise total delta-v.
    """
    T0 = np.array(chain.epochs, dtype=float)
    mass = _chain_mass(chain, cat, ring, const)
    J0 = score_ji(mass, chain.dv_total(const.v_launch_max), ring.a_D)
    if T0.size == 0:
        return RefineResult(chain, False, J0, J0)
    obj = _EpochObjective(chain, cat, ring, pruning, earth, const, min_sep)
    space = SearchSpace(T0 - window, T0 + window)
    rep = pso_minimize(obj, space, pso_params, initial_points=[T0])
    new = obj.build(rep.best_point) if np.isfinite(rep.best_value) else None
    if new is None:
        log.warning("epoch refinement found no feasible point; chain returned unchanged")
        return RefineResult(chain, False, J0, J0)
    J1 = -rep.best_value
    if J1 >= J0 and new.dv_total(const.v_launch_max) <= chain.dv_total(const.v_launch_max):
        return RefineResult(new, J1 > J0, J0, J1)
    return RefineResult(chain, False, J0, J0)


# ---------------------------------------------------------------- ring


@dataclass(frozen=True)
class RingBounds:
    a_D: tuple[float, float] = (0.65, 1.5)
    i_D: tuple[float, float] = (0.0, math.radians(10.0))
    raan_D: tuple[float, float] = (0.0, 2 * math.pi)


def refine_ring(chains: Sequence[MothershipChain], cat: Catalog, ring0: RingConfig,
                pso_params: PSOParams = PSOParams(swarm=40, iters=100, stall_limit=25),
                bounds: RingBounds = RingBounds(), const: Constants = CONST) -> RingConfig:
    """Maximize the campaign objective over (a_D, i_D, raan_D) with Edelbaum mass estimates."""
    ids = [a for ch in chains for a in ch.ids]
    sub = cat.subset(ids)
    dvs = [ch.dv_total(const.v_launch_max) for ch in chains]
    lo = np.array([max(bounds.a_D[0], const.a_d_min), bounds.i_D[0], bounds.raan_D[0]])
    hi = np.array([bounds.a_D[1], bounds.i_D[1], bounds.raan_D[1]])

    def f(x):
        x = np.clip(x, lo, hi)
        m, _ = estimated_masses(sub, x[0], x[1], x[2], const)
        return -campaign_objective([m.sum()], dvs, x[0])

    x0 = np.clip([ring0.a_D, ring0.i_D, ring0.raan_D], lo, hi)
    rep = pso_minimize(f, SearchSpace(lo, hi), pso_params, initial_points=[x0])
    x = rep.best_point
    free = hi > lo
    if free.any():
        def g(y):
            z = x.copy()
            z[free] = y
            return f(z)

        res = minimize(g, x[free], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12 * abs(rep.best_value), "maxiter": 4000})
        if res.fun < rep.best_value:
            x = x.copy()
            x[free] = np.clip(res.x, lo[free], hi[free])
    if f(x) > f(x0):
        x = x0
    return RingConfig(float(x[0]), float(x[1]), float(x[2]) % (2 * math.pi), ring0.phi_S1, ring0.n_stations)
