"""
Final refinement: true rendezvous for every dispatched asteroid, and one
optional deep-space manoeuvre (DSM) per mothership leg.

A DSM splits a leg into two Lambert arcs through a free point r_dsm at a
fraction x of the leg time.  The leg cost is the change it causes at both
encounter splits plus the DSM impulse itself; a DSM is kept only if the
chain's total delta-v strictly drops and every sub-arc keeps its perihelion
above the limit.  Encounter epochs never move.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import lowthrust as lt
from .astrokernel import (CONST, Constants, LambertError, conic_min_radius, lambert, propagate_cartesian,
                          propagate_kepler)
from .catalog import EARTH, Catalog, earth_state
from .chainbuilder import ChainLeg, Dsm, MothershipChain, flyby_split_greedy
from .chainrefine import flyby_split_optimal
from .dispatcher import Assignment, feasible
from .rdvtable import RendezvousTable, TransferOpportunity
from .ring import RingConfig

__all__ = [
    "DsmLegProblem",
    "DsmResult",
    "LegSpec",
    "SubArc",
    "RefineLog",
    "chain_subarcs",
    "rebuild_chain",
    "leg_problem",
    "optimize_dsm_leg",
    "apply_dsm_pass",
    "refine_rendezvous",
    "refine_assignment",
]

log = logging.getLogger(__name__)

X_BOUNDS = (0.05, 0.95)
R_BOX_AU = 3.0


# ---------------------------------------------------------------- chain geometry


@dataclass(frozen=True)
class LegSpec:
    target: int
    epoch: float
    dsm_epoch: Optional[float] = None
    dsm_r: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SubArc:
    leg: int
    t0: float
    t1: float
    r0: np.ndarray
    r1: np.ndarray
    v0: np.ndarray
    v1: np.ndarray


def _encounter_states(cat, specs, const):
    return [propagate_kepler(cat[s.target].elements, s.epoch, const) for s in specs]


def rebuild_chain(cat: Catalog, launch_epoch: float, specs: Sequence[LegSpec], earth=EARTH,
                  const: Constants = CONST) -> MothershipChain:
    """Chain through the given encounters and DSM points: Lambert sub-arcs, DSM impulses,
    optimal splits at interior flybys and a pure ball entry at the last one."""
    e0 = earth_state(launch_epoch, earth, const)
    enc = _encounter_states(cat, specs, const)
    r_prev, t_prev = e0.r, launch_epoch
    dep, arr, dsm_dv = [], [], []
    for k, s in enumerate(specs):
        if s.dsm_epoch is not None:
            v1a, v2a = lambert(r_prev, s.dsm_r, (s.dsm_epoch - t_prev) * const.day, mu=const.mu_sun)
            v1b, v2b = lambert(s.dsm_r, enc[k].r, (s.epoch - s.dsm_epoch) * const.day, mu=const.mu_sun)
            dep.append(v1a)
            arr.append(v2b)
            dsm_dv.append(v1b - v2a)
        else:
            v1, v2 = lambert(r_prev, enc[k].r, (s.epoch - t_prev) * const.day, mu=const.mu_sun)
            dep.append(v1)
            arr.append(v2)
            dsm_dv.append(None)
        r_prev, t_prev = enc[k].r, s.epoch
    legs = []
    for k, s in enumerate(specs):
        if k + 1 < len(specs):
            dv1, dv2 = flyby_split_optimal(arr[k], enc[k].v, dep[k + 1], const.v_flyby_max)
        else:
            dv1, _ = flyby_split_greedy(arr[k], enc[k].v, arr[k], const.v_flyby_max)
            dv2 = np.zeros(3)
        dsm = None if dsm_dv[k] is None else Dsm(float(s.dsm_epoch), np.asarray(s.dsm_r, float), dsm_dv[k])
        legs.append(ChainLeg(s.target, float(s.epoch), dv1, dv2, dsm))
    launch = dep[0] - e0.v if specs else np.zeros(3)
    return MothershipChain(float(launch_epoch), launch, tuple(legs))


def specs_of(chain: MothershipChain) -> list:
    return [LegSpec(l.target, l.epoch, None if l.dsm is None else l.dsm.epoch, None if l.dsm is None else l.dsm.r)
            for l in chain.legs]


def chain_subarcs(chain: MothershipChain, cat: Catalog, earth=EARTH, const: Constants = CONST) -> list:
    """Every conic sub-arc of the chain (launch leg first), with Lambert end velocities."""
    out = []
    r_prev, t_prev = earth_state(chain.launch_epoch, earth, const).r, chain.launch_epoch
    for k, leg in enumerate(chain.legs):
        r_k = propagate_kepler(cat[leg.target].elements, leg.epoch, const).r
        pts = [(r_prev, t_prev)]
        if leg.dsm is not None:
            pts.append((np.asarray(leg.dsm.r, float), leg.dsm.epoch))
        pts.append((r_k, leg.epoch))
        for (ra, ta), (rb, tb) in zip(pts, pts[1:]):
            v0, v1 = lambert(ra, rb, (tb - ta) * const.day, mu=const.mu_sun)
            out.append(SubArc(k, ta, tb, ra, rb, v0, v1))
        r_prev, t_prev = r_k, leg.epoch
    return out


# ---------------------------------------------------------------- one leg


@dataclass(frozen=True)
class DsmLegProblem:
    r_dep: np.ndarray  # km
    r_arr: np.ndarray  # km
    t_dep: float  # MJD
    t_arr: float  # MJD
    v_in: np.ndarray  # velocity arriving at the departure encounter (Earth velocity for launch)
    v_body_dep: np.ndarray  # velocity of the departure body
    v_body_arr: np.ndarray  # velocity of the arrival body
    v_out: Optional[np.ndarray] = None  # departure velocity of the next leg; None for the last leg
    launch: bool = False

    def __post_init__(self):
        if not self.t_arr > self.t_dep:
            raise ValueError("leg must have positive duration")

    def dep_cost(self, v1, const: Constants = CONST) -> float:
        if self.launch:
            # launch impulse is free up to the cap, and the cap is hard
            mag = float(np.linalg.norm(v1 - self.v_body_dep))
            return 1e3 * max(0.0, mag - const.v_launch_max)
        d1, d2 = flyby_split_optimal(self.v_in, self.v_body_dep, v1, const.v_flyby_max)
        return float(np.linalg.norm(d1) + np.linalg.norm(d2))

    def arr_cost(self, v2, const: Constants = CONST) -> float:
        if self.v_out is None:
            d1, _ = flyby_split_greedy(v2, self.v_body_arr, v2, const.v_flyby_max)
            return float(np.linalg.norm(d1))
        d1, d2 = flyby_split_optimal(v2, self.v_body_arr, self.v_out, const.v_flyby_max)
        return float(np.linalg.norm(d1) + np.linalg.norm(d2))

    def single_arc_cost(self, const: Constants = CONST) -> float:
        v1, v2 = lambert(self.r_dep, self.r_arr, (self.t_arr - self.t_dep) * const.day, mu=const.mu_sun)
        return self.dep_cost(v1, const) + self.arr_cost(v2, const)

    def dsm_cost(self, x: float, r: np.ndarray, const: Constants = CONST):
        """(total, dsm impulse, arc velocities) for a DSM at fraction ``x`` and position ``r`` (km)."""
        T = (self.t_arr - self.t_dep) * const.day
        v1a, v2a = lambert(self.r_dep, r, x * T, mu=const.mu_sun)
        v1b, v2b = lambert(r, self.r_arr, (1 - x) * T, mu=const.mu_sun)
        dsm = float(np.linalg.norm(v1b - v2a))
        return self.dep_cost(v1a, const) + dsm + self.arr_cost(v2b, const), dsm, (v1a, v2a, v1b, v2b)


@dataclass(frozen=True)
class DsmResult:
    x: float
    r: np.ndarray  # km
    dv_total: float
    dv_dsm: float
    single_arc: float

    @property
    def improves(self) -> bool:
        return self.dv_total < self.single_arc - 1e-9


def optimize_dsm_leg(problem: DsmLegProblem, guess: Optional[tuple] = None, const: Constants = CONST,
                     maxiter: int = 200) -> DsmResult:
    """Local minimum of the three-impulse leg cost over (x, r_dsm), from ``guess`` = (x0, r0 km).

    Default guess: half the leg, on the single Lambert arc.  Failures of the
    local search return the guess.
    """
    au = const.au
    T = (problem.t_arr - problem.t_dep) * const.day
    single = problem.single_arc_cost(const)
    if guess is None:
        v1, _ = lambert(problem.r_dep, problem.r_arr, T, mu=const.mu_sun)
        r0, _ = propagate_cartesian(problem.r_dep, v1, 0.5 * T, const)
        guess = (0.5, r0)
    x0, r0 = guess
    z0 = np.concatenate([[min(max(float(x0), X_BOUNDS[0]), X_BOUNDS[1])], np.asarray(r0, float) / au])

    def f(z):
        try:
            return problem.dsm_cost(float(z[0]), z[1:] * au, const)[0]
        except (LambertError, FloatingPointError, ValueError):
            return 1e6

    bounds = [X_BOUNDS] + [(-R_BOX_AU, R_BOX_AU)] * 3
    best_z, best_f = z0, f(z0)
    try:
        res = minimize(f, z0, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter, "eps": 1e-9})
        if res.fun < best_f:
            best_z, best_f = res.x, float(res.fun)
        res = minimize(f, best_z, method="Nelder-Mead", bounds=bounds,
                       options={"maxiter": 4 * maxiter, "xatol": 1e-10, "fatol": 1e-12})
        if res.fun < best_f:
            best_z, best_f = res.x, float(res.fun)
    except (LambertError, FloatingPointError, ValueError) as exc:
        log.debug("DSM search failed: %s", exc)
    _, dsm, _ = problem.dsm_cost(float(best_z[0]), best_z[1:] * au, const)
    return DsmResult(float(best_z[0]), best_z[1:] * au, best_f, dsm, single)


def _velocities(chain, cat, const, earth):
    """Departure and arrival velocity of every leg's outer sub-arcs."""
    arcs = chain_subarcs(chain, cat, earth, const)
    dep, arr = {}, {}
    for a in arcs:
        dep.setdefault(a.leg, a.v0)
        arr[a.leg] = a.v1
    return [dep[k] for k in range(len(chain.legs))], [arr[k] for k in range(len(chain.legs))]


def leg_problem(chain: MothershipChain, k: int, cat: Catalog, earth=EARTH, const: Constants = CONST,
                end: Optional[int] = None) -> DsmLegProblem:
    """Problem for replacing legs k..end (default k) by one DSM leg ending at encounter ``end``."""
    end = k if end is None else end
    dep, arr = _velocities(chain, cat, const, earth)
    legs = chain.legs
    s_arr = propagate_kepler(cat[legs[end].target].elements, legs[end].epoch, const)
    if k == 0:
        e0 = earth_state(chain.launch_epoch, earth, const)
        r_dep, t_dep, v_in, v_body = e0.r, chain.launch_epoch, e0.v, e0.v
    else:
        s_dep = propagate_kepler(cat[legs[k - 1].target].elements, legs[k - 1].epoch, const)
        r_dep, t_dep, v_in, v_body = s_dep.r, legs[k - 1].epoch, arr[k - 1], s_dep.v
    v_out = dep[end + 1] if end + 1 < len(legs) else None
    return DsmLegProblem(r_dep, s_arr.r, t_dep, legs[end].epoch, v_in, v_body, s_arr.v, v_out, k == 0)


def _subarcs_ok(problem: DsmLegProblem, x: float, r: np.ndarray, const: Constants) -> bool:
    T = (problem.t_arr - problem.t_dep) * const.day
    r_min = const.r_min * const.au
    try:
        v1a, _ = lambert(problem.r_dep, r, x * T, mu=const.mu_sun)
        v1b, _ = lambert(r, problem.r_arr, (1 - x) * T, mu=const.mu_sun)
    except LambertError:
        return False
    return (conic_min_radius(problem.r_dep, v1a, x * T, const) >= r_min
            and conic_min_radius(r, v1b, (1 - x) * T, const) >= r_min)


def _try(chain, specs, cat, earth, const):
    try:
        new = rebuild_chain(cat, chain.launch_epoch, specs, earth, const)
    except LambertError:
        return None
    if np.linalg.norm(new.launch_impulse) > const.v_launch_max + 1e-12:
        return None
    return new if new.dv_total(const.v_launch_max) < chain.dv_total(const.v_launch_max) - 1e-9 else None


def _drop_unassigned(chain, used, cat, earth, const):
    """Replace flybys of interior unassigned asteroids by a DSM at their place, when cheaper."""
    k = 0
    while k < len(chain.legs) - 1:
        leg = chain.legs[k]
        if leg.target in used or leg.dsm is not None or chain.legs[k + 1].dsm is not None:
            k += 1
            continue
        prob = leg_problem(chain, k, cat, earth, const, end=k + 1)
        s = propagate_kepler(cat[leg.target].elements, leg.epoch, const)
        x0 = (leg.epoch - prob.t_dep) / (prob.t_arr - prob.t_dep)
        res = optimize_dsm_leg(prob, (x0, s.r), const)
        t_dsm = prob.t_dep + res.x * (prob.t_arr - prob.t_dep)
        if _subarcs_ok(prob, res.x, res.r, const):
            specs = specs_of(chain)
            specs[k + 1] = LegSpec(specs[k + 1].target, specs[k + 1].epoch, t_dsm, res.r)
            del specs[k]
            new = _try(chain, specs, cat, earth, const)
            if new is not None:
                log.info("dropped asteroid %d in favour of a DSM (%.4f -> %.4f km/s)", leg.target,
                         chain.dv_total(), new.dv_total())
                chain = new
                continue
        k += 1
    return chain


def apply_dsm_pass(chains: Sequence[MothershipChain], assignment: Optional[Assignment], cat: Catalog,
                   earth=EARTH, const: Constants = CONST) -> list:
    """Offer every leg one DSM; interior unassigned asteroids may be dropped for a DSM at their place.

    Each accepted change strictly lowers the chain's total delta-v and keeps
    every sub-arc above the perihelion limit; encounter epochs are unchanged.
    """
    used = set(assignment.assigned()) if assignment is not None else None
    out = []
    for chain in chains:
        if used is not None:
            chain = _drop_unassigned(chain, used, cat, earth, const)
        for k in range(len(chain.legs)):
            if chain.legs[k].dsm is not None:
                continue
            prob = leg_problem(chain, k, cat, earth, const)
            res = optimize_dsm_leg(prob, None, const)
            if not res.improves or not _subarcs_ok(prob, res.x, res.r, const):
                continue
            specs = specs_of(chain)
            specs[k] = LegSpec(specs[k].target, specs[k].epoch, prob.t_dep + res.x * (prob.t_arr - prob.t_dep), res.r)
            new = _try(chain, specs, cat, earth, const)
            if new is not None:
                chain = new
        out.append(chain)
    return out


# ---------------------------------------------------------------- rendezvous refinement


@dataclass
class RefineLog:
    entries: list = field(default_factory=list)  # (asteroid, station, tf_guess, tf_refined or None, status)


def refine_rendezvous(opp: TransferOpportunity, ring: RingConfig, cat: Catalog,
                      const: Constants = CONST) -> lt.TransferSolution:
    """Re-solve the rendezvous from the tabulated guess; raises ShootingError on failure."""
    guess = lt.TransferSolution(opp.t0, opp.tf, np.asarray(opp.lam0, float), 0.0, ring.slow_mee(const))
    return lt.solve_time_optimal_rendezvous(cat[opp.asteroid].elements, opp.t0, ring, opp.station, guess, const)


def _refined_opp(opp, sol, cat, const):
    from .astrokernel import asteroid_mass

    m = asteroid_mass(cat[opp.asteroid].m0, (sol.tf - sol.t0) * const.day, const)
    return TransferOpportunity(opp.asteroid, opp.station, sol.t0, sol.tf, m, np.asarray(sol.lam0, float))


def refine_assignment(assignment: Assignment, table: RendezvousTable, ring: RingConfig, cat: Catalog,
                      x_dt: float, const: Constants = CONST) -> tuple[Assignment, RefineLog]:
    """Refine every assigned transfer; on failure take the next later opportunity of the same cell
    that keeps the station-gap rule, else drop the asteroid."""
    rlog = RefineLog()
    stations = {s: tuple(v) for s, v in assignment.stations.items()}
    for s in assignment.order:
        for opp in list(stations.get(s, ())):
            cands = [opp] + [o for o in table.cell(opp.asteroid, s) if o.t0 > opp.t0]
            chosen = None
            for c in cands:
                try:
                    sol = refine_rendezvous(c, ring, cat, const)
                except (lt.ShootingError, lt.IntegrationError, ValueError):
                    rlog.entries.append((c.asteroid, s, c.tf, None, "failed"))
                    continue
                new_opp = _refined_opp(c, sol, cat, const)
                trial = dict(stations)
                trial[s] = tuple(sorted([o for o in stations[s] if o.asteroid != opp.asteroid] + [new_opp],
                                        key=lambda o: (o.tf, o.asteroid)))
                if new_opp.tf <= const.t_end and feasible(trial, assignment.order, x_dt):
                    chosen = trial
                    rlog.entries.append((c.asteroid, s, c.tf, sol.tf, "ok" if c is opp else "replaced"))
                    break
                rlog.entries.append((c.asteroid, s, c.tf, sol.tf, "infeasible"))
            if chosen is None:
                stations[s] = tuple(o for o in stations[s] if o.asteroid != opp.asteroid)
                rlog.entries.append((opp.asteroid, s, opp.tf, None, "dropped"))
            else:
                stations = chosen
    return Assignment(stations, assignment.order), rlog
