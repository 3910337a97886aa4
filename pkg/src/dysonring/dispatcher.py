"""
Station allocation: which asteroid goes to which ring station, and when.

A decision vector (station priorities, asteroids per station, minimum gap
between stations) is decoded into a build order and a greedy earliest-arrival
allocation.  The allocation is then mass-balanced toward the lightest
station, chains are trimmed of unassigned tail asteroids, and the objective is
evaluated.  GA and PSO from searchkit drive the decision vector.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .astrokernel import CONST, Constants
from .catalog import Catalog
from .chainbuilder import MothershipChain, flyby_split_greedy, gtoc_objective
from .chainrefine import arrival_velocities
from .rdvtable import RendezvousTable
from .searchkit import GAParams, PSOParams, SearchSpace, ga_minimize, pso_minimize

__all__ = [
    "DispatchDecision",
    "DispatchBounds",
    "Assignment",
    "DispatchReport",
    "decode_station_order",
    "first_allocation",
    "rebalance",
    "trim_chains",
    "evaluate_decision",
    "dispatch",
    "decision_space",
    "scaled_bounds",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DispatchBounds:
    x_S: tuple[float, float] = (0.0, 1.0)
    x_NA: tuple[int, int] = (12, 36)
    x_dt: tuple[float, float] = (90.0, 120.0)


def scaled_bounds(n_asteroids: int, n_stations: int = 12, base: DispatchBounds = DispatchBounds()) -> DispatchBounds:
    """x_NA range sized to the table: half to one and a half times the even share per station."""
    share = n_asteroids / n_stations
    lo = max(1, int(share // 2))
    hi = max(lo + 1, math.ceil(1.5 * share))
    return replace(base, x_NA=(lo, hi))


@dataclass(frozen=True)
class DispatchDecision:
    x_S: np.ndarray  # station priorities in [0, 1]
    x_NA: np.ndarray  # asteroids per station, by build position
    x_dt: float  # minimum gap between consecutive stations (days)

    def __post_init__(self):
        x_S = np.asarray(self.x_S, dtype=float)
        x_NA = np.asarray(self.x_NA).astype(int)
        if x_S.shape != x_NA.shape or x_S.ndim != 1:
            raise ValueError("x_S and x_NA must be 1-D and of equal length")
        if np.any(x_S < 0) or np.any(x_S > 1):
            raise ValueError("x_S entries must lie in [0, 1]")
        if np.any(x_NA < 0):
            raise ValueError("x_NA entries must be non-negative")
        if not self.x_dt >= CONST.station_gap_min:
            raise ValueError(f"x_dt must be at least {CONST.station_gap_min} days")
        object.__setattr__(self, "x_S", x_S)
        object.__setattr__(self, "x_NA", x_NA)
        object.__setattr__(self, "x_dt", float(self.x_dt))

    @property
    def n_stations(self) -> int:
        return self.x_S.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x_S, self.x_NA.astype(float), [self.x_dt]])

    @classmethod
    def from_vector(cls, v, n_stations: int) -> "DispatchDecision":
        v = np.asarray(v, dtype=float)
        return cls(v[:n_stations], np.rint(v[n_stations:2 * n_stations]).astype(int), float(v[-1]))


@dataclass(frozen=True)
class Assignment:
    stations: dict  # station -> tuple[TransferOpportunity, ...] sorted by tf
    order: tuple  # build order of stations (1-based ids)

    def masses(self) -> dict:
        return {s: float(sum(o.m_f for o in self.stations.get(s, ()))) for s in self.order}

    @property
    def m_min(self) -> float:
        m = self.masses()
        return min(m.values()) if m else 0.0

    def assigned(self) -> dict:
        """asteroid -> (station, opportunity)."""
        return {o.asteroid: (s, o) for s, ops in self.stations.items() for o in ops}

    def count(self) -> int:
        return sum(len(v) for v in self.stations.values())


@dataclass
class DispatchReport:
    decision: DispatchDecision
    assignment: Assignment
    m_min: float
    masses: dict
    chains: list
    J: float
    history: list = field(default_factory=list)  # (iteration, m_min, mean mass) during rebalance
    first: Optional[Assignment] = None


def decode_station_order(x_S) -> tuple:
    """Stations (1-based) sorted by priority; ties keep the lower station index first."""
    return tuple(int(i) + 1 for i in np.argsort(np.asarray(x_S, dtype=float), kind="stable"))


def _earliest(cell, threshold, window_end):
    for o in cell:
        if o.tf >= threshold and o.tf <= window_end:
            return o
    return None


def _sorted_cell(table, a, s):
    return sorted(table.cell(a, s), key=lambda o: (o.tf, -o.m_f, o.t0))


def first_allocation(table: RendezvousTable, decision: DispatchDecision, const: Constants = CONST) -> Assignment:
    """Greedy earliest-arrival allocation, station by station in build order.

    The k-th station of the build order takes up to x_NA[k] of the remaining
    asteroids, those with the earliest eligible arrivals; arrivals must come
    at least x_dt after the latest arrival of the previous non-empty station.
    """
    order = decode_station_order(decision.x_S)
    remaining = set(table.asteroids())
    stations = {}
    prev_latest = None
    for pos, s in enumerate(order):
        threshold = -np.inf if prev_latest is None else prev_latest + decision.x_dt
        cands = []
        for a in remaining:
            o = _earliest(_sorted_cell(table, a, s), threshold, const.t_end)
            if o is not None:
                cands.append(o)
        cands.sort(key=lambda o: (o.tf, -o.m_f, o.asteroid))
        take = tuple(sorted(cands[: int(decision.x_NA[pos])], key=lambda o: (o.tf, o.asteroid)))
        stations[s] = take
        remaining -= {o.asteroid for o in take}
        if take:
            prev_latest = max(o.tf for o in take)
    return Assignment(stations, order)


def feasible(stations: dict, order: Sequence[int], x_dt: float) -> bool:
    """Gap rule between consecutive non-empty stations of the build order; single use of asteroids."""
    prev_max = None
    seen = set()
    for s in order:
        ops = stations.get(s, ())
        for o in ops:
            if o.asteroid in seen:
                return False
            seen.add(o.asteroid)
        if not ops:
            continue
        lo = min(o.tf for o in ops)
        if prev_max is not None and lo < prev_max + x_dt:
            return False
        prev_max = max(o.tf for o in ops)
    return True


def _move(stations, a, current, o):
    """Copy of ``stations`` with asteroid ``a`` placed by opportunity ``o`` (removed from ``current``)."""
    new = dict(stations)
    if current is not None:
        s_old, _ = current
        new[s_old] = tuple(x for x in new[s_old] if x.asteroid != a)
    if o is not None:
        new[o.station] = tuple(sorted(new.get(o.station, ()) + (o,), key=lambda x: (x.tf, x.asteroid)))
    return new


def _min_station(masses, order):
    return min(order, key=lambda s: (masses[s], order.index(s)))


def rebalance(assignment: Assignment, table: RendezvousTable, decision: DispatchDecision,
              max_iter: int = 100_000, history: Optional[list] = None) -> Assignment:
    """Move asteroids toward the lightest station.

    Each iteration pools the unassigned asteroids and those whose removal
    keeps their station at or above the mean station mass, and gives the
    minimum-mass station the pooled asteroid with the earliest arrival that
    keeps the gap rule.  When that stalls, a final sweep applies any single
    move (one asteroid to any of its opportunities) that raises the minimum
    station mass, until none does.
    """
    order = assignment.order
    stations = {s: tuple(assignment.stations.get(s, ())) for s in order}
    asteroids = table.asteroids()
    x_dt = decision.x_dt
    if history is None:
        history = []
    it = 0
    seen = set()
    while it < max_iter:
        m = {s: float(sum(o.m_f for o in stations[s])) for s in order}
        history.append((it, min(m.values()), float(np.mean(list(m.values())))))
        key = tuple((s, tuple((o.asteroid, o.t0) for o in stations[s])) for s in order)
        if key in seen:
            break
        seen.add(key)
        threshold = float(np.mean(list(m.values())))
        s_min = _min_station(m, order)
        placed = {o.asteroid: (s, o) for s in order for o in stations[s]}
        best = None
        for a in asteroids:
            cur = placed.get(a)
            if cur is not None:
                if cur[0] == s_min or m[cur[0]] - cur[1].m_f < threshold:
                    continue
            for o in _sorted_cell(table, a, s_min):
                if o.tf > CONST.t_end:
                    continue
                new = _move(stations, a, cur, o)
                if feasible(new, order, x_dt):
                    k = (o.tf, -o.m_f, a)
                    if best is None or k < best[0]:
                        best = (k, new)
                    break
        if best is None:
            break
        stations = best[1]
        it += 1
    stations = _one_move_sweep(stations, order, table, x_dt, history, it)
    return Assignment(stations, order)


def _one_move_sweep(stations, order, table, x_dt, history, it):
    asteroids = table.asteroids()
    while True:
        m = {s: float(sum(o.m_f for o in stations[s])) for s in order}
        cur_min = min(m.values())
        lightest = [t for t in order if m[t] == cur_min]
        if len(lightest) > 1:
            # no single move can lift two stations at once
            return stations
        placed = {o.asteroid: (s, o) for s in order for o in stations[s]}
        best = None
        for a in asteroids:
            cur = placed.get(a)
            # any other target leaves the lightest station untouched or lighter
            for s in lightest:
                for o in _sorted_cell(table, a, s):
                    if cur is not None and cur[0] == s and cur[1].t0 == o.t0:
                        continue
                    if o.tf > CONST.t_end:
                        continue
                    new = _move(stations, a, cur, o)
                    # only the source and target stations change mass
                    touched = {s} if cur is None else {s, cur[0]}
                    new_min = min(float(sum(x.m_f for x in new[t])) if t in touched else m[t] for t in order)
                    if new_min <= cur_min or not feasible(new, order, x_dt):
                        continue
                    k = (-new_min, o.tf, -o.m_f, a)
                    if best is None or k < best[0]:
                        best = (k, new)
        if best is None:
            return stations
        stations = best[1]
        it += 1
        m = {s: float(sum(o.m_f for o in stations[s])) for s in order}
        history.append((it, min(m.values()), float(np.mean(list(m.values())))))


def _last_leg_greedy(chain: MothershipChain, cat: Catalog, const: Constants) -> MothershipChain:
    """Make the last encounter a pure arrival: minimal entry into the flyby ball, nothing after."""
    if not chain.legs:
        return chain
    v_minus, v_A = arrival_velocities(chain, cat, const=const)[-1]
    dv1, _ = flyby_split_greedy(v_minus, v_A, v_minus, const.v_flyby_max)
    last = chain.legs[-1]
    if np.linalg.norm(dv1) + 1e-15 >= np.linalg.norm(last.dv1) + np.linalg.norm(last.dv2):
        return chain
    return replace(chain, legs=chain.legs[:-1] + (replace(last, dv1=dv1, dv2=np.zeros(3)),))


def trim_chains(chains: Sequence[MothershipChain], assignment: Assignment, cat: Catalog,
                const: Constants = CONST) -> list:
    """Drop unassigned asteroids from the end of every chain; chains left empty are dropped."""
    used = set(assignment.assigned())
    out = []
    for ch in chains:
        k = len(ch.legs)
        while k > 0 and ch.legs[k - 1].target not in used:
            k -= 1
        if k == 0:
            continue
        if k == len(ch.legs):
            out.append(ch)
        else:
            out.append(_last_leg_greedy(replace(ch, legs=ch.legs[:k]), cat, const))
    return out


def evaluate_decision(decision: DispatchDecision, table: RendezvousTable, chains: Sequence[MothershipChain],
                      cat: Catalog, a_D: float, const: Constants = CONST, B: float = 1.0) -> DispatchReport:
    first = first_allocation(table, decision, const)
    history = []
    final = rebalance(first, table, decision, history=history)
    trimmed = trim_chains(chains, final, cat, const)
    masses = final.masses()
    m_min = min(masses.values()) if masses else 0.0
    J = gtoc_objective(m_min, [c.dv_total(const.v_launch_max) for c in trimmed], a_D, B)
    return DispatchReport(decision, final, m_min, masses, trimmed, J, history, first)


def decision_space(n_stations: int = 12, bounds: DispatchBounds = DispatchBounds()) -> SearchSpace:
    lo = np.concatenate([np.full(n_stations, bounds.x_S[0]), np.full(n_stations, bounds.x_NA[0]), [bounds.x_dt[0]]])
    hi = np.concatenate([np.full(n_stations, bounds.x_S[1]), np.full(n_stations, bounds.x_NA[1]), [bounds.x_dt[1]]])
    integ = np.concatenate([np.zeros(n_stations, bool), np.ones(n_stations, bool), [False]])
    return SearchSpace(lo, hi, integ)


class _DecisionObjective:
    """Picklable negative objective over decision vectors."""

    def __init__(self, table, chains, cat, a_D, n_stations, const, B):
        self.args = (table, chains, cat, a_D, const, B)
        self.n = n_stations

    def __call__(self, v):
        table, chains, cat, a_D, const, B = self.args
        d = DispatchDecision.from_vector(v, self.n)
        return -evaluate_decision(d, table, chains, cat, a_D, const, B).J


def dispatch(table: RendezvousTable, chains: Sequence[MothershipChain], cat: Catalog, a_D: float,
             optimizer: str = "ga+pso", ga_params: GAParams = GAParams(pop=30, generations=15),
             pso_params: PSOParams = PSOParams(swarm=20, iters=20), n_stations: int = 12,
             bounds: DispatchBounds = DispatchBounds(), const: Constants = CONST, B: float = 1.0,
             initial: Optional[Sequence[DispatchDecision]] = None, evaluator=None) -> DispatchReport:
    """Search the decision space; 'ga', 'pso' or 'ga+pso' (GA screening, then PSO seeded with the GA best)."""
    if optimizer not in ("ga", "pso", "ga+pso"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    space = decision_space(n_stations, bounds)
    obj = _DecisionObjective(table, chains, cat, a_D, n_stations, const, B)
    seeds = None if not initial else np.array([d.to_vector() for d in initial])
    best_x = None
    if optimizer in ("ga", "ga+pso"):
        rep = ga_minimize(obj, space, ga_params, initial_points=seeds, evaluator=evaluator)
        best_x = rep.best_point
        seeds = best_x[None] if seeds is None else np.vstack([best_x[None], seeds])
    if optimizer in ("pso", "ga+pso"):
        rep = pso_minimize(obj, space, pso_params, initial_points=seeds, evaluator=evaluator)
        best_x = rep.best_point
    d = DispatchDecision.from_vector(space.repair(best_x), n_stations)
    return evaluate_decision(d, table, chains, cat, a_D, const, B)
