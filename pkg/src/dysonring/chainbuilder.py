"""
Mothership chains: greedy flyby splits, beam search over Lambert legs,
ten-ship campaigns and the outer GA over (dt_e2a, dt_a2a, a_D).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .astrokernel import (
    CONST,
    Constants,
    LambertError,
    conic_min_radius,
    edelbaum_tof_days,
    lambert,
    lambert_batch,
    plane_change_angle,
    propagate_kepler,
)
from .catalog import EARTH, Catalog, earth_state
from .searchkit import GAParams, SearchSpace, ga_minimize

__all__ = [
    "gtoc_objective",
    "TranscriptionParams",
    "Pruning",
    "ChainNode",
    "Dsm",
    "ChainLeg",
    "MothershipChain",
    "NoFeasibleChain",
    "flyby_split_greedy",
    "estimated_masses",
    "score_ji",
    "score_chain_ji",
    "campaign_objective",
    "expand_level",
    "beam_search",
    "build_campaign",
    "node_to_chain",
    "assemble_chain",
    "transcribe",
]

log = logging.getLogger(__name__)


class NoFeasibleChain(RuntimeError):
    pass


@dataclass(frozen=True)
class TranscriptionParams:
    dt_e2a: float  # days
    dt_a2a: float  # days
    a_D: float  # AU

    def __post_init__(self):
        if not (self.dt_e2a > 0 and self.dt_a2a > 0):
            raise ValueError("transfer times must be positive")
        if self.a_D < CONST.a_d_min:
            raise ValueError(f"a_D = {self.a_D} AU is below the {CONST.a_d_min} AU minimum")


@dataclass(frozen=True)
class Pruning:
    dv_a2a_max: float = 1.5  # km/s
    dv_total_max: float = 30.0  # km/s
    v_launch_max: float = 6.0  # km/s
    v_flyby_max: float = 2.0  # km/s
    check_perihelion: bool = True


# ---------------------------------------------------------------- flyby splits


def flyby_split_greedy(v_minus, v_A, v_plus, v_max: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Smallest pre-flyby impulse that brings the relative speed to ``v_max``; the rest goes after."""
    v_minus = np.asarray(v_minus, dtype=float)
    v_plus = np.asarray(v_plus, dtype=float)
    rel = np.asarray(v_A, dtype=float) - v_minus
    d = np.linalg.norm(rel)
    x = max(0.0, 1.0 - v_max / d) if d > 0 else 0.0
    dv1 = x * rel
    dv2 = v_plus - (v_minus + dv1)
    return dv1, dv2


def _greedy_dv1_batch(v_minus: np.ndarray, v_A: np.ndarray, v_max: float) -> np.ndarray:
    rel = v_A - v_minus
    d = np.linalg.norm(rel, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(d > v_max, 1.0 - v_max / d, 0.0)
    return x * rel


# ---------------------------------------------------------------- scoring


def estimated_masses(cat: Catalog, a_D: float, i_D: float = 0.0, raan_D: float = 0.0,
                     const: Constants = CONST) -> tuple[np.ndarray, np.ndarray]:
    """Edelbaum-based arrival masses and transfer times (days), indexed like ``cat.records``.

    Asteroid orbits are treated as circular at their semi-major axis.  A
    transfer that would exhaust the asteroid yields mass 0.
    """
    c = cat.element_arrays()
    di = plane_change_angle(c["i"], c["raan"], i_D, raan_D)
    tof = edelbaum_tof_days(c["a"], a_D, di, const)
    frac = 1.0 - const.alpha * tof * const.day
    depleted = frac <= 1e-12
    if depleted.any():
        log.info("%d asteroids would be exhausted before reaching the ring", int(depleted.sum()))
    return np.where(depleted, 0.0, c["m0"] * frac), tof


def score_ji(mass: float, dv: float, a_D: float) -> float:
    return 1e-10 * mass / (a_D**2 * (1.0 + dv / 50.0) ** 2)


def campaign_objective(masses: Sequence[float], dvs: Sequence[float], a_D: float) -> float:
    """Total estimated delivered mass over the chains, scaled as in the per-ship score."""
    if len(dvs) == 0:
        return 0.0
    return 1e-10 * float(np.sum(masses)) / (a_D**2 * float(np.sum((1.0 + np.asarray(dvs) / 50.0) ** 2)))


def gtoc_objective(m_min: float, dvs: Sequence[float], a_D: float, B: float = 1.0) -> float:
    """B 1e-10 m_min / (a_D^2 sum_i (1 + dv_i/50)^2); zero without ships or with an empty station."""
    if len(dvs) == 0 or not m_min > 0:
        return 0.0
    return B * 1e-10 * m_min / (a_D**2 * float(np.sum((1.0 + np.asarray(dvs, dtype=float) / 50.0) ** 2)))


# ---------------------------------------------------------------- chains


@dataclass(frozen=True)
class Dsm:
    epoch: float  # MJD
    r: np.ndarray  # km
    dv: np.ndarray  # km/s


@dataclass(frozen=True)
class ChainLeg:
    target: int
    epoch: float
    dv1: np.ndarray  # impulse just before the flyby
    dv2: np.ndarray  # impulse just after the flyby
    dsm: Optional[Dsm] = None  # deep-space manoeuvre on the arc arriving here


@dataclass(frozen=True)
class MothershipChain:
    launch_epoch: float
    launch_impulse: np.ndarray
    legs: tuple[ChainLeg, ...] = ()

    @property
    def ids(self) -> list[int]:
        return [leg.target for leg in self.legs]

    @property
    def epochs(self) -> list[float]:
        return [leg.epoch for leg in self.legs]

    def dv_total(self, v_launch_max: float = CONST.v_launch_max) -> float:
        """Deterministic cost: every flyby and DSM impulse plus any launch excess over the free amount."""
        dv = sum(np.linalg.norm(leg.dv1) + np.linalg.norm(leg.dv2) for leg in self.legs)
        dv += sum(np.linalg.norm(leg.dsm.dv) for leg in self.legs if leg.dsm is not None)
        return float(dv + max(0.0, np.linalg.norm(self.launch_impulse) - v_launch_max))

    def leg_costs(self) -> list[float]:
        """Cost of each leg: dv2 at its departure, its DSM, and dv1 at its arrival."""
        out = []
        prev_dv2 = 0.0
        for leg in self.legs:
            c = prev_dv2 + np.linalg.norm(leg.dv1)
            if leg.dsm is not None:
                c += np.linalg.norm(leg.dsm.dv)
            out.append(float(c))
            prev_dv2 = np.linalg.norm(leg.dv2)
        return out


@dataclass(frozen=True)
class ChainNode:
    visited: tuple[int, ...]
    epochs: tuple[float, ...]
    dv_total: float
    v_out: np.ndarray
    score: float
    mass: float = 0.0
    launch_epoch: float = CONST.t_start
    launch_impulse: np.ndarray = field(default_factory=lambda: np.zeros(3))
    arcs: tuple = ()  # (v_depart, v_arrive) Lambert velocities per leg
    leg_dv: tuple[float, ...] = ()

    @property
    def rank_key(self):
        last = self.visited[-1] if self.visited else -1
        return (-self.score, self.dv_total, last)


def _splits_from_arcs(arcs, vs_ast, splitter, v_max):
    """dv1/dv2 per encounter; the last encounter continues on its incoming arc."""
    n = len(arcs)
    dv1s, dv2s = [], []
    for k in range(n):
        v_minus = arcs[k][1]
        if k + 1 < n:
            dv1, dv2 = splitter(v_minus, vs_ast[k], arcs[k + 1][0], v_max)
        else:
            dv1, _ = flyby_split_greedy(v_minus, vs_ast[k], v_minus, v_max)
            dv2 = np.zeros(3)
        dv1s.append(dv1)
        dv2s.append(dv2)
    return dv1s, dv2s


def node_to_chain(node: ChainNode, cat: Catalog, const: Constants = CONST) -> MothershipChain:
    """Greedy-split chain from a beam-search node."""
    vs = [propagate_kepler(cat[a].elements, t, const).v for a, t in zip(node.visited, node.epochs)]
    dv1s, dv2s = _splits_from_arcs(node.arcs, vs, flyby_split_greedy, const.v_flyby_max)
    legs = tuple(ChainLeg(a, t, d1, d2) for a, t, d1, d2 in zip(node.visited, node.epochs, dv1s, dv2s))
    return MothershipChain(node.launch_epoch, np.asarray(node.launch_impulse), legs)


def assemble_chain(cat: Catalog, launch_epoch: float, targets: Sequence[int], epochs: Sequence[float],
                   splitter: Optional[Callable] = None, earth=EARTH, const: Constants = CONST) -> MothershipChain:
    """Rebuild a DSM-free chain from its sequence: Lambert legs plus flyby splits.

    ``splitter(v_minus, v_A, v_plus, v_max)`` sets interior encounters
    (greedy by default); the last encounter always uses the greedy dv1.
    Raises LambertError if a leg has no solution.
    """
    splitter = splitter or flyby_split_greedy
    if len(targets) != len(epochs):
        raise ValueError("targets and epochs differ in length")
    if any(b <= a for a, b in zip([launch_epoch, *epochs], epochs)):
        raise ValueError("encounter epochs must be strictly increasing after launch")
    r0 = earth_state(launch_epoch, earth, const)
    pos = [r0.r]
    vs_ast = []
    for a, t in zip(targets, epochs):
        s = propagate_kepler(cat[a].elements, t, const)
        pos.append(s.r)
        vs_ast.append(s.v)
    times = [launch_epoch, *epochs]
    arcs = []
    for k in range(len(targets)):
        v1, v2 = lambert(pos[k], pos[k + 1], (times[k + 1] - times[k]) * const.day, mu=const.mu_sun)
        arcs.append((v1, v2))
    launch = arcs[0][0] - r0.v if arcs else np.zeros(3)
    dv1s, dv2s = _splits_from_arcs(arcs, vs_ast, splitter, const.v_flyby_max)
    legs = tuple(ChainLeg(a, float(t), d1, d2) for a, t, d1, d2 in zip(targets, epochs, dv1s, dv2s))
    return MothershipChain(float(launch_epoch), launch, legs)


def score_chain_ji(chain: MothershipChain | ChainNode, cat: Catalog, a_D: float, i_D: float = 0.0,
                   raan_D: float = 0.0, const: Constants = CONST) -> float:
    """Per-ship score from Edelbaum mass estimates of the visited asteroids."""
    if isinstance(chain, ChainNode):
        ids, dv = chain.visited, chain.dv_total
    else:
        ids, dv = chain.ids, chain.dv_total(const.v_launch_max)
    if not ids:
        return 0.0
    masses, _ = estimated_masses(cat.subset(ids), a_D, i_D, raan_D, const)
    return score_ji(float(masses.sum()), dv, a_D)


# ---------------------------------------------------------------- beam search


class _Context:
    """Per-search precomputation: estimated masses and latest usable encounter epochs."""

    def __init__(self, cat: Catalog, a_D: float, const: Constants):
        self.cat = cat
        self.const = const
        self.a_D = a_D
        self.ids = cat.ids
        self.mass, tof = estimated_masses(cat, a_D, 0.0, 0.0, const)
        self.latest = const.t_end - const.atd_delay - tof
        self.elements = cat.element_arrays()
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def states(self, t: float):
        st = self._cache.get(t)
        if st is None:
            if len(self._cache) > 4096:
                self._cache.clear()
            st = self.cat.states(t, self.const)
            self._cache[t] = st
        return st


def _children(node: ChainNode, ctx: _Context, dt_options: Iterable[float], pruning: Pruning,
              allowed: np.ndarray) -> list[ChainNode]:
    const = ctx.const
    last_idx = ctx.cat._index[node.visited[-1]]
    t0 = node.epochs[-1]
    r0 = ctx.states(t0)[0][last_idx]
    visited = set(node.visited)
    out = []
    for dt in dt_options:
        t1 = t0 + dt
        cand = allowed & (ctx.latest >= t1)
        cand &= ~np.isin(ctx.ids, list(visited))
        idx = np.nonzero(cand)[0]
        if idx.size == 0:
            continue
        r1, va = ctx.states(t1)
        v1s, v2s, ok = lambert_batch(r0, r1[idx], dt * const.day, const.mu_sun)
        dv_dep = np.linalg.norm(v1s - node.v_out, axis=1)
        dv1 = _greedy_dv1_batch(v2s, va[idx], pruning.v_flyby_max)
        leg = dv_dep + np.linalg.norm(dv1, axis=1)
        total = node.dv_total + leg
        keep = ok & (leg <= pruning.dv_a2a_max) & (total <= pruning.dv_total_max)
        for j in np.nonzero(keep)[0]:
            k = idx[j]
            mass = node.mass + ctx.mass[k]
            out.append(ChainNode(
                visited=node.visited + (int(ctx.ids[k]),),
                epochs=node.epochs + (t1,),
                dv_total=float(total[j]),
                v_out=v2s[j] + dv1[j],
                score=score_ji(mass, float(total[j]), ctx.a_D),
                mass=mass,
                launch_epoch=node.launch_epoch,
                launch_impulse=node.launch_impulse,
                arcs=node.arcs + ((v1s[j], v2s[j]),),
                leg_dv=node.leg_dv + (float(leg[j]),),
            ))
    return out


def _root_children(ctx: _Context, launch_epoch: float, dt_e2a: float, pruning: Pruning, allowed, earth):
    const = ctx.const
    t1 = launch_epoch + dt_e2a
    e = earth_state(launch_epoch, earth, const)
    idx = np.nonzero(allowed & (ctx.latest >= t1))[0]
    if idx.size == 0:
        return []
    r1, va = ctx.states(t1)
    v1s, v2s, ok = lambert_batch(e.r, r1[idx], dt_e2a * const.day, const.mu_sun)
    launch = v1s - e.v
    dv1 = _greedy_dv1_batch(v2s, va[idx], pruning.v_flyby_max)
    cost = np.linalg.norm(dv1, axis=1)
    keep = ok & (np.linalg.norm(launch, axis=1) <= pruning.v_launch_max) & (cost <= pruning.dv_total_max)
    out = []
    for j in np.nonzero(keep)[0]:
        k = idx[j]
        out.append(ChainNode(
            visited=(int(ctx.ids[k]),),
            epochs=(t1,),
            dv_total=float(cost[j]),
            v_out=v2s[j] + dv1[j],
            score=score_ji(ctx.mass[k], float(cost[j]), ctx.a_D),
            mass=float(ctx.mass[k]),
            launch_epoch=launch_epoch,
            launch_impulse=launch[j],
            arcs=((v1s[j], v2s[j]),),
            leg_dv=(float(cost[j]),),
        ))
    return out


def _perihelion_ok(node: ChainNode, ctx: _Context, earth) -> bool:
    const = ctx.const
    t1 = node.epochs[-1]
    if len(node.visited) == 1:
        t0 = node.launch_epoch
        r0 = earth_state(t0, earth, const).r
    else:
        t0 = node.epochs[-2]
        r0 = ctx.states(t0)[0][ctx.cat._index[node.visited[-2]]]
    rmin = conic_min_radius(r0, node.arcs[-1][0], (t1 - t0) * const.day, const)
    return rmin >= const.r_min * const.au


def _truncate(children: list[ChainNode], bw: Optional[int], ctx, pruning, earth) -> list[ChainNode]:
    children.sort(key=lambda n: n.rank_key)
    kept = []
    for c in children:
        if bw is not None and len(kept) >= bw:
            break
        if pruning.check_perihelion and not _perihelion_ok(c, ctx, earth):
            continue
        kept.append(c)
    return kept


def expand_level(nodes: Sequence[ChainNode], cat: Catalog, params: TranscriptionParams,
                 pruning: Pruning = Pruning(), dt_options: Optional[Sequence[float]] = None,
                 const: Constants = CONST, *, _ctx: Optional[_Context] = None,
                 allowed: Optional[np.ndarray] = None) -> list[ChainNode]:
    """All feasible one-asteroid extensions of ``nodes`` (no truncation, no ranking)."""
    ctx = _ctx or _Context(cat, params.a_D, const)
    dt_options = tuple(dt_options) if dt_options else (params.dt_a2a,)
    allowed = np.ones(len(cat), bool) if allowed is None else allowed
    out = []
    for node in nodes:
        out.extend(_children(node, ctx, dt_options, pruning, allowed))
    return out


def beam_search(cat: Catalog, launch_epoch: float, params: TranscriptionParams, bw: Optional[int] = 30,
                pruning: Pruning = Pruning(), dt_options: Optional[Sequence[float]] = None,
                const: Constants = CONST, earth=EARTH, exclude: Iterable[int] = ()) -> ChainNode:
    """Best chain (by per-ship score, any depth) from an Earth launch at ``launch_epoch``.

    ``bw=None`` disables truncation (exhaustive search).
    """
    if bw is not None and bw < 1:
        raise ValueError("beam width must be at least 1")
    if len(cat) == 0:
        raise NoFeasibleChain("empty catalog")
    ctx = _Context(cat, params.a_D, const)
    allowed = ~np.isin(ctx.ids, list(exclude))
    level = _truncate(_root_children(ctx, launch_epoch, params.dt_e2a, pruning, allowed, earth), bw, ctx,
                      pruning, earth)
    if not level:
        raise NoFeasibleChain(f"no asteroid reachable from Earth launched at MJD {launch_epoch}")
    best = min(level, key=lambda n: n.rank_key)
    while level:
        children = expand_level(level, cat, params, pruning, dt_options, const, _ctx=ctx, allowed=allowed)
        level = _truncate(children, bw, ctx, pruning, earth)
        if level and level[0].rank_key < best.rank_key:
            best = level[0]
    return best


@dataclass
class Campaign:
    nodes: list[ChainNode]
    launch_epochs: list[float]
    J: float


def build_campaign(cat: Catalog, params: TranscriptionParams, bw: Optional[int] = 30, n_ships: int = 10,
                   spacing: float = 36.525, pruning: Pruning = Pruning(),
                   dt_options: Optional[Sequence[float]] = None, const: Constants = CONST,
                   earth=EARTH) -> Campaign:
    """Ships launched on a fixed ladder; each ship's asteroids are removed for the next."""
    used: set[int] = set()
    nodes, launches = [], []
    for s in range(n_ships):
        t_launch = const.t_start + s * spacing
        try:
            node = beam_search(cat, t_launch, params, bw, pruning, dt_options, const, earth, exclude=used)
        except NoFeasibleChain as exc:
            log.warning("ship %d skipped: %s", s + 1, exc)
            continue
        used.update(node.visited)
        nodes.append(node)
        launches.append(t_launch)
    J = campaign_objective([n.mass for n in nodes], [n.dv_total for n in nodes], params.a_D)
    return Campaign(nodes, launches, J)


@dataclass(frozen=True)
class TranscriptionBounds:
    dt_e2a: tuple[float, float] = (200.0, 400.0)
    dt_a2a: tuple[float, float] = (100.0, 250.0)
    a_D: tuple[float, float] = (0.8, 1.3)


def _campaign_value(x, cat, bw, n_ships, spacing, pruning, const):
    try:
        p = TranscriptionParams(float(x[0]), float(x[1]), float(x[2]))
    except ValueError:
        return np.inf
    return -build_campaign(cat, p, bw, n_ships, spacing, pruning, None, const).J


class _CampaignObjective:
    """Picklable objective for process-pool evaluation."""

    def __init__(self, cat, bw, n_ships, spacing, pruning, const):
        self.args = (cat, bw, n_ships, spacing, pruning, const)

    def __call__(self, x):
        return _campaign_value(x, *self.args)


def transcribe(cat: Catalog, ga_params: GAParams = GAParams(pop=20, generations=10),
               bounds: TranscriptionBounds = TranscriptionBounds(), bw: int = 30, n_ships: int = 10,
               spacing: float = 36.525, pruning: Pruning = Pruning(), const: Constants = CONST,
               evaluator=None) -> tuple[TranscriptionParams, float]:
    """Outer GA over (dt_e2a, dt_a2a, a_D) maximizing the campaign objective; returns (params, J)."""
    lo = [bounds.dt_e2a[0], bounds.dt_a2a[0], max(bounds.a_D[0], const.a_d_min)]
    hi = [bounds.dt_e2a[1], bounds.dt_a2a[1], bounds.a_D[1]]
    space = SearchSpace(lo, hi)
    obj = _CampaignObjective(cat, bw, n_ships, spacing, pruning, const)
    rep = ga_minimize(obj, space, ga_params, evaluator=evaluator)
    x = rep.best_point
    return TranscriptionParams(float(x[0]), float(x[1]), float(x[2])), -rep.best_value
