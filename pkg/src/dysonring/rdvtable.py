"""
Rendezvous table: time-optimal transfers from each chain asteroid to every
ring station, found by phasing.

For one asteroid, free-longitude minimum-time transfers to the ring are
solved at n departure epochs spread over one asteroid period (each row warm
started from the previous one).  The arrival longitude offset
dL = L_A(tf) - L_S(tf) to every station is recorded.  The geometry repeats
every asteroid period, so rows are copied forward period by period with dL
recomputed.  Cubic splines over t0 then give the epochs and costates where
dL crosses a multiple of 2 pi, and each candidate is refined by the
rendezvous shooting problem.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import bisect

from . import lowthrust as lt
from .astrokernel import CONST, Constants, MassDepletedError, asteroid_mass, edelbaum, plane_change_angle
from .catalog import AsteroidRecord, Catalog
from .ring import RingConfig

__all__ = [
    "PhaseRow",
    "TransferOpportunity",
    "RendezvousTable",
    "TableIncomplete",
    "RowStats",
    "primary_collation",
    "continuation",
    "unwrap_nearest",
    "phase_match",
    "asteroid_opportunities",
    "build_table",
    "save_table",
    "load_table",
]

log = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
MIN_ROWS = 8  # surviving primary rows needed to trust the splines
UNWRAP_LIMIT = math.pi / 2  # larger row-to-row steps are treated as ambiguous
REFINE_TF_FRACTION = 0.02  # refined tf must stay within this fraction of the period
JUMP_FACTOR = 4.0  # flight-time steps above this multiple of the median step split the splines
JUMP_MIN_DAYS = 5.0
REFINE_MAX_ITER = 25


class TableIncomplete(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseRow:
    t0: float  # MJD
    tf: float  # MJD
    dL: np.ndarray  # per station, L_A - L_S at tf (rad, continuous branch of L_A)
    lam0: np.ndarray  # canonical costates at t0
    L_f: float  # asteroid true longitude at tf (continuous)
    k: int = 0  # schedule index (0-based); secondary rows keep the primary index
    period: int = 0  # 0 for primary rows, j for rows shifted by j periods
    iterations: int = 0

    def __post_init__(self):
        if not self.tf >= self.t0:
            raise ValueError("phase row ends before it starts")
        if not np.all(np.isfinite(self.dL)):
            raise ValueError("non-finite phase offset")


@dataclass(frozen=True)
class TransferOpportunity:
    asteroid: int
    station: int
    t0: float  # MJD
    tf: float  # MJD
    m_f: float  # kg
    lam0: np.ndarray = field(compare=False)

    def __post_init__(self):
        if not self.m_f > 0:
            raise ValueError("opportunity mass must be positive")
        if not self.tf >= self.t0:
            raise ValueError("opportunity ends before it starts")


@dataclass
class RendezvousTable:
    cells: dict = field(default_factory=dict)  # (asteroid, station) -> list[TransferOpportunity]
    incomplete: set = field(default_factory=set)  # asteroids without a usable table
    failed: list = field(default_factory=list)  # (asteroid, station, t0*) whose refinement failed

    def add(self, opp: TransferOpportunity):
        cell = self.cells.setdefault((opp.asteroid, opp.station), [])
        cell.append(opp)
        cell.sort(key=lambda o: o.t0)

    def cell(self, asteroid: int, station: int) -> list:
        return self.cells.get((asteroid, station), [])

    def asteroids(self) -> list:
        return sorted({a for a, _ in self.cells})

    def opportunities(self) -> list:
        return [o for key in sorted(self.cells) for o in self.cells[key]]

    def __len__(self):
        return sum(len(v) for v in self.cells.values())


@dataclass
class RowStats:
    iterations: list = field(default_factory=list)  # Newton iterations of each solved row
    rung: list = field(default_factory=list)  # recovery rung used per row (0 = first try)
    missing: list = field(default_factory=list)  # schedule indices left unsolved
    escalated: bool = False


# ---------------------------------------------------------------- primary rows


def _cold_start(el, t0, target, ring, const):
    di = plane_change_angle(ring.i_D, ring.raan_D, el.i, el.raan)
    _, tof = edelbaum(el.a, ring.a_D, di)
    warm = lt.solve_energy_optimal(el, t0, target, max(tof / const.day, 1.0), const)
    sol = lt.solve_time_optimal_free_L(el, t0, target, warm, const)
    # a cold row pays for the energy solve too
    return replace(sol, iterations=sol.iterations + warm.iterations)


def _warm(sol, t0):
    return lt.AugmentedState(None, sol.lam0, t0, sol.duration)


_SOLVE_ERRORS = (lt.ShootingError, lt.IntegrationError, np.linalg.LinAlgError, FloatingPointError, ValueError)


def _solve_row(el, t0, target, ring, prev, P, const, cold_first=False):
    """Recovery ladder: warm from k-1, warm from k-2, cold restart, t0 -/+ P/64.  Returns (sol, rung)."""
    attempts = []
    if prev and not cold_first:
        attempts.append((t0, lambda t: lt.solve_time_optimal_free_L(el, t, target, _warm(prev[-1], t), const)))
        if len(prev) >= 2:
            attempts.append((t0, lambda t: lt.solve_time_optimal_free_L(el, t, target, _warm(prev[-2], t), const)))
    attempts.append((t0, lambda t: _cold_start(el, t, target, ring, const)))
    for dt in (-P / 64, P / 64):
        if prev:
            attempts.append((t0 + dt, lambda t: lt.solve_time_optimal_free_L(el, t, target, _warm(prev[-1], t), const)))
        attempts.append((t0 + dt, lambda t: _cold_start(el, t, target, ring, const)))
    for rung, (t, fn) in enumerate(attempts):
        try:
            return fn(t), rung
        except _SOLVE_ERRORS as exc:
            log.debug("row at t0=%.3f rung %d failed: %s", t, rung, exc)
    return None, len(attempts)


def _station_offsets(L_f, tf, ring, const):
    return np.array([L_f - ring.station_longitude(s, tf, const) for s in range(1, ring.n_stations + 1)])


def primary_collation(ast: AsteroidRecord, t_flyby: float, ring: RingConfig, n: int = 16,
                      const: Constants = CONST, stats: Optional[RowStats] = None,
                      cold_every_row: bool = False) -> list:
    """Free-longitude minimum-time transfers at t0 = t_flyby + delay + k P/n, k = 0..n-1.

    Unsolvable rows are left out (their index goes to ``stats.missing``).
    ``cold_every_row`` disables warm starting (used for A/B comparisons).
    """
    if n < 4:
        raise ValueError("need at least 4 rows per period")
    el = ast.elements
    P = el.period(const)
    t_first = t_flyby + const.atd_delay
    target = ring.slow_mee(const)
    stats = stats if stats is not None else RowStats()
    rows, prev = [], []
    for k in range(n):
        t0 = t_first + k * P / n
        sol, rung = _solve_row(el, t0, target, ring, prev, P, const, cold_first=cold_every_row or not prev)
        if sol is None:
            stats.missing.append(k)
            continue
        stats.iterations.append(sol.iterations)
        stats.rung.append(rung)
        prev.append(sol)
        L_f = float(sol.xf[5])
        rows.append(PhaseRow(sol.t0, sol.tf, _station_offsets(L_f, sol.tf, ring, const), np.asarray(sol.lam0),
                             L_f, k, 0, sol.iterations))
    return rows


def continuation(rows: Sequence[PhaseRow], P: float, window_end: float, ring: RingConfig,
                 const: Constants = CONST) -> list:
    """Append copies of ``rows`` shifted by whole periods while tf stays inside the window.

    Flight time and costates are copied; the asteroid arrives at the same
    inertial place, so only the station offsets change.
    """
    out = list(rows)
    j = 1
    while True:
        added = False
        for r in rows:
            tf = r.tf + j * P
            if tf > window_end:
                continue
            t0 = r.t0 + j * P
            L_f = r.L_f + TWO_PI * j
            out.append(PhaseRow(t0, t0 + (r.tf - r.t0), _station_offsets(L_f, tf, ring, const), r.lam0,
                                L_f, r.k, j, r.iterations))
            added = True
        if not added:
            break
        j += 1
    out.sort(key=lambda r: r.t0)
    return out


# ---------------------------------------------------------------- phase matching


def unwrap_nearest(values) -> tuple[np.ndarray, float]:
    """Shift each value by a multiple of 2 pi to the branch nearest its predecessor.

    Returns the unwrapped array and the largest absolute row-to-row step.
    """
    v = np.asarray(values, dtype=float)
    out = v.copy()
    worst = 0.0
    for i in range(1, len(v)):
        d = math.remainder(v[i] - out[i - 1], TWO_PI)
        out[i] = out[i - 1] + d
        worst = max(worst, abs(d))
    return out, worst


def _polish(cs, level, r, lo, hi):
    g = lambda t: float(cs(t)) - level
    for w in (1e-6, 1e-4, 1e-2):
        a, b = max(lo, r - w), min(hi, r + w)
        ga, gb = g(a), g(b)
        if ga == 0:
            return a
        if gb == 0:
            return b
        if ga * gb < 0:
            return bisect(g, a, b, xtol=1e-10, maxiter=200)
    return r  # tangency: keep the cubic root


def smooth_segments(rows: Sequence[PhaseRow]) -> list:
    """Split rows (sorted by t0) where the flight time jumps, i.e. the optimal family switches branch."""
    if len(rows) < 3:
        return [list(rows)]
    d = np.diff([r.tf - r.t0 for r in rows])
    limit = max(JUMP_MIN_DAYS, JUMP_FACTOR * float(np.median(np.abs(d))))
    segs, cur = [], [rows[0]]
    for r, step in zip(rows[1:], d):
        if abs(step) > limit:
            segs.append(cur)
            cur = []
        cur.append(r)
    segs.append(cur)
    return segs


def phase_match(rows: Sequence[PhaseRow], station: int, split: bool = True) -> list:
    """Epochs where the spline of dL(t0) for ``station`` crosses 2 k pi.

    With ``split`` the rows are cut at flight-time jumps and one spline set is
    fitted per smooth segment of at least 4 rows; crossings that fall inside a
    jump (or a segment too short to fit) come from the spline over all rows.
    Returns (t0*, tf*, lam0*) for each root, ordered by t0*.
    """
    if len(rows) < 4:
        raise ValueError("phase matching needs at least 4 rows")
    rows = sorted(rows, key=lambda r: r.t0)
    t = np.array([r.t0 for r in rows])
    if np.any(np.diff(t) <= 0):
        raise ValueError("row epochs must be strictly increasing")
    if not split:
        return _match_segment(rows, station)
    out, covered = [], []
    for seg in smooth_segments(rows):
        if len(seg) >= 4:
            out.extend(_match_segment(seg, station))
            covered.append((seg[0].t0, seg[-1].t0))
    if len(covered) != 1 or covered[0] != (t[0], t[-1]):
        for m in _match_segment(rows, station):
            if not any(a <= m[0] <= b for a, b in covered):
                out.append(m)
    out.sort(key=lambda m: m[0])
    return out


def _match_segment(rows, station):
    t = np.array([r.t0 for r in rows])
    y, _ = unwrap_nearest([r.dL[station - 1] for r in rows])
    cs = CubicSpline(t, y, bc_type="natural")
    cs_tf = CubicSpline(t, [r.tf for r in rows], bc_type="natural")
    cs_lam = CubicSpline(t, np.array([r.lam0 for r in rows]), axis=0, bc_type="natural")
    fine = cs(np.linspace(t[0], t[-1], 20 * len(t)))
    k_lo = math.ceil(min(fine.min(), y.min()) / TWO_PI)
    k_hi = math.floor(max(fine.max(), y.max()) / TWO_PI)
    roots = []
    for kk in range(k_lo, k_hi + 1):
        level = TWO_PI * kk
        for r in cs.solve(level, extrapolate=False):
            if t[0] <= r <= t[-1]:
                roots.append(_polish(cs, level, float(r), t[0], t[-1]))
    roots = sorted(set(roots))
    return [(r, float(cs_tf(r)), np.asarray(cs_lam(r))) for r in roots]


# ---------------------------------------------------------------- per-asteroid table


def _rows_for(ast, t_flyby, ring, n, const, stats):
    rows = primary_collation(ast, t_flyby, ring, n, const, stats)
    if len(rows) < MIN_ROWS * n // 16:
        raise TableIncomplete(f"asteroid {ast.id}: only {len(rows)} of {n} primary rows solved")
    P = ast.elements.period(const)
    full = continuation(rows, P, const.t_end, ring, const)
    full = [r for r in full if r.tf <= const.t_end]
    return full


def asteroid_opportunities(ast: AsteroidRecord, t_flyby: float, ring: RingConfig, n: int = 16,
                           const: Constants = CONST, refine: bool = True,
                           stats: Optional[RowStats] = None) -> tuple[list, list]:
    """Opportunities from one asteroid to every station.

    Returns (opportunities, failures); failures are (station, t0*) whose
    rendezvous refinement did not converge close to the spline guess.
    """
    stats = stats if stats is not None else RowStats()
    P = ast.elements.period(const)
    rows = _rows_for(ast, t_flyby, ring, n, const, stats)
    _, worst = unwrap_nearest([r.dL[0] for r in rows])
    if worst > UNWRAP_LIMIT and n < 32:
        log.info("asteroid %d: phase unwrap ambiguous (step %.2f rad), resampling with n=32", ast.id, worst)
        stats.escalated = True
        rows = _rows_for(ast, t_flyby, ring, 32, const, stats)
    if len(rows) < 4:
        return [], []
    el = ast.elements
    opps, failed = [], []
    t_min = t_flyby + const.atd_delay
    for s in range(1, ring.n_stations + 1):
        for t0, tf, lam in phase_match(rows, s):
            if t0 < t_min - 1e-9 or tf > const.t_end:
                continue
            if refine:
                guess = lt.TransferSolution(t0, max(tf, t0), lam, 0.0, ring.slow_mee(const))
                try:
                    sol = lt.solve_time_optimal_rendezvous(el, t0, ring, s, guess, const, max_iter=REFINE_MAX_ITER)
                except _SOLVE_ERRORS:
                    failed.append((s, t0))
                    continue
                if abs(sol.tf - tf) > REFINE_TF_FRACTION * P or sol.tf > const.t_end:
                    failed.append((s, t0))
                    continue
                tf, lam = sol.tf, sol.lam0
            try:
                m_f = asteroid_mass(ast.m0, (tf - t0) * const.day, const)
            except MassDepletedError:
                continue
            opps.append(TransferOpportunity(ast.id, s, t0, tf, m_f, np.asarray(lam, dtype=float)))
    return opps, failed


def _task(args):
    ast, t_flyby, ring, n, const, refine = args
    try:
        opps, failed = asteroid_opportunities(ast, t_flyby, ring, n, const, refine)
        return ast.id, opps, failed, False
    except TableIncomplete as exc:
        log.warning("%s", exc)
        return ast.id, [], [], True


def _visits(chains) -> list:
    """(asteroid id, flyby epoch) for every chain encounter, first visit wins."""
    seen = {}
    for ch in chains:
        for leg in ch.legs:
            seen.setdefault(leg.target, leg.epoch)
    return sorted(seen.items())


def build_table(chains, ring: RingConfig, cat: Catalog, n: int = 16, const: Constants = CONST,
                jobs: int = 1, refine: bool = True) -> RendezvousTable:
    """Rendezvous table for every asteroid visited by ``chains``."""
    tasks = [(cat[a], t, ring, n, const, refine) for a, t in _visits(chains)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs, mp_context=get_context("spawn")) as ex:
            results = list(ex.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    table = RendezvousTable()
    for aid, opps, failed, incomplete in results:
        if incomplete:
            table.incomplete.add(aid)
        for o in opps:
            table.add(o)
        table.failed.extend((aid, s, t0) for s, t0 in failed)
    _enforce_increasing(table)
    return table


def _enforce_increasing(table):
    for key, cell in table.cells.items():
        kept = []
        for o in cell:
            if kept and o.t0 <= kept[-1].t0:
                continue
            kept.append(o)
        table.cells[key] = kept


# ---------------------------------------------------------------- text format

_HEADER = "# asteroid station t0 tf m_f lam0_1 lam0_2 lam0_3 lam0_4 lam0_5 lam0_6"


def save_table(table: RendezvousTable, path) -> None:
    """One opportunity per line, fields in the header order, floats written with repr."""
    lines = [_HEADER]
    for a in sorted(table.incomplete):
        lines.append(f"# incomplete {a}")
    for o in table.opportunities():
        vals = [repr(float(o.t0)), repr(float(o.tf)), repr(float(o.m_f))] + [repr(float(v)) for v in o.lam0]
        lines.append(" ".join([str(o.asteroid), str(o.station)] + vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_table(path) -> RendezvousTable:
    table = RendezvousTable()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "incomplete":
                table.incomplete.add(int(parts[1]))
            continue
        parts = line.split()
        if len(parts) != 11:
            raise ValueError(f"{path}:{lineno}: expected 11 fields, got {len(parts)}")
        try:
            vals = [float(v) for v in parts[2:]]
            table.add(TransferOpportunity(int(parts[0]), int(parts[1]), vals[0], vals[1], vals[2],
                                          np.array(vals[3:])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return table
