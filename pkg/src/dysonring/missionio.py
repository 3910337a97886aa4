"""
Mission solution model, constraint validator, scorer and text/plot emission.

Text format (one record per line, '#' starts a comment, floats written with
repr so a round trip is exact):

    ring <a_D> <i_D> <raan_D> <phi_S1> <n_stations>
    order <s1> <s2> ...
    chain <index>
    launch <epoch> <dvx> <dvy> <dvz>
    dsm <epoch> <rx> <ry> <rz> <dvx> <dvy> <dvz>          (belongs to the next flyby's leg)
    flyby <asteroid> <epoch> <dv1 x y z> <dv2 x y z>
    end
    transfer <asteroid> <station> <t0> <tf> <m_f> <lam0 x6>

Angles in rad, epochs in MJD, impulses in km/s, positions in km.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import lowthrust as lt
from .astrokernel import CONST, Constants, LambertError, asteroid_mass, conic_min_radius, propagate_cartesian, \
    propagate_kepler
from .catalog import EARTH, Catalog, earth_state
from .chainbuilder import ChainLeg, Dsm, MothershipChain, gtoc_objective
from .finalrefine import chain_subarcs
from .ring import RingConfig

__all__ = [
    "TransferRecord",
    "MissionSolution",
    "Failure",
    "ValidationReport",
    "CHECKS",
    "validate",
    "score",
    "emit_solution",
    "load_solution",
    "emit_plots",
    "SolutionParseError",
]

# constraint checks in report order; the first seven are the mission constraints (i)-(vii)
CHECKS = ("window", "atd_delay", "rendezvous", "mass_law", "station_gap", "perihelion", "ring_radius",
          "flyby_speed", "launch_speed", "impulses", "continuity", "assignment")

RDV_TOL = 1e-6  # scaled terminal mismatch (AU / dimensionless / rad)
CONTINUITY_TOL = 1e-6  # km/s
BALL_TOL = 1e-8  # km/s
GAP_TOL = 1e-9  # days


@dataclass(frozen=True)
class TransferRecord:
    asteroid: int
    station: int
    t0: float
    tf: float
    m_f: float
    lam0: np.ndarray = field(compare=False)

    def __eq__(self, other):
        if not isinstance(other, TransferRecord):
            return NotImplemented
        return ((self.asteroid, self.station, self.t0, self.tf, self.m_f) ==
                (other.asteroid, other.station, other.t0, other.tf, other.m_f)
                and np.array_equal(self.lam0, other.lam0))

    __hash__ = None


@dataclass
class MissionSolution:
    ring: RingConfig
    chains: list  # MothershipChain
    transfers: list  # TransferRecord
    order: tuple  # station build order (1-based)

    def station_masses(self) -> dict:
        m = {s: 0.0 for s in range(1, self.ring.n_stations + 1)}
        for t in self.transfers:
            m[t.station] = m.get(t.station, 0.0) + t.m_f
        return m

    @property
    def m_min(self) -> float:
        m = self.station_masses()
        return min(m.values()) if m else 0.0

    def dvs(self, const: Constants = CONST) -> list:
        return [c.dv_total(const.v_launch_max) for c in self.chains]


@dataclass(frozen=True)
class Failure:
    check: str
    entity: str
    margin: float  # negative: amount by which the constraint is violated
    detail: str = ""


@dataclass
class ValidationReport:
    failures: list = field(default_factory=list)
    checked: tuple = CHECKS

    @property
    def passed(self) -> bool:
        return not self.failures

    def failed_checks(self) -> list:
        return sorted({f.check for f in self.failures}, key=CHECKS.index)

    def by_check(self, name: str) -> list:
        return [f for f in self.failures if f.check == name]

    def summary(self) -> str:
        lines = []
        for c in self.checked:
            fs = self.by_check(c)
            lines.append(f"{c:13s} {'ok' if not fs else 'FAIL'}")
            lines.extend(f"    {f.entity}: margin {f.margin:.6g} {f.detail}".rstrip() for f in fs)
        return "\n".join(lines)


# ---------------------------------------------------------------- validation


def _first_visits(chains) -> dict:
    seen = {}
    for ch in chains:
        for leg in ch.legs:
            seen[leg.target] = min(seen.get(leg.target, math.inf), leg.epoch)
    return seen


def _lowthrust_min_radius(el, t0, lam0, tf, const):
    """Min heliocentric radius (AU) of a thrust arc: 1-day sampling then a local bounded search."""
    dur = tf - t0
    if dur <= 0:
        return float(np.linalg.norm(propagate_kepler(el, t0, const).r)) / const.au
    # steps of at most one day; n rounded up to a multiple of 64 to bound the number of compiled shapes
    n = 64 * int(math.ceil(dur / 64))
    ts, zs = lt.propagate_transfer(el, t0, lam0, tf, const, n_out=n)

    def radius(z):
        p, f, g, _, _, L = z[:6]
        return p / (1 + f * math.cos(L) + g * math.sin(L))

    r = np.array([radius(z) for z in zs])
    i = int(np.argmin(r))
    best = float(r[i])
    lo, hi = float(ts[max(i - 1, 0)]), float(ts[min(i + 1, len(ts) - 1)])
    if 0 < i < len(ts) - 1:
        def g(t):
            _, zz = lt.propagate_transfer(el, t0, lam0, t, const)
            return radius(zz[-1])

        res = minimize_scalar(g, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
        best = min(best, float(res.fun))
    return best  # canonical length unit is the AU


def _check_transfer(t: TransferRecord, ring, cat, const, out):
    name = f"asteroid {t.asteroid}"
    el = cat[t.asteroid].elements
    try:
        _, zs = lt.propagate_transfer(el, t.t0, t.lam0, t.tf, const)
    except (lt.IntegrationError, ValueError, FloatingPointError) as exc:
        out.append(Failure("rendezvous", name, -math.inf, f"integration failed: {exc}"))
        return
    zf = zs[-1]
    target = ring.slow_mee(const).copy()
    target[0] /= const.au
    slow_err = float(np.max(np.abs(zf[:5] - target)))
    dL = abs(math.remainder(zf[5] - ring.station_longitude(t.station, t.tf, const), 2 * math.pi))
    err = max(slow_err, dL)
    if not err < RDV_TOL:
        out.append(Failure("rendezvous", name, RDV_TOL - err, f"terminal mismatch {err:.3e}"))
    r_min = _lowthrust_min_radius(el, t.t0, t.lam0, t.tf, const)
    if r_min < const.r_min:
        out.append(Failure("perihelion", name, r_min - const.r_min, "thrust arc"))


def validate(sol: MissionSolution, cat: Catalog, earth=EARTH, const: Constants = CONST,
             check_transfers: bool = True) -> ValidationReport:
    """Check every mission constraint; the report lists each violation with its margin."""
    f = []
    ring = sol.ring
    # (vii) ring radius
    if ring.a_D < const.a_d_min:
        f.append(Failure("ring_radius", "ring", ring.a_D - const.a_d_min))
    # (i) time window
    for k, ch in enumerate(sol.chains):
        epochs = [ch.launch_epoch] + [l.epoch for l in ch.legs] + [l.dsm.epoch for l in ch.legs if l.dsm]
        lo, hi = min(epochs), max(epochs)
        if lo < const.t_start:
            f.append(Failure("window", f"chain {k}", lo - const.t_start))
        if hi > const.t_end:
            f.append(Failure("window", f"chain {k}", const.t_end - hi))
    for t in sol.transfers:
        if t.t0 < const.t_start:
            f.append(Failure("window", f"asteroid {t.asteroid}", t.t0 - const.t_start))
        if t.tf > const.t_end:
            f.append(Failure("window", f"asteroid {t.asteroid}", const.t_end - t.tf))
    # (ii) ATD activation delay after the first flyby
    visits = _first_visits(sol.chains)
    for t in sol.transfers:
        if t.asteroid not in visits:
            f.append(Failure("atd_delay", f"asteroid {t.asteroid}", -math.inf, "never visited"))
        elif t.t0 < visits[t.asteroid] + const.atd_delay - GAP_TOL:
            f.append(Failure("atd_delay", f"asteroid {t.asteroid}", t.t0 - visits[t.asteroid] - const.atd_delay))
    # (iv) mass law
    for t in sol.transfers:
        try:
            m = asteroid_mass(cat[t.asteroid].m0, (t.tf - t.t0) * const.day, const)
        except ValueError as exc:
            f.append(Failure("mass_law", f"asteroid {t.asteroid}", -math.inf, str(exc)))
            continue
        if not abs(t.m_f - m) <= 1e-9 * m:
            f.append(Failure("mass_law", f"asteroid {t.asteroid}", -abs(t.m_f - m), f"expected {m:.6e} kg"))
    # (v) station gap between consecutive non-empty stations of the build order
    by_station = {}
    for t in sol.transfers:
        by_station.setdefault(t.station, []).append(t.tf)
    prev = None
    for s in sol.order:
        if s not in by_station:
            continue
        if prev is not None:
            gap = min(by_station[s]) - max(by_station[prev])
            if gap < const.station_gap_min - GAP_TOL:
                f.append(Failure("station_gap", f"station {prev}->{s}", gap - const.station_gap_min))
        prev = s
    # assignment bookkeeping
    ids = [t.asteroid for t in sol.transfers]
    for a in sorted({a for a in ids if ids.count(a) > 1}):
        f.append(Failure("assignment", f"asteroid {a}", -1.0, "assigned twice"))
    if sorted(sol.order) != list(range(1, ring.n_stations + 1)):
        f.append(Failure("assignment", "order", -1.0, "build order is not a permutation"))
    for t in sol.transfers:
        if not 1 <= t.station <= ring.n_stations:
            f.append(Failure("assignment", f"asteroid {t.asteroid}", -1.0, f"unknown station {t.station}"))
    # (iii) and the thrust-arc part of (vi)
    if check_transfers:
        for t in sol.transfers:
            if 1 <= t.station <= ring.n_stations:
                _check_transfer(t, ring, cat, const, f)
    # mothership: conic perihelion, flyby ball, launch cap, impulse count, velocity continuity
    for k, ch in enumerate(sol.chains):
        _check_chain(k, ch, cat, earth, const, f)
    f.sort(key=lambda x: CHECKS.index(x.check))
    return ValidationReport(f)


def _check_chain(k, ch, cat, earth, const, f):
    name = f"chain {k}"
    if not ch.legs:
        return
    if np.linalg.norm(ch.launch_impulse) > const.v_launch_max + BALL_TOL:
        f.append(Failure("launch_speed", name, const.v_launch_max - float(np.linalg.norm(ch.launch_impulse))))
    try:
        arcs = chain_subarcs(ch, cat, earth, const)
    except LambertError as exc:
        f.append(Failure("continuity", name, -math.inf, f"Lambert failed: {exc}"))
        return
    for a in arcs:
        r = conic_min_radius(a.r0, a.v0, (a.t1 - a.t0) * const.day, const) / const.au
        if r < const.r_min:
            f.append(Failure("perihelion", f"{name} leg {a.leg}", r - const.r_min, "conic arc"))
    first, last = {}, {}
    for a in arcs:
        first.setdefault(a.leg, a)
        last[a.leg] = a
    v_e = earth_state(ch.launch_epoch, earth, const).v
    gap = np.linalg.norm(v_e + ch.launch_impulse - first[0].v0)
    if gap > CONTINUITY_TOL:
        f.append(Failure("continuity", f"{name} launch", -gap))
    prev_dv2 = np.zeros(3)
    for j, leg in enumerate(ch.legs):
        if leg.dsm is not None:
            gap = np.linalg.norm(last[j].v0 - first[j].v1 - leg.dsm.dv)
            if gap > CONTINUITY_TOL:
                f.append(Failure("continuity", f"{name} dsm {j}", -gap))
        v_a = propagate_kepler(cat[leg.target].elements, leg.epoch, const).v
        rel = float(np.linalg.norm(last[j].v1 + leg.dv1 - v_a))
        if rel > const.v_flyby_max + BALL_TOL:
            f.append(Failure("flyby_speed", f"{name} flyby {j}", const.v_flyby_max - rel))
        if j + 1 < len(ch.legs):
            gap = np.linalg.norm(last[j].v1 + leg.dv1 + leg.dv2 - first[j + 1].v0)
            if gap > CONTINUITY_TOL:
                f.append(Failure("continuity", f"{name} flyby {j}", -gap))
        n_imp = sum(np.linalg.norm(v) > 0 for v in (prev_dv2, leg.dv1)) + (leg.dsm is not None)
        if n_imp > 4:
            f.append(Failure("impulses", f"{name} leg {j}", 4 - n_imp))
        prev_dv2 = leg.dv2


def score(sol: MissionSolution, B: float = 1.0, const: Constants = CONST) -> float:
    """Performance index; the launch impulse is free up to its cap and any excess counts."""
    return gtoc_objective(sol.m_min, sol.dvs(const), sol.ring.a_D, B)


# ---------------------------------------------------------------- text format


class SolutionParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _f(v) -> str:
    return repr(float(v))


def _vec(v) -> str:
    return " ".join(_f(x) for x in v)


def emit_solution(sol: MissionSolution, path) -> None:
    r = sol.ring
    lines = ["# dysonring mission solution",
             f"ring {_f(r.a_D)} {_f(r.i_D)} {_f(r.raan_D)} {_f(r.phi_S1)} {r.n_stations}",
             "order " + " ".join(str(s) for s in sol.order)]
    for k, ch in enumerate(sol.chains):
        lines.append(f"chain {k}")
        lines.append(f"launch {_f(ch.launch_epoch)} {_vec(ch.launch_impulse)}")
        for leg in ch.legs:
            if leg.dsm is not None:
                lines.append(f"dsm {_f(leg.dsm.epoch)} {_vec(leg.dsm.r)} {_vec(leg.dsm.dv)}")
            lines.append(f"flyby {leg.target} {_f(leg.epoch)} {_vec(leg.dv1)} {_vec(leg.dv2)}")
        lines.append("end")
    for t in sol.transfers:
        lines.append(f"transfer {t.asteroid} {t.station} {_f(t.t0)} {_f(t.tf)} {_f(t.m_f)} {_vec(t.lam0)}")
    Path(path).write_text("\n".join(lines) + "\n")


_ARITY = {"ring": 5, "launch": 4, "dsm": 7, "flyby": 8, "transfer": 11, "chain": 1, "end": 0}


def load_solution(path) -> MissionSolution:
    ring, order, chains, transfers = None, None, [], []
    cur = None  # [launch_epoch, impulse, legs, pending dsm]
    lineno = 0
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        try:
            if key == "order":
                order = tuple(int(v) for v in vals)
                continue
            if key not in _ARITY:
                raise ValueError(f"unknown record '{key}'")
            if len(vals) != _ARITY[key]:
                raise ValueError(f"'{key}' needs {_ARITY[key]} fields, got {len(vals)}")
            if key == "ring":
                ring = RingConfig(float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]), int(vals[4]))
            elif key == "chain":
                if cur is not None:
                    raise ValueError("previous chain not closed")
                cur = [None, None, [], None]
            elif key in ("launch", "dsm", "flyby", "end") and cur is None:
                raise ValueError(f"'{key}' outside a chain")
            elif key == "launch":
                cur[0], cur[1] = float(vals[0]), np.array([float(v) for v in vals[1:]])
            elif key == "dsm":
                x = [float(v) for v in vals]
                cur[3] = Dsm(x[0], np.array(x[1:4]), np.array(x[4:7]))
            elif key == "flyby":
                x = [float(v) for v in vals[1:]]
                cur[2].append(ChainLeg(int(vals[0]), x[0], np.array(x[1:4]), np.array(x[4:7]), cur[3]))
                cur[3] = None
            elif key == "end":
                if cur[0] is None:
                    raise ValueError("chain without launch record")
                if cur[3] is not None:
                    raise ValueError("dsm without a following flyby")
                chains.append(MothershipChain(cur[0], cur[1], tuple(cur[2])))
                cur = None
            elif key == "transfer":
                x = [float(v) for v in vals[2:]]
                transfers.append(TransferRecord(int(vals[0]), int(vals[1]), x[0], x[1], x[2], np.array(x[3:])))
        except ValueError as exc:
            raise SolutionParseError(path, lineno, str(exc)) from None
    if cur is not None:
        raise SolutionParseError(path, lineno, "file ends inside a chain")
    if ring is None or order is None:
        raise SolutionParseError(path, lineno, "missing ring or order record")
    return MissionSolution(ring, chains, transfers, order)


# ---------------------------------------------------------------- plot data


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def emit_plots(sol: MissionSolution, out_dir, cat: Optional[Catalog] = None, history: Sequence = (),
               sweep: Sequence = (), earth=EARTH, const: Constants = CONST, step_days: float = 5.0) -> list:
    """Plain CSV data for the standard figures; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    p = out / "mass_vs_arrival.csv"
    rows = sorted(((t.tf, t.asteroid, t.station, t.m_f) for t in sol.transfers))
    _write_csv(p, ["tf_mjd", "asteroid", "station", "m_f_kg"], rows)
    paths.append(p)

    p = out / "mass_trace.csv"
    _write_csv(p, ["iteration", "m_min_kg", "m_mean_kg"], [tuple(h) for h in history])
    paths.append(p)

    p = out / "station_counts.csv"
    masses = sol.station_masses()
    counts = {s: 0 for s in masses}
    for t in sol.transfers:
        counts[t.station] += 1
    build = {s: i for i, s in enumerate(sol.order)}
    _write_csv(p, ["station", "build_position", "count", "mass_kg"],
               [(s, build.get(s, -1), counts[s], masses[s]) for s in sorted(masses)])
    paths.append(p)

    p = out / "radius_sweep.csv"
    _write_csv(p, ["a_D_au", "J"], sorted(tuple(s) for s in sweep))
    paths.append(p)

    if cat is not None:
        p = out / "trajectories.csv"
        rows = []
        for k, ch in enumerate(sol.chains):
            if not ch.legs:
                continue
            for a in chain_subarcs(ch, cat, earth, const):
                n = max(2, int(math.ceil((a.t1 - a.t0) / step_days)) + 1)
                for t in np.linspace(a.t0, a.t1, n):
                    r, _ = propagate_cartesian(a.r0, a.v0, (t - a.t0) * const.day, const)
                    rows.append((k, a.leg, float(t), *(r / const.au)))
        _write_csv(p, ["chain", "leg", "t_mjd", "x_au", "y_au", "z_au"], rows)
        paths.append(p)
    return paths
