"""
End-to-end pipeline stages, their configuration and the JSON files that pass
results between them.

Stages: catalog -> chains (beam search) -> R1 epoch refinement -> ring
refinement -> R2 optimal flyby splits -> rendezvous table -> dispatch ->
rendezvous refinement, trimming and DSM pass -> validated mission.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import chainbuilder as cb
from . import chainrefine as cr
from . import dispatcher as dp
from . import finalrefine as fr
from . import missionio as mio
from . import rdvtable as rt
from .astrokernel import CONST, Constants
from .catalog import Catalog, PruneBounds, load_catalog, prune, save_catalog, synth_catalog
from .ring import RingConfig
from .searchkit import GAParams, PSOParams

__all__ = [
    "PipelineConfig",
    "load_config",
    "chains_to_json",
    "chains_from_json",
    "save_chains",
    "load_chains",
    "save_ring",
    "load_ring",
    "save_dispatch",
    "load_dispatch",
    "stage_chains",
    "stage_refine_chains",
    "stage_table",
    "stage_dispatch",
    "stage_final",
    "run_pipeline",
    "PipelineResult",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    jobs: int = 1
    B: float = 1.0
    # catalog
    n_synth: int = 500
    prune: bool = True
    # transcription and beam search
    transcribe: bool = False
    transcribe_pop: int = 8
    transcribe_generations: int = 4
    dt_e2a: float = 349.0  # days
    dt_a2a: float = 180.0  # days
    a_D: float = 1.11  # AU
    bw: int = 30
    n_ships: int = 2
    spacing: float = 36.525  # days between launches
    # chain refinement
    r1_swarm: int = 12
    r1_iters: int = 15
    r1_window: float = 30.0  # days
    ring_swarm: int = 20
    ring_iters: int = 30
    # table
    table_n: int = 16
    table_refine: bool = False
    # dispatch
    optimizer: str = "ga+pso"
    ga_pop: int = 30
    ga_generations: int = 15
    pso_swarm: int = 20
    pso_iters: int = 20
    x_na: Optional[tuple] = None  # (lo, hi) asteroids per station; None scales with the table
    # constants
    constants: dict = field(default_factory=dict)

    def const(self) -> Constants:
        return dataclasses.replace(CONST, **self.constants)

    def with_overrides(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})


def load_config(path) -> PipelineConfig:
    data = json.loads(Path(path).read_text())
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return PipelineConfig(**data)


# ---------------------------------------------------------------- JSON files


def _dsm_json(d):
    return None if d is None else {"epoch": d.epoch, "r": list(map(float, d.r)), "dv": list(map(float, d.dv))}


def chains_to_json(chains: Sequence[cb.MothershipChain]) -> list:
    return [{"launch_epoch": ch.launch_epoch, "launch_impulse": list(map(float, ch.launch_impulse)),
             "legs": [{"target": int(l.target), "epoch": float(l.epoch), "dv1": list(map(float, l.dv1)),
                       "dv2": list(map(float, l.dv2)), "dsm": _dsm_json(l.dsm)} for l in ch.legs]}
            for ch in chains]


def chains_from_json(data) -> list:
    out = []
    for c in data:
        legs = []
        for l in c["legs"]:
            d = l.get("dsm")
            dsm = None if d is None else cb.Dsm(d["epoch"], np.array(d["r"]), np.array(d["dv"]))
            legs.append(cb.ChainLeg(l["target"], l["epoch"], np.array(l["dv1"]), np.array(l["dv2"]), dsm))
        out.append(cb.MothershipChain(c["launch_epoch"], np.array(c["launch_impulse"]), tuple(legs)))
    return out


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def save_chains(chains, path, extra: Optional[dict] = None) -> None:
    _dump({"chains": chains_to_json(chains), **(extra or {})}, path)


def load_chains(path) -> list:
    return chains_from_json(json.loads(Path(path).read_text())["chains"])


def save_ring(ring: RingConfig, path) -> None:
    _dump(dataclasses.asdict(ring), path)


def load_ring(path) -> RingConfig:
    return RingConfig(**json.loads(Path(path).read_text()))


def _opp_json(o):
    return {"asteroid": o.asteroid, "station": o.station, "t0": o.t0, "tf": o.tf, "m_f": o.m_f,
            "lam0": list(map(float, o.lam0))}


def _opp_from(d):
    return rt.TransferOpportunity(d["asteroid"], d["station"], d["t0"], d["tf"], d["m_f"], np.array(d["lam0"]))


def save_dispatch(rep: dp.DispatchReport, path) -> None:
    a = rep.assignment
    _dump({"decision": list(map(float, rep.decision.to_vector())), "order": list(a.order),
           "stations": {str(s): [_opp_json(o) for o in a.stations.get(s, ())] for s in a.order},
           "m_min": rep.m_min, "J": rep.J, "history": [list(map(float, h)) for h in rep.history],
           "chains": chains_to_json(rep.chains)}, path)


def load_dispatch(path) -> tuple[dp.DispatchDecision, dp.Assignment, list]:
    d = json.loads(Path(path).read_text())
    order = tuple(d["order"])
    stations = {int(s): tuple(_opp_from(o) for o in ops) for s, ops in d["stations"].items()}
    decision = dp.DispatchDecision.from_vector(np.array(d["decision"]), len(order))
    return decision, dp.Assignment(stations, order), [tuple(h) for h in d["history"]]


# ---------------------------------------------------------------- stages


def stage_catalog(cfg: PipelineConfig, catalog_path=None) -> Catalog:
    cat = load_catalog(catalog_path) if catalog_path else synth_catalog(cfg.n_synth, cfg.seed)
    return prune(cat, PruneBounds()) if cfg.prune else cat


def stage_transcribe(cat: Catalog, cfg: PipelineConfig) -> cb.TranscriptionParams:
    if not cfg.transcribe:
        return cb.TranscriptionParams(cfg.dt_e2a, cfg.dt_a2a, cfg.a_D)
    params, _ = cb.transcribe(cat, GAParams(pop=cfg.transcribe_pop, generations=cfg.transcribe_generations,
                                            seed=cfg.seed), bw=cfg.bw, n_ships=cfg.n_ships, spacing=cfg.spacing,
                              const=cfg.const())
    return params


def stage_chains(cat: Catalog, params: cb.TranscriptionParams, cfg: PipelineConfig) -> list:
    const = cfg.const()
    camp = cb.build_campaign(cat, params, cfg.bw, cfg.n_ships, cfg.spacing, const=const)
    return [cb.node_to_chain(n, cat, const) for n in camp.nodes]


def stage_refine_chains(chains, cat: Catalog, params: cb.TranscriptionParams, cfg: PipelineConfig):
    """(R1 chains, ring, R2 chains)."""
    const = cfg.const()
    ring0 = RingConfig(params.a_D)
    pso = PSOParams(swarm=cfg.r1_swarm, iters=cfg.r1_iters, seed=cfg.seed)
    r1 = [cr.refine_epochs(ch, cat, ring0, pso, window=cfg.r1_window, const=const).chain for ch in chains]
    ring = cr.refine_ring(r1, cat, ring0, PSOParams(swarm=cfg.ring_swarm, iters=cfg.ring_iters, seed=cfg.seed),
                          const=const)
    r2 = [cr.apply_r2(ch, cat, const=const) for ch in r1]
    return r1, ring, r2


def stage_table(chains, ring: RingConfig, cat: Catalog, cfg: PipelineConfig) -> rt.RendezvousTable:
    return rt.build_table(chains, ring, cat, cfg.table_n, cfg.const(), jobs=cfg.jobs, refine=cfg.table_refine)


def dispatch_bounds(table, ring: RingConfig, cfg: PipelineConfig) -> dp.DispatchBounds:
    if cfg.x_na is not None:
        return dp.DispatchBounds(x_NA=(int(cfg.x_na[0]), int(cfg.x_na[1])))
    return dp.scaled_bounds(len(table.asteroids()), ring.n_stations)


def stage_dispatch(table, chains, cat: Catalog, ring: RingConfig, cfg: PipelineConfig) -> dp.DispatchReport:
    return dp.dispatch(table, chains, cat, ring.a_D, cfg.optimizer,
                       GAParams(pop=cfg.ga_pop, generations=cfg.ga_generations, seed=cfg.seed),
                       PSOParams(swarm=cfg.pso_swarm, iters=cfg.pso_iters, seed=cfg.seed),
                       n_stations=ring.n_stations, bounds=dispatch_bounds(table, ring, cfg),
                       const=cfg.const(), B=cfg.B)


def _trim_each(chains, assignment, cat, const):
    """Trimmed copy of every chain, None where nothing assigned remains."""
    out = []
    for ch in chains:
        t = dp.trim_chains([ch], assignment, cat, const)
        out.append(t[0] if t else None)
    return out


def stage_final(decision: dp.DispatchDecision, assignment: dp.Assignment, table, chains_r2, ring: RingConfig,
                cat: Catalog, cfg: PipelineConfig):
    """Refine the dispatched transfers, trim, add DSMs.  Returns (mission, trimmed, dsm chains, refine log)."""
    const = cfg.const()
    refined, rlog = fr.refine_assignment(assignment, table, ring, cat, decision.x_dt, const)
    trimmed = _trim_each(chains_r2, refined, cat, const)
    dsm = [None if t is None else fr.apply_dsm_pass([t], refined, cat, const=const)[0] for t in trimmed]
    transfers = [mio.TransferRecord(o.asteroid, s, o.t0, o.tf, o.m_f, np.asarray(o.lam0))
                 for s in refined.order for o in refined.stations.get(s, ())]
    sol = mio.MissionSolution(ring, [c for c in dsm if c is not None], transfers, tuple(refined.order))
    return sol, trimmed, dsm, rlog


@dataclass
class PipelineResult:
    solution: mio.MissionSolution
    report: mio.ValidationReport
    J: float
    dv_table: list  # per chain: [BS, R1, R2, trim, DSM] km/s
    timings: dict


def run_pipeline(cfg: PipelineConfig, out_dir, catalog_path=None) -> PipelineResult:
    """Run every stage, writing each stage's file into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    const = cfg.const()
    timings = {}
    t = time.perf_counter()

    def lap(name):
        nonlocal t
        now = time.perf_counter()
        timings[name] = now - t
        t = now
        log.info("stage %s done in %.1f s", name, timings[name])

    save_catalog(stage_catalog(cfg, catalog_path), out / "catalog.txt")
    # later stages read the catalog as written, so they agree with stage-by-stage runs from the file
    cat = load_catalog(out / "catalog.txt")
    params = stage_transcribe(cat, cfg)
    _dump(dataclasses.asdict(params), out / "params.json")
    lap("catalog")
    bs = stage_chains(cat, params, cfg)
    save_chains(bs, out / "chains.json")
    lap("chains")
    r1, ring, r2 = stage_refine_chains(bs, cat, params, cfg)
    save_chains(r1, out / "chains_r1.json")
    save_chains(r2, out / "chains_r2.json")
    save_ring(ring, out / "ring.json")
    lap("refine-chains")
    table = stage_table(r2, ring, cat, cfg)
    rt.save_table(table, out / "table.txt")
    lap("table")
    rep = stage_dispatch(table, r2, cat, ring, cfg)
    save_dispatch(rep, out / "dispatch.json")
    lap("dispatch")
    sol, trimmed, dsm, rlog = stage_final(rep.decision, rep.assignment, table, r2, ring, cat, cfg)
    mio.emit_solution(sol, out / "mission.txt")
    lap("refine")
    report = mio.validate(sol, cat, const=const)
    (out / "validation.txt").write_text(report.summary() + "\n")
    J = mio.score(sol, cfg.B, const)
    lap("validate")
    dv = lambda c: 0.0 if c is None else c.dv_total(const.v_launch_max)
    table_dv = [[dv(a), dv(b), dv(c), dv(d), dv(e)] for a, b, c, d, e in zip(bs, r1, r2, trimmed, dsm)]
    _dump({"J": J, "m_min": sol.m_min, "dv_table": table_dv, "refine_log": [list(map(str, e)) for e in rlog.entries],
           "passed": report.passed}, out / "summary.json")
    mio.emit_plots(sol, out / "plots", cat, rep.history, const=const)
    return PipelineResult(sol, report, J, table_dv, timings)
