"""Command line interface: one subcommand per pipeline stage, plus ``pipeline`` for all of them."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from . import chainbuilder as cb
from . import missionio as mio
from . import pipeline as pl
from . import rdvtable as rt
from .catalog import PruneBounds, load_catalog, prune, save_catalog, synth_catalog
from .ring import RingConfig

log = logging.getLogger("dysonring")


def _cfg(args) -> pl.PipelineConfig:
    cfg = pl.load_config(args.config) if args.config else pl.PipelineConfig()
    return cfg.with_overrides(seed=args.seed, jobs=args.jobs, B=args.B)


def _params(path) -> cb.TranscriptionParams:
    return cb.TranscriptionParams(**json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- subcommands


def cmd_prune(args, cfg):
    a, e, i, m = (float(v) for v in args.prune.split(","))
    cat = prune(load_catalog(args.catalog), PruneBounds(a, e, math.radians(i), m))
    save_catalog(cat, args.out)
    print(f"{len(cat)} asteroids kept")
    return 0


def cmd_synth(args, cfg):
    save_catalog(synth_catalog(args.n, cfg.seed), args.out)
    return 0


def cmd_transcribe(args, cfg):
    cat = load_catalog(args.catalog)
    params = pl.stage_transcribe(cat, dataclasses.replace(cfg, transcribe=True))
    pl._dump(dataclasses.asdict(params), args.out)
    return 0


def cmd_chains(args, cfg):
    cat = load_catalog(args.catalog)
    if args.params:
        dt_e2a, dt_a2a, a_D = (float(v) for v in args.params.split(","))
        cfg = dataclasses.replace(cfg, dt_e2a=dt_e2a, dt_a2a=dt_a2a, a_D=a_D)
    cfg = cfg.with_overrides(bw=args.bw, n_ships=args.ships)
    params = cb.TranscriptionParams(cfg.dt_e2a, cfg.dt_a2a, cfg.a_D)
    chains = pl.stage_chains(cat, params, cfg)
    pl.save_chains(chains, args.out, {"params": dataclasses.asdict(params)})
    for k, ch in enumerate(chains):
        print(f"chain {k}: {len(ch.legs)} asteroids, dv {ch.dv_total():.4f} km/s")
    return 0


def cmd_refine_chains(args, cfg):
    cat = load_catalog(args.catalog)
    chains = pl.load_chains(args.inp)
    data = json.loads(Path(args.inp).read_text())
    if args.ring:
        a_D = pl.load_ring(args.ring).a_D
    else:
        a_D = data.get("params", {}).get("a_D", cfg.a_D)
    params = cb.TranscriptionParams(cfg.dt_e2a, cfg.dt_a2a, a_D)
    r1, ring, r2 = pl.stage_refine_chains(chains, cat, params, cfg)
    pl.save_chains(r2, args.out)
    if args.ring_out:
        pl.save_ring(ring, args.ring_out)
    for k, (a, b, c) in enumerate(zip(chains, r1, r2)):
        print(f"chain {k}: dv {a.dv_total():.4f} -> R1 {b.dv_total():.4f} -> R2 {c.dv_total():.4f} km/s")
    return 0


def cmd_table(args, cfg):
    cat = load_catalog(args.catalog)
    cfg = cfg.with_overrides(table_n=args.n)
    if args.refine:
        cfg = dataclasses.replace(cfg, table_refine=True)
    table = pl.stage_table(pl.load_chains(args.chains), pl.load_ring(args.ring), cat, cfg)
    rt.save_table(table, args.out)
    print(f"{len(table)} opportunities, {len(table.incomplete)} incomplete asteroids, {len(table.failed)} failed")
    return 0


def cmd_dispatch(args, cfg):
    cat = load_catalog(args.catalog)
    chains = pl.load_chains(args.chains)
    ring = pl.load_ring(args.ring)
    cfg = cfg.with_overrides(optimizer=args.optimizer)
    if args.tables:
        # radius sweep: one table per ring radius, named table_<a_D>.txt
        rows = []
        for p in sorted(Path(args.tables).glob("table_*.txt")):
            a_D = float(p.stem.split("_", 1)[1])
            rep = pl.stage_dispatch(rt.load_table(p), chains, cat, dataclasses.replace(ring, a_D=a_D), cfg)
            rows.append((a_D, rep.J))
            print(f"a_D {a_D:.4f}: J {rep.J:.4f}")
        pl._dump({"sweep": rows}, args.out)
        return 0
    best = None
    for k in range(args.seeds):
        rep = pl.stage_dispatch(rt.load_table(args.table), chains, cat, ring, cfg.with_overrides(seed=cfg.seed + k))
        if best is None or rep.J > best.J:
            best = rep
    pl.save_dispatch(best, args.out)
    print(f"J {best.J:.6f}, m_min {best.m_min:.6e} kg")
    return 0


def cmd_refine(args, cfg):
    cat = load_catalog(args.catalog)
    decision, assignment, history = pl.load_dispatch(args.dispatch)
    ring = pl.load_ring(args.ring)
    table = rt.load_table(args.table)
    sol, _, _, rlog = pl.stage_final(decision, assignment, table, pl.load_chains(args.chains), ring, cat, cfg)
    mio.emit_solution(sol, args.out)
    bad = [e for e in rlog.entries if e[-1] != "ok"]
    print(f"{len(sol.transfers)} transfers, {len(bad)} refinement events")
    return 0


def cmd_validate(args, cfg):
    sol = mio.load_solution(args.solution)
    rep = mio.validate(sol, load_catalog(args.catalog), const=cfg.const())
    print(rep.summary())
    return 0 if rep.passed else 1


def cmd_score(args, cfg):
    sol = mio.load_solution(args.solution)
    print(f"{mio.score(sol, cfg.B, cfg.const()):.6f}")
    return 0


def cmd_pipeline(args, cfg):
    res = pl.run_pipeline(cfg, args.out, args.catalog)
    print(f"J {res.J:.6f}  validation {'pass' if res.report.passed else 'FAIL'}")
    for k, row in enumerate(res.dv_table):
        print(f"chain {k}: " + "  ".join(f"{v:.4f}" for v in row))
    return 0 if res.report.passed else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dysonring", description="Dyson ring asteroid campaign pipeline")
    p.add_argument("--config", help="JSON file with pipeline defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--B", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("prune")
    s.add_argument("--catalog", required=True)
    s.add_argument("--prune", default="2.8,0.1584,8.897,5.8497e13", help="a_max,e_max,i_max_deg,m_min")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_prune)

    s = sub.add_parser("synth")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("transcribe")
    s.add_argument("--catalog", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_transcribe)

    s = sub.add_parser("chains")
    s.add_argument("--catalog", required=True)
    s.add_argument("--params", help="dt_e2a,dt_a2a,a_D")
    s.add_argument("--bw", type=int)
    s.add_argument("--ships", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_chains)

    s = sub.add_parser("refine-chains")
    s.add_argument("--catalog", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--ring", help="ring used for the epoch refinement (default: a_D from the chain file)")
    s.add_argument("--ring-out", help="where to write the refined ring")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_refine_chains)

    s = sub.add_parser("table")
    s.add_argument("--catalog", required=True)
    s.add_argument("--chains", required=True)
    s.add_argument("--ring", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--refine", action="store_true", help="refine every phase-matched opportunity")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_table)

    s = sub.add_parser("dispatch")
    s.add_argument("--catalog", required=True)
    s.add_argument("--table")
    s.add_argument("--tables", help="directory of table_<a_D>.txt files (radius sweep)")
    s.add_argument("--chains", required=True)
    s.add_argument("--ring", required=True)
    s.add_argument("--optimizer", choices=["ga", "pso", "ga+pso"])
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_dispatch)

    s = sub.add_parser("refine")
    s.add_argument("--catalog", required=True)
    s.add_argument("--dispatch", required=True)
    s.add_argument("--chains", required=True)
    s.add_argument("--table", required=True)
    s.add_argument("--ring", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_refine)

    s = sub.add_parser("validate")
    s.add_argument("solution")
    s.add_argument("--catalog", required=True)
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("score")
    s.add_argument("solution")
    s.set_defaults(fn=cmd_score)

    s = sub.add_parser("pipeline")
    s.add_argument("--catalog", help="catalog file (default: synthetic catalog from the config)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "dispatch" and not (args.table or args.tables):
        print("dispatch needs --table or --tables", file=sys.stderr)
        return 2
    return args.fn(args, _cfg(args))


if __name__ == "__main__":
    sys.exit(main())
