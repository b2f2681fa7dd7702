"""Command line: ``rspc plan|allocate|simulate|experiment``.

Exit codes: 0 success, 1 invariant violation, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .allocation import InsufficientNodes
from .cross_shard import InsufficientEligibleLeaders
from .harness.config import ConfigError, ScenarioConfig, load_config, parse_seeds
from .harness.experiments import EXPERIMENTS, MIN_SEEDS, run_experiment
from .harness.metrics import (EPOCH_COLUMNS, InvariantViolation, check_safety, emit_plotdata,
                              summarize)
from .harness.runner import prepare_world, simulate
from .orchestrator import begin_epoch, planner_input_for
from .planner import NoFeasiblePartition, plan_table
from .reputation import classify

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2
PLAN_COLUMNS = ("T", "T_n", "f_max", "F_T", "P_fail", "feasible", "chosen")
ALLOC_COLUMNS = ("node_id", "score", "tier", "partition")
TRACE_COLUMNS = ("epoch", "time_us", "committee", "phase", "view", "seq", "sender", "decided")
XTRACE_COLUMNS = ("epoch", "time_us", "tx", "phase", "source", "dest", "outcome")

log = logging.getLogger("rspc")


def _write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _config(args) -> ScenarioConfig:
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    cfg = load_config(args.config, overrides)
    if args.seed is not None:
        cfg = cfg.replace(seeds=parse_seeds(args.seed))
    if args.out is not None:
        cfg = cfg.replace(out=args.out)
    return cfg


def cmd_plan(cfg: ScenarioConfig, args) -> int:
    world = prepare_world(cfg, cfg.seeds[0])
    rows = plan_table(planner_input_for(world))
    path = Path(cfg.out) / "plan.csv"
    _write_csv(path, PLAN_COLUMNS, ([r["T"], r["T_n"], r["f_max"], repr(r["F_T"]),
                                      repr(r["P_fail"]), int(r["feasible"]), int(r["chosen"])]
                                     for r in rows))
    print(path)
    return EXIT_OK


def cmd_allocate(cfg: ScenarioConfig, args) -> int:
    world = prepare_world(cfg, cfg.seeds[0])
    est = begin_epoch(world)
    rows = []
    for nid, rec in sorted(world.records.items(), key=lambda kv: world.labels[kv[0]]):
        part = est.allocation.assignment.get(nid, "")
        rows.append([nid.hex(), repr(rec.score), classify(rec.score).value, part])
    path = Path(cfg.out) / "allocation.csv"
    _write_csv(path, ALLOC_COLUMNS, rows)
    print(path)
    return EXIT_OK


def cmd_simulate(cfg: ScenarioConfig, args) -> int:
    out = Path(cfg.out)
    status = EXIT_OK
    summary = {}
    for seed in cfg.seeds:
        trace = [] if args.trace else None
        xtrace = [] if args.xtrace else None
        result = simulate(cfg, seed, trace=trace, xtrace=xtrace,
                          check_every_event=args.check_every_event)
        rep = summarize(result.epochs)
        tag = f"seed{seed}"
        _write_csv(out / f"epochs-{tag}.csv", EPOCH_COLUMNS,
                   ([row[c] for c in EPOCH_COLUMNS] for row in rep.epochs))
        if trace is not None:
            _write_csv(out / f"trace-{tag}.csv", TRACE_COLUMNS, trace)
        if xtrace is not None:
            _write_csv(out / f"xtrace-{tag}.csv", XTRACE_COLUMNS, xtrace)
        if args.dump:
            head = result.world.chain.head
            (out / f"dump-{tag}.json").write_text(json.dumps({
                "epoch": head.epoch, "digest": head.digest.hex(),
                "prev_digest": head.prev_digest.hex(),
                "snapshot_digest": head.utxo_snapshot_digest.hex(),
                "state_blocks": [d.hex() for d in head.state_block_digests],
                "entries": [[k[0].hex(), k[1], addr.hex(), v]
                            for k, (addr, v) in head.utxo_entries],
            }, indent=1) + "\n")
        d = rep.to_dict()
        d["union_mismatches"] = result.union_mismatches
        summary[str(seed)] = d
        try:
            check_safety(rep, f"seed {seed}")
            if result.union_mismatches:
                raise InvariantViolation(f"seed {seed}: merged snapshot differs from the union")
        except InvariantViolation as exc:
            log.error("%s", exc)
            status = EXIT_INVARIANT
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(
        {"config": cfg.to_text(), "runs": summary}, indent=1, sort_keys=True) + "\n")
    print(out / "metrics.json")
    return status


def cmd_experiment(cfg: ScenarioConfig, args) -> int:
    seeds = cfg.seeds
    if args.seed is None and seeds == ScenarioConfig().seeds:
        seeds = tuple(range(MIN_SEEDS))
        cfg = cfg.replace(seeds=seeds)
    fig = run_experiment(args.name, cfg, seeds)
    for path in emit_plotdata([fig], cfg.out):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rspc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", help="seed or seed list such as 0-9 or 1,4,7")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        return p

    common(sub.add_parser("plan", help="partition-count table for the configured network"))
    common(sub.add_parser("allocate", help="node-to-partition assignment for epoch 1"))
    sim = common(sub.add_parser("simulate", help="run the configured scenario"))
    sim.add_argument("--trace", action="store_true", help="write consensus message trace")
    sim.add_argument("--xtrace", action="store_true", help="write cross-partition trace")
    sim.add_argument("--dump", action="store_true", help="write the final global snapshot")
    sim.add_argument("--check-every-event", action="store_true",
                     help="check value conservation after every event")
    exp = common(sub.add_parser("experiment", help="run a figure sweep"))
    exp.add_argument("name", help=", ".join(sorted(EXPERIMENTS)))
    return parser


COMMANDS = {"plan": cmd_plan, "allocate": cmd_allocate, "simulate": cmd_simulate,
            "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, NoFeasiblePartition, InsufficientNodes,
            InsufficientEligibleLeaders) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
