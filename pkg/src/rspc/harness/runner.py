"""Multi-epoch scenario driver shared by the CLI and the experiment suite."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..ledger import GlobalBlock, LedgerError, build_state_block, snapshot_digest
from ..orchestrator import Behavior, World, new_world
from ..simnet import (EpochMetrics, FaultPlan, SafetyCounters, corrupt, place_within_bounds,
                      run_epoch)
from .config import ConfigError, ScenarioConfig


@dataclass
class RunResult:
    config: ScenarioConfig
    seed: int
    world: World
    epochs: list[EpochMetrics] = field(default_factory=list)
    blocks: list[GlobalBlock] = field(default_factory=list)
    union_mismatches: int = 0

    @property
    def counters(self) -> SafetyCounters:
        total = SafetyCounters()
        for m in self.epochs:
            total.merge(m.counters)
        return total


def prepare_world(cfg: ScenarioConfig, seed: int) -> World:
    """Genesis plus ``f`` corrupted nodes placed inside every committee's fault bound."""
    world = new_world(cfg, seed)
    if cfg.adversary != "none" and cfg.f > 0:
        try:
            spec = place_within_bounds(world, cfg.f, Behavior(cfg.adversary), seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        corrupt(world, spec)
    return world


def union_matches(sim, block: GlobalBlock) -> bool:
    """The merged snapshot is exactly the disjoint union of the partition states."""
    merged: dict = {}
    for p, ledger in enumerate(sim.est.ledgers):
        try:
            sb = build_state_block(ledger, sim.est.epoch_index, p, sim.T)
        except LedgerError:
            return False
        for k, e in sb.utxo_entries:
            if k in merged:
                return False
            merged[k] = e
    return snapshot_digest(merged) == block.utxo_snapshot_digest


def simulate(cfg: ScenarioConfig, seed: int, trace: list | None = None,
             xtrace: list | None = None, check_every_event: bool = False,
             fault: FaultPlan | None = None, world: World | None = None) -> RunResult:
    world = world or prepare_world(cfg, seed)
    result = RunResult(cfg, seed, world)
    for _ in range(cfg.epochs):
        world, metrics, block, sim = run_epoch(cfg, world, seed, trace=trace, xtrace=xtrace,
                                               check_every_event=check_every_event,
                                               fault=fault)
        if not union_matches(sim, block):
            result.union_mismatches += 1
        result.epochs.append(metrics)
        result.blocks.append(block)
    return result
