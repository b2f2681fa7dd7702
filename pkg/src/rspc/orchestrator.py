"""Epoch lifecycle: plan, allocate, elect leaders, run, seal, reorganize."""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from .allocation import AllocationResult, EpochSeed, allocate, eligible_nodes
from .consensus import KeyRegistry
from .cross_shard import CrossShardTransfer, GlobalLeaderCommittee, elect_global_leaders
from .encoding import digest, digest_int, node_id
from .harness.config import ScenarioConfig
from .ledger import (GlobalBlock, GlobalChain, PartitionChain, Transaction, UTXOSet,
                     build_state_block, genesis, genesis_block, migration_count,
                     partition_root, partition_views, reorganize)
from .planner import PlannerInput, PlanResult, choose_by_policy
from .reputation import Event, ReputationRecord, Tier, classify, initial_record, update


class Behavior(enum.Enum):
    HONEST = "honest"
    CRASH = "crash"
    SILENT = "silent"
    EQUIVOCATE = "equivocate"
    JOIN_LEAVE = "join_leave"


class EpochPhase(enum.Enum):
    PLANNING = "planning"
    RUNNING = "running"
    SEALING = "sealing"
    REORGANIZING = "reorganizing"


class PendingTransfers(RuntimeError):
    pass


@dataclass
class World:
    config: ScenarioConfig
    records: dict[bytes, ReputationRecord]
    registry: KeyRegistry
    chain: GlobalChain
    accounts: list[bytes]
    rng_seed: int
    behaviors: dict[bytes, Behavior] = field(default_factory=dict)
    crash_times: dict[bytes, int] = field(default_factory=dict)
    epoch: int = 1
    joined: int = 0
    labels: dict[bytes, str] = field(default_factory=dict)
    last_joined: int = 0                 # fresh nodes admitted at the last boundary
    pending_reset_us: int | None = None  # boundary cost before the next first decision

    def behavior(self, nid: bytes) -> Behavior:
        return self.behaviors.get(nid, Behavior.HONEST)

    @property
    def account_set(self) -> frozenset:
        return frozenset(self.accounts)


def new_world(config: ScenarioConfig, seed: int = 0) -> World:
    """Genesis: N nodes at the initial reputation and a fixed money supply."""
    nodes = [node_id(f"node-{i}") for i in range(config.N)]
    labels = {n: f"node-{i}" for i, n in enumerate(nodes)}
    accounts = [node_id(f"acct-{i}") for i in range(config.n_accounts)]
    rng = random.Random(digest_int("genesis", seed))
    state = genesis({a: rng.randint(100, 1000) for a in accounts})
    chain = GlobalChain()
    chain.blocks.append(genesis_block(state))
    chain.migration_counts.append(0)
    return World(config, {n: initial_record(n) for n in nodes},
                 KeyRegistry.for_nodes(nodes, seed), chain, accounts, seed, labels=labels)


def pick_corrupted(world: World, k: int, seed: int) -> list[bytes]:
    """First k of a seeded permutation: sets are nested as k grows."""
    order = sorted(world.records, key=lambda n: digest("corrupt", seed, n))
    return order[:k]


@dataclass
class EpochState:
    epoch_index: int
    planner_input: PlannerInput
    plan: PlanResult
    allocation: AllocationResult
    leaders: GlobalLeaderCommittee
    base: GlobalBlock
    ledgers: list[UTXOSet]
    chains: list[PartitionChain]
    migration: int
    phase: EpochPhase = EpochPhase.PLANNING
    transfers: dict[bytes, CrossShardTransfer] = field(default_factory=dict)
    pair_counters: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.plan.T

    def in_flight(self) -> list[CrossShardTransfer]:
        return [t for t in self.transfers.values() if not t.terminal]


def planner_input_for(world: World) -> PlannerInput:
    cfg = world.config
    records = list(world.records.values())
    eligible = eligible_nodes(records)
    malicious = len(records) - len(eligible)
    f = min(max(cfg.f, malicious), len(eligible) - 1)
    return PlannerInput(N=len(eligible), f=f, t_g=cfg.t_g, t_t=cfg.t_t, W=cfg.W, p_max=cfg.p_max)


def begin_epoch(world: World, planner_input: PlannerInput | None = None,
                policy: str | None = None) -> EpochState:
    inp = planner_input or planner_input_for(world)
    plan = choose_by_policy(inp, policy or world.config.T_policy)
    head = world.chain.head
    seed = EpochSeed(world.chain.tip, world.epoch)
    alloc = allocate(list(world.records.values()), plan.T, seed, world.rng_seed)
    rosters = [[world.records[n] for n in roster] for roster in alloc.partition_rosters]
    leaders = elect_global_leaders(rosters, world.chain.tip, world.epoch)
    ledgers = partition_views(head, plan.T)
    chains = [PartitionChain(p, partition_root(head.digest, p)) for p in range(plan.T)]
    est = EpochState(world.epoch, inp, plan, alloc, leaders, head, ledgers, chains,
                     migration_count(head, ledgers))
    est.phase = EpochPhase.RUNNING
    return est


def seal_epoch(est: EpochState, chain: GlobalChain, leader_signatures: tuple = ()) -> GlobalBlock:
    pending = est.in_flight()
    if pending:
        raise PendingTransfers(f"{len(pending)} cross-partition transfers still in flight")
    est.phase = EpochPhase.SEALING
    blocks = [build_state_block(est.ledgers[p], est.epoch_index, p, est.T) for p in range(est.T)]
    for p, sb in enumerate(blocks):
        if len(sb.utxo_entries) != len(est.ledgers[p].live):
            raise AssertionError(f"partition {p} holds entries homed elsewhere")
    est.phase = EpochPhase.REORGANIZING
    g = reorganize(blocks, chain, est.T, leader_signatures)
    chain.migration_counts.append(est.migration)
    return g


def generate_workload(world: World, count: int, seed: int) -> list[Transaction]:
    """``count`` transfers from distinct senders, each spending all its outputs."""
    cfg = world.config
    rng = random.Random(digest_int("workload", seed, world.epoch))
    owned: dict[bytes, list] = {}
    for k, (addr, v) in world.chain.head.utxo_entries:
        owned.setdefault(addr, []).append((k, v))
    senders = sorted(a for a in owned)
    rng.shuffle(senders)
    txs = []
    for sender in senders[:count]:
        keys = sorted(owned[sender])
        total = sum(v for _, v in keys)
        receiver = sender
        while receiver == sender:
            receiver = world.accounts[rng.randrange(len(world.accounts))]
        amount = rng.randint(1, total)
        outs = [(receiver, amount)] + ([(sender, total - amount)] if total > amount else [])
        txs.append(Transaction(tuple(k for k, _ in keys), tuple(outs), sender, receiver,
                               size=cfg.tx_size, timestamp=0))
    return txs


def apply_reputation(world: World, good: dict[bytes, int], bad: dict[bytes, int]):
    params_good, params_bad = Event.CORRECT_PARTICIPATION, Event.DETECTED_MISBEHAVIOR
    for n, k in good.items():
        if n in world.records:
            for _ in range(k):
                world.records[n] = update(world.records[n], params_good)
    for n, k in bad.items():
        if n in world.records:
            for _ in range(k):
                world.records[n] = update(world.records[n], params_bad)


def churn(world: World, rate: int, seed: int) -> list[tuple[bytes, bytes]]:
    """Join-leave adversaries leave and rejoin under fresh identities."""
    movers = sorted((n for n, b in world.behaviors.items() if b is Behavior.JOIN_LEAVE),
                    key=lambda n: digest("churn", seed, world.epoch, n))[:rate]
    swaps = []
    for old in movers:
        world.joined += 1
        label = f"join-{seed}-{world.joined}"
        new = node_id(label)
        del world.records[old]
        world.behaviors.pop(old)
        world.records[new] = initial_record(new)
        world.behaviors[new] = Behavior.JOIN_LEAVE
        world.registry.register(new, digest("secret", label))
        world.labels[new] = label
        swaps.append((old, new))
    return swaps


def finish_epoch(world: World, est: EpochState, good=None, bad=None,
                 leader_signatures: tuple = ()) -> GlobalBlock:
    """Seal, fold reputation events, apply churn and advance the epoch counter."""
    g = seal_epoch(est, world.chain, leader_signatures)
    apply_reputation(world, good or {}, bad or {})
    world.epoch += 1
    moved = churn(world, world.config.churn_rate, world.rng_seed) if world.config.churn_rate else []
    fresh = admit_joiners(world, world.config.joiners)
    world.last_joined = len(moved) + len(fresh)
    return g


def admit_joiners(world: World, count: int) -> list[bytes]:
    """Honest newcomers at the epoch boundary; they start at the initial reputation."""
    out = []
    for _ in range(count):
        world.joined += 1
        label = f"new-{world.rng_seed}-{world.joined}"
        nid = node_id(label)
        world.records[nid] = initial_record(nid)
        world.registry.register(nid, digest("secret", label))
        world.labels[nid] = label
        out.append(nid)
    return out


def malicious_count(world: World) -> int:
    return sum(1 for r in world.records.values() if classify(r.score) is Tier.MALICIOUS)
