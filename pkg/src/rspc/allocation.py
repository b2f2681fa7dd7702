"""Per-epoch assignment of nodes to partitions.

The top 45% of eligible nodes (by reputation) pick partitions by XOR distance
between their epoch hash and per-partition anchor digests, in reputation
order. The remaining nodes draw a partition from a PCG64 stream keyed by
``(rng_seed, node_id)``. Capacity quotas keep every roster within one node of
``N_e / T``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoding import digest
from .planner import MIN_COMMITTEE
from .reputation import (DEFAULT_PARAMS, ReputationParams, ReputationRecord, Tier, classify,
                         ranking, top_percentile)

TOP_FRACTION = 0.45
PRNG_NAME = "numpy.PCG64"


class InsufficientNodes(ValueError):
    pass


@dataclass(frozen=True)
class EpochSeed:
    prev_block_hash: bytes
    epoch_index: int = 0


@dataclass
class AllocationResult:
    assignment: dict[bytes, int]
    partition_rosters: list[list[bytes]]
    tiers: dict[bytes, str] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.partition_rosters)


def epoch_hash(seed: EpochSeed, node_id: bytes) -> bytes:
    """``SHA-256(prev_block_hash || node_id)``."""
    return hashlib.sha256(seed.prev_block_hash + node_id).digest()


def xor_distance(a: bytes, b: bytes) -> int:
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


def partition_anchor(seed: EpochSeed, j: int) -> bytes:
    return digest("anchor", seed.prev_block_hash, seed.epoch_index, j)


def node_rng(rng_seed: int, node_id: bytes) -> np.random.Generator:
    key = [rng_seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(node_id[:16], "big")]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


class _Quota:
    """Open/closed bookkeeping so final roster sizes are floor or ceil of N_e/T."""

    def __init__(self, n: int, T: int):
        self.base, self.extra = divmod(n, T)
        self.sizes = [0] * T
        self.at_ceiling = 0

    def is_open(self, j: int) -> bool:
        s = self.sizes[j]
        if s < self.base:
            return True
        return s == self.base and self.at_ceiling < self.extra

    def open_partitions(self) -> list[int]:
        return [j for j in range(len(self.sizes)) if self.is_open(j)]

    def take(self, j: int):
        self.sizes[j] += 1
        if self.sizes[j] == self.base + 1:
            self.at_ceiling += 1


def eligible_nodes(nodes: Sequence[ReputationRecord], params: ReputationParams = DEFAULT_PARAMS,
                   quarantine: bool = True) -> list[ReputationRecord]:
    if not quarantine:
        return list(nodes)
    return [r for r in nodes if classify(r.score, params) is not Tier.MALICIOUS]


def allocate(nodes: Sequence[ReputationRecord], T: int, seed: EpochSeed, rng_seed: int,
             params: ReputationParams = DEFAULT_PARAMS, quarantine: bool = True) -> AllocationResult:
    if T < 1:
        raise ValueError("T must be >= 1")
    eligible = eligible_nodes(nodes, params, quarantine)
    if len(eligible) < MIN_COMMITTEE * T:
        raise InsufficientNodes(f"{len(eligible)} eligible nodes cannot fill {T} committees of 4")
    ranked = ranking(eligible)
    rosters: list[list[bytes]] = [[] for _ in range(T)]
    assignment: dict[bytes, int] = {}
    tiers: dict[bytes, str] = {}
    n_top = len(top_percentile(ranked, TOP_FRACTION))
    if T == 1:
        for i, r in enumerate(ranked):
            rosters[0].append(r.node_id)
            assignment[r.node_id] = 0
            tiers[r.node_id] = "top45" if i < n_top else "bottom55"
        return AllocationResult(assignment, rosters, tiers)

    quota = _Quota(len(ranked), T)
    anchors = [int.from_bytes(partition_anchor(seed, j), "big") for j in range(T)]
    for r in ranked[:n_top]:
        ih = int.from_bytes(epoch_hash(seed, r.node_id), "big")
        j = min(quota.open_partitions(), key=lambda k: (ih ^ anchors[k], k))
        quota.take(j)
        rosters[j].append(r.node_id)
        assignment[r.node_id] = j
        tiers[r.node_id] = "top45"
    for r in ranked[n_top:]:
        open_ = quota.open_partitions()
        j = open_[int(node_rng(rng_seed, r.node_id).integers(len(open_)))]
        quota.take(j)
        rosters[j].append(r.node_id)
        assignment[r.node_id] = j
        tiers[r.node_id] = "bottom55"
    return AllocationResult(assignment, rosters, tiers)
