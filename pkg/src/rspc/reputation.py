"""Per-node reputation scores, classification and percentile ranking."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

INITIAL_SCORE = 0.5
MALICIOUS_THRESHOLD = 0.2


class Tier(enum.Enum):
    MALICIOUS = "Malicious"
    NORMAL = "Normal"
    GOOD = "Good"


class Event(enum.Enum):
    CORRECT_PARTICIPATION = "CorrectParticipation"
    DETECTED_MISBEHAVIOR = "DetectedMisbehavior"


@dataclass(frozen=True)
class ReputationParams:
    reward: float = 0.01
    penalty: float = 0.1
    deposit_fraction: float = 0.1
    good_threshold: float = 0.5
    initial_deposit: int = 100


DEFAULT_PARAMS = ReputationParams()


@dataclass(frozen=True)
class ReputationRecord:
    node_id: bytes
    score: float = INITIAL_SCORE
    deposit: int = 0
    good_events: int = 0
    bad_events: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.deposit < 0:
            raise ValueError("deposit must be non-negative")


def initial_record(node_id: bytes, params: ReputationParams = DEFAULT_PARAMS) -> ReputationRecord:
    return ReputationRecord(node_id=node_id, score=INITIAL_SCORE, deposit=params.initial_deposit)


def classify(score: float, params: ReputationParams = DEFAULT_PARAMS) -> Tier:
    if not (0.0 <= score <= 1.0) or math.isnan(score):
        raise ValueError(f"score {score} outside [0, 1]")
    if score <= MALICIOUS_THRESHOLD:
        return Tier.MALICIOUS
    if score >= params.good_threshold:
        return Tier.GOOD
    return Tier.NORMAL


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def update(record: ReputationRecord, event: Event,
           params: ReputationParams = DEFAULT_PARAMS) -> ReputationRecord:
    """Apply one reward or penalty; the score is clamped to [0, 1]."""
    if event is Event.CORRECT_PARTICIPATION:
        return replace(record, score=_clamp(record.score + params.reward),
                       good_events=record.good_events + 1)
    if event is Event.DETECTED_MISBEHAVIOR:
        slashed = int(record.deposit * params.deposit_fraction)
        return replace(record, score=_clamp(record.score - params.penalty),
                       deposit=record.deposit - slashed,
                       bad_events=record.bad_events + 1)
    raise ValueError(f"unknown event {event!r}")


def ranking(records: Iterable[ReputationRecord]) -> list[ReputationRecord]:
    """All records by (score descending, node_id ascending)."""
    return sorted(records, key=lambda r: (-r.score, r.node_id))


def percentile_count(n: int, p: float) -> int:
    return max(1, math.floor(p * n + 1e-9))


def top_percentile(records: Sequence[ReputationRecord], p: float) -> list[bytes]:
    """Ids of the ``floor(p * len)`` best-ranked records (at least one)."""
    if not records:
        raise ValueError("top_percentile of an empty record list")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p={p} outside (0, 1]")
    ranked = ranking(records)
    return [r.node_id for r in ranked[:percentile_count(len(ranked), p)]]
