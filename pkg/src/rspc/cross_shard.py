"""Global leader committee and the two-way confirmation protocol for transfers
whose sender and receiver are homed in different partitions.

This module holds the per-transfer state machine and its ledger effects; the
message exchange that drives it lives in :mod:`rspc.simnet`.
"""
from __future__ import annotations

import dataclasses
import enum
from functools import cached_property
from dataclasses import dataclass
from typing import Mapping, Sequence

from .consensus import KeyRegistry, Phase, payload_digest, safe_quorum, signed_fields
from .encoding import digest, digest_int, home_partition
from .ledger import (LedgerError, Transaction, UTXOSet, check_transaction)
from .reputation import ReputationRecord, Tier, classify, ranking, top_percentile

MIN_LEADERS = 4
DEFAULT_PAIR_THRESHOLD = 1000


class InsufficientEligibleLeaders(ValueError):
    pass


class InsufficientBalance(ValueError):
    pass


class NotCrossShard(ValueError):
    pass


class IllegalPhaseTransition(ValueError):
    pass


class ForgedLeaderToken(ValueError):
    pass


def leader_seed(prev_hash: bytes | int, T_n: int) -> int:
    if T_n < 1:
        raise ValueError("T_n must be positive")
    value = prev_hash if isinstance(prev_hash, int) else int.from_bytes(prev_hash, "big")
    return value % T_n


@dataclass(frozen=True)
class GlobalLeaderCommittee:
    members: tuple[bytes, ...]
    seed: int
    epoch: int = 0
    home: Mapping[bytes, int] | None = None

    def __post_init__(self):
        if len(self.members) < MIN_LEADERS:
            raise InsufficientEligibleLeaders(f"{len(self.members)} leaders < {MIN_LEADERS}")

    @property
    def quorum(self) -> int:
        return safe_quorum(len(self.members))


def elect_global_leaders(partitions: Sequence[Sequence[ReputationRecord]], prev_hash: bytes,
                         epoch: int = 0) -> GlobalLeaderCommittee:
    """One representative per partition from its top half, padded to four members."""
    if not partitions:
        raise ValueError("need at least one partition")
    T = len(partitions)
    T_n = max(1, sum(len(p) for p in partitions) // T)
    v_l = leader_seed(prev_hash, T_n)
    members: list[bytes] = []
    home: dict[bytes, int] = {}
    ranked = []
    for j, roster in enumerate(partitions):
        eligible = [r for r in roster if classify(r.score) != Tier.MALICIOUS]
        ranked.append([r.node_id for r in ranking(eligible)])
        if not eligible:
            continue
        electable = top_percentile(eligible, 0.5)
        pick = electable[digest_int("global-leader", v_l, j) % len(electable)]
        members.append(pick)
        home[pick] = j
    # top-up: next-ranked eligible nodes, round-robin over partitions
    cursor = [0] * T
    while len(members) < MIN_LEADERS:
        added = False
        for j in range(T):
            if len(members) >= MIN_LEADERS:
                break
            while cursor[j] < len(ranked[j]) and ranked[j][cursor[j]] in home:
                cursor[j] += 1
            if cursor[j] < len(ranked[j]):
                nid = ranked[j][cursor[j]]
                members.append(nid)
                home[nid] = j
                added = True
        if not added:
            raise InsufficientEligibleLeaders(f"only {len(members)} eligible leaders")
    return GlobalLeaderCommittee(tuple(members), v_l, epoch, home)


class XPhase(enum.IntEnum):
    REQUESTED = 1
    AUDITED = 2
    RESPONDED = 3
    REPLIED = 4
    ABORTED = 5


@dataclass(frozen=True)
class AuditSent:
    pass


@dataclass(frozen=True)
class ResponseReceived:
    exists: bool


@dataclass(frozen=True)
class LeaderDecision:
    token: "LeaderToken"
    commit: bool


@dataclass(frozen=True)
class Timeout:
    pass


@dataclass(frozen=True)
class CrossAction:
    """One item in a leader-committee batch."""
    kind: str            # "audit" | "commit" | "abort"
    tx_id: bytes

    @cached_property
    def uid(self) -> bytes:
        return digest("xaction", self.kind, self.tx_id)


@dataclass(frozen=True)
class LeaderToken:
    """Commit certificate of the leader committee for a batch of actions."""
    view: int
    seq: int
    digest: bytes
    actions: tuple[CrossAction, ...]
    signatures: tuple            # Commit ConsensusMessages

    def covers(self, action: CrossAction) -> bool:
        index = self.__dict__.get("_index")
        if index is None:
            index = frozenset(self.actions)
            object.__setattr__(self, "_index", index)
        return action in index


def verify_leader_token(token: LeaderToken, committee: GlobalLeaderCommittee,
                        registry: KeyRegistry, action: CrossAction | None = None) -> bool:
    bound = token.__dict__.get("_bound")
    if bound is None:
        bound = payload_digest(token.actions) == token.digest
        object.__setattr__(token, "_bound", bound)
    if not bound:
        return False
    if action is not None and not token.covers(action):
        return False
    members = set(committee.members)
    signers = set()
    for m in token.signatures:
        if (m.phase != Phase.COMMIT or m.view != token.view or m.seq != token.seq
                or m.digest != token.digest or m.sender not in members):
            return False
        if not registry.check(m.sender, signed_fields(Phase.COMMIT, m.view, m.seq, m.digest,
                                                      m.sender), m.auth):
            return False
        signers.add(m.sender)
    return len(signers) >= committee.quorum


@dataclass(frozen=True)
class CrossShardTransfer:
    tx: Transaction
    source_partition: int
    dest_partition: int
    phase: XPhase
    lock: tuple
    deadline: int
    history: tuple[XPhase, ...] = (XPhase.REQUESTED,)

    @property
    def tx_id(self) -> bytes:
        return self.tx.tx_id

    @property
    def terminal(self) -> bool:
        return self.phase in (XPhase.REPLIED, XPhase.ABORTED)

    def moved(self, phase: XPhase) -> "CrossShardTransfer":
        return dataclasses.replace(self, phase=phase, history=self.history + (phase,))


def route(tx: Transaction, T: int) -> tuple[int, int]:
    return home_partition(tx.sender, T), home_partition(tx.receiver, T)


def submit_cross_shard(tx: Transaction, ledgers: Sequence[UTXOSet],
                       leaders: GlobalLeaderCommittee | None = None, now: int = 0,
                       timeout: int = 12_000) -> CrossShardTransfer:
    """Request phase: validate the sender's balance and escrow the inputs."""
    T = len(ledgers)
    src, dst = route(tx, T)
    if src == dst:
        raise NotCrossShard("sender and receiver share a partition")
    for _, amount in tx.outputs:
        if amount <= 0:
            raise InsufficientBalance("non-positive output")
    try:
        check_transaction(ledgers[src].live, tx)
    except LedgerError as exc:
        raise InsufficientBalance(str(exc)) from exc
    for addr, _ in tx.outputs:
        if home_partition(addr, T) not in (src, dst):
            raise NotCrossShard("outputs span more than two partitions")
    ledgers[src].lock(tx.inputs)
    return CrossShardTransfer(tx, src, dst, XPhase.REQUESTED, tuple(tx.inputs), now + timeout)


_ALLOWED = {
    XPhase.REQUESTED: (AuditSent, Timeout, LeaderDecision),
    XPhase.AUDITED: (ResponseReceived, Timeout, LeaderDecision),
    XPhase.RESPONDED: (LeaderDecision, Timeout),
}


def release(transfer: CrossShardTransfer, ledgers: Sequence[UTXOSet]):
    ledgers[transfer.source_partition].unlock(transfer.lock)


def settle(transfer: CrossShardTransfer, ledgers: Sequence[UTXOSet]):
    """Consume the escrow at the source and mint outputs on both sides."""
    T = len(ledgers)
    ledgers[transfer.source_partition].consume_locked(transfer.lock)
    for i, (addr, v) in enumerate(transfer.tx.outputs):
        ledgers[home_partition(addr, T)].insert((transfer.tx_id, i), (addr, v))


def advance(transfer: CrossShardTransfer, event, ledgers: Sequence[UTXOSet] | None = None,
            committee: GlobalLeaderCommittee | None = None,
            registry: KeyRegistry | None = None) -> CrossShardTransfer:
    """Apply one protocol event; ledger effects happen only on terminal moves."""
    allowed = _ALLOWED.get(transfer.phase, ())
    if not isinstance(event, allowed):
        raise IllegalPhaseTransition(f"{type(event).__name__} in {transfer.phase.name}")
    if isinstance(event, AuditSent):
        return transfer.moved(XPhase.AUDITED)
    if isinstance(event, ResponseReceived):
        if event.exists:
            return transfer.moved(XPhase.RESPONDED)
        nxt = transfer.moved(XPhase.ABORTED)
        if ledgers is not None:
            release(transfer, ledgers)
        return nxt
    if isinstance(event, Timeout):
        nxt = transfer.moved(XPhase.ABORTED)
        if ledgers is not None:
            release(transfer, ledgers)
        return nxt
    # LeaderDecision
    action = CrossAction("commit" if event.commit else "abort", transfer.tx_id)
    if committee is None or registry is None or not verify_leader_token(event.token, committee,
                                                                        registry, action):
        raise ForgedLeaderToken(f"token for {transfer.tx_id.hex()[:8]} does not verify")
    if event.commit:
        if transfer.phase != XPhase.RESPONDED:
            raise IllegalPhaseTransition(f"commit in {transfer.phase.name}")
        nxt = transfer.moved(XPhase.REPLIED)
        if ledgers is not None:
            settle(transfer, ledgers)
        return nxt
    nxt = transfer.moved(XPhase.ABORTED)
    if ledgers is not None:
        release(transfer, ledgers)
    return nxt


def repartition_trigger(pair_counters: Mapping[tuple[int, int], int],
                        threshold: int = DEFAULT_PAIR_THRESHOLD) -> bool:
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    merged: dict[frozenset, int] = {}
    for (a, b), c in pair_counters.items():
        key = frozenset((a, b))
        merged[key] = merged.get(key, 0) + c
    return any(c >= threshold for c in merged.values())


VALID_SEQUENCES = (
    (XPhase.REQUESTED, XPhase.AUDITED, XPhase.RESPONDED, XPhase.REPLIED),
)


def phase_sequence_ok(history: Sequence[XPhase]) -> bool:
    """Prefix of the happy path, optionally ending in Aborted."""
    happy = VALID_SEQUENCES[0]
    body = list(history)
    if body and body[-1] == XPhase.ABORTED:
        body = body[:-1]
        if body and body[-1] == XPhase.REPLIED:
            return False
    return tuple(body) == happy[:len(body)] and len(body) >= 1
