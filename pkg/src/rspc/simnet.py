"""Deterministic discrete-event simulation of one epoch of the sharded network.

Time is integer microseconds. Every node is a FIFO server: a message that
arrives at ``t`` is handled at ``max(t, busy_until) + cost`` and anything it
sends leaves at that moment. All randomness comes from ``random.Random``
streams derived from the run seed, so a (config, world, seed) triple fixes the
trace.
"""
from __future__ import annotations

import heapq
import random
from collections import defaultdict
from dataclasses import dataclass, field

from .consensus import (CommitteeState, ConsensusMessage, ConsensusParams, EquivocationDetected,
                        InvalidAuth, Phase, payload_digest, quorum_sizes)
from .cross_shard import (AuditSent, CrossAction, CrossShardTransfer, LeaderDecision,
                          LeaderToken, ResponseReceived, XPhase, advance, repartition_trigger,
                          verify_leader_token)
from .encoding import digest, digest_int, encode, home_partition
from .ledger import LedgerError, SubBlock, Transaction, assign_shard, check_transaction
from .orchestrator import (Behavior, EpochState, World, begin_epoch, finish_epoch,
                           generate_workload)

G_KEY = -1          # committee key of the global leader committee
X_KINDS = ("request", "audit", "response", "reply")


# ---------------------------------------------------------------- event queue
@dataclass(order=True)
class SimEvent:
    fire_time: int
    sequence_no: int
    target: object = field(compare=False, default=None)
    payload: object = field(compare=False, default=None)


class PastEvent(ValueError):
    pass


class EventQueue:
    """Min-heap on (fire_time, sequence_no); the queue hands out sequence numbers."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0
        self.now = 0

    def __len__(self):
        return len(self._heap)

    def push(self, fire_time: int, target, payload) -> int:
        if fire_time < self.now:
            raise PastEvent(f"event at {fire_time} before clock {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (fire_time, self._seq, target, payload))
        return self._seq

    def pop(self) -> SimEvent | None:
        if not self._heap:
            return None
        t, s, target, payload = heapq.heappop(self._heap)
        self.now = t
        return SimEvent(t, s, target, payload)


def schedule(queue: EventQueue, event: SimEvent) -> EventQueue:
    """Insert ``event``; its ``sequence_no`` is overwritten by the queue counter."""
    event.sequence_no = queue.push(event.fire_time, event.target, event.payload)
    return queue


class DelayModel:
    def __init__(self, kind: str = "uniform", lo: int = 1000, hi: int = 5000, seed: int = 0):
        if kind not in ("fixed", "uniform"):
            raise ValueError(f"unknown delay distribution {kind!r}")
        if lo < 0 or hi < lo:
            raise ValueError("need 0 <= lo <= hi")
        self.kind, self.lo, self.hi = kind, lo, hi
        self._rng = random.Random(seed)
        self._span = hi - lo + 1

    def sample(self) -> int:
        if self.kind == "fixed":
            return self.lo
        return self.lo + int(self._rng.random() * self._span)

    @property
    def mean(self) -> float:
        return self.lo if self.kind == "fixed" else (self.lo + self.hi) / 2


# ---------------------------------------------------------------- adversary
@dataclass(frozen=True)
class AdversarySpec:
    corrupted: frozenset
    behavior: Behavior
    churn_rate: int = 0
    crash_time_us: int | None = None


def corrupt(world: World, spec: AdversarySpec) -> World:
    unknown = [n for n in spec.corrupted if n not in world.records]
    if unknown:
        raise ValueError(f"{len(unknown)} corrupted ids are not in the network")
    if len(spec.corrupted) >= len(world.records):
        raise ValueError("cannot corrupt every node")
    for n in spec.corrupted:
        world.behaviors[n] = spec.behavior
        if spec.behavior is Behavior.CRASH:
            t = spec.crash_time_us
            if t is None:
                t = random.Random(digest_int("crash", world.rng_seed, n)).randint(0, 20_000)
            world.crash_times[n] = t
    return world


def place_within_bounds(world: World, k: int, behavior: Behavior, seed: int,
                        policy: str | None = None) -> AdversarySpec:
    """``k`` corrupted nodes in seeded order, skipping any node whose partition or
    leader-committee seat is already at its fault bound for the coming epoch."""
    est = begin_epoch(world, policy=policy)
    cap = {p: quorum_sizes(len(r)).f_max for p, r in enumerate(est.allocation.partition_rosters)}
    part = {n: p for p, r in enumerate(est.allocation.partition_rosters) for n in r}
    leaders = set(est.leaders.members)
    g_cap = quorum_sizes(len(leaders)).f_max
    used: dict[int, int] = defaultdict(int)
    g_used = 0
    out = []
    for n in sorted(world.records, key=lambda n: digest("corrupt", seed, n)):
        if len(out) == k:
            break
        p = part.get(n)
        if p is not None and used[p] >= cap[p]:
            continue
        if n in leaders and g_used >= g_cap:
            continue
        out.append(n)
        if p is not None:
            used[p] += 1
        g_used += n in leaders
    if len(out) < k:
        raise ValueError(f"only {len(out)} of {k} corruptions fit the committee bounds")
    return AdversarySpec(frozenset(out), behavior)


@dataclass
class FaultPlan:
    """Message-level fault injected at one cross-partition phase.

    ``drop`` loses each message of that kind with probability ``rate``;
    ``delay`` holds it past the source deadline; ``crash`` stops the first
    sender's committee-mates (up to the committee's fault bound) just before
    the first message of that kind goes out.
    """
    kind: str | None = None          # one of X_KINDS
    mode: str = "drop"               # drop | delay | crash
    rate: float = 0.5
    seed: int = 0
    fired: bool = False

    def __post_init__(self):
        if self.kind is not None and self.kind not in X_KINDS:
            raise ValueError(f"unknown phase {self.kind!r}")
        if self.mode not in ("drop", "delay", "crash"):
            raise ValueError(f"unknown fault mode {self.mode!r}")
        self._rng = random.Random(self.seed)

    def hits(self, kind: str, mode: str) -> bool:
        return self.kind == kind and self.mode == mode

    def drop(self) -> bool:
        return self._rng.random() < self.rate


# ---------------------------------------------------------------- messages
@dataclass(frozen=True)
class XMsg:
    """Cross-partition protocol message, authenticated by its sender."""
    kind: str                 # request | audit | response | reply | abort_req
    sender: bytes
    partition: int
    items: tuple
    auth: bytes
    token: LeaderToken | None = None


_FLAGS = {True: b"\x01", False: b"\x00", "audit": b"A", "commit": b"C", "abort": b"X"}


def x_fields(kind: str, sender: bytes, partition: int, items: tuple) -> bytes:
    """Signed bytes of an XMsg: a fixed header, then each item as a 32-byte
    tx id followed by a one-byte flag or a 32-byte address."""
    parts = [encode("xmsg", kind, sender, partition, len(items))]
    for i in items:
        if isinstance(i, Transaction):
            parts.append(i.tx_id)
        else:
            tx_id, extra = i
            parts.append(tx_id)
            parts.append(extra if isinstance(extra, bytes) else _FLAGS[extra])
    return b"".join(parts)


@dataclass(frozen=True)
class ProposedAction:
    """Leader-committee batch item carrying the partition messages that justify it."""
    action: CrossAction
    tx: Transaction
    evidence: tuple

    @property
    def uid(self) -> bytes:
        return self.action.uid


# ---------------------------------------------------------------- metrics
@dataclass
class SafetyCounters:
    forks: int = 0
    double_spends: int = 0
    migration: int = 0
    conservation_violations: int = 0
    lock_violations: int = 0
    forged_tokens_rejected: int = 0
    forgery_attempts: int = 0
    invalid_auth: int = 0

    def merge(self, other: "SafetyCounters"):
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + getattr(other, k))

    @property
    def violations(self) -> int:
        return (self.forks + self.double_spends + self.migration
                + self.conservation_violations + self.lock_violations)


@dataclass
class EpochMetrics:
    epoch: int
    T: int
    T_n: int
    submitted: int = 0
    decided: int = 0
    aborted: int = 0
    displaced: int = 0
    carried: int = 0
    cross: int = 0
    duration_us: int = 0
    first_decision_us: int | None = None
    first_g_decision_us: int | None = None
    reset_delay_us: int | None = None
    latencies_us: list = field(default_factory=list)
    view_changes: int = 0
    blocks: int = 0
    messages: int = 0
    ended_by_trigger: bool = False
    counters: SafetyCounters = field(default_factory=SafetyCounters)


class _GKnow:
    """What one leader-committee member has heard about in-flight transfers."""

    __slots__ = ("req", "pos", "neg", "abort", "txs", "audited", "decided", "ready")

    def __init__(self):
        self.req: dict = defaultdict(dict)
        self.pos: dict = defaultdict(dict)
        self.neg: dict = defaultdict(dict)
        self.abort: dict = defaultdict(dict)
        self.txs: dict = {}
        self.audited: set = set()
        self.decided: dict = {}
        self.ready: dict = {}


# ---------------------------------------------------------------- engine
class EpochSim:
    """One epoch: every committee's replicas, the leader committee, and the
    request/audit/response/reply exchange, over one shared event queue."""

    def __init__(self, world: World, est: EpochState, txs: list[Transaction], seed: int,
                 check_every_event: bool = False, trace: list | None = None,
                 xtrace: list | None = None, fault: FaultPlan | None = None):
        cfg = world.config
        self.world, self.est, self.cfg = world, est, cfg
        self.registry = world.registry
        self.q = EventQueue()
        self.delay = DelayModel(cfg.delay, cfg.delay_lo_us, cfg.delay_hi_us,
                                digest_int("delay", seed, est.epoch_index))
        self.check_every_event = check_every_event
        self.trace, self.xtrace = trace, xtrace
        self.fault = fault or FaultPlan()
        self.counters = SafetyCounters(migration=est.migration)
        self.metrics = EpochMetrics(est.epoch_index, est.T, est.plan.T_n, submitted=len(txs))
        self.T = T = est.T
        self.busy: dict[bytes, int] = defaultdict(int)
        self.crashed: set[bytes] = set()
        self.behavior = {n: world.behavior(n) for n in world.records}
        self.honest = {n for n, b in self.behavior.items()
                       if b in (Behavior.HONEST, Behavior.JOIN_LEAVE)}

        params = ConsensusParams(view_timeout_us=cfg.view_timeout_ms * 1000)
        tip = est.base.digest
        self.members: dict[int, list[bytes]] = {
            p: list(r) for p, r in enumerate(est.allocation.partition_rosters)}
        self.members[G_KEY] = list(est.leaders.members)
        self.part_of = {n: p for p in range(T) for n in self.members[p]}
        self.states: dict[int, dict[bytes, CommitteeState]] = {}
        for ckey, roster in self.members.items():
            recs = {n: world.records[n] for n in roster}
            cseed = digest_int("committee", tip, ckey + 1) & 0xFFFFFFFFFFFFFFFF
            check = self._validate_g if ckey == G_KEY else self._partition_validator(ckey)
            self.states[ckey] = {n: CommitteeState(n, roster, self.registry, recs, cseed, params,
                                                   check) for n in roster}
        self.fq = {k: quorum_sizes(len(r)).f_max + 1 for k, r in self.members.items()}
        self.gk = {n: _GKnow() for n in est.leaders.members}
        self.armed: dict[tuple, int] = {}

        # workload, routed by the sender's partition
        reps = [sum(world.records[n].score for n in self.members[p]) / len(self.members[p])
                for p in range(T)]
        self.mempool: list[list[Transaction]] = [[] for _ in range(T)]
        for tx in txs:
            self.mempool[assign_shard(tx, T, reps, cfg.W_t)].append(tx)
        self.mp_ptr = [0] * T
        self.submit_time = {tx.tx_id: tx.timestamp for tx in txs}
        self.owner_tx = {inp: tx.tx_id for tx in txs for inp in tx.inputs}
        self.remaining = len(txs)
        self.open_x = 0
        self.admit = True
        self.accounts = world.account_set

        self.tx_done: set[bytes] = set()
        self.included: set[bytes] = set()
        self.decided: dict[tuple[int, int], list] = {}     # (ckey, seq) -> [digest, honest]
        self.spent_by: dict = {}
        self.height = [0] * T
        self.validate_cache: dict = {}
        self.token_ok: dict[int, tuple] = {}
        self.msg_ok: dict[int, tuple] = {}
        self.got_reply: dict[bytes, dict] = defaultdict(dict)
        self.receipts: set[tuple[bytes, int]] = set()
        self.responded: dict[bytes, set] = defaultdict(set)
        self.seen_items: dict[bytes, set] = defaultdict(set)
        self.resent: dict[tuple[bytes, bytes], int] = {}
        self.lock_releases: dict[bytes, int] = defaultdict(int)
        self.splits: dict = {}
        self.flagged: dict[tuple[int, bytes], set] = defaultdict(set)
        self.span = int(4 * cfg.xshard_timeout_factor * self.delay.mean)
        self.genesis_total = sum(l.total() for l in est.ledgers)
        self.last_resolution = 0
        self.stopped_at: int | None = None

    # ------------------------------------------------------------ plumbing
    def _send(self, dst: bytes, t: int, payload):
        self.q.push(t + self.delay.sample(), dst, payload)
        self.metrics.messages += 1

    def _alive(self, node: bytes, t: int) -> bool:
        if node in self.crashed:
            return False
        ct = self.world.crash_times.get(node)
        if ct is not None and t >= ct and self.behavior.get(node) is Behavior.CRASH:
            self.crashed.add(node)
            return False
        return True

    def _fresh(self, node: bytes, items) -> int:
        """Items this node has not verified before; only those cost verification time."""
        seen = self.seen_items[node]
        n = 0
        for item in items:
            if isinstance(item, Transaction):
                key = item.tx_id
            elif isinstance(item, ProposedAction):
                key = item.tx.tx_id
            elif isinstance(item, tuple):
                key = item[0]
            else:
                key = item
            if key not in seen:
                seen.add(key)
                n += 1
        return n

    def _work(self, node: bytes, t: int, cost: int) -> int:
        b = self.busy[node]
        done = (t if t > b else b) + cost
        self.busy[node] = done
        return done

    def _set_pending(self, ckey: int, pending: bool, t: int):
        for node, st in self.states[ckey].items():
            st.set_pending(pending, t)
            self._arm(node, ckey, st)

    def _arm(self, node: bytes, ckey: int, st: CommitteeState):
        dl = st.deadline
        if dl is not None and self.armed.get((node, ckey)) != dl:
            self.armed[(node, ckey)] = dl
            self.q.push(max(dl, self.q.now), node, (2, ckey))

    # ------------------------------------------------------------ consensus outbound
    def _emit(self, node: bytes, ckey: int, msgs, t: int):
        if not msgs:
            return
        beh = self.behavior.get(node, Behavior.HONEST)
        if beh is Behavior.SILENT or not self._alive(node, t):
            return
        targets = [m for m in self.members[ckey] if m != node]
        for msg in msgs:
            if msg.phase == Phase.NEW_VIEW:
                self.metrics.view_changes += 1
            if beh is Behavior.EQUIVOCATE:
                for dst, m in self._equivocate(node, ckey, msg, targets):
                    self._send(dst, t, (0, ckey, m))
            else:
                for dst in targets:
                    self._send(dst, t, (0, ckey, msg))

    def _group_a(self, ckey, view, seq, targets) -> set:
        order = sorted(targets, key=lambda d: digest("split", ckey + 1, view, seq, d))
        return set(order[:len(order) // 2])

    def _equivocate(self, node, ckey, msg, targets):
        """Split the committee: conflicting proposals, and votes for both sides."""
        key = (ckey, msg.view, msg.seq)
        reg = self.registry
        if msg.phase == Phase.PRE_PREPARE:
            alt_payload = self._conflicting(ckey, msg.payload)
            if alt_payload is None:
                return [(d, msg) for d in targets]
            alt = reg.sign(Phase.PRE_PREPARE, msg.view, msg.seq, payload_digest(alt_payload),
                           node, alt_payload)
            group_a = self._group_a(ckey, msg.view, msg.seq, targets)
            self.splits[key] = (group_a, msg, alt)
            return [(d, msg if d in group_a else alt) for d in targets]
        if msg.phase in (Phase.PREPARE, Phase.COMMIT):
            split = self.splits.get(key)
            if split is not None:
                group_a, pa, pb = split
                proof = msg.phase == Phase.PREPARE
                ma = reg.sign(msg.phase, msg.view, msg.seq, pa.digest, node,
                              proof=pa.auth if proof else None)
                mb = reg.sign(msg.phase, msg.view, msg.seq, pb.digest, node,
                              proof=pb.auth if proof else None)
                return [(d, ma if d in group_a else mb) for d in targets]
            bogus = reg.sign(msg.phase, msg.view, msg.seq, digest("bogus", msg.digest), node)
            group_a = self._group_a(ckey, msg.view, msg.seq, targets)
            return [(d, msg if d in group_a else bogus) for d in targets]
        return [(d, msg) for d in targets]

    def _conflicting(self, ckey, payload):
        """A different batch for the same slot that still passes validation."""
        if not payload:
            return None
        if ckey == G_KEY:
            return tuple(payload[:-1])
        first = payload[0]
        variant = Transaction(first.inputs, ((first.sender, first.amount_out),), first.sender,
                              first.sender, first.size, first.timestamp + 1)
        return (variant,) + tuple(payload[1:])

    # ------------------------------------------------------------ validation
    def _partition_validator(self, p: int):
        def validate(seq, payload):
            key = (p, seq, id(payload))
            hit = self.validate_cache.get(key)
            if hit is None:
                hit = self.validate_cache[key] = (self._check_batch(p, seq, payload), payload)
            return hit[0]
        return validate

    def _check_batch(self, p: int, seq: int, payload) -> bool:
        if not isinstance(payload, tuple):
            return False
        if seq <= self.height[p]:
            rec = self.decided.get((p, seq))
            return rec is not None and rec[0] == payload_digest(payload)
        if seq != self.height[p] + 1:
            return False
        live = self.est.ledgers[p].live
        spent: set = set()
        for tx in payload:
            if not isinstance(tx, Transaction) or tx.tx_id in self.included:
                return False
            if home_partition(tx.sender, self.T) != p:
                return False
            dst = home_partition(tx.receiver, self.T)
            if any(home_partition(a, self.T) not in (p, dst) for a, _ in tx.outputs):
                return False
            try:
                check_transaction(live, tx, spent)
            except LedgerError:
                return False
            spent.update(tx.inputs)
        return True

    def _validate_g(self, seq: int, payload) -> bool:
        key = (G_KEY, seq, id(payload))
        hit = self.validate_cache.get(key)
        if hit is None:
            ok = isinstance(payload, tuple) and all(self._justified(pa) for pa in payload)
            hit = self.validate_cache[key] = (ok, payload)
        return hit[0]

    def _authentic(self, m: XMsg) -> bool:
        hit = self.msg_ok.get(id(m))
        if hit is None:
            ok = self.registry.check(m.sender, x_fields(m.kind, m.sender, m.partition, m.items),
                                     m.auth)
            hit = self.msg_ok[id(m)] = (ok, m)
        return hit[0]

    def _signers(self, evidence, kind: str, partition: int, match) -> set:
        out = set()
        for m in evidence:
            if (isinstance(m, XMsg) and m.kind == kind and m.partition == partition
                    and self.part_of.get(m.sender) == partition
                    and any(match(i) for i in m.items) and self._authentic(m)):
                out.add(m.sender)
        return out

    def _justified(self, pa) -> bool:
        if not isinstance(pa, ProposedAction) or pa.action.tx_id != pa.tx.tx_id:
            return False
        tx, kind, tx_id = pa.tx, pa.action.kind, pa.tx.tx_id
        src = home_partition(tx.sender, self.T)
        dst = home_partition(tx.receiver, self.T)
        if src == dst:
            return False
        is_tx = lambda i: isinstance(i, Transaction) and i.tx_id == tx_id  # noqa: E731
        if kind == "audit":
            return len(self._signers(pa.evidence, "request", src, is_tx)) >= self.fq[src]
        if kind == "commit":
            yes = self._signers(pa.evidence, "response", dst, lambda i: i == (tx_id, True))
            return len(yes) >= self.fq[dst]
        if kind == "abort":
            no = self._signers(pa.evidence, "response", dst, lambda i: i == (tx_id, False))
            req = self._signers(pa.evidence, "abort_req", src, is_tx)
            return len(no) >= self.fq[dst] or len(req) >= self.fq[src]
        return False

    # ------------------------------------------------------------ proposing
    def _next_batch(self, p: int) -> tuple:
        pool, i = self.mempool[p], self.mp_ptr[p]
        while i < len(pool) and pool[i].tx_id in self.included:
            i += 1
        self.mp_ptr[p] = i
        out = []
        while i < len(pool) and len(out) < self.cfg.batch_size:
            if pool[i].tx_id not in self.included:
                out.append(pool[i])
            i += 1
        return tuple(out)

    def _maybe_propose(self, node: bytes, ckey: int, t: int):
        st = self.states[ckey][node]
        if not st.can_propose() or not self._alive(node, t):
            return
        if ckey == G_KEY:
            kn = self.gk[node]
            if not kn.ready:
                return
            batch = tuple(self._g_action(kn, tx_id, kind) for tx_id, kind in kn.ready.items())
        else:
            if not self.admit:
                return
            batch = self._next_batch(ckey)
            if not batch:
                return
        done = self._work(node, t, self.cfg.tx_verify_us * self._fresh(node, batch))
        self._emit(node, ckey, st.propose(batch, done), done)
        self._arm(node, ckey, st)

    def _g_action(self, kn: _GKnow, tx_id: bytes, kind: str) -> ProposedAction:
        if kind == "audit":
            ev = tuple(kn.req[tx_id].values())
        elif kind == "commit":
            ev = tuple(kn.pos[tx_id].values())
        else:
            ev = tuple(kn.neg[tx_id].values()) + tuple(kn.abort[tx_id].values())
        return ProposedAction(CrossAction(kind, tx_id), kn.txs[tx_id], ev)

    # ------------------------------------------------------------ main loop
    def start(self):
        for p in range(self.T):
            self._set_pending(p, bool(self.mempool[p]), 0)
        for p in range(self.T):
            for node in self.members[p]:
                self._maybe_propose(node, p, 0)

    def run(self) -> EpochMetrics:
        """Run until the workload is resolved; past ``max_sim_s`` admission stops
        and in-flight transfers get one more ``max_sim_s`` to drain."""
        self.start()
        limit = int(self.cfg.max_sim_s * 1e6)
        heap = self.q._heap
        pop = heapq.heappop
        while heap and ((self.admit and self.remaining > 0) or self.open_x > 0):
            t, _, node, payload = pop(heap)
            self.q.now = t
            if t > limit:
                if self.stopped_at is not None:
                    break
                self._stop_admission(t)
                limit = t + int(self.cfg.max_sim_s * 1e6)
            kind = payload[0]
            if kind == 0:
                self._on_consensus(node, payload[1], payload[2], t)
            elif kind == 1:
                self._on_x(node, payload[1], t)
            elif kind == 2:
                self._on_timer(node, payload[1], t)
            else:
                self._on_source_timeout(node, payload[1], payload[2], t)
            if self.check_every_event:
                self._check_conservation()
        self._check_conservation()
        for tr in self.est.transfers.values():
            if tr.terminal and self.lock_releases[tr.tx_id] != 1:
                self.counters.lock_violations += 1
            if tr.terminal and any(k in self.est.ledgers[tr.source_partition].locked
                                   for k in tr.lock):
                self.counters.lock_violations += 1
        m = self.metrics
        m.duration_us = self.last_resolution
        m.carried = self.remaining
        m.counters = self.counters
        return m

    def _stop_admission(self, t: int):
        """No new batches; transfers already requested still run to completion."""
        if self.stopped_at is None:
            self.stopped_at = t
        self.admit = False
        for p in range(self.T):
            self._set_pending(p, False, t)

    def _check_conservation(self):
        if sum(l.total() for l in self.est.ledgers) != self.genesis_total:
            self.counters.conservation_violations += 1

    # ------------------------------------------------------------ consensus delivery
    def _on_consensus(self, node: bytes, ckey: int, msg: ConsensusMessage, t: int):
        if not self._alive(node, t):
            return
        st = self.states[ckey][node]
        cost = self.cfg.msg_cost_us
        if msg.payload and msg.phase in (Phase.PRE_PREPARE, Phase.NEW_VIEW):
            cost += self.cfg.tx_verify_us * self._fresh(node, msg.payload)
        done = self._work(node, t, cost)
        try:
            out, decided = st.handle(msg, done)
        except EquivocationDetected as exc:
            self.flagged[(ckey, exc.sender)].add(node)
            out, decided = [], []
            if exc.sender == st.leader and not st.in_view_change:
                out = st.accuse(exc.evidence, done)
        except InvalidAuth:
            self.counters.invalid_auth += 1
            return
        if self.trace is not None:
            self.trace.append((self.est.epoch_index, done, ckey, msg.phase.name, msg.view,
                               msg.seq, msg.sender.hex()[:16],
                               ";".join(str(d.seq) for d in decided)))
        self._emit(node, ckey, out, done)
        for d in decided:
            self._on_decide(node, ckey, d, st, done)
        self._arm(node, ckey, st)
        self._maybe_propose(node, ckey, done)

    def _on_timer(self, node: bytes, ckey: int, t: int):
        if self.armed.get((node, ckey)) == t:
            del self.armed[(node, ckey)]
        if not self._alive(node, t):
            return
        st = self.states[ckey][node]
        if st.deadline is None or t < st.deadline:
            self._arm(node, ckey, st)
            return
        self._emit(node, ckey, st.on_timer(t), t)
        self._arm(node, ckey, st)
        self._maybe_propose(node, ckey, t)

    def _on_decide(self, node: bytes, ckey: int, d, st: CommitteeState, t: int):
        if node in self.honest:
            key = (ckey, d.seq)
            rec = self.decided.get(key)
            if rec is None:
                rec = self.decided[key] = [d.digest, 0]
                self._apply(ckey, d, st, t)
            elif rec[0] != d.digest:
                self.counters.forks += 1
                return
            rec[1] += 1
            if rec[1] == self.fq[ckey]:
                self._confirm(ckey, d, t)
        if ckey == G_KEY:
            self._g_execute(node, d, st, t)
        else:
            self._send_requests(node, ckey, d, t)

    def _apply(self, ckey: int, d, st: CommitteeState, t: int):
        """First honest execution of (committee, seq) updates the canonical ledger."""
        est = self.est
        if ckey == G_KEY:
            for pa in d.payload:
                tr = est.transfers.get(pa.action.tx_id)
                if tr is None:
                    continue
                if pa.action.kind == "audit" and tr.phase == XPhase.REQUESTED:
                    est.transfers[tr.tx_id] = tr = advance(tr, AuditSent())
                elif pa.action.kind == "commit" and tr.phase == XPhase.AUDITED:
                    est.transfers[tr.tx_id] = tr = advance(tr, ResponseReceived(True))
                else:
                    continue
                self._xtrace(t, tr, "")
            return
        p = ckey
        ledger = est.ledgers[p]
        for tx in d.payload:
            for inp in tx.inputs:
                prev = self.spent_by.get(inp)
                if prev is not None and prev != tx.tx_id:
                    self.counters.double_spends += 1
                self.spent_by[inp] = tx.tx_id
        spent: set = set()
        try:
            for tx in d.payload:
                check_transaction(ledger.live, tx, spent)
                spent.update(tx.inputs)
        except LedgerError:
            # an honest replica executed a batch the ledger rejects
            self.counters.double_spends += 1
            return
        chain = est.chains[p]
        chain.append(SubBlock(p, d.seq, chain.tip, tuple(d.payload), st.leader,
                              st.vote_senders(d.seq)))
        self.height[p] = d.seq
        self.metrics.blocks += 1
        trigger = False
        for tx in d.payload:
            self.included.add(tx.tx_id)
            if tx.tx_id not in self.submit_time:
                self._displace(tx, t)
            dst = home_partition(tx.receiver, self.T)
            if dst == p:
                for key in tx.inputs:
                    del ledger.live[key]
                for i, entry in enumerate(tx.outputs):
                    ledger.insert((tx.tx_id, i), entry)
                continue
            ledger.lock(tx.inputs)
            tr = CrossShardTransfer(tx, p, dst, XPhase.REQUESTED, tuple(tx.inputs), t + self.span)
            est.transfers[tx.tx_id] = tr
            self.open_x += 1
            self.metrics.cross += 1
            self._xtrace(t, tr, "")
            pair = (min(p, dst), max(p, dst))
            est.pair_counters[pair] = est.pair_counters.get(pair, 0) + 1
            trigger = True
        if self.cfg.epoch_rounds and d.seq >= self.cfg.epoch_rounds:
            self._carry(p)
        if not self._next_batch(p):
            self._set_pending(p, False, t)
        if trigger and self.admit and repartition_trigger(est.pair_counters,
                                                          self.cfg.pair_threshold):
            self.metrics.ended_by_trigger = True
            self._stop_admission(t)

    def _carry(self, p: int):
        """Round budget reached: the rest of this partition's pool waits for the next epoch."""
        self.mp_ptr[p] = len(self.mempool[p])
        self.admit = any(self.mp_ptr[q] < len(self.mempool[q]) for q in range(self.T))

    def _displace(self, tx: Transaction, t: int):
        """A Byzantine variant won the slot; the workload tx it conflicts with is void."""
        for inp in tx.inputs:
            orig = self.owner_tx.get(inp)
            if orig is not None and orig not in self.tx_done:
                self.included.add(orig)
                self.tx_done.add(orig)
                self.remaining -= 1
                self.metrics.displaced += 1

    def _confirm(self, ckey: int, d, t: int):
        """f+1 honest replicas executed the block, so a client sees f+1 matching replies."""
        if ckey == G_KEY:
            if self.metrics.first_g_decision_us is None:
                self.metrics.first_g_decision_us = t
            return
        if self.metrics.first_decision_us is None:
            self.metrics.first_decision_us = t
        for tx in d.payload:
            if home_partition(tx.receiver, self.T) == ckey:
                self._resolve(tx.tx_id, t, True)

    def _resolve(self, tx_id: bytes, t: int, ok: bool):
        if tx_id in self.tx_done or tx_id not in self.submit_time:
            return
        self.tx_done.add(tx_id)
        self.remaining -= 1
        self.last_resolution = max(self.last_resolution, t)
        if ok:
            self.metrics.decided += 1
            self.metrics.latencies_us.append(t - self.submit_time[tx_id])
        else:
            self.metrics.aborted += 1

    def _xtrace(self, t: int, tr: CrossShardTransfer, outcome: str):
        if self.xtrace is not None:
            self.xtrace.append((self.est.epoch_index, t, tr.tx_id.hex()[:16], tr.phase.name,
                                tr.source_partition, tr.dest_partition, outcome))

    # ------------------------------------------------------------ cross-partition exchange
    def _committee_of(self, node: bytes, kind: str) -> int:
        return G_KEY if kind in ("audit", "reply") else self.part_of[node]

    def _crash_phase(self, node: bytes, kind: str):
        """Crash up to the fault bound of the sender's committee, the sender first.
        Leaders also sit in a partition, so a victim must fit both committees' bounds."""
        self.fault.fired = True
        ckey = self._committee_of(node, kind)
        faulty = {k: sum(1 for m in ms if m not in self.honest) for k, ms in self.members.items()}
        order = sorted((m for m in self.members[ckey] if m in self.honest),
                       key=lambda m: (m != node, digest("fault-crash", m)))
        for m in order:
            homes = {self.part_of[m]} | ({G_KEY} if m in self.gk else set())
            if all(faulty[k] < self.fq[k] - 1 for k in homes):
                self.crashed.add(m)
                for k in homes:
                    faulty[k] += 1

    def _xsend(self, node: bytes, targets, t: int, kind: str, partition: int, items: tuple,
               token=None):
        if not items:
            return
        fault = self.fault
        if fault.hits(kind, "crash") and not fault.fired:
            self._crash_phase(node, kind)
        if not self._alive(node, t) or self.behavior.get(node) is Behavior.SILENT:
            return
        if self.behavior.get(node) is Behavior.EQUIVOCATE and kind == "response":
            items = tuple((tx_id, not ok) for tx_id, ok in items)
        auth = self.registry.token(node, x_fields(kind, node, partition, items))
        msg = XMsg(kind, node, partition, items, auth, token)
        extra = 2 * self.span if fault.hits(kind, "delay") else 0
        dropping = fault.hits(kind, "drop")
        for dst in targets:
            if dropping and fault.drop():
                continue
            self.q.push(t + self.delay.sample() + extra, dst, (1, msg))
            self.metrics.messages += 1

    def _send_requests(self, node: bytes, p: int, d, t: int):
        cross = tuple(tx for tx in d.payload if home_partition(tx.receiver, self.T) != p)
        if not cross:
            return
        self._xsend(node, self.members[G_KEY], t, "request", p, cross)
        self.q.push(t + self.span, node, (3, p, tuple(tx.tx_id for tx in cross)))

    def _on_source_timeout(self, node: bytes, p: int, tx_ids: tuple, t: int):
        """Deadline passed without a reply: ask the leaders to abort, and keep asking."""
        if not self._alive(node, t):
            return
        transfers = self.est.transfers
        open_ = tuple(i for i in tx_ids if i not in self.got_reply[node]
                      and i in transfers and not transfers[i].terminal)
        if not open_:
            return
        txs = tuple(transfers[i].tx for i in open_)
        self._xsend(node, self.members[G_KEY], t, "abort_req", p, txs)
        self.q.push(t + self.span, node, (3, p, open_))

    def _token_valid(self, token, action: CrossAction) -> bool:
        if token is None:
            return False
        hit = self.token_ok.get(id(token))
        if hit is None:
            ok = verify_leader_token(token, self.est.leaders, self.registry)
            hit = self.token_ok[id(token)] = (ok, token)
        return hit[0] and token.covers(action)

    def _on_x(self, node: bytes, msg: XMsg, t: int):
        if not self._alive(node, t):
            return
        done = self._work(node, t, self.cfg.msg_cost_us
                          + self.cfg.tx_verify_us * self._fresh(node, msg.items))
        if msg.kind == "audit":
            self._on_audit(node, msg, done)
        elif msg.kind == "reply":
            self._on_reply(node, msg, done)
        elif node in self.gk:
            self._g_receive(node, msg, done)

    def _on_audit(self, node: bytes, msg: XMsg, t: int):
        p = self.part_of.get(node)
        if p is None or msg.partition != p:
            return
        answers = []
        for tx_id, receiver in msg.items:
            if not self._token_valid(msg.token, CrossAction("audit", tx_id)):
                self.counters.forged_tokens_rejected += 1
                continue
            if tx_id in self.responded[node]:
                continue
            self.responded[node].add(tx_id)
            exists = receiver in self.accounts and home_partition(receiver, self.T) == p
            answers.append((tx_id, exists))
        self._xsend(node, self.members[G_KEY], t, "response", p, tuple(answers))

    def _on_reply(self, node: bytes, msg: XMsg, t: int):
        p = self.part_of.get(node)
        if p is None:
            return
        got = self.got_reply[node]
        for tx_id, kind in msg.items:
            if tx_id in got and msg.token is got[tx_id]:
                continue
            if not self._token_valid(msg.token, CrossAction(kind, tx_id)):
                self.counters.forged_tokens_rejected += 1
                continue
            got[tx_id] = msg.token
            if node not in self.honest or (tx_id, p) in self.receipts:
                continue
            self.receipts.add((tx_id, p))
            tr = self.est.transfers.get(tx_id)
            if tr is None or tr.terminal:
                continue
            if kind == "abort" and p == tr.source_partition:
                self._finish_transfer(tr, msg.token, False, t)
            elif kind == "commit" and (tx_id, tr.source_partition) in self.receipts \
                    and (tx_id, tr.dest_partition) in self.receipts:
                self._finish_transfer(tr, msg.token, True, t)

    def _finish_transfer(self, tr: CrossShardTransfer, token, commit: bool, t: int):
        # a certified commit can outrun the first honest execution of its G slot
        # (a Byzantine member assembles the certificate early); catch up first
        if commit and tr.phase == XPhase.REQUESTED:
            tr = advance(tr, AuditSent())
        if commit and tr.phase == XPhase.AUDITED:
            tr = advance(tr, ResponseReceived(True))
        nxt = advance(tr, LeaderDecision(token, commit), self.est.ledgers, self.est.leaders,
                      self.registry)
        self.est.transfers[tr.tx_id] = nxt
        self.lock_releases[tr.tx_id] += 1
        self.open_x -= 1
        if not commit:
            for inp in tr.tx.inputs:
                if self.spent_by.get(inp) == tr.tx_id:
                    del self.spent_by[inp]
        self._xtrace(t, nxt, "commit" if commit else "abort")
        self._resolve(tr.tx_id, t, commit)

    # leader-committee side
    def _g_receive(self, node: bytes, msg: XMsg, t: int):
        kn = self.gk[node]
        part = msg.partition
        if self.part_of.get(msg.sender) != part:
            return
        if not self._authentic(msg):
            self.counters.invalid_auth += 1
            return
        T = self.T
        touched = []
        need = self.fq[part]
        if msg.kind == "request":
            # votes past f+1 add no evidence
            for tx in msg.items:
                votes = kn.req[tx.tx_id]
                if len(votes) < need and home_partition(tx.sender, T) == part:
                    kn.txs.setdefault(tx.tx_id, tx)
                    votes[msg.sender] = msg
                    touched.append(tx.tx_id)
        elif msg.kind == "abort_req":
            for tx in msg.items:
                if isinstance(tx, Transaction) and home_partition(tx.sender, T) == part:
                    kn.txs.setdefault(tx.tx_id, tx)
                    kn.abort[tx.tx_id][msg.sender] = msg
                    touched.append(tx.tx_id)
        else:
            for tx_id, ok in msg.items:
                tx = kn.txs.get(tx_id)
                votes = (kn.pos if ok else kn.neg)[tx_id]
                if tx is not None and len(votes) < need and home_partition(tx.receiver, T) == part:
                    votes[msg.sender] = msg
                    touched.append(tx_id)
        for tx_id in touched:
            if tx_id not in kn.decided:
                self._g_refresh(kn, tx_id)
            elif msg.kind == "abort_req":
                # already decided: resend the certified outcome, at most once per deadline span
                last = self.resent.get((node, tx_id))
                if last is not None and t - last < self.span:
                    continue
                self.resent[(node, tx_id)] = t
                kind, token = kn.decided[tx_id]
                tx = kn.txs[tx_id]
                for q in sorted({home_partition(tx.sender, T), home_partition(tx.receiver, T)}):
                    self._xsend(node, self.members[q], t, "reply", q, ((tx_id, kind),), token)
        if not touched:
            return
        st = self.states[G_KEY][node]
        st.set_pending(bool(kn.ready), t)
        self._arm(node, G_KEY, st)
        self._maybe_propose(node, G_KEY, t)

    def _g_refresh(self, kn: _GKnow, tx_id: bytes):
        tx = kn.txs[tx_id]
        src = home_partition(tx.sender, self.T)
        dst = home_partition(tx.receiver, self.T)
        if (len(kn.neg.get(tx_id, ())) >= self.fq[dst]
                or len(kn.abort.get(tx_id, ())) >= self.fq[src]):
            kn.ready[tx_id] = "abort"
        elif tx_id in kn.audited:
            if len(kn.pos.get(tx_id, ())) >= self.fq[dst]:
                kn.ready[tx_id] = "commit"
            else:
                kn.ready.pop(tx_id, None)
        elif len(kn.req.get(tx_id, ())) >= self.fq[src]:
            kn.ready[tx_id] = "audit"
        else:
            kn.ready.pop(tx_id, None)

    def _g_execute(self, node: bytes, d, st: CommitteeState, t: int):
        kn = self.gk[node]
        cert = st.commit_certs.get(d.seq, ())
        view = cert[0].view if cert else st.view
        token = LeaderToken(view, d.seq, d.digest, tuple(pa.action for pa in d.payload), cert)
        audits: dict[int, list] = defaultdict(list)
        replies: dict[int, list] = defaultdict(list)
        for pa in d.payload:
            tx_id, kind = pa.action.tx_id, pa.action.kind
            kn.txs.setdefault(tx_id, pa.tx)
            if tx_id in kn.decided:
                continue
            src = home_partition(pa.tx.sender, self.T)
            dst = home_partition(pa.tx.receiver, self.T)
            if kind == "audit":
                if tx_id not in kn.audited:
                    kn.audited.add(tx_id)
                    audits[dst].append((tx_id, pa.tx.receiver))
            elif kind == "commit" and tx_id not in kn.audited:
                continue
            else:
                kn.decided[tx_id] = (kind, token)
                replies[src].append((tx_id, kind))
                replies[dst].append((tx_id, kind))
                kn.ready.pop(tx_id, None)
                continue
            self._g_refresh(kn, tx_id)
        for p, items in sorted(audits.items()):
            self._xsend(node, self.members[p], t, "audit", p, tuple(items), token)
        forging = self.behavior.get(node) is Behavior.EQUIVOCATE
        for p, items in sorted(replies.items()):
            self._xsend(node, self.members[p], t, "reply", p, tuple(items), token)
            if forging:
                self._forge(node, p, items, t)
        st.set_pending(bool(kn.ready), t)

    def _forge(self, node: bytes, p: int, items, t: int):
        """A Byzantine leader flips each outcome and signs the result alone."""
        flipped = tuple((tx_id, "commit" if k == "abort" else "abort") for tx_id, k in items)
        actions = tuple(CrossAction(k, i) for i, k in flipped)
        dig = payload_digest(actions)
        fake = LeaderToken(0, 1, dig, actions, (self.registry.sign(Phase.COMMIT, 0, 1, dig, node),))
        self.counters.forgery_attempts += len(flipped) * len(self.members[p])
        self._xsend(node, self.members[p], t, "reply", p, flipped, fake)

    # ------------------------------------------------------------ reputation
    def reputation_events(self) -> tuple[dict, dict]:
        """Rewards for commit-certificate signers; penalties for leaders abandoned
        by a view change and for equivocation seen by f+1 honest members."""
        good: dict[bytes, int] = defaultdict(int)
        bad: dict[bytes, int] = defaultdict(int)
        for ckey, members in self.members.items():
            honest = [n for n in members if n in self.honest]
            if not honest:
                continue
            need = self.fq[ckey]
            penal: dict[bytes, int] = defaultdict(int)
            for n in honest:
                for leader in set(self.states[ckey][n].penalized):
                    penal[leader] += 1
            for leader, c in penal.items():
                if c >= need:
                    bad[leader] += 1
            hs = set(honest)
            for (ck, sender), who in self.flagged.items():
                if ck == ckey and len(who & hs) >= need and penal.get(sender, 0) < need:
                    bad[sender] += 1
            ref = max((self.states[ckey][n] for n in honest), key=lambda s: s.last_executed)
            for seq in ref.commit_certs:
                for sender in ref.vote_senders(seq):
                    good[sender] += 1
        return dict(good), dict(bad)


# ---------------------------------------------------------------- epoch driver
def snapshot_transfer_us(entries: int, cfg) -> int:
    return int(entries * cfg.entry_bytes * 8 / cfg.bandwidth_mbps)


def reorg_cost_us(metrics: EpochMetrics, entries: int, joiners: int, cfg) -> int:
    """Epoch boundary before the next first decision: one state-block round, the
    state blocks uploaded to the leaders, one leader round, then each joiner
    downloads the snapshot from the leaders in turn."""
    rnd = metrics.first_decision_us or 0
    g_rnd = metrics.first_g_decision_us or rnd
    snap = snapshot_transfer_us(entries, cfg)
    return rnd + snap + g_rnd + joiners * snap


def run_epoch(config, world: World, seed: int, txs: list[Transaction] | None = None,
              trace: list | None = None, xtrace: list | None = None,
              check_every_event: bool = False, fault: FaultPlan | None = None,
              policy: str | None = None, byzantine_leaders: int = 0):
    """Plan, allocate, run the workload, drain transfers, seal and reorganize.

    Returns ``(world, metrics, global_block, sim)``; ``world`` is updated in place.
    """
    if config is not None:
        world.config = config
    cfg = world.config
    est = begin_epoch(world, policy=policy)
    if byzantine_leaders:
        for n in sorted(est.leaders.members, key=lambda n: digest("byz-leader", seed, n)):
            if byzantine_leaders <= 0:
                break
            if world.behavior(n) is Behavior.HONEST:
                world.behaviors[n] = Behavior.EQUIVOCATE
                byzantine_leaders -= 1
    if txs is None:
        txs = generate_workload(world, cfg.W, seed)
    sim = EpochSim(world, est, txs, seed, check_every_event, trace, xtrace, fault)
    metrics = sim.run()
    if world.pending_reset_us is not None and metrics.first_decision_us is not None:
        metrics.reset_delay_us = world.pending_reset_us + metrics.first_decision_us
    good, bad = sim.reputation_events()
    block = finish_epoch(world, est, good, bad)
    world.pending_reset_us = reorg_cost_us(metrics, len(block.utxo_entries), world.last_joined,
                                           cfg)
    return world, metrics, block, sim
