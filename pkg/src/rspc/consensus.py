"""Reputation-weighted PBFT for a single committee.

Each honest member owns one :class:`CommitteeState`. The state machine is
driven by :meth:`CommitteeState.handle` (message delivery) and
:meth:`CommitteeState.on_timer`; it returns outbound messages (broadcast to
the other members) and the sequence numbers it executed, in order.

Signatures and VRF outputs are keyed SHA-256 tokens over a registry of
per-node secrets, so Byzantine members can lie but cannot forge honest tokens.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

from .encoding import digest, digest_int, sha256
from .reputation import (DEFAULT_PARAMS, Event, ReputationParams, ReputationRecord,
                         initial_record, ranking, top_percentile, update)

ELECTABLE_FRACTION = 0.5
MIN_ELECTABLE_FOR_VRF = 4


class Phase(enum.IntEnum):
    PRE_PREPARE = 1
    PREPARE = 2
    COMMIT = 3
    REPLY = 4
    VIEW_CHANGE = 5
    NEW_VIEW = 6


class InvalidAuth(Exception):
    def __init__(self, sender: bytes, reason: str = "bad token"):
        super().__init__(f"{sender.hex()[:8]}: {reason}")
        self.sender = sender


class EquivocationDetected(Exception):
    """One sender signed two different digests for the same (view, seq)."""

    def __init__(self, sender: bytes, first: "ConsensusMessage", second: "ConsensusMessage"):
        super().__init__(f"{sender.hex()[:8]} equivocated at view={first.view} seq={first.seq}")
        self.sender = sender
        self.evidence = (first, second)


class InsufficientEvidence(ValueError):
    pass


class SafetyViolation(AssertionError):
    pass


@dataclass(frozen=True, slots=True)
class ConsensusMessage:
    phase: Phase
    view: int
    seq: int
    digest: bytes
    sender: bytes
    auth: bytes
    payload: object = None
    proof: bytes | None = None

    def signed_fields(self):
        return signed_fields(self.phase, self.view, self.seq, self.digest, self.sender)


_HEADER = struct.Struct(">BQQ")


def signed_fields(phase, view, seq, dig, sender) -> bytes:
    """Fixed-width header (phase, view, seq) followed by the 32-byte digest and sender."""
    return _HEADER.pack(phase, view, seq) + dig + sender


class KeyRegistry:
    """Per-node secrets known to the simulator; tokens are H(secret || payload)."""

    def __init__(self, secrets: dict[bytes, bytes] | None = None):
        self._secrets = dict(secrets or {})
        self._verified: dict[tuple[bytes, bytes], bool] = {}
        self.memo: dict = {}

    @classmethod
    def for_nodes(cls, node_ids, seed: int = 0) -> "KeyRegistry":
        return cls({n: digest("secret", seed, n) for n in node_ids})

    def register(self, node_id: bytes, secret: bytes):
        self._secrets[node_id] = secret

    def __contains__(self, node_id) -> bool:
        return node_id in self._secrets

    def token(self, node_id: bytes, data: bytes) -> bytes:
        return sha256(self._secrets[node_id] + data)

    def check(self, node_id: bytes, data: bytes, token: bytes | None) -> bool:
        if token is None or node_id not in self._secrets:
            return False
        key = (data, token)
        ok = self._verified.get(key)
        if ok is None:
            ok = self._verified[key] = sha256(self._secrets[node_id] + data) == token
        return ok

    def sign(self, phase: Phase, view: int, seq: int, dig: bytes, sender: bytes,
             payload=None, proof=None) -> ConsensusMessage:
        auth = self.token(sender, signed_fields(phase, view, seq, dig, sender))
        return ConsensusMessage(phase, view, seq, dig, sender, auth, payload, proof)

    def verify(self, msg: ConsensusMessage) -> bool:
        return self.check(msg.sender, msg.signed_fields(), msg.auth)


def payload_digest(payload) -> bytes:
    """Digest of a batch: a tuple of bytes items or objects exposing ``uid``."""
    if payload is None:
        payload = ()
    return digest("batch", *[item if isinstance(item, bytes) else item.uid for item in payload])


class QuorumSizes(NamedTuple):
    f_max: int
    prepare_commit_quorum: int
    reply_quorum: int


def quorum_sizes(n: int) -> QuorumSizes:
    if n < 4:
        raise ValueError(f"committee of {n} cannot tolerate a Byzantine member")
    f = (n - 1) // 3
    return QuorumSizes(f, 2 * f + 1, f + 1)


def safe_quorum(n: int) -> int:
    """Quorum the state machine uses: any two quorums share an honest member.

    Equals 2f+1 when n = 3f+1; larger committees with slack need
    ceil((n+f+1)/2) so that two quorums overlap in at least f+1 members.
    """
    f, q, _ = quorum_sizes(n)
    return max(q, (n + f + 2) // 2)


def vrf_output(seed: int, node_id: bytes) -> int:
    return digest_int("vrf", seed, node_id)


def elect_leader(members: Sequence[ReputationRecord], seed: int) -> bytes:
    """Top-50% electable set; VRF lottery when at least 4 electable, else best score."""
    if not members:
        raise ValueError("cannot elect a leader from an empty roster")
    electable = top_percentile(members, ELECTABLE_FRACTION)
    if len(electable) >= MIN_ELECTABLE_FOR_VRF:
        return min(electable, key=lambda n: (vrf_output(seed, n), n))
    return electable[0]


def view_seed(committee_seed: int, view: int) -> int:
    return digest_int("view", committee_seed, view) & 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class PreparedCert:
    seq: int
    view: int
    digest: bytes
    payload: object
    prepares: tuple


@dataclass(frozen=True)
class ViewChangeInfo:
    certs: tuple = ()
    evidence: tuple | None = None


class Decision(NamedTuple):
    seq: int
    digest: bytes
    payload: object


@dataclass
class ConsensusParams:
    view_timeout_us: int = 500_000
    max_timeout_us: int = 16_000_000


class CommitteeState:
    """Local protocol state of one member of a committee."""

    def __init__(self, self_id: bytes, members: Sequence[bytes], registry: KeyRegistry,
                 records: dict[bytes, ReputationRecord] | None = None, seed: int = 0,
                 params: ConsensusParams | None = None,
                 validate: Callable[[int, object], bool] | None = None,
                 digest_fn: Callable[[object], bytes] = payload_digest,
                 rep_params: ReputationParams = DEFAULT_PARAMS):
        if self_id not in members:
            raise ValueError("self_id must be a committee member")
        self.self_id = self_id
        self.members = tuple(members)
        self._member_set = frozenset(members)
        self.n = len(self.members)
        q = quorum_sizes(self.n)
        self.f, self.reply_quorum = q.f_max, q.reply_quorum
        self.quorum = safe_quorum(self.n)
        self.registry = registry
        self.seed = seed
        self.params = params or ConsensusParams()
        self.validate = validate
        self.digest_fn = digest_fn
        self.rep_params = rep_params
        base = records or {}
        self._scores = [{m: base.get(m) or initial_record(m, rep_params) for m in self.members}]
        self._leaders: list[bytes] = []

        self.view = 0
        self.in_view_change = False
        self.pre_prepares: dict[tuple[int, int], ConsensusMessage] = {}
        self.payloads: dict[bytes, object] = {}
        self.prepares: dict[tuple, dict[bytes, ConsensusMessage]] = {}
        self.commits: dict[tuple, dict[bytes, ConsensusMessage]] = {}
        self._first_vote: dict[tuple, ConsensusMessage] = {}
        self._sent_commit: set[tuple[int, int]] = set()
        self.prepared: dict[int, PreparedCert] = {}
        self._ready: dict[int, tuple[int, bytes]] = {}
        self.committed: dict[int, bytes] = {}
        self.commit_certs: dict[int, tuple] = {}
        self.last_executed = 0
        self.next_seq = 0
        self.view_changes: dict[int, dict[bytes, ConsensusMessage]] = {}
        self._new_view_sent: set[int] = set()
        self._future: list[ConsensusMessage] = []
        self._awaiting: dict[int, ConsensusMessage] = {}
        self.misbehavior: dict[bytes, int] = {}
        self.penalized: list[bytes] = []
        self.pending = False
        self.deadline: int | None = None
        self.timeout = self.params.view_timeout_us

    # ------------------------------------------------------------------ views
    def leader_for_view(self, view: int) -> bytes:
        while len(self._leaders) <= view:
            v = len(self._leaders)
            scores = self._scores[v]
            leader = elect_leader(list(scores.values()), view_seed(self.seed, v))
            self._leaders.append(leader)
            nxt = dict(scores)
            nxt[leader] = update(scores[leader], Event.DETECTED_MISBEHAVIOR, self.rep_params)
            self._scores.append(nxt)
        return self._leaders[view]

    @property
    def leader(self) -> bytes:
        return self.leader_for_view(self.view)

    @property
    def records(self) -> dict[bytes, ReputationRecord]:
        """Scores as seen in the current view (abandoned leaders penalized)."""
        self.leader_for_view(self.view)
        return self._scores[self.view]

    @property
    def is_leader(self) -> bool:
        return self.leader == self.self_id

    def can_propose(self) -> bool:
        return (self.is_leader and not self.in_view_change
                and self.next_seq == self.last_executed)

    # -------------------------------------------------------------- messages
    def _sign(self, phase, view, seq, dig, payload=None, proof=None) -> ConsensusMessage:
        return self.registry.sign(phase, view, seq, dig, self.self_id, payload, proof)

    def propose(self, payload, now: int = 0) -> list[ConsensusMessage]:
        """Leader only: assign the next sequence number to ``payload``."""
        if not self.can_propose():
            raise RuntimeError("not in a position to propose")
        seq = self.next_seq + 1
        msg = self._sign(Phase.PRE_PREPARE, self.view, seq, self.digest_fn(payload), payload)
        self.next_seq = seq
        out, _ = self.handle(msg, now)
        return [msg] + out

    def handle(self, msg: ConsensusMessage, now: int = 0):
        """Process one message; returns (outbound, decisions executed in order)."""
        if msg.sender not in self._member_set:
            raise InvalidAuth(msg.sender, "not a committee member")
        if not self.registry.verify(msg):
            self._flag(msg.sender)
            raise InvalidAuth(msg.sender)
        out: list[ConsensusMessage] = []
        decided: list[Decision] = []
        handler = _HANDLERS[msg.phase]
        handler(self, msg, now, out, decided)
        return out, decided

    def _flag(self, sender: bytes):
        self.misbehavior[sender] = self.misbehavior.get(sender, 0) + 1

    def _vote_guard(self, msg: ConsensusMessage) -> bool:
        key = (msg.phase, msg.view, msg.seq, msg.sender)
        first = self._first_vote.get(key)
        if first is None:
            self._first_vote[key] = msg
            return True
        if first.digest != msg.digest:
            self._flag(msg.sender)
            raise EquivocationDetected(msg.sender, first, msg)
        return False

    def _on_pre_prepare(self, msg, now, out, decided):
        v, s = msg.view, msg.seq
        if msg.sender != self.leader_for_view(v):
            self._flag(msg.sender)
            return
        if v < self.view or s <= self.last_executed:
            return
        if v > self.view or self.in_view_change:
            self._future.append(msg)
            return
        if self.digest_fn(msg.payload) != msg.digest:
            self._flag(msg.sender)
            return
        old = self.pre_prepares.get((v, s))
        if old is not None:
            if old.digest != msg.digest:
                self._flag(msg.sender)
                raise EquivocationDetected(msg.sender, old, msg)
            return
        if s != self.last_executed + 1:
            self._awaiting.setdefault(s, msg)
            return
        self._accept_pre_prepare(msg, now, out, decided)

    def _accept_pre_prepare(self, msg, now, out, decided):
        v, s = msg.view, msg.seq
        if self.validate is not None and not self.validate(s, msg.payload):
            # a leader proposing an invalid batch is treated as faulty
            self._flag(msg.sender)
            out.extend(self._start_view_change(self.view + 1, now, None, decided))
            return
        self.pre_prepares[(v, s)] = msg
        self.payloads[msg.digest] = msg.payload
        self.next_seq = max(self.next_seq, s)
        prep = self._sign(Phase.PREPARE, v, s, msg.digest,
                          proof=msg.auth if msg.phase == Phase.PRE_PREPARE else None)
        out.append(prep)
        self._record_prepare(prep, now, out, decided)

    def _on_prepare(self, msg, now, out, decided):
        if msg.view < self.view:
            return
        if msg.proof is not None:
            leader = self.leader_for_view(msg.view)
            pp_fields = signed_fields(Phase.PRE_PREPARE, msg.view, msg.seq, msg.digest, leader)
            if not self.registry.check(leader, pp_fields, msg.proof):
                self._flag(msg.sender)
                return
            mine = self.pre_prepares.get((msg.view, msg.seq))
            if mine is not None and mine.phase == Phase.PRE_PREPARE and mine.digest != msg.digest:
                other = ConsensusMessage(Phase.PRE_PREPARE, msg.view, msg.seq, msg.digest,
                                         leader, msg.proof)
                self._flag(leader)
                raise EquivocationDetected(leader, mine, other)
        if not self._vote_guard(msg):
            return
        self._record_prepare(msg, now, out, decided)

    def _record_prepare(self, msg, now, out, decided):
        key = (msg.view, msg.seq, msg.digest)
        self.prepares.setdefault(key, {})[msg.sender] = msg
        self._check_prepared(key, now, out, decided)

    def _check_prepared(self, key, now, out, decided):
        v, s, d = key
        if v != self.view or self.in_view_change or (v, s) in self._sent_commit:
            return
        pp = self.pre_prepares.get((v, s))
        if pp is None or pp.digest != d:
            return
        votes = self.prepares.get(key, {})
        if len(votes) < self.quorum:
            return
        self._sent_commit.add((v, s))
        self.prepared[s] = PreparedCert(s, v, d, self.payloads[d],
                                        tuple(list(votes.values())[:self.quorum]))
        com = self._sign(Phase.COMMIT, v, s, d)
        out.append(com)
        self._record_commit(com, now, out, decided)

    def _on_commit(self, msg, now, out, decided):
        if msg.view < self.view:
            return
        if not self._vote_guard(msg):
            return
        self._record_commit(msg, now, out, decided)

    def _record_commit(self, msg, now, out, decided):
        key = (msg.view, msg.seq, msg.digest)
        self.commits.setdefault(key, {})[msg.sender] = msg
        self._check_committed(key, now, out, decided)

    def _check_committed(self, key, now, out, decided):
        v, s, d = key
        if (v, s) not in self._sent_commit or self.pre_prepares[(v, s)].digest != d:
            return
        votes = self.commits.get(key, {})
        if len(votes) < self.quorum or s in self._ready or s in self.committed:
            if s in self.committed and self.committed[s] != d and len(votes) >= self.quorum:
                raise SafetyViolation(f"seq {s} committed twice with different digests")
            return
        self._ready[s] = (v, d)
        self.commit_certs[s] = tuple(list(votes.values())[:self.quorum])
        self._execute_ready(now, out, decided)

    def _execute_ready(self, now, out, decided):
        progressed = False
        while self.last_executed + 1 in self._ready:
            s = self.last_executed + 1
            _, d = self._ready.pop(s)
            if s in self.committed:
                raise SafetyViolation(f"seq {s} executed twice")
            self.committed[s] = d
            self.last_executed = s
            self.next_seq = max(self.next_seq, s)
            decided.append(Decision(s, d, self.payloads[d]))
            progressed = True
        if progressed:
            self.timeout = self.params.view_timeout_us
            self._rearm(now)
            nxt = self._awaiting.pop(self.last_executed + 1, None)
            for stale in [k for k in self._awaiting if k <= self.last_executed]:
                del self._awaiting[stale]
            if nxt is not None and nxt.view == self.view and not self.in_view_change:
                self._on_pre_prepare(nxt, now, out, decided)

    # ---------------------------------------------------------- view change
    def accuse(self, evidence: tuple | None, now: int = 0) -> list[ConsensusMessage]:
        """Begin a view change against the current leader, attaching evidence."""
        if self.in_view_change:
            return []
        return self._start_view_change(self.view + 1, now, evidence)

    def _start_view_change(self, new_view: int, now: int, evidence=None,
                           decided=None) -> list[ConsensusMessage]:
        if new_view <= self.view:
            return []
        for v in range(self.view, new_view):
            leader = self.leader_for_view(v)
            if leader not in self.penalized:
                self.penalized.append(leader)
        self.view = new_view
        self.in_view_change = True
        self._awaiting.clear()
        info = ViewChangeInfo(tuple(self.prepared[s] for s in sorted(self.prepared)), evidence)
        vc = self._sign(Phase.VIEW_CHANGE, new_view, self.last_executed, b"", payload=info)
        self.view_changes.setdefault(new_view, {})[self.self_id] = vc
        self.deadline = now + self.timeout
        self.timeout = min(self.timeout * 2, self.params.max_timeout_us)
        out = [vc]
        out.extend(self._maybe_new_view(new_view, now, decided))
        return out

    def _valid_evidence(self, evidence, view: int) -> bool:
        if not evidence or len(evidence) != 2:
            return False
        a, b = evidence
        leader = self.leader_for_view(view)
        return (a.sender == b.sender == leader and a.view == b.view == view and a.seq == b.seq
                and a.digest != b.digest and a.phase == b.phase == Phase.PRE_PREPARE
                and self.registry.verify(a) and self.registry.verify(b))

    def _on_view_change(self, msg, now, out, decided):
        v = msg.view
        if v < self.view:
            return
        self.view_changes.setdefault(v, {})[msg.sender] = msg
        joined = self.in_view_change and self.view == v
        if not joined:
            info = msg.payload
            evidence = info.evidence if isinstance(info, ViewChangeInfo) else None
            if v == self.view + 1 and self._valid_evidence(evidence, self.view):
                out.extend(self._start_view_change(v, now, evidence, decided))
            else:
                higher = {s for w, vcs in self.view_changes.items() if w > self.view for s in vcs}
                if len(higher) >= self.reply_quorum:
                    target = min(w for w, vcs in self.view_changes.items()
                                 if w > self.view and vcs)
                    out.extend(self._start_view_change(target, now, None, decided))
        out.extend(self._maybe_new_view(v, now, decided))

    def _maybe_new_view(self, v: int, now: int, decided=None) -> list[ConsensusMessage]:
        if (v != self.view or not self.in_view_change or v in self._new_view_sent
                or self.leader_for_view(v) != self.self_id):
            return []
        vcs = self.view_changes.get(v, {})
        if len(vcs) < self.quorum:
            return []
        self._new_view_sent.add(v)
        chosen = tuple(vcs[k] for k in sorted(vcs)[:self.quorum])
        nv = self._sign(Phase.NEW_VIEW, v, 0, digest("new-view", *[m.auth for m in chosen]),
                        payload=chosen)
        local_out: list[ConsensusMessage] = []
        self._on_new_view(nv, now, local_out, decided if decided is not None else [])
        return [nv] + local_out

    def _valid_cert(self, cert: PreparedCert, before_view: int) -> bool:
        if not isinstance(cert, PreparedCert) or cert.view >= before_view:
            return False
        if self.digest_fn(cert.payload) != cert.digest:
            return False
        senders = set()
        for p in cert.prepares:
            if (p.phase != Phase.PREPARE or p.view != cert.view or p.seq != cert.seq
                    or p.digest != cert.digest or p.sender not in self._member_set
                    or not self.registry.verify(p)):
                return False
            senders.add(p.sender)
        return len(senders) >= self.quorum

    def reproposals(self, nv: ConsensusMessage) -> dict[int, tuple[bytes, object]] | None:
        """Sequence -> (digest, payload) carried into the new view, or None if invalid."""
        key = ("nv", self.members, nv.view, nv.digest)
        memo = self.registry.memo
        if key in memo:
            return memo[key]
        result = None
        vcs = nv.payload if isinstance(nv.payload, tuple) else ()
        senders = {m.sender for m in vcs
                   if m.phase == Phase.VIEW_CHANGE and m.view == nv.view
                   and m.sender in self._member_set and self.registry.verify(m)}
        if (len(senders) >= self.quorum and len(senders) == len(vcs)
                and nv.digest == digest("new-view", *[m.auth for m in vcs])):
            best: dict[int, PreparedCert] = {}
            for m in vcs:
                info = m.payload if isinstance(m.payload, ViewChangeInfo) else ViewChangeInfo()
                for cert in info.certs:
                    if self._valid_cert(cert, nv.view):
                        cur = best.get(cert.seq)
                        if cur is None or cert.view > cur.view:
                            best[cert.seq] = cert
            top = max(best, default=0)
            result = {}
            for s in range(1, top + 1):
                if s in best:
                    result[s] = (best[s].digest, best[s].payload)
                else:
                    result[s] = (self.digest_fn(()), ())
        memo[key] = result
        return result

    def _on_new_view(self, msg, now, out, decided):
        v = msg.view
        if v < self.view or (v == self.view and not self.in_view_change):
            return
        if msg.sender != self.leader_for_view(v):
            self._flag(msg.sender)
            return
        o = self.reproposals(msg)
        if o is None:
            self._flag(msg.sender)
            return
        if v > self.view:
            for w in range(self.view, v):
                leader = self.leader_for_view(w)
                if leader not in self.penalized:
                    self.penalized.append(leader)
            self.view = v
        self.in_view_change = False
        self._rearm(now)
        for s in sorted(o):
            if s <= self.last_executed:
                continue
            d, payload = o[s]
            pp = ConsensusMessage(Phase.NEW_VIEW, v, s, d, msg.sender, msg.auth, payload)
            self.pre_prepares[(v, s)] = pp
            self.payloads[d] = payload
            prep = self._sign(Phase.PREPARE, v, s, d)
            out.append(prep)
            self._record_prepare(prep, now, out, decided)
        self.next_seq = max(self.last_executed, max(o, default=0))
        for key in [k for k in self.prepares if k[0] == v]:
            self._check_prepared(key, now, out, decided)
        for key in [k for k in self.commits if k[0] == v]:
            self._check_committed(key, now, out, decided)
        future, self._future = self._future, []
        for m in future:
            if m.view >= self.view:
                self._on_pre_prepare(m, now, out, decided)

    # -------------------------------------------------------------- timers
    def set_pending(self, pending: bool, now: int = 0):
        """Tell the replica whether client work is outstanding (arms the view timer)."""
        self.pending = pending
        if pending and self.deadline is None:
            self.deadline = now + self.timeout
        elif not pending and not self.in_view_change:
            self.deadline = None

    def _rearm(self, now: int):
        self.deadline = now + self.timeout if (self.pending or self.in_view_change
                                                or self.next_seq > self.last_executed) else None

    def on_timer(self, now: int) -> list[ConsensusMessage]:
        if self.deadline is None or now < self.deadline:
            return []
        self.deadline = None
        return self._start_view_change(self.view + 1, now)

    def reply(self, seq: int) -> ConsensusMessage:
        return self._sign(Phase.REPLY, self.view, seq, self.committed[seq])

    def vote_senders(self, seq: int) -> tuple[bytes, ...]:
        return tuple(m.sender for m in self.commit_certs.get(seq, ()))


_HANDLERS = {
    Phase.PRE_PREPARE: CommitteeState._on_pre_prepare,
    Phase.PREPARE: CommitteeState._on_prepare,
    Phase.COMMIT: CommitteeState._on_commit,
    Phase.VIEW_CHANGE: CommitteeState._on_view_change,
    Phase.NEW_VIEW: CommitteeState._on_new_view,
    Phase.REPLY: lambda self, msg, now, out, decided: None,
}


def handle_message(state: CommitteeState, msg: ConsensusMessage, now: int = 0):
    """Functional entry point: returns (state, outbound, decision-or-None)."""
    out, decided = state.handle(msg, now)
    last = (decided[-1].seq, decided[-1].digest) if decided else None
    return state, out, last


def view_change(state: CommitteeState, evidence: Sequence[ConsensusMessage],
                now: int = 0) -> CommitteeState:
    """Move ``state`` to a later view given f+1 signed accusations against its leader."""
    target = None
    signers = set()
    for m in evidence:
        if (m.phase == Phase.VIEW_CHANGE and m.view > state.view and m.sender in state._member_set
                and state.registry.verify(m)):
            if target is None or m.view == target:
                target = m.view
                signers.add(m.sender)
    if target is None or len(signers) < state.reply_quorum:
        raise InsufficientEvidence(f"{len(signers)} valid accusations, "
                                   f"{state.reply_quorum} required")
    for m in evidence:
        if m.view == target:
            state.view_changes.setdefault(target, {})[m.sender] = m
    state._start_view_change(target, now)
    return state


def records_after_epoch(records: dict[bytes, ReputationRecord], states: Sequence[CommitteeState],
                        params: ReputationParams = DEFAULT_PARAMS) -> dict[bytes, ReputationRecord]:
    """Fold committee-observed penalties into a global reputation table."""
    out = dict(records)
    for st in states:
        for leader in st.penalized:
            if leader in out:
                out[leader] = update(out[leader], Event.DETECTED_MISBEHAVIOR, params)
    return out


__all__ = [
    "Phase", "ConsensusMessage", "KeyRegistry", "CommitteeState", "ConsensusParams",
    "InvalidAuth", "EquivocationDetected", "InsufficientEvidence", "SafetyViolation",
    "quorum_sizes", "safe_quorum", "elect_leader", "handle_message", "view_change", "payload_digest",
    "Decision", "PreparedCert", "ViewChangeInfo", "ranking",
]
