import pytest
from hypothesis import given, settings, strategies as st

from rspc.consensus import KeyRegistry, Phase, payload_digest
from rspc.cross_shard import (AuditSent, CrossAction, ForgedLeaderToken, IllegalPhaseTransition,
                              InsufficientBalance, InsufficientEligibleLeaders, LeaderDecision,
                              LeaderToken, NotCrossShard, ResponseReceived, Timeout, XPhase,
                              advance, elect_global_leaders, leader_seed, phase_sequence_ok,
                              repartition_trigger, submit_cross_shard)
from rspc.encoding import digest, home_partition, node_id
from rspc.ledger import Transaction, UTXOSet, genesis, partition_views, genesis_block
from rspc.reputation import ReputationRecord, initial_record, top_percentile


def addresses_in(T, p, count, tag="a"):
    out, i = [], 0
    while len(out) < count:
        a = node_id(f"{tag}{i}")
        if home_partition(a, T) == p:
            out.append(a)
        i += 1
    return out


def setup(T=2, balance=10):
    alice = addresses_in(T, 0, 1, "alice")[0]
    bob = addresses_in(T, 1, 1, "bob")[0]
    carol = addresses_in(T, 0, 1, "carol")[0]
    ledgers = partition_views(genesis_block(genesis({alice: balance, bob: 3, carol: 4})), T)
    return alice, bob, carol, ledgers


def transfer_tx(ledgers, T, sender, receiver, amount):
    src = ledgers[home_partition(sender, T)]
    keys = src.owned_by(sender)
    total = sum(src.live[k][1] for k in keys)
    outs = [(receiver, amount)] + ([(sender, total - amount)] if total > amount else [])
    return Transaction(tuple(keys), tuple(outs), sender, receiver)


def committee(n=4):
    recs = [[initial_record(node_id(f"g{j}-{i}")) for i in range(8)] for j in range(n)]
    com = elect_global_leaders(recs, digest("prev"))
    reg = KeyRegistry.for_nodes(com.members, 7)
    return com, reg


def token_for(com, reg, actions, signers=None, view=0, seq=1):
    d = payload_digest(actions)
    signers = signers if signers is not None else com.members[:com.quorum]
    sigs = tuple(reg.sign(Phase.COMMIT, view, seq, d, s) for s in signers)
    return LeaderToken(view, seq, d, tuple(actions), sigs)


def test_leader_seed_examples():
    assert leader_seed(12345, 12) == 9
    assert leader_seed((12345).to_bytes(32, "big"), 12) == 9
    assert leader_seed(digest("x"), 1) == 0
    assert leader_seed(digest("x"), 7) == leader_seed(digest("x"), 7)
    with pytest.raises(ValueError):
        leader_seed(1, 0)


def test_one_leader_per_partition():
    parts = [[ReputationRecord(node_id(f"p{j}-{i}"), 0.3 + 0.05 * i) for i in range(8)]
             for j in range(6)]
    com = elect_global_leaders(parts, digest("tip"))
    assert len(com.members) == 6
    for j, roster in enumerate(parts):
        assert sum(1 for m in com.members if com.home[m] == j) == 1
        rep = next(m for m in com.members if com.home[m] == j)
        assert rep in top_percentile(roster, 0.5)


def test_two_partitions_padded_to_four():
    parts = [[initial_record(node_id(f"q{j}-{i}")) for i in range(6)] for j in range(2)]
    com = elect_global_leaders(parts, digest("tip"))
    assert len(com.members) == 4
    assert sorted(com.home[m] for m in com.members) == [0, 0, 1, 1]
    for m in com.members:
        assert m in top_percentile(parts[com.home[m]], 0.5)


def test_too_few_eligible_leaders():
    parts = [[initial_record(node_id(i)) for i in range(3)]]
    with pytest.raises(InsufficientEligibleLeaders):
        elect_global_leaders(parts, digest("tip"))
    bad = [[ReputationRecord(node_id(i), 0.1) for i in range(10)]]
    with pytest.raises(InsufficientEligibleLeaders):
        elect_global_leaders(bad, digest("tip"))


def test_submit_locks_inputs():
    alice, bob, _, led = setup()
    tx = transfer_tx(led, 2, alice, bob, 6)
    before = [l.total() for l in led]
    tr = submit_cross_shard(tx, led)
    assert tr.phase == XPhase.REQUESTED and tr.source_partition == 0 and tr.dest_partition == 1
    assert all(k in led[0].locked for k in tx.inputs) and led[0].balance(alice) == 0
    assert [l.total() for l in led] == before


def test_submit_insufficient_balance_no_change():
    alice, bob, _, led = setup(balance=5)
    k = led[0].owned_by(alice)[0]
    tx = Transaction((k,), ((bob, 8),), alice, bob)
    snap = (dict(led[0].live), dict(led[0].locked))
    with pytest.raises(InsufficientBalance):
        submit_cross_shard(tx, led)
    assert (led[0].live, led[0].locked) == snap


def test_submit_same_shard_rejected():
    alice, _, carol, led = setup()
    with pytest.raises(NotCrossShard):
        submit_cross_shard(transfer_tx(led, 2, alice, carol, 1), led)


def test_happy_path_moves_value():
    com, reg = committee()
    alice, bob, _, led = setup()
    tr = submit_cross_shard(transfer_tx(led, 2, alice, bob, 6), led)
    src0, dst0 = led[0].total(), led[1].total()
    tr = advance(tr, AuditSent())
    tr = advance(tr, ResponseReceived(True))
    tok = token_for(com, reg, [CrossAction("commit", tr.tx_id)])
    tr = advance(tr, LeaderDecision(tok, True), led, com, reg)
    assert tr.phase == XPhase.REPLIED
    assert led[0].total() == src0 - 6 and led[1].total() == dst0 + 6
    assert led[1].balance(bob) == 3 + 6 and led[0].balance(alice) == 4
    assert not led[0].locked
    assert phase_sequence_ok(tr.history)


def test_negative_audit_aborts_and_restores():
    alice, bob, _, led = setup()
    before = dict(led[0].live)
    tr = submit_cross_shard(transfer_tx(led, 2, alice, bob, 6), led)
    tr = advance(advance(tr, AuditSent()), ResponseReceived(False), led)
    assert tr.phase == XPhase.ABORTED and led[0].live == before and not led[0].locked


def test_timeout_while_requested_restores_exactly():
    alice, bob, _, led = setup()
    totals = [l.total() for l in led]
    bal = led[0].balance(alice)
    tr = advance(submit_cross_shard(transfer_tx(led, 2, alice, bob, 6), led), Timeout(), led)
    assert tr.phase == XPhase.ABORTED
    assert led[0].balance(alice) == bal and [l.total() for l in led] == totals


def test_illegal_transitions():
    alice, bob, _, led = setup()
    tr = submit_cross_shard(transfer_tx(led, 2, alice, bob, 6), led)
    with pytest.raises(IllegalPhaseTransition):
        advance(tr, ResponseReceived(True))
    done = advance(tr, Timeout(), led)
    for ev in (AuditSent(), Timeout(), ResponseReceived(True)):
        with pytest.raises(IllegalPhaseTransition):
            advance(done, ev)
    com, reg = committee()
    tok = token_for(com, reg, [CrossAction("commit", tr.tx_id)])
    with pytest.raises(IllegalPhaseTransition):
        advance(tr, LeaderDecision(tok, True), led, com, reg)


def test_forged_tokens_rejected():
    com, reg = committee()
    alice, bob, _, led = setup()
    tr = submit_cross_shard(transfer_tx(led, 2, alice, bob, 6), led)
    tr = advance(advance(tr, AuditSent()), ResponseReceived(True))
    act = [CrossAction("commit", tr.tx_id)]
    outsider = node_id("mallory")
    reg.register(outsider, b"m")
    forged = [
        token_for(com, reg, act, signers=com.members[:com.quorum - 1]),          # too few
        token_for(com, reg, act, signers=[com.members[0]] * com.quorum),         # repeated signer
        token_for(com, reg, act, signers=list(com.members[:com.quorum - 1]) + [outsider]),
        token_for(com, reg, [CrossAction("commit", b"\0" * 32)]),                # other tx
    ]
    good = token_for(com, reg, act)
    tampered = LeaderToken(good.view, good.seq, good.digest, good.actions,
                           good.signatures[:-1] + (good.signatures[-1].__class__(
                               Phase.COMMIT, 0, 1, good.digest, good.signatures[-1].sender,
                               b"\0" * 32),))
    forged.append(tampered)
    snap = (dict(led[0].live), dict(led[0].locked), dict(led[1].live))
    for tok in forged:
        with pytest.raises(ForgedLeaderToken):
            advance(tr, LeaderDecision(tok, True), led, com, reg)
    assert (led[0].live, led[0].locked, led[1].live) == snap


def test_repartition_trigger_examples():
    assert repartition_trigger({(0, 1): 100}, 100)
    assert not repartition_trigger({(0, 1): 0, (1, 2): 0}, 100)
    assert not repartition_trigger({}, 100)
    assert not repartition_trigger({(0, 1): 99, (0, 2): 50}, 100)
    assert repartition_trigger({(0, 1): 60, (1, 0): 40}, 100)
    with pytest.raises(ValueError):
        repartition_trigger({}, 0)


def test_phase_sequences():
    R, A, S, P, X = XPhase
    assert phase_sequence_ok([R, A, S, P]) and phase_sequence_ok([R, X])
    assert phase_sequence_ok([R, A, S, X])
    assert not phase_sequence_ok([R, S]) and not phase_sequence_ok([R, A, S, P, X])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["audit", "yes", "no", "commit", "abort", "timeout"]),
                max_size=6), st.integers(1, 9))
def test_random_event_streams_conserve(events, amount):
    com, reg = committee()
    alice, bob, _, led = setup()
    total = sum(l.total() for l in led)
    tr = submit_cross_shard(transfer_tx(led, 2, alice, bob, amount), led)
    for e in events:
        ev = {"audit": AuditSent(), "yes": ResponseReceived(True), "no": ResponseReceived(False),
              "timeout": Timeout(),
              "commit": LeaderDecision(token_for(com, reg, [CrossAction("commit", tr.tx_id)]),
                                       True),
              "abort": LeaderDecision(token_for(com, reg, [CrossAction("abort", tr.tx_id)]),
                                      False)}[e]
        try:
            tr = advance(tr, ev, led, com, reg)
        except IllegalPhaseTransition:
            pass
        assert sum(l.total() for l in led) == total
    assert phase_sequence_ok(tr.history)
    if tr.phase == XPhase.REPLIED:
        assert led[1].balance(bob) == 3 + amount
    elif tr.phase == XPhase.ABORTED:
        assert led[0].balance(alice) == 10 and led[1].balance(bob) == 3
    else:
        assert led[0].locked
