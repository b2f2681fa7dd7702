import random

import pytest
from hypothesis import given, settings, strategies as st

from rspc.encoding import ZERO_DIGEST, digest, home_partition, node_id
from rspc.ledger import (ConservationViolation, DoubleSpend, GlobalChain, MissingStateBlock,
                         OverlappingSnapshots, PartitionChain, StaleParent, SubBlock,
                         Transaction, UTXOSet, UnknownInput, apply_block, assign_shard,
                         build_state_block, genesis, genesis_block, migration_count,
                         partition_root, partition_views, reorganize, snapshot_digest)

A, B, C = node_id("alice"), node_id("bob"), node_id("carol")


def coin(owner, amount, tag=0):
    return (digest("coin", owner, tag), 0), (owner, amount)


def pay(state, sender, receiver, amount, ts=0):
    keys = state.owned_by(sender)
    total = sum(state.live[k][1] for k in keys)
    outs = [(receiver, amount)] + ([(sender, total - amount)] if total > amount else [])
    return Transaction(tuple(keys), tuple(outs), sender, receiver, timestamp=ts)


def test_transaction_id_binds_content():
    k, _ = coin(A, 10)
    t = Transaction((k,), ((B, 10),), A, B)
    assert t.tx_id == Transaction((k,), ((B, 10),), A, B).tx_id
    assert t.tx_id != Transaction((k,), ((C, 10),), A, C).tx_id
    with pytest.raises(ValueError):
        Transaction((k,), ((B, 10),), A, B, tx_id=b"\0" * 32)
    with pytest.raises(ValueError):
        Transaction((k,), (), A, B)
    with pytest.raises(ValueError):
        Transaction((k,), ((B, 0),), A, B)


def test_apply_split_conserves():
    k, e = coin(A, 10)
    s = UTXOSet({k: e})
    t = Transaction((k,), ((B, 4), (A, 6)), A, B)
    blk = SubBlock(0, 1, ZERO_DIGEST, (t,), A)
    s2 = apply_block(s, blk, tip=ZERO_DIGEST)
    assert s2.total() == s.total() == 10
    assert k in s and k not in s2
    assert s2.balance(B) == 4 and s2.balance(A) == 6


def test_intra_block_double_spend():
    k, e = coin(A, 10)
    s = UTXOSet({k: e})
    t1 = Transaction((k,), ((B, 10),), A, B)
    t2 = Transaction((k,), ((C, 10),), A, C)
    with pytest.raises(DoubleSpend):
        apply_block(s, SubBlock(0, 1, ZERO_DIGEST, (t1, t2), A))
    assert len(s) == 1  # untouched


def test_conservation_violation():
    k, e = coin(A, 10)
    t = Transaction((k,), ((B, 4), (A, 7)), A, B)
    with pytest.raises(ConservationViolation):
        apply_block(UTXOSet({k: e}), SubBlock(0, 1, ZERO_DIGEST, (t,), A))


def test_unknown_or_foreign_input():
    k, e = coin(A, 10)
    t = Transaction((k,), ((B, 10),), A, B)
    with pytest.raises(UnknownInput):
        apply_block(UTXOSet(), SubBlock(0, 1, ZERO_DIGEST, (t,), A))
    stolen = Transaction((k,), ((C, 10),), C, C)
    with pytest.raises(UnknownInput):
        apply_block(UTXOSet({k: e}), SubBlock(0, 1, ZERO_DIGEST, (stolen,), C))


def test_stale_parent():
    k, e = coin(A, 10)
    t = Transaction((k,), ((B, 10),), A, B)
    with pytest.raises(StaleParent):
        apply_block(UTXOSet({k: e}), SubBlock(0, 1, b"\1" * 32, (t,), A), tip=ZERO_DIGEST)
    chain = PartitionChain(0, ZERO_DIGEST)
    with pytest.raises(StaleParent):
        chain.append(SubBlock(0, 1, b"\1" * 32, (t,), A))


def test_chain_integrity_recomputes():
    s = genesis({A: 100, B: 50})
    chain = PartitionChain(0, partition_root(ZERO_DIGEST, 0))
    for h, (snd, rcv) in enumerate([(A, B), (B, C), (C, A)], 1):
        t = pay(s, snd, rcv, 5, ts=h)
        blk = SubBlock(0, h, chain.tip, (t,), snd)
        s = apply_block(s, blk, chain.tip)
        chain.append(blk)
    assert chain.verify() and chain.height == 3
    chain.blocks[1] = SubBlock(0, 2, b"\2" * 32, chain.blocks[1].tx_list, A)
    assert not chain.verify()


def test_state_block_empty_and_deterministic():
    sb = build_state_block(UTXOSet(), 1, 0)
    assert sb.utxo_entries == () and sb.utxo_snapshot_digest == snapshot_digest({})
    s = genesis({A: 5, B: 7, C: 9})
    assert build_state_block(s, 1, 0).digest == build_state_block(s.copy(), 1, 0).digest


def test_state_block_order_independent():
    rng = random.Random(4)
    items = [coin(node_id(i), i + 1, i) for i in range(40)]
    a, b = list(items), list(items)
    rng.shuffle(a)
    rng.shuffle(b)
    assert a != b
    assert (build_state_block(UTXOSet(dict(a)), 2, 0).utxo_snapshot_digest
            == build_state_block(UTXOSet(dict(b)), 2, 0).utxo_snapshot_digest)


def test_state_block_refuses_locked():
    k, e = coin(A, 3)
    s = UTXOSet({k: e})
    s.lock([k])
    with pytest.raises(Exception):
        build_state_block(s, 1, 0)


def test_reorganize_disjoint_union():
    p0 = UTXOSet(dict(coin(node_id(i), 1, i) for i in range(3)))
    p1 = UTXOSet(dict(coin(node_id(i), 2, i) for i in range(10, 15)))
    chain = GlobalChain()
    g = reorganize([build_state_block(p0, 1, 0), build_state_block(p1, 1, 1)], chain)
    assert len(g.utxo_entries) == 8 and g.total() == p0.total() + p1.total()
    assert chain.tip == g.digest and chain.verify()


def test_reorganize_errors():
    k, e = coin(A, 1)
    s = UTXOSet({k: e})
    with pytest.raises(OverlappingSnapshots):
        reorganize([build_state_block(s, 1, 0), build_state_block(s, 1, 1)], GlobalChain())
    with pytest.raises(MissingStateBlock):
        reorganize([build_state_block(s, 1, 1)], GlobalChain())
    with pytest.raises(MissingStateBlock):
        reorganize([build_state_block(s, 1, 0)], GlobalChain(), T=2)


def test_assign_shard_examples():
    k, _ = coin(A, 1)
    small = Transaction((k,), ((B, 1),), A, B, size=100)
    big = Transaction((k,), ((B, 1),), A, B, size=5000)
    assert assign_shard(small, 1) == 0 and assign_shard(big, 1, [0.9]) == 0
    assert assign_shard(big, 3, (0.6, 0.8, 0.7)) == 1
    assert assign_shard(big, 3, (0.8, 0.8, 0.7)) == 0
    assert assign_shard(small, 3, (0.6, 0.8, 0.7)) == home_partition(A, 3)
    assert assign_shard(small, 7) == assign_shard(small, 7)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 6))
def test_reorg_migration_free_and_conserving(seed, T_old, T_new):
    rng = random.Random(seed)
    owners = [node_id(f"o{seed}-{i}") for i in range(30)]
    state = genesis({o: rng.randint(1, 50) for o in owners})
    total = state.total()
    chain = GlobalChain()
    chain.blocks.append(genesis_block(state))
    views = partition_views(chain.head, T_old)
    # move some value around inside each partition before sealing
    for p, v in enumerate(views):
        local = sorted({a for a, _ in v.live.values()})
        for snd in local[:3]:
            rcv = rng.choice(local)
            if v.balance(snd) > 1:
                t = pay(v, snd, rcv, 1, ts=rng.randrange(1000))
                views[p] = apply_block(v, SubBlock(p, 1, ZERO_DIGEST, (t,), snd))
                v = views[p]
    blocks = [build_state_block(v, 1, p, T_old) for p, v in enumerate(views)]
    g = reorganize(blocks, chain, T=T_old)
    assert g.total() == total
    nxt = partition_views(g, T_new)
    assert migration_count(g, nxt) == 0
    assert sum(v.total() for v in nxt) == total
    for p, v in enumerate(nxt):
        assert all(home_partition(a, T_new) == p for a, _ in v.live.values())


def test_migration_counter_sees_foreign_entries():
    state = genesis({A: 5, B: 6})
    g = genesis_block(state)
    views = partition_views(g, 2)
    k, e = coin(C, 9)
    views[0].insert(k, e)
    assert migration_count(g, views) == 1


def test_lock_unlock_keeps_total():
    s = genesis({A: 10})
    k = s.owned_by(A)[0]
    s.lock([k])
    assert s.total() == 10 and k not in s
    with pytest.raises(DoubleSpend):
        s.lock([k])
    s.unlock([k])
    assert k in s
