"""UTXO state, partition chains, state blocks and the global chain."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .encoding import ZERO_DIGEST, digest, home_partition

DEFAULT_W_T = 1024

OutPoint = tuple[bytes, int]
Entry = tuple[bytes, int]          # (owner_address, amount)


class LedgerError(ValueError):
    pass


class DoubleSpend(LedgerError):
    pass


class UnknownInput(LedgerError):
    pass


class ConservationViolation(LedgerError):
    pass


class StaleParent(LedgerError):
    pass


class MissingStateBlock(LedgerError):
    pass


class OverlappingSnapshots(LedgerError):
    pass


def tx_digest(inputs, outputs, sender, receiver, size, timestamp) -> bytes:
    return digest("tx", tuple((t, i) for t, i in inputs), tuple((a, v) for a, v in outputs),
                  sender, receiver, size, timestamp)


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[OutPoint, ...]
    outputs: tuple[Entry, ...]
    sender: bytes
    receiver: bytes
    size: int = 250
    timestamp: int = 0
    tx_id: bytes = b""

    def __post_init__(self):
        if not self.outputs:
            raise ValueError("transaction needs at least one output")
        if not self.inputs:
            raise ValueError("transaction needs at least one input")
        if any(v <= 0 for _, v in self.outputs):
            raise ValueError("output amounts must be positive")
        if self.size <= 0:
            raise ValueError("size must be positive")
        expect = tx_digest(self.inputs, self.outputs, self.sender, self.receiver,
                           self.size, self.timestamp)
        if not self.tx_id:
            object.__setattr__(self, "tx_id", expect)
        elif self.tx_id != expect:
            raise ValueError("tx_id does not match content")

    @property
    def uid(self) -> bytes:
        return self.tx_id

    @property
    def amount_out(self) -> int:
        return sum(v for _, v in self.outputs)

    def outpoints(self) -> list[OutPoint]:
        return [(self.tx_id, i) for i in range(len(self.outputs))]


class UTXOSet:
    """Live outputs plus outputs locked by in-flight cross-partition transfers."""

    __slots__ = ("live", "locked")

    def __init__(self, live: Mapping[OutPoint, Entry] | None = None,
                 locked: Mapping[OutPoint, Entry] | None = None):
        self.live: dict[OutPoint, Entry] = dict(live or {})
        self.locked: dict[OutPoint, Entry] = dict(locked or {})
        for k, (_, v) in self.live.items():
            if v <= 0:
                raise ValueError(f"non-positive amount at {k}")

    def copy(self) -> "UTXOSet":
        return UTXOSet(self.live, self.locked)

    def __len__(self):
        return len(self.live)

    def __contains__(self, key):
        return key in self.live

    def total(self) -> int:
        return sum(v for _, v in self.live.values()) + sum(v for _, v in self.locked.values())

    def balance(self, owner: bytes) -> int:
        return sum(v for a, v in self.live.values() if a == owner)

    def owned_by(self, owner: bytes) -> list[OutPoint]:
        return sorted(k for k, (a, _) in self.live.items() if a == owner)

    def lock(self, keys: Iterable[OutPoint]):
        keys = list(keys)
        for k in keys:
            if k in self.locked:
                raise DoubleSpend(f"{k[0].hex()[:8]}:{k[1]} already locked")
            if k not in self.live:
                raise UnknownInput(f"{k[0].hex()[:8]}:{k[1]} not live")
        for k in keys:
            self.locked[k] = self.live.pop(k)

    def unlock(self, keys: Iterable[OutPoint]):
        for k in keys:
            self.live[k] = self.locked.pop(k)

    def consume_locked(self, keys: Iterable[OutPoint]) -> int:
        return sum(self.locked.pop(k)[1] for k in keys)

    def insert(self, key: OutPoint, entry: Entry):
        if key in self.live or key in self.locked:
            raise DoubleSpend(f"output {key[0].hex()[:8]}:{key[1]} already exists")
        self.live[key] = entry


def genesis(balances: Mapping[bytes, int], outputs_per_owner: int = 1) -> UTXOSet:
    """Fixed money supply: ``outputs_per_owner`` coins per address."""
    live = {}
    for addr in sorted(balances):
        amt = balances[addr]
        parts = [amt // outputs_per_owner] * outputs_per_owner
        parts[-1] += amt - sum(parts)
        for i, v in enumerate(p for p in parts if p > 0):
            live[(digest("genesis", addr), i)] = (addr, v)
    return UTXOSet(live)


def check_transaction(live: Mapping[OutPoint, Entry], tx: Transaction,
                      spent: set[OutPoint] | None = None) -> int:
    """Validate ``tx`` against ``live``; returns the input total."""
    seen = set()
    total = 0
    for key in tx.inputs:
        if key in seen or (spent is not None and key in spent):
            raise DoubleSpend(f"input {key[0].hex()[:8]}:{key[1]} spent twice")
        seen.add(key)
        entry = live.get(key)
        if entry is None:
            raise UnknownInput(f"input {key[0].hex()[:8]}:{key[1]} not live")
        if entry[0] != tx.sender:
            raise UnknownInput(f"input {key[0].hex()[:8]}:{key[1]} not owned by sender")
        total += entry[1]
    if total != tx.amount_out:
        raise ConservationViolation(f"inputs {total} != outputs {tx.amount_out}")
    return total


def validate_batch(live: Mapping[OutPoint, Entry], txs: Sequence[Transaction]) -> bool:
    """True iff the batch applies cleanly (ignoring outputs created inside it)."""
    spent: set[OutPoint] = set()
    try:
        for tx in txs:
            check_transaction(live, tx, spent)
            spent.update(tx.inputs)
    except LedgerError:
        return False
    return True


@dataclass(frozen=True)
class SubBlock:
    partition: int
    height: int
    prev_digest: bytes
    tx_list: tuple[Transaction, ...]
    proposer: bytes
    decision_proof: tuple = ()

    @property
    def digest(self) -> bytes:
        return digest("subblock", self.partition, self.height, self.prev_digest,
                      tuple(t.tx_id for t in self.tx_list), self.proposer)


def apply_transactions(state: UTXOSet, txs: Sequence[Transaction],
                       home: tuple[int, int] | None = None) -> list[tuple[OutPoint, Entry]]:
    """Apply in place (after full validation). Returns outputs not homed to ``home``.

    ``home`` is (partition, T). Outputs whose owner lives elsewhere are returned
    instead of inserted so the caller can route them; with ``home=None`` all
    outputs stay local.
    """
    spent: set[OutPoint] = set()
    for tx in txs:
        check_transaction(state.live, tx, spent)
        spent.update(tx.inputs)
    foreign = []
    for tx in txs:
        for key in tx.inputs:
            del state.live[key]
        for i, (addr, v) in enumerate(tx.outputs):
            key = (tx.tx_id, i)
            if home is not None and home_partition(addr, home[1]) != home[0]:
                foreign.append((key, (addr, v)))
            else:
                state.insert(key, (addr, v))
    return foreign


def apply_block(state: UTXOSet, block: SubBlock, tip: bytes | None = None) -> UTXOSet:
    """Validate and apply ``block`` to a copy of ``state``; all-or-nothing."""
    if tip is not None and block.prev_digest != tip:
        raise StaleParent(f"block parent {block.prev_digest.hex()[:8]} != tip {tip.hex()[:8]}")
    new = state.copy()
    apply_transactions(new, block.tx_list)
    return new


def partition_root(global_digest: bytes, partition: int) -> bytes:
    return digest("partition-root", global_digest, partition)


@dataclass
class PartitionChain:
    partition: int
    root: bytes
    blocks: list[SubBlock] = field(default_factory=list)

    @property
    def tip(self) -> bytes:
        return self.blocks[-1].digest if self.blocks else self.root

    @property
    def height(self) -> int:
        return len(self.blocks)

    def append(self, block: SubBlock):
        if block.prev_digest != self.tip or block.height != self.height + 1:
            raise StaleParent(f"partition {self.partition}: block does not extend tip")
        self.blocks.append(block)

    def verify(self) -> bool:
        prev = self.root
        for h, b in enumerate(self.blocks, 1):
            if b.prev_digest != prev or b.height != h or b.partition != self.partition:
                return False
            prev = b.digest
        return True


def snapshot_digest(entries: Mapping[OutPoint, Entry]) -> bytes:
    return digest("snapshot", tuple((k[0], k[1], a, v) for k, (a, v) in sorted(entries.items())))


@dataclass(frozen=True)
class StateBlock:
    epoch: int
    partition: int
    utxo_entries: tuple[tuple[OutPoint, Entry], ...]
    utxo_snapshot_digest: bytes

    @property
    def digest(self) -> bytes:
        return digest("state-block", self.epoch, self.partition, self.utxo_snapshot_digest)


def build_state_block(partition_state: UTXOSet, epoch: int, partition: int,
                      T: int | None = None) -> StateBlock:
    """Snapshot of the live entries homed to ``partition`` (all of them when T is None)."""
    if partition_state.locked:
        raise LedgerError("partition has in-flight locked outputs; drain before sealing")
    items = sorted(partition_state.live.items())
    if T is not None:
        items = [(k, e) for k, e in items if home_partition(e[0], T) == partition]
    return StateBlock(epoch, partition, tuple(items), snapshot_digest(dict(items)))


@dataclass(frozen=True)
class GlobalBlock:
    epoch: int
    prev_digest: bytes
    utxo_entries: tuple[tuple[OutPoint, Entry], ...]
    utxo_snapshot_digest: bytes
    state_block_digests: tuple[bytes, ...]
    leader_signatures: tuple = ()

    @property
    def digest(self) -> bytes:
        return digest("global-block", self.epoch, self.prev_digest, self.utxo_snapshot_digest,
                      self.state_block_digests)

    def utxo(self) -> UTXOSet:
        return UTXOSet(dict(self.utxo_entries))

    def total(self) -> int:
        return sum(v for _, (_, v) in self.utxo_entries)


@dataclass
class GlobalChain:
    blocks: list[GlobalBlock] = field(default_factory=list)
    migration_counts: list[int] = field(default_factory=list)

    @property
    def tip(self) -> bytes:
        return self.blocks[-1].digest if self.blocks else ZERO_DIGEST

    @property
    def head(self) -> GlobalBlock:
        return self.blocks[-1]

    def verify(self) -> bool:
        prev = ZERO_DIGEST
        for b in self.blocks:
            if b.prev_digest != prev:
                return False
            prev = b.digest
        return True


def genesis_block(state: UTXOSet) -> GlobalBlock:
    items = tuple(sorted(state.live.items()))
    return GlobalBlock(0, ZERO_DIGEST, items, snapshot_digest(dict(items)), ())


def reorganize(state_blocks: Sequence[StateBlock], global_chain: GlobalChain,
               T: int | None = None, leader_signatures: tuple = ()) -> GlobalBlock:
    """Merge one state block per partition into a new global block and append it."""
    if not state_blocks:
        raise MissingStateBlock("no state blocks")
    T = T if T is not None else max(s.partition for s in state_blocks) + 1
    by_part = {}
    for sb in state_blocks:
        if sb.partition in by_part:
            raise OverlappingSnapshots(f"partition {sb.partition} submitted twice")
        by_part[sb.partition] = sb
    missing = sorted(set(range(T)) - set(by_part))
    if missing:
        raise MissingStateBlock(f"no state block for partitions {missing}")
    epochs = {s.epoch for s in state_blocks}
    if len(epochs) != 1:
        raise MissingStateBlock(f"state blocks from several epochs {sorted(epochs)}")
    merged: dict[OutPoint, Entry] = {}
    for p in range(T):
        sb = by_part[p]
        if snapshot_digest(dict(sb.utxo_entries)) != sb.utxo_snapshot_digest:
            raise LedgerError(f"state block {p} digest mismatch")
        for k, e in sb.utxo_entries:
            if k in merged:
                raise OverlappingSnapshots(f"{k[0].hex()[:8]}:{k[1]} claimed twice")
            merged[k] = e
    items = tuple(sorted(merged.items()))
    block = GlobalBlock(epochs.pop(), global_chain.tip, items, snapshot_digest(merged),
                        tuple(by_part[p].digest for p in range(T)), leader_signatures)
    global_chain.blocks.append(block)
    return block


def partition_views(block: GlobalBlock, T: int) -> list[UTXOSet]:
    """Each partition's starting state, read from the global block alone."""
    views = [dict() for _ in range(T)]
    for k, e in block.utxo_entries:
        views[home_partition(e[0], T)][k] = e
    return [UTXOSet(v) for v in views]


def migration_count(block: GlobalBlock, views: Sequence[UTXOSet]) -> int:
    """Entries in the new partition stores that did not come from ``block``."""
    source = dict(block.utxo_entries)
    return sum(1 for v in views for k, e in v.live.items() if source.get(k) != e)


def assign_shard(tx: Transaction, plan, reputation_view: Sequence[float] | None = None,
                 W_t: int = DEFAULT_W_T) -> int:
    """Partition that processes ``tx``: large ones go to the most reputable partition.

    ``plan`` is a partition count or anything with a ``T`` attribute.
    """
    T = plan if isinstance(plan, int) else plan.T
    if T < 1:
        raise ValueError("need at least one partition")
    if T == 1:
        return 0
    if tx.size > W_t and reputation_view is not None:
        best = max(reputation_view)
        return next(i for i, s in enumerate(reputation_view) if s == best)
    return home_partition(tx.sender, T)


def is_cross_partition(tx: Transaction, T: int) -> bool:
    return home_partition(tx.sender, T) != home_partition(tx.receiver, T)


def chain_records(chain: PartitionChain, epoch: int) -> list[dict]:
    """Line-delimited dump records for a partition chain."""
    return [{"kind": "subblock", "epoch": epoch, "partition": chain.partition, "height": b.height,
             "prev": b.prev_digest.hex(), "digest": b.digest.hex(), "proposer": b.proposer.hex(),
             "txs": [t.tx_id.hex() for t in b.tx_list]} for b in chain.blocks]


def global_records(chain: GlobalChain) -> list[dict]:
    return [{"kind": "global", "epoch": b.epoch, "prev": b.prev_digest.hex(),
             "digest": b.digest.hex(), "snapshot": b.utxo_snapshot_digest.hex(),
             "entries": len(b.utxo_entries), "total": b.total(),
             "state_blocks": [d.hex() for d in b.state_block_digests]} for b in chain.blocks]
