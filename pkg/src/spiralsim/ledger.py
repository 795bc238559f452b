"""Account state, transactions, Merkle commitments and cross-shard relays.

Each shard keeps a canonical (finalized) state plus one speculative overlay
per prepared block. An overlay stores only the keys its block changed; the
state seen by a block is the chain of overlays back to the canonical tip,
layered with ``collections.ChainMap``.

Transaction encoding (big-endian), zero-padded to 512 bytes:

    kind u8 | from 20B | to 20B | amount u64 | nonce u64 | has_ref u8
    | [ref block 32B | ref index u32]
"""

from __future__ import annotations

import csv
import struct
from collections import ChainMap
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Protocol, Sequence

from .core import (
    BlockHeader,
    Hash,
    predecessor,
    quorum_size,
    sha256,
    shard_of_account,
    verify_ancestry,
)

TX_SIZE = 512
EMPTY_ROOT = sha256(b"")

Address = bytes
TxRef = tuple  # (source block hash, tx index)


class TxKind(int, Enum):
    INTRA = 0
    CROSS_DEBIT = 1
    CROSS_CREDIT = 2


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    sender: Address
    to: Address
    amount: int
    nonce: int = 0
    origin_ref: TxRef | None = None

    def encode(self) -> bytes:
        raw = struct.pack(">B20s20sQQ", self.kind, self.sender, self.to, self.amount, self.nonce)
        if self.origin_ref is None:
            raw += b"\x00"
        else:
            raw += b"\x01" + self.origin_ref[0] + struct.pack(">I", self.origin_ref[1])
        return raw.ljust(TX_SIZE, b"\x00")

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        kind, sender, to, amount, nonce = struct.unpack_from(">B20s20sQQ", data, 0)
        ref = None
        if data[57]:
            ref = (data[58:90], struct.unpack_from(">I", data, 90)[0])
        return cls(TxKind(kind), sender, to, amount, nonce, ref)

    @cached_property
    def hash(self) -> Hash:
        return sha256(self.encode())


# -- Merkle tree (duplicate-last on odd levels) --------------------------------

def _next_level(level: list[Hash]) -> list[Hash]:
    if len(level) % 2:
        level = level + [level[-1]]
    return [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]


def merkle_root_of_leaves(leaves: Sequence[Hash]) -> Hash:
    if not leaves:
        return EMPTY_ROOT
    level = list(leaves)
    while len(level) > 1:
        level = _next_level(level)
    return level[0]


def merkle_root(txs: Sequence[Transaction]) -> Hash:
    return merkle_root_of_leaves([tx.hash for tx in txs])


def merkle_prove(txs: Sequence[Transaction], index: int) -> list[tuple[Hash, str]]:
    """Sibling path from leaf ``index`` to the root; side is where the sibling sits."""
    if not txs:
        raise ValueError("cannot prove membership in an empty tree")
    if not 0 <= index < len(txs):
        raise IndexError(index)
    level = [tx.hash for tx in txs]
    path = []
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        sib = index ^ 1
        path.append((level[sib], "L" if sib < index else "R"))
        level = _next_level(level)
        index //= 2
    return path


def merkle_verify(root: Hash, path: Sequence[tuple[Hash, str]], tx: Transaction) -> bool:
    node = tx.hash
    for sib, side in path:
        if side == "L":
            node = sha256(sib + node)
        elif side == "R":
            node = sha256(node + sib)
        else:
            return False
    return node == root


# -- account state ----------------------------------------------------------------

class LedgerError(RuntimeError):
    """Overlay bookkeeping misuse; indicates a simulator bug."""


class InvalidBlock(ValueError):
    def __init__(self, index: int, tx: Transaction):
        super().__init__(f"transaction {index} is invalid")
        self.index = index
        self.tx = tx


@dataclass
class Overlay:
    parent: Hash
    balances: dict = field(default_factory=dict)
    nonces: dict = field(default_factory=dict)
    credited: dict = field(default_factory=dict)
    pending: dict = field(default_factory=dict)  # credits received in this block


class StateView:
    """Read-mostly view; writes land in the first map of each ChainMap."""

    def __init__(self, balances: ChainMap, nonces: ChainMap, credited: ChainMap,
                 pending: ChainMap | None = None):
        self.balances = balances
        self.nonces = nonces
        self.credited = credited
        self.pending = pending if pending is not None else ChainMap()

    def balance(self, addr: Address) -> int:
        return self.balances.get(addr, 0)

    def spendable(self, addr: Address) -> int:
        """Balance less deposits still sitting in unfinalized blocks."""
        bal = self.balance(addr)
        if addr not in self.pending:
            return bal
        return bal - sum(m.get(addr, 0) for m in self.pending.maps)

    def nonce(self, addr: Address) -> int:
        return self.nonces.get(addr, 0)

    def child(self) -> "StateView":
        return StateView(self.balances.new_child(), self.nonces.new_child(),
                         self.credited.new_child(), self.pending.new_child())


def validate_tx(state: StateView, tx: Transaction, accepted: Mapping | frozenset = frozenset()) -> bool:
    """Account-model check of one transaction against ``state``.

    Credits are only valid for relays already accepted by the destination
    (``accepted``) and not yet credited on this branch.
    """
    if tx.amount < 0:
        return False
    if tx.kind is TxKind.CROSS_CREDIT:
        return (tx.origin_ref is not None and tx.origin_ref in accepted
                and tx.origin_ref not in state.credited)
    if tx.origin_ref is not None:
        return False
    return state.spendable(tx.sender) >= tx.amount and tx.nonce == state.nonce(tx.sender) + 1


def _apply(state: StateView, tx: Transaction) -> None:
    if tx.kind is TxKind.CROSS_CREDIT:
        state.balances[tx.to] = state.balance(tx.to) + tx.amount
        state.credited[tx.origin_ref] = True
        state.pending[tx.to] = state.pending.maps[0].get(tx.to, 0) + tx.amount
        return
    state.balances[tx.sender] = state.balance(tx.sender) - tx.amount
    state.nonces[tx.sender] = tx.nonce
    if tx.kind is TxKind.INTRA:
        state.balances[tx.to] = state.balance(tx.to) + tx.amount


class ShardLedger:
    def __init__(self, shard: int, genesis_hash: Hash, allocation: Mapping[Address, int]):
        self.shard = shard
        self.balances: dict[Address, int] = dict(allocation)
        self.nonces: dict[Address, int] = {}
        self.credited: dict[TxRef, bool] = {}
        self.tip = genesis_hash
        self.overlays: dict[Hash, Overlay] = {}
        self.accepted: dict[TxRef, Transaction] = {}

    def state_at(self, block: Hash) -> StateView:
        maps: list[Overlay] = []
        cur = block
        while cur != self.tip:
            ov = self.overlays.get(cur)
            if ov is None:
                raise LedgerError("block does not extend the canonical tip")
            maps.append(ov)
            cur = ov.parent
        return StateView(
            ChainMap(*[m.balances for m in maps], self.balances),
            ChainMap(*[m.nonces for m in maps], self.nonces),
            ChainMap(*[m.credited for m in maps], self.credited),
            ChainMap(*[m.pending for m in maps], {}),
        )

    def check_block(self, parent: Hash, txs: Iterable[Transaction]) -> int | None:
        """Index of the first invalid transaction, or None."""
        state = self.state_at(parent).child()
        for i, tx in enumerate(txs):
            if not validate_tx(state, tx, self.accepted):
                return i
            _apply(state, tx)
        return None

    def apply_block(self, block_hash: Hash, parent: Hash, txs: Sequence[Transaction]) -> None:
        state = self.state_at(parent).child()
        for i, tx in enumerate(txs):
            if not validate_tx(state, tx, self.accepted):
                raise InvalidBlock(i, tx)
            _apply(state, tx)
        self.overlays[block_hash] = Overlay(parent, state.balances.maps[0],
                                            state.nonces.maps[0], state.credited.maps[0],
                                            state.pending.maps[0])

    def rollback_block(self, block_hash: Hash) -> None:
        self.overlays.pop(block_hash, None)

    def finalize(self, block_hash: Hash) -> None:
        ov = self.overlays.pop(block_hash, None)
        if ov is None or ov.parent != self.tip:
            raise LedgerError("finalized block is not a child of the canonical tip")
        self.balances.update(ov.balances)
        self.nonces.update(ov.nonces)
        self.credited.update(ov.credited)
        self.tip = block_hash

    def total_balance(self) -> int:
        return sum(self.balances.values())


def load_genesis(path) -> dict[Address, int]:
    """Read a ``address_hex,balance`` CSV (header row optional)."""
    out: dict[Address, int] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "address_hex":
                continue
            addr = bytes.fromhex(row[0].strip())
            if len(addr) != 20:
                raise ValueError(f"bad address {row[0]!r}")
            out[addr] = out.get(addr, 0) + int(row[1])
    return out


# -- cross-shard relays -----------------------------------------------------------

@dataclass(frozen=True)
class FinalityProof:
    subject: Hash
    merkle_path: tuple
    ancestry_headers: tuple  # subject first, directly finalized block last
    witness_header: BlockHeader


@dataclass(frozen=True)
class Relay:
    tx: Transaction
    tx_index: int
    source_shard: int
    proof: FinalityProof

    @property
    def ref(self) -> TxRef:
        return (self.proof.subject, self.tx_index)

    def encode(self) -> bytes:
        p = self.proof
        parts = [self.tx.encode(), struct.pack(">II", self.tx_index, self.source_shard), p.subject,
                 struct.pack(">H", len(p.merkle_path))]
        parts += [h + side.encode() for h, side in p.merkle_path]
        parts.append(struct.pack(">H", len(p.ancestry_headers)))
        for h in (*p.ancestry_headers, p.witness_header):
            enc = h.encode(with_cert=True)
            parts += [struct.pack(">I", len(enc)), enc]
        return b"".join(parts)


class RejectReason(str, Enum):
    BAD_QUORUM = "BadQuorum"
    BAD_MERKLE = "BadMerkle"
    BAD_FINALITY = "BadFinality"
    DUPLICATE = "Duplicate"
    WRONG_DESTINATION = "WrongDestination"


@dataclass(frozen=True)
class Deposit:
    ref: TxRef
    credit: Transaction


@dataclass(frozen=True)
class Reject:
    reason: RejectReason


class MembershipSource(Protocol):
    def members(self, shard: int, epoch: int) -> frozenset: ...


def emit_cross_shard_relays(block_header: BlockHeader, body: Sequence[Transaction], finalized: bool,
                            ancestry: Sequence[BlockHeader], witness: BlockHeader,
                            num_shards: int) -> list[Relay]:
    """One relay per cross-shard debit of a finalized block."""
    assert finalized, "relays are only emitted for finalized blocks"
    relays = []
    for i, tx in enumerate(body):
        if tx.kind is TxKind.CROSS_DEBIT:
            proof = FinalityProof(block_header.hash, tuple(merkle_prove(body, i)),
                                  tuple(ancestry), witness)
            relays.append(Relay(tx, i, block_header.shard, proof))
    return relays


def _cert_ok(h: BlockHeader, registry: MembershipSource, S: int) -> bool:
    members = registry.members(h.shard, h.epoch)
    return len(h.quorum_cert) >= quorum_size(S) and h.quorum_cert <= members


def verify_finality(proof: FinalityProof, G: int) -> bool:
    chain = proof.ancestry_headers
    if not chain or chain[0].hash != proof.subject:
        return False
    top = chain[-1]
    if not verify_ancestry(top.hash, proof.subject, chain):
        return False
    w = proof.witness_header
    if w.epoch != top.epoch:
        return False
    if G == 1:
        return w.hash == top.hash
    return (len(w.endorsement_list) == G - 1 and w.endorsement_list[0] == top.hash
            and w.shard == predecessor(top.shard, G))


def accept_relay(dest_shard: int, ledger: ShardLedger, relay: Relay, registry: MembershipSource,
                 S: int, G: int, num_shards: int) -> Deposit | Reject:
    tx = relay.tx
    if tx.kind is not TxKind.CROSS_DEBIT or shard_of_account(tx.to, num_shards) != dest_shard:
        return Reject(RejectReason.WRONG_DESTINATION)
    p = relay.proof
    headers = (*p.ancestry_headers, p.witness_header)
    if not p.ancestry_headers or not all(_cert_ok(h, registry, S) for h in headers):
        return Reject(RejectReason.BAD_QUORUM)
    if not merkle_verify(p.ancestry_headers[0].tx_root, p.merkle_path, tx):
        return Reject(RejectReason.BAD_MERKLE)
    if not verify_finality(p, G):
        return Reject(RejectReason.BAD_FINALITY)
    ref = relay.ref
    if ref in ledger.accepted:
        return Reject(RejectReason.DUPLICATE)
    credit = Transaction(TxKind.CROSS_CREDIT, tx.sender, tx.to, tx.amount, 0, ref)
    ledger.accepted[ref] = credit
    return Deposit(ref, credit)
