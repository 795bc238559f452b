"""Linked cross-shard endorsement.

Shards of a group form a ring; each prepared header goes to the successor,
which endorses a block of its predecessor by embedding the hash in its own
next header. The endorsement list carries the last G-1 endorsed hashes, so
when a shard prepares a header whose list is full, the oldest entry has been
endorsed by every shard of the group and is finalized together with its
ancestors. Prepared blocks conflicting with it are discarded.

Endorsements only move forward: a shard endorses the block its lineage last
endorsed or a descendant of it. Lists never mix epochs, so progress made in
one epoch does not carry into the next.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .core import (
    BlockHeader,
    BlockStatus,
    Hash,
    genesis_header,
    predecessor,
    successor,
)


class SafetyViolation(AssertionError):
    """Two conflicting blocks finalized, or a discarded block finalized."""


class Verdict(str, Enum):
    VALID = "Valid"
    UNKNOWN_PARENT = "UnknownParent"
    DISCARDED_PARENT = "DiscardedParent"
    BAD_HEIGHT = "BadHeight"
    BAD_FINALIZED_REF = "BadFinalizedRef"
    INVALID_TX = "InvalidTx"
    CONFLICTING_ENDORSEMENT = "ConflictingEndorsement"
    CROSS_EPOCH_ENDORSEMENT = "CrossEpochEndorsement"
    NOT_PREPARED = "NotPrepared"
    MALFORMED_LIST = "MalformedList"


@dataclass
class BlockRecord:
    header: BlockHeader
    body: tuple = ()
    status: BlockStatus = BlockStatus.PREPARED
    lineage: Hash | None = None  # last block endorsed along this block's ancestry
    proposed_tick: int = 0
    prepared_tick: int = 0
    served: int = 0  # workload requests consumed up to this block


@dataclass(frozen=True)
class FinalizationEvent:
    shard: int
    finalized: tuple  # ancestor first
    discarded: tuple
    witness: BlockHeader


def extend_endorsement_list(endorsed: BlockHeader, G: int) -> tuple:
    if G <= 1:
        return ()
    return (endorsed.endorsement_list + (endorsed.hash,))[-(G - 1):]


def descends_from(store: Mapping[Hash, BlockHeader], x: Hash, anc: Hash) -> bool:
    """True if ``x`` equals ``anc`` or reaches it through parents known to ``store``."""
    a = store.get(anc)
    cur = store.get(x)
    if a is None or cur is None:
        return False
    while cur.height > a.height:
        cur = store.get(cur.parent)
        if cur is None:
            return False
    return cur.hash == a.hash


class ShardChainState:
    """One shard's block tree with statuses, plus what it heard from its predecessor."""

    def __init__(self, shard: int, G: int):
        self.shard = shard
        self.G = G
        g = genesis_header(shard)
        self.genesis = g.hash
        self.blocks: dict[Hash, BlockRecord] = {g.hash: BlockRecord(g, status=BlockStatus.FINALIZED)}
        self.headers: dict[Hash, BlockHeader] = {g.hash: g}
        self.children: dict[Hash, list[Hash]] = {g.hash: []}
        self.latest_finalized: Hash = g.hash
        self.pending: dict[Hash, None] = {}  # prepared, in preparation order
        self.predecessor_inbox: dict[Hash, BlockHeader] = {}  # arrival order
        self.epoch = 0

    # -- own chain -------------------------------------------------------------
    def status(self, h: Hash) -> BlockStatus | None:
        rec = self.blocks.get(h)
        return rec.status if rec else None

    def header(self, h: Hash) -> BlockHeader:
        return self.blocks[h].header

    def add_prepared(self, header: BlockHeader, body: tuple = (), *, proposed_tick: int = 0,
                     prepared_tick: int = 0, served: int = 0) -> BlockRecord:
        h = header.hash
        if h in self.blocks:
            return self.blocks[h]
        parent = self.blocks.get(header.parent)
        if parent is None:
            raise KeyError("parent unknown")
        lineage = header.endorsed() or parent.lineage
        rec = BlockRecord(header, body, BlockStatus.PREPARED, lineage, proposed_tick,
                          prepared_tick, served)
        self.blocks[h] = rec
        self.headers[h] = header
        self.children.setdefault(h, [])
        self.children[header.parent].append(h)
        self.pending[h] = None
        return rec

    def descends(self, x: Hash, anc: Hash) -> bool:
        return descends_from(self.headers, x, anc)

    def finalize(self, target: Hash) -> tuple[list[Hash], list[Hash]]:
        """Finalize ``target`` and its ancestors; discard everything conflicting.

        Returns (finalized ancestor-first, discarded). Already-final targets
        yield empty lists.
        """
        rec = self.blocks.get(target)
        if rec is None:
            raise KeyError("unknown block")
        if rec.status is BlockStatus.FINALIZED:
            return [], []
        if rec.status is BlockStatus.DISCARDED:
            raise SafetyViolation(f"shard {self.shard}: finalizing discarded block {target.hex()[:12]}")
        path = []
        cur = rec
        while cur.status is BlockStatus.PREPARED:
            path.append(cur.header.hash)
            cur = self.blocks[cur.header.parent]
        if cur.header.hash != self.latest_finalized:
            raise SafetyViolation(f"shard {self.shard}: block {target.hex()[:12]} conflicts with finalized chain")
        path.reverse()
        for h in path:
            self.blocks[h].status = BlockStatus.FINALIZED
            del self.pending[h]
        self.latest_finalized = target
        discarded = [h for h in self.pending if not self.descends(h, target)]
        for h in discarded:
            self.blocks[h].status = BlockStatus.DISCARDED
            del self.pending[h]
        return path, discarded

    def discard_if_dead(self, h: Hash) -> bool:
        """Discard a freshly prepared block that does not extend the finalized chain."""
        rec = self.blocks[h]
        if not self.descends(h, self.latest_finalized):
            rec.status = BlockStatus.DISCARDED
            self.pending.pop(h, None)
            return True
        return False

    def best_tip(self) -> Hash:
        """Highest live block; earliest prepared wins ties."""
        best = self.latest_finalized
        best_h = self.blocks[best].header.height
        for h in self.pending:
            height = self.blocks[h].header.height
            if height > best_h:
                best, best_h = h, height
        return best

    def chain_between(self, ancestor: Hash, descendant: Hash) -> list[BlockHeader]:
        """Headers from ``ancestor`` to ``descendant`` inclusive (ancestor first)."""
        out = []
        cur = descendant
        while True:
            hdr = self.blocks[cur].header
            out.append(hdr)
            if cur == ancestor:
                break
            if hdr.height == 0:
                raise KeyError("ancestor not on chain")
            cur = hdr.parent
        out.reverse()
        return out

    # -- predecessor side ----------------------------------------------------------
    def receive_predecessor_header(self, header: BlockHeader) -> bool:
        if header.hash in self.predecessor_inbox:
            return False
        self.predecessor_inbox[header.hash] = header
        return True


def endorsement_target(st: ShardChainState, parent: Hash, epoch: int) -> BlockHeader | None:
    """Predecessor header a child of ``parent`` should endorse, or None.

    Highest-height inbox header of ``epoch`` that descends from (or equals)
    the block the parent's lineage last endorsed; first received wins ties.
    Falls back to re-endorsing that block when nothing newer qualifies.
    """
    if st.G <= 1:
        return None
    anchor = st.blocks[parent].lineage
    inbox = st.predecessor_inbox
    best: BlockHeader | None = None
    for h, hdr in inbox.items():
        if hdr.epoch != epoch:
            continue
        if best is not None and hdr.height <= best.height:
            continue
        if anchor is None or descends_from(inbox, h, anchor):
            best = hdr
    if best is None and anchor is not None:
        a = inbox.get(anchor)
        if a is not None and a.epoch == epoch:
            best = a
    return best


def validate_endorsement(st: ShardChainState, candidate: BlockHeader) -> Verdict:
    """Endorsement check of a candidate whose parent is known to ``st``."""
    G = st.G
    elist = candidate.endorsement_list
    if G <= 1:
        return Verdict.VALID if not elist else Verdict.MALFORMED_LIST
    if len(elist) > G - 1:
        return Verdict.MALFORMED_LIST
    if not elist:
        target = endorsement_target(st, candidate.parent, candidate.epoch)
        return Verdict.VALID if target is None else Verdict.MALFORMED_LIST
    endorsed = st.predecessor_inbox.get(elist[-1])
    if endorsed is None:
        return Verdict.NOT_PREPARED
    if endorsed.shard != predecessor(st.shard, G):
        return Verdict.MALFORMED_LIST
    if endorsed.epoch != candidate.epoch:
        return Verdict.CROSS_EPOCH_ENDORSEMENT
    anchor = st.blocks[candidate.parent].lineage
    if anchor is not None and not descends_from(st.predecessor_inbox, endorsed.hash, anchor):
        return Verdict.CONFLICTING_ENDORSEMENT
    if tuple(elist) != extend_endorsement_list(endorsed, G):
        return Verdict.MALFORMED_LIST
    return Verdict.VALID


def route_header(header: BlockHeader, voters: Iterable[int], G: int, prepared: bool = True) -> set:
    """(sender, destination shard) pairs: every voter forwards the header."""
    if not prepared:
        return set()
    dest = successor(header.shard, G)
    return {(v, dest) for v in voters}


def epoch_boundary_reset(st: ShardChainState, new_epoch: int) -> ShardChainState:
    """Enter ``new_epoch``: statuses persist, endorsement progress restarts.

    Nothing needs clearing: old-epoch inbox headers can no longer be
    endorsed and lists of new-epoch headers only hold new-epoch hashes.
    """
    st.epoch = new_epoch
    return st


class Observer:
    """Global view of every shard; decides finalization from prepared headers."""

    def __init__(self, num_shards: int, G: int):
        self.G = G
        self.chains = [ShardChainState(s, G) for s in range(num_shards)]
        self.headers: dict[Hash, BlockHeader] = {}
        for c in self.chains:
            self.headers[c.genesis] = c.header(c.genesis)

    def status(self, h: Hash) -> BlockStatus | None:
        hdr = self.headers.get(h)
        return None if hdr is None else self.chains[hdr.shard].status(h)

    def check_witness(self, h: BlockHeader) -> Verdict:
        """Link-by-link check of a full endorsement list."""
        G = self.G
        elist = h.endorsement_list
        if len(elist) != G - 1:
            return Verdict.MALFORMED_LIST
        expect_shard = h.shard
        for i in range(G - 2, -1, -1):
            expect_shard = predecessor(expect_shard, G)
            e = self.headers.get(elist[i])
            if e is None:
                return Verdict.NOT_PREPARED
            if e.shard != expect_shard:
                return Verdict.MALFORMED_LIST
            if e.epoch != h.epoch:
                return Verdict.CROSS_EPOCH_ENDORSEMENT
            if i and (len(e.endorsement_list) < i
                      or tuple(e.endorsement_list[len(e.endorsement_list) - i:]) != tuple(elist[:i])):
                return Verdict.MALFORMED_LIST
        return Verdict.VALID

    def on_header_prepared(self, header: BlockHeader, body: tuple = (), *, proposed_tick: int = 0,
                           tick: int = 0) -> tuple[bool, FinalizationEvent | None]:
        """Record a prepared header. Returns (dead_on_arrival, event)."""
        chain = self.chains[header.shard]
        self.headers[header.hash] = header
        chain.add_prepared(header, body, proposed_tick=proposed_tick, prepared_tick=tick)
        dead = chain.discard_if_dead(header.hash)
        if self.G == 1:
            if dead:
                return dead, None
            target, owner = header.hash, header.shard
        else:
            if len(header.endorsement_list) != self.G - 1 or self.check_witness(header) is not Verdict.VALID:
                return dead, None
            target, owner = header.endorsement_list[0], successor(header.shard, self.G)
        fin, disc = self.chains[owner].finalize(target)
        if not fin and not disc:
            return dead, None
        return dead, FinalizationEvent(owner, tuple(fin), tuple(disc), header)
