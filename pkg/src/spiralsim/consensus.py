"""Abstract intra-shard BFT: leader proposals, role-dependent votes, quorum
preparation and view change.

Messages are not simulated one by one; a round is evaluated from the
candidates a leader emits and the policy of each member. Timing is added by
the world using sampled network delays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from .core import Block, BlockHeader, BlockStatus, Hash, quorum_size
from .lce import ShardChainState, Verdict, validate_endorsement
from .ledger import ShardLedger, Transaction, merkle_root


class Role(str, Enum):
    HONEST = "honest"
    BYZANTINE = "byzantine"
    ABC = "abc"  # alive-but-corrupt


class Behavior(str, Enum):
    SILENT = "silent"
    EQUIVOCATE = "equivocate"
    WITHHOLD = "withhold"
    INVALID_TX = "invalid_tx"


@dataclass(frozen=True)
class NodePolicy:
    role: Role = Role.HONEST
    behavior: Behavior | None = None
    branches: int = 2  # for EQUIVOCATE

    @classmethod
    def parse(cls, role: str, behavior: str | None = None) -> "NodePolicy":
        r = Role(role)
        if r is not Role.BYZANTINE:
            return cls(r)
        spec = behavior or "equivocate:2"
        name, _, k = spec.partition(":")
        b = Behavior(name)
        return cls(r, b, int(k) if k else 2)

    @property
    def malicious(self) -> bool:
        return self.role is not Role.HONEST

    @property
    def participates(self) -> bool:
        """Takes part in view changes and relays headers."""
        return self.role is not Role.BYZANTINE


HONEST = NodePolicy()


@dataclass(frozen=True)
class ShardConsensusState:
    shard: int
    epoch: int
    members: tuple
    view: int = 0
    vc_timer: int = 0
    pending_votes: dict = field(default_factory=dict, compare=False)

    @property
    def leader(self) -> int:
        return self.members[self.view % len(self.members)]

    @property
    def quorum(self) -> int:
        return quorum_size(len(self.members))


class TallyResult(str, Enum):
    PREPARED = "Prepared"
    PENDING = "Pending"


def tally(votes: Iterable[int], st: ShardConsensusState) -> TallyResult:
    """Distinct member votes against the 2/3 quorum; others are ignored."""
    members = set(st.members)
    counted = {v for v in votes if v in members}
    return TallyResult.PREPARED if len(counted) >= st.quorum else TallyResult.PENDING


def trigger_view_change(st: ShardConsensusState, participants: int, now: int,
                        timeout: int) -> tuple[ShardConsensusState, bool]:
    """Advance the view if enough non-Byzantine members take part."""
    if participants >= st.quorum:
        return replace(st, view=st.view + 1, vc_timer=now + timeout, pending_votes={}), True
    return replace(st, vc_timer=now + timeout), False


def validate_candidate(chain: ShardChainState, ledger: ShardLedger, candidate: Block,
                       epoch: int) -> Verdict:
    """Checks in order: parent, height/epoch, finalized reference, transactions, endorsement."""
    h = candidate.header
    parent = chain.blocks.get(h.parent)
    if parent is None:
        return Verdict.UNKNOWN_PARENT
    if parent.status is BlockStatus.DISCARDED:
        return Verdict.DISCARDED_PARENT
    if (h.height != parent.header.height + 1 or h.shard != chain.shard
            or h.epoch != epoch or h.epoch < parent.header.epoch):
        return Verdict.BAD_HEIGHT
    if chain.status(h.latest_finalized) is not BlockStatus.FINALIZED:
        return Verdict.BAD_FINALIZED_REF
    if h.tx_root != merkle_root(candidate.body):
        return Verdict.INVALID_TX
    try:
        bad = ledger.check_block(h.parent, candidate.body)
    except Exception:
        return Verdict.UNKNOWN_PARENT
    if bad is not None:
        return Verdict.INVALID_TX
    return validate_endorsement(chain, h)


def cast_vote(policy: NodePolicy, verdict: Verdict, voted_this_round: bool,
              abc_votes_invalid: bool = False) -> bool:
    if policy.role is Role.BYZANTINE:
        return policy.behavior is not Behavior.SILENT
    if policy.role is Role.ABC:
        return verdict is Verdict.VALID or (abc_votes_invalid and verdict is Verdict.INVALID_TX)
    return verdict is Verdict.VALID and not voted_this_round


def collect_votes(members: Sequence[int], policies: dict, verdicts: Sequence[Verdict],
                  abc_votes_invalid: bool = False) -> list[list[int]]:
    """Voter lists per candidate for one round.

    Malicious members vote for every candidate their policy allows. Honest
    members vote once; they are spread so that each valid candidate gets just
    enough honest votes to reach quorum where possible (the adversary's best
    split), with leftovers on the first valid candidate.
    """
    q = quorum_size(len(members))
    votes: list[list[int]] = [[] for _ in verdicts]
    honest = []
    for m in members:
        pol = policies.get(m, HONEST)
        if pol.role is Role.HONEST:
            honest.append(m)
            continue
        for i, v in enumerate(verdicts):
            if cast_vote(pol, v, False, abc_votes_invalid):
                votes[i].append(m)
    valid = [i for i, v in enumerate(verdicts) if v is Verdict.VALID]
    pool = list(honest)
    for i in valid:
        need = max(0, q - len(votes[i]))
        if len(valid) == 1:
            need = len(pool)
        take, pool = pool[:need], pool[need:]
        votes[i].extend(take)
    if valid and pool:
        votes[valid[0]].extend(pool)
    return [sorted(v) for v in votes]


def propose_block(st: ShardConsensusState, policy: NodePolicy, parent: BlockHeader,
                  payload: Sequence[Transaction], endorsement: tuple, latest_finalized: Hash,
                  *, attack: bool = True, filler: Sequence[Transaction] = (),
                  overspend: Transaction | None = None) -> list[Block]:
    """Candidates emitted by the current leader.

    ``filler`` supplies distinct zero-value transactions used to make
    equivocating siblings differ; ``overspend`` is the invalid transaction an
    ``invalid_tx`` leader slips in.
    """

    def make(body: Sequence[Transaction], elist: tuple) -> Block:
        body = tuple(body)
        hdr = BlockHeader(st.shard, st.epoch, parent.height + 1, st.view, parent.hash,
                          merkle_root(body), latest_finalized, tuple(elist), st.leader)
        return Block(hdr, body)

    if policy.role is not Role.BYZANTINE or not attack:
        if policy.role is Role.BYZANTINE and policy.behavior is Behavior.SILENT:
            return []
        return [make(payload, endorsement)]
    b = policy.behavior
    if b is Behavior.SILENT:
        return []
    if b is Behavior.WITHHOLD:
        return [make(payload, ())]
    if b is Behavior.INVALID_TX:
        return [make([*payload, overspend] if overspend else payload, endorsement)]
    out = []
    for j in range(policy.branches):
        extra = [filler[j]] if j < len(filler) else []
        out.append(make([*payload, *extra], endorsement))
    return out
