import pytest

import votes
from spiralsim.consensus import (
    HONEST,
    Behavior,
    NodePolicy,
    Role,
    ShardConsensusState,
    TallyResult,
    cast_vote,
    collect_votes,
    propose_block,
    tally,
    trigger_view_change,
    validate_candidate,
)
from spiralsim.core import BlockHeader, BlockStatus, ZERO_HASH, genesis_header, quorum_size
from spiralsim.lce import ShardChainState, Verdict, extend_endorsement_list
from spiralsim.ledger import ShardLedger, Transaction, TxKind

BYZ = NodePolicy.parse("byzantine", "equivocate:2")
ABC = NodePolicy(Role.ABC)
A = bytes([1]) * 20
B = bytes([2]) * 20


def state(S=10, view=0):
    return ShardConsensusState(0, 0, tuple(range(S)), view)


# -- policies and tally -------------------------------------------------------------------

def test_policy_parse():
    p = NodePolicy.parse("byzantine", "equivocate:3")
    assert (p.role, p.behavior, p.branches) == (Role.BYZANTINE, Behavior.EQUIVOCATE, 3)
    assert NodePolicy.parse("byzantine", "silent").behavior is Behavior.SILENT
    assert NodePolicy.parse("abc", "silent") == ABC
    assert ABC.malicious and ABC.participates
    assert BYZ.malicious and not BYZ.participates
    with pytest.raises(ValueError):
        NodePolicy.parse("byzantine", "sulk")


@pytest.mark.parametrize("S,n,expect", [(10, 7, TallyResult.PREPARED), (10, 6, TallyResult.PENDING),
                                        (4, 3, TallyResult.PREPARED)])
def test_tally(S, n, expect):
    assert tally(range(n), state(S)) is expect


def test_tally_ignores_duplicates_and_outsiders():
    assert tally([0, 0, 1, 1, 2, 3, 4, 5, 99, 98], state(10)) is TallyResult.PENDING


def test_leader_rotates_round_robin():
    st_ = state(4)
    assert st_.leader == 0
    for view in range(1, 6):
        st_, ok = trigger_view_change(st_, 4, 0, 10)
        assert ok and st_.leader == view % 4


def test_view_change_needs_quorum_of_participants():
    st_, ok = trigger_view_change(state(10), 6, 100, 50)
    assert not ok and st_.view == 0 and st_.vc_timer == 150
    st_, ok = trigger_view_change(state(10), 7, 100, 50)
    assert ok and st_.view == 1


# -- votes --------------------------------------------------------------------------------

def test_cast_vote_rules():
    assert not cast_vote(HONEST, Verdict.INVALID_TX, False)
    assert cast_vote(HONEST, Verdict.VALID, False)
    assert not cast_vote(HONEST, Verdict.VALID, True)
    assert cast_vote(ABC, Verdict.VALID, True)
    assert not cast_vote(ABC, Verdict.INVALID_TX, False)
    assert cast_vote(ABC, Verdict.INVALID_TX, False, abc_votes_invalid=True)
    assert cast_vote(BYZ, Verdict.INVALID_TX, True)
    assert not cast_vote(NodePolicy.parse("byzantine", "silent"), Verdict.VALID, False)


def members_with(S, byz=0, abc=0):
    pol = {i: BYZ for i in range(byz)}
    pol.update({i: ABC for i in range(byz, byz + abc)})
    return tuple(range(S)), pol


def test_collect_votes_single_valid_candidate():
    members, pol = members_with(10, byz=2)
    (v,) = collect_votes(members, pol, [Verdict.VALID])
    assert v == list(range(10))


def test_collect_votes_honest_vote_once():
    members, pol = members_with(10)
    a, b = collect_votes(members, pol, [Verdict.VALID, Verdict.VALID])
    assert not set(a) & set(b) and len(a) + len(b) == 10


def test_collect_votes_invalid_candidate():
    members, pol = members_with(10, byz=3, abc=3)
    (v,) = collect_votes(members, pol, [Verdict.INVALID_TX])
    assert v == [0, 1, 2]
    (v,) = collect_votes(members, pol, [Verdict.INVALID_TX], abc_votes_invalid=True)
    assert v == [0, 1, 2, 3, 4, 5]


def test_vote_oracle_agrees_with_exhaustive_product():
    for S in range(1, 7):
        for d in range(S + 1):
            assert votes.double_quorum_possible(S, d) == votes.double_quorum_possible_exhaustive(S, d)


@pytest.mark.parametrize("S", range(1, 13))
def test_double_quorum_threshold(S):
    q = quorum_size(S)
    assert q == votes.quorum(S)
    for d in range(S + 1):
        possible = votes.double_quorum_possible(S, d)
        assert possible == (d >= 2 * q - S)
        # the simulator's vote collection reaches the same states
        for byz in (0, d):
            members, pol = members_with(S, byz=byz, abc=d - byz)
            a, b = collect_votes(members, pol, [Verdict.VALID, Verdict.VALID])
            assert (len(a) >= q and len(b) >= q) == possible


@pytest.mark.parametrize("S", range(1, 13))
def test_invalid_quorum_threshold(S):
    q = quorum_size(S)
    for byz in range(S + 1):
        possible = votes.invalid_quorum_possible(S, byz)
        assert possible == (byz >= q)
        members, pol = members_with(S, byz=byz, abc=S - byz)
        (v,) = collect_votes(members, pol, [Verdict.INVALID_TX])
        assert (len(v) >= q) == possible


# -- proposals and validation -------------------------------------------------------------

@pytest.fixture
def shard():
    chain = ShardChainState(0, 3)
    ledger = ShardLedger(0, chain.genesis, {A: 10})
    return chain, ledger


def tx(amount, nonce):
    return Transaction(TxKind.INTRA, A, B, amount, nonce)


def fillers(k):
    return [Transaction(TxKind.INTRA, B, bytes([10 + i]) * 20, 0, 1) for i in range(k)]


def test_honest_proposal_extends_tip(shard):
    chain, ledger = shard
    g = chain.header(chain.genesis)
    (blk,) = propose_block(state(), HONEST, g, [tx(1, 1)], (), chain.genesis)
    assert blk.header.height == 1 and blk.header.parent == g.hash
    assert validate_candidate(chain, ledger, blk, 0) is Verdict.VALID


def test_equivocation_makes_conflicting_siblings(shard):
    chain, ledger = shard
    g = chain.header(chain.genesis)
    pol = NodePolicy.parse("byzantine", "equivocate:2")
    cands = propose_block(state(), pol, g, [tx(1, 1)], (), chain.genesis, filler=fillers(2))
    assert len(cands) == 2
    x, y = cands
    assert x.header.parent == y.header.parent and x.header.height == y.header.height
    assert x.header.tx_root != y.header.tx_root
    assert all(validate_candidate(chain, ledger, c, 0) is Verdict.VALID for c in cands)


def test_silent_leader_proposes_nothing(shard):
    chain, _ = shard
    pol = NodePolicy.parse("byzantine", "silent")
    assert propose_block(state(), pol, chain.header(chain.genesis), [], (), chain.genesis) == []


def test_withheld_endorsement_is_rejected(shard):
    chain, ledger = shard
    pred = BlockHeader(2, 0, 1, 0, genesis_header(2).hash, ZERO_HASH, ZERO_HASH, (), 0)
    chain.receive_predecessor_header(pred)
    g = chain.header(chain.genesis)
    pol = NodePolicy.parse("byzantine", "withhold")
    (blk,) = propose_block(state(), pol, g, [], extend_endorsement_list(pred, 3), chain.genesis)
    assert blk.header.endorsement_list == ()
    assert validate_candidate(chain, ledger, blk, 0) is Verdict.MALFORMED_LIST
    (ok,) = propose_block(state(), HONEST, g, [], extend_endorsement_list(pred, 3), chain.genesis)
    assert validate_candidate(chain, ledger, ok, 0) is Verdict.VALID


def test_invalid_tx_leader(shard):
    chain, ledger = shard
    g = chain.header(chain.genesis)
    pol = NodePolicy.parse("byzantine", "invalid_tx")
    (blk,) = propose_block(state(), pol, g, [tx(1, 1)], (), chain.genesis, overspend=tx(100, 2))
    assert validate_candidate(chain, ledger, blk, 0) is Verdict.INVALID_TX
    (benign,) = propose_block(state(), pol, g, [tx(1, 1)], (), chain.genesis, attack=False,
                              overspend=tx(100, 2))
    assert validate_candidate(chain, ledger, benign, 0) is Verdict.VALID


def test_validate_candidate_reasons(shard):
    chain, ledger = shard
    g = chain.header(chain.genesis)
    (b1,) = propose_block(state(), HONEST, g, [tx(1, 1)], (), chain.genesis)
    (b1x,) = propose_block(state(), HONEST, g, [tx(2, 1)], (), chain.genesis)
    for blk in (b1, b1x):
        chain.add_prepared(blk.header, blk.body)
        ledger.apply_block(blk.header.hash, g.hash, blk.body)
    chain.finalize(b1.header.hash)
    assert chain.status(b1x.header.hash) is BlockStatus.DISCARDED
    (on_dead,) = propose_block(state(), HONEST, b1x.header, [], (), chain.genesis)
    assert validate_candidate(chain, ledger, on_dead, 0) is Verdict.DISCARDED_PARENT
    (orphan,) = propose_block(state(), HONEST, genesis_header(5), [], (), chain.genesis)
    assert validate_candidate(chain, ledger, orphan, 0) is Verdict.UNKNOWN_PARENT
    (good,) = propose_block(state(), HONEST, b1.header, [], (), chain.genesis)
    assert validate_candidate(chain, ledger, good, 1) is Verdict.BAD_HEIGHT
    (stale,) = propose_block(state(), HONEST, b1.header, [], (), b1x.header.hash)
    assert validate_candidate(chain, ledger, stale, 0) is Verdict.BAD_FINALIZED_REF
    (replay,) = propose_block(state(), HONEST, b1.header, [tx(1, 1)], (), chain.genesis)
    assert validate_candidate(chain, ledger, replay, 0) is Verdict.INVALID_TX
    assert validate_candidate(chain, ledger, good, 0) is Verdict.VALID
