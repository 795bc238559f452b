"""Vote-combination oracle, independent of the consensus module.

Members are enumerated one by one over every ballot they may cast; the
quorum is the smallest integer at least two thirds of S.
"""

import itertools
from fractions import Fraction
import math

HONEST_BALLOTS = [(0, 0), (1, 0), (0, 1)]  # at most one of two conflicting blocks
DOUBLE_BALLOTS = HONEST_BALLOTS + [(1, 1)]


def quorum(S):
    return math.ceil(Fraction(2 * S, 3))


def reachable_tallies(ballots_per_member):
    """Every (votes for A, votes for B) pair some ballot assignment produces."""
    states = {(0, 0)}
    for ballots in ballots_per_member:
        states = {(x + a, y + b) for x, y in states for a, b in ballots}
    return states


def double_quorum_possible(S, double_voters):
    ballots = [DOUBLE_BALLOTS] * double_voters + [HONEST_BALLOTS] * (S - double_voters)
    q = quorum(S)
    return any(x >= q and y >= q for x, y in reachable_tallies(ballots))


def double_quorum_possible_exhaustive(S, double_voters):
    """Same question over the full product of per-member ballots (small S only)."""
    ballots = [DOUBLE_BALLOTS] * double_voters + [HONEST_BALLOTS] * (S - double_voters)
    q = quorum(S)
    for combo in itertools.product(*ballots):
        if sum(a for a, _ in combo) >= q and sum(b for _, b in combo) >= q:
            return True
    return False


def invalid_quorum_possible(S, byzantine):
    """Only Byzantine members may vote for an invalid block; try every voter subset."""
    q = quorum(S)
    byz = set(range(byzantine))
    for mask in range(1 << S):
        voters = {i for i in range(S) if mask >> i & 1}
        if voters <= byz and len(voters) >= q:
            return True
    return False
