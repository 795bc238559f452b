"""Epoch failure bounds for endorsement-group sharding.

An endorsement group of ``M = S*G`` nodes fails if

1. it holds at least M/3 malicious nodes (necessary for having no honest shard),
2. fewer than M/3 are malicious but some shard holds at least 2S/3 of them,
3. fewer than M/3 are Byzantine but some shard holds at least S/3 Byzantine.

Each case is bounded with hypergeometric sums (cases 2 and 3 union-bounded
over the G shards), the three cases are added, and the result is
union-bounded over the N/M groups. Everything is evaluated in log space:
binomials like C(10000, 600) overflow doubles.

Counts of malicious/Byzantine nodes are ``round_half_up(F*N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import ConfigError

DEFAULT_EPS = 2.0 ** -17

NEG_INF = -math.inf


def count_of(fraction: float, n: int) -> int:
    """Nearest integer to fraction*n, halves rounded up."""
    return math.floor(fraction * n + 0.5)


@dataclass(frozen=True)
class SummationLimits:
    """Offsets applied to the summation limits; all zero reproduces the
    bounds as stated. Used to probe which +-1 convention a published
    value depends on."""

    case1_lower: int = 0
    cond_upper: int = 0
    case2_inner: int = 0
    case3_inner: int = 0


EXACT_LIMITS = SummationLimits()


@dataclass(frozen=True)
class SecurityParams:
    N: int
    S: int
    G: int
    F: float
    F_B: float
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.N < 1 or self.S < 1 or self.G < 1:
            raise ConfigError("N, S, G must be positive")
        if self.S * self.G > self.N:
            raise ConfigError(f"S*G={self.S * self.G} exceeds N={self.N}")
        if self.F_B < 0 or self.F_A < -1e-12 or self.F >= 1:
            raise ConfigError("need 0 <= F_B <= F < 1")

    @property
    def M(self) -> int:
        return self.S * self.G

    @property
    def F_A(self) -> float:
        return self.F - self.F_B

    @property
    def malicious(self) -> int:
        return count_of(self.F, self.N)

    @property
    def byzantine(self) -> int:
        return count_of(self.F_B, self.N)

    @property
    def num_groups(self) -> float:
        return self.N / self.M


@dataclass(frozen=True)
class FailureBreakdown:
    """Log-domain probabilities; linear values via the properties."""

    log_case1: float
    log_case2: float
    log_case3: float
    log_per_group: float
    log_system: float

    @staticmethod
    def _lin(v: float) -> float:
        return math.exp(v) if v > NEG_INF else 0.0

    @property
    def case1(self) -> float:
        return self._lin(self.log_case1)

    @property
    def case2(self) -> float:
        return self._lin(self.log_case2)

    @property
    def case3(self) -> float:
        return self._lin(self.log_case3)

    @property
    def per_group(self) -> float:
        return self._lin(self.log_per_group)

    @property
    def system(self) -> float:
        return self._lin(self.log_system)

    def as_dict(self) -> dict:
        return {
            "case1": self.case1,
            "case2": self.case2,
            "case3": self.case3,
            "per_group": self.per_group,
            "system": self.system,
        }


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def log_hypergeom_pmf(pop: int, succ: int, draws: int, k) -> np.ndarray:
    """Vectorised log pmf; -inf outside the support."""
    k = np.asarray(k, dtype=float)
    lo = max(0, draws - (pop - succ))
    hi = min(succ, draws)
    ok = (k >= lo) & (k <= hi)
    kk = np.where(ok, k, lo)
    val = _log_comb(succ, kk) + _log_comb(pop - succ, draws - kk) - _log_comb(pop, draws)
    return np.where(ok, val, NEG_INF)


def hypergeom_pmf(pop: int, succ: int, draws: int, k: int) -> float:
    if min(pop, succ, draws) < 0:
        raise ValueError("negative argument")
    if succ > pop or draws > pop:
        raise ValueError("need succ <= pop and draws <= pop")
    return float(np.exp(log_hypergeom_pmf(pop, succ, draws, k)))


def _lse(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.all(values == NEG_INF):
        return NEG_INF
    return float(logsumexp(values))


def log_hypergeom_tail(pop: int, succ: int, draws: int, lower: int) -> float:
    """log Pr[X >= lower] for X ~ hypergeometric(pop, succ, draws)."""
    lower = max(lower, 0)
    if lower > draws:
        return NEG_INF
    return _lse(log_hypergeom_pmf(pop, succ, draws, np.arange(lower, draws + 1)))


def log_case1(p: SecurityParams, limits: SummationLimits = EXACT_LIMITS) -> float:
    M = p.M
    return log_hypergeom_tail(p.N, p.malicious, M, M // 3 + limits.case1_lower)


def _log_conditional(p: SecurityParams, bad: int, inner_lower: int, limits: SummationLimits) -> float:
    """log of sum_{x=1}^{floor(M/3-1)} sum_{y>=inner_lower} Pr[X=x] Pr[Y=y | X=x]."""
    M, S = p.M, p.S
    x_hi = math.floor(M / 3 - 1) + limits.cond_upper
    if x_hi < 1:
        return NEG_INF
    xs = np.arange(1, x_hi + 1)
    log_px = log_hypergeom_pmf(p.N, bad, M, xs)
    inner_lower = max(inner_lower, 0)
    if inner_lower > S:
        return NEG_INF
    ys = np.arange(inner_lower, S + 1)
    # rows: x, cols: y; Y | X=x ~ hypergeometric(M, x, S)
    X = xs[:, None].astype(float)
    Y = ys[None, :].astype(float)
    lo = np.maximum(0.0, S - (M - X))
    hi = np.minimum(X, float(S))
    ok = (Y >= lo) & (Y <= hi)
    Yk = np.where(ok, Y, lo)
    log_py = np.where(
        ok,
        _log_comb(X, Yk) + _log_comb(M - X, S - Yk) - _log_comb(M, S),
        NEG_INF,
    )
    return _lse((log_px[:, None] + log_py).ravel())


def log_case2(p: SecurityParams, limits: SummationLimits = EXACT_LIMITS) -> float:
    v = _log_conditional(p, p.malicious, math.floor(2 * p.S / 3) + limits.case2_inner, limits)
    return v + math.log(p.G) if v > NEG_INF else v


def log_case3(p: SecurityParams, limits: SummationLimits = EXACT_LIMITS) -> float:
    v = _log_conditional(p, p.byzantine, math.floor(p.S / 3) + limits.case3_inner, limits)
    return v + math.log(p.G) if v > NEG_INF else v


def group_failure_case1(p: SecurityParams) -> float:
    return FailureBreakdown._lin(log_case1(p))


def group_failure_case2(p: SecurityParams) -> float:
    return FailureBreakdown._lin(log_case2(p))


def group_failure_case3(p: SecurityParams) -> float:
    return FailureBreakdown._lin(log_case3(p))


def system_failure_bound(p: SecurityParams, limits: SummationLimits = EXACT_LIMITS) -> FailureBreakdown:
    c1, c2, c3 = log_case1(p, limits), log_case2(p, limits), log_case3(p, limits)
    per_group = min(_lse([c1, c2, c3]), 0.0)
    system = per_group + math.log(p.num_groups) if per_group > NEG_INF else NEG_INF
    return FailureBreakdown(c1, c2, c3, per_group, min(system, 0.0))


def _meets(p: SecurityParams, limits: SummationLimits) -> bool:
    return system_failure_bound(p, limits).system <= p.eps


def min_group_size(N: int, S: int, F: float, F_B: float, eps: float = DEFAULT_EPS, *,
                   require_divisible: bool = True,
                   limits: SummationLimits = EXACT_LIMITS) -> int | None:
    """Smallest G with S*G <= N meeting ``eps``; None if no G does."""
    if require_divisible and N % S:
        raise ConfigError(f"S={S} does not divide N={N}")
    for G in range(1, N // S + 1):
        if _meets(SecurityParams(N, S, G, F, F_B, eps), limits):
            return G
    return None


def divisors(n: int) -> list[int]:
    small = [d for d in range(1, math.isqrt(n) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


def min_shard_size_given_group(N: int, G: int, F: float, F_B: float,
                               eps: float = DEFAULT_EPS) -> int | None:
    """Smallest divisor S of N with S*G <= N meeting ``eps``; None if none."""
    for S in divisors(N):
        if S * G > N:
            break
        if _meets(SecurityParams(N, S, G, F, F_B, eps), EXACT_LIMITS):
            return S
    return None


def baseline_failure(N: int, S: int, F: float) -> float:
    """Union bound over N/S shards of Pr[a shard holds >= ceil(S/3) malicious]."""
    tail = log_hypergeom_tail(N, count_of(F, N), S, math.ceil(S / 3))
    if tail == NEG_INF:
        return 0.0
    return min(1.0, math.exp(tail + math.log(N / S)))


def baseline_shard_size(N: int, F: float, eps: float = DEFAULT_EPS) -> int:
    """Smallest divisor of N whose plain per-shard bound meets ``eps``.

    Falls back to one shard of all N nodes when no divisor does.
    """
    for S in divisors(N):
        if baseline_failure(N, S, F) <= eps:
            return S
    return N


@dataclass(frozen=True)
class ReferenceCell:
    low: int
    high: int
    shard_size: int
    group_size: int | None
    failure_prob: float | None


def reference_cell(low: int, high: int, S: int, F: float, F_B: float,
                   eps: float = DEFAULT_EPS, mode: str = "lower-edge",
                   limits: SummationLimits = EXACT_LIMITS) -> ReferenceCell:
    """G needed for network sizes in [low, high] at shard size S.

    ``lower-edge`` evaluates at N=low (shard count may be fractional there);
    ``range-max`` takes the largest G over all multiples of S in the range.
    """
    if mode == "lower-edge":
        points = [low]
    elif mode == "range-max":
        first = -(-low // S) * S
        points = list(range(first, high + 1, S)) or [low]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    best: tuple[int, float] | None = None
    for n in points:
        g = min_group_size(n, S, F, F_B, eps, require_divisible=False, limits=limits)
        if g is None:
            return ReferenceCell(low, high, S, None, None)
        prob = system_failure_bound(SecurityParams(n, S, g, F, F_B, eps), limits).system
        if best is None or g > best[0]:
            best = (g, prob)
    return ReferenceCell(low, high, S, best[0], best[1])


def emit_reference_table(network_ranges: Sequence[tuple[int, int]], shard_sizes: Iterable[int],
                         F: float, F_B: float, eps: float = DEFAULT_EPS,
                         mode: str = "lower-edge") -> list[ReferenceCell]:
    shard_sizes = list(shard_sizes)
    return [reference_cell(lo, hi, S, F, F_B, eps, mode)
            for lo, hi in network_ranges for S in shard_sizes]


LIMIT_PROBES = [
    ("case-1 lower limit -1", SummationLimits(case1_lower=-1)),
    ("case-1 lower limit +1", SummationLimits(case1_lower=1)),
    ("conditional upper limit -1", SummationLimits(cond_upper=-1)),
    ("conditional upper limit +1", SummationLimits(cond_upper=1)),
    ("case-2 inner lower limit -1", SummationLimits(case2_inner=-1)),
    ("case-2 inner lower limit +1", SummationLimits(case2_inner=1)),
    ("case-3 inner lower limit -1", SummationLimits(case3_inner=-1)),
    ("case-3 inner lower limit +1", SummationLimits(case3_inner=1)),
]


def reconcile_cell(N: int, S: int, target_G: int, F: float, F_B: float,
                   eps: float = DEFAULT_EPS) -> list[str]:
    """Names of the single +-1 limit changes under which N, S need ``target_G``."""
    hits = []
    for name, limits in LIMIT_PROBES:
        g = min_group_size(N, S, F, F_B, eps, require_divisible=False, limits=limits)
        if g == target_G:
            hits.append(name)
    return hits


REFERENCE_RANGES = [
    (500, 699), (700, 899), (900, 1499), (1500, 2099), (2100, 2299),
    (2300, 5299), (5300, 5899), (5900, 8299), (8300, 10000),
]
REFERENCE_SHARD_SIZES = [100, 120, 150, 200, 300]
DEFAULT_NETWORKS = [1260, 2000, 3000, 4200]
DEFAULT_SHARD_SIZES = {1260: 105, 2000: 100, 3000: 100, 4200: 100}
