"""Message delays under partial synchrony."""

from __future__ import annotations

import random
from typing import Sequence

from .config import NetworkParams, Partition


def _blocked(shard: int, t: int, partitions: Sequence[Partition]) -> int | None:
    """End of a partition isolating ``shard`` at tick ``t``, if any."""
    end = None
    for p in partitions:
        if p.shard == shard and p.start <= t < p.end:
            end = p.end if end is None else max(end, p.end)
    return end


def is_partitioned(shard: int, t: int, partitions: Sequence[Partition]) -> bool:
    return _blocked(shard, t, partitions) is not None


def sample_delay(rng: random.Random, src_shard: int, dst_shard: int, now: int,
                 partitions: Sequence[Partition], params: NetworkParams, gst: int) -> int:
    """Ticks until a message sent at ``now`` is delivered.

    base + uniform jitter; a message that is sent or would arrive while
    either endpoint's shard is partitioned waits for the partition to end and
    then takes a fresh delay. Messages sent at or after ``gst`` take at most
    ``delta_bound``.
    """
    d = params.base_latency + (rng.randint(0, params.jitter) if params.jitter > 0 else 0)
    if now >= gst:
        return min(d, params.delta_bound)
    t = now
    arrive = now + d
    while True:
        ends = [e for s in {src_shard, dst_shard}
                for e in (_blocked(s, t, partitions), _blocked(s, arrive, partitions)) if e is not None]
        if not ends:
            break
        t = max(ends)
        arrive = t + d
    return arrive - now
