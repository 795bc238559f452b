"""Per-frame throughput and confirmation-latency metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

COLUMNS = ["tick", "shard", "finalized_blocks", "finalized_txs", "mean_latency_ticks", "p99_latency_ticks"]


@dataclass(frozen=True)
class Finalized:
    tick: int
    shard: int
    txs: int
    latency: int  # proposal to finalization, ticks


@dataclass(frozen=True)
class MetricsFrame:
    tick: int  # frame start
    shard: int
    finalized_blocks: int
    finalized_txs: int
    mean_latency: float | None
    p99_latency: float | None


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.3f}"


def latency_stats(records) -> tuple[float | None, float | None]:
    lat = np.array([r.latency for r in records], dtype=float)
    w = np.array([r.txs for r in records], dtype=int)
    if w.sum() == 0:
        return None, None
    samples = np.repeat(lat, w)
    return float(samples.mean()), float(np.percentile(samples, 99))


def collect_metrics(records: list[Finalized], run_ticks: int, frame_ticks: int,
                    num_shards: int) -> list[MetricsFrame]:
    n_frames = -(-run_ticks // frame_ticks)
    buckets: dict[tuple[int, int], list[Finalized]] = {}
    for r in records:
        buckets.setdefault((min(r.tick // frame_ticks, n_frames - 1), r.shard), []).append(r)
    frames = []
    for f in range(n_frames):
        for s in range(num_shards):
            recs = buckets.get((f, s), [])
            mean, p99 = latency_stats(recs)
            frames.append(MetricsFrame(f * frame_ticks, s, len(recs), sum(r.txs for r in recs), mean, p99))
    return frames


def frames_csv(frames: list[MetricsFrame]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for fr in frames:
        w.writerow([fr.tick, fr.shard, fr.finalized_blocks, fr.finalized_txs,
                    _fmt(fr.mean_latency), _fmt(fr.p99_latency)])
    return buf.getvalue()


def write_frames(frames: list[MetricsFrame], path) -> None:
    Path(path).write_text(frames_csv(frames), newline="\n")


def per_frame_totals(frames: list[MetricsFrame], shards=None) -> list[int]:
    """Finalized blocks per frame summed over ``shards`` (all by default)."""
    totals: dict[int, int] = {}
    for fr in frames:
        if shards is None or fr.shard in shards:
            totals[fr.tick] = totals.get(fr.tick, 0) + fr.finalized_blocks
    return [totals[t] for t in sorted(totals)]
