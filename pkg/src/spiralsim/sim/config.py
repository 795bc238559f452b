"""Scenario configuration (JSON on disk)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..core import ConfigError, num_shards


@dataclass(frozen=True)
class Partition:
    shard: int
    start: int
    end: int


@dataclass(frozen=True)
class NetworkParams:
    base_latency: int = 10  # ticks; one tick is about 10 ms
    jitter: int = 4
    delta_bound: int = 40
    gst: int | None = None  # defaults to the end of the last partition


@dataclass(frozen=True)
class PinnedShard:
    shard: int
    byzantine: int = 0
    abc: int = 0
    behavior: str | None = None
    byzantine_leader: bool = False


@dataclass(frozen=True)
class AdversaryConfig:
    placement: str = "random"  # random | pinned
    f_b: float = 0.0
    f_a: float = 0.0
    behavior: str = "equivocate:2"
    pinned: tuple = ()
    abc_votes_invalid: bool = False
    attack_heights: tuple | None = None


@dataclass(frozen=True)
class WorkloadConfig:
    tx_rate: float = 0.5  # requests per tick per shard
    cross_shard_ratio: float = 0.1
    accounts_per_shard: int = 8
    initial_balance: int = 1_000_000
    relay_duplicates: int = 1
    genesis_file: str | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    n_nodes: int
    shard_size: int
    group_size: int
    run_ticks: int
    seed: int = 0
    epoch_length_ticks: int = 0  # 0 disables reconfiguration
    sync_pause: int = 50
    vc_timeout: int = 120
    vc_detect_ticks: int = 30
    processing_per_member: float = 0.2
    block_capacity: int = 4096
    block_interval: int = 0
    frame_ticks: int = 60
    window_ticks: int = 0
    network: NetworkParams = field(default_factory=NetworkParams)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    partitions: tuple = ()

    def __post_init__(self):
        n = num_shards(self.n_nodes, self.shard_size)
        if self.group_size < 1 or n % self.group_size:
            raise ConfigError(f"{n} shards cannot be split into groups of {self.group_size}")
        if self.run_ticks <= 0 or self.frame_ticks <= 0:
            raise ConfigError("run_ticks and frame_ticks must be positive")
        a = self.adversary
        if not (0 <= a.f_b <= 1 and 0 <= a.f_a <= 1 and a.f_a + a.f_b <= 1):
            raise ConfigError("adversary fractions must lie in [0, 1]")
        if a.placement not in ("random", "pinned"):
            raise ConfigError(f"unknown placement {a.placement!r}")
        for p in a.pinned:
            if not 0 <= p.shard < n or p.byzantine + p.abc > self.shard_size:
                raise ConfigError(f"bad pinned entry {p}")
        if not 0 <= self.workload.cross_shard_ratio <= 1:
            raise ConfigError("cross_shard_ratio must lie in [0, 1]")
        for p in self.partitions:
            if not (0 <= p.shard < n and 0 <= p.start < p.end <= self.run_ticks):
                raise ConfigError(f"partition {p} outside the run")
        gst = self.network.gst
        if gst is not None and any(p.end > gst for p in self.partitions):
            raise ConfigError("partitions must end before gst")

    @property
    def num_shards(self) -> int:
        return self.n_nodes // self.shard_size

    @property
    def gst(self) -> int:
        if self.network.gst is not None:
            return self.network.gst
        return max((p.end for p in self.partitions), default=0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adversary"]["pinned"] = [asdict(p) for p in self.adversary.pinned]
        d["partitions"] = [asdict(p) for p in self.partitions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        _check_keys(cls, d)
        net = d.pop("network", {}) or {}
        adv = dict(d.pop("adversary", {}) or {})
        wl = d.pop("workload", {}) or {}
        parts = d.pop("partitions", []) or []
        _check_keys(NetworkParams, net)
        _check_keys(AdversaryConfig, adv)
        _check_keys(WorkloadConfig, wl)
        pinned = []
        for p in adv.pop("pinned", []) or []:
            _check_keys(PinnedShard, p)
            pinned.append(PinnedShard(**p))
        if adv.get("attack_heights") is not None:
            adv["attack_heights"] = tuple(adv["attack_heights"])
        partitions = []
        for p in parts:
            _check_keys(Partition, p)
            partitions.append(Partition(**p))
        return cls(network=NetworkParams(**net),
                   adversary=AdversaryConfig(pinned=tuple(pinned), **adv),
                   workload=WorkloadConfig(**wl), partitions=tuple(partitions), **d)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def _check_keys(cls, d: dict) -> None:
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(extra)}")
