"""Discrete-event simulation of sharded consensus with linked endorsement."""

from .config import AdversaryConfig, NetworkParams, Partition, PinnedShard, ScenarioConfig, WorkloadConfig
from .world import RunResult, World, run, run_batch

__all__ = [
    "AdversaryConfig",
    "NetworkParams",
    "Partition",
    "PinnedShard",
    "RunResult",
    "ScenarioConfig",
    "WorkloadConfig",
    "World",
    "run",
    "run_batch",
]
