"""Scenario generators shared by the simulation tests."""

import random

from spiralsim.sim import ScenarioConfig

BEHAVIORS = ["equivocate:2", "equivocate:3", "withhold", "silent", "invalid_tx"]


def safety_config(seed: int, run_ticks: int = 1000) -> ScenarioConfig:
    """Random pinned adversary within the safety premise (S=10, G=3).

    Every shard: Byzantine <= 3 (< ceil(S/3)) and malicious <= 6 (< 2S/3).
    Every group: at least one honest shard (malicious <= 3 < S/3); the other
    shards may be corrupted (malicious 4..6, able to fork).
    """
    rng = random.Random(seed)
    N = rng.choice([30, 60, 90, 120])
    pinned = []
    for g in range(N // 30):
        shards = [3 * g, 3 * g + 1, 3 * g + 2]
        honest = set(rng.sample(shards, rng.choice([1, 1, 2])))
        for s in shards:
            m = rng.randint(0, 3) if s in honest else rng.randint(4, 6)
            byz = rng.randint(max(0, m - 3) if s in honest else max(0, m - 6), min(3, m))
            pinned.append({
                "shard": s,
                "byzantine": byz,
                "abc": m - byz,
                "byzantine_leader": rng.random() < 0.7,
                "behavior": rng.choice(BEHAVIORS),
            })
    return ScenarioConfig.from_dict({
        "n_nodes": N,
        "shard_size": 10,
        "group_size": 3,
        "run_ticks": run_ticks,
        "seed": seed,
        "epoch_length_ticks": rng.choice([0, 0, 400]),
        "workload": {"cross_shard_ratio": 0.2, "relay_duplicates": rng.choice([1, 2])},
        "adversary": {"placement": "pinned", "pinned": pinned},
    })


def trend_config(shard_size: int, group_size: int, seed: int = 1) -> ScenarioConfig:
    """Fixed N=120 under a saturating workload."""
    return ScenarioConfig.from_dict({
        "n_nodes": 120,
        "shard_size": shard_size,
        "group_size": group_size,
        "run_ticks": 3000,
        "seed": seed,
        "block_capacity": 32,
        "workload": {"tx_rate": 4.0},
    })
