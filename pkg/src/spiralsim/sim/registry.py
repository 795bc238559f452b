"""Epoch registry: seeded reshuffle of nodes into shards, plus adversary roles."""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field

from ..consensus import HONEST, NodePolicy, Role
from ..core import sha256
from .config import AdversaryConfig


def derive_rng(seed: int, *labels) -> random.Random:
    """Independent stream keyed by H(seed || labels)."""
    data = struct.pack(">q", seed) + b"".join(str(x).encode() + b"\x00" for x in labels)
    return random.Random(int.from_bytes(sha256(data), "big"))


@dataclass(frozen=True)
class EpochEntry:
    epoch: int
    shard_of: tuple  # node -> shard
    members: tuple  # shard -> tuple of node ids, leader order
    start_height: tuple  # shard -> first height of this epoch
    seed: bytes = b""
    _member_sets: tuple = field(default=(), compare=False, repr=False)

    def member_set(self, shard: int) -> frozenset:
        return self._member_sets[shard]


def reconfigure_epoch(seed: int, epoch: int, N: int, S: int,
                      start_heights: tuple | None = None) -> EpochEntry:
    """Fisher-Yates over node ids keyed by H(seed || epoch); chunks of S form shards."""
    order = list(range(N))
    rng_seed = sha256(struct.pack(">qI", seed, epoch))
    random.Random(int.from_bytes(rng_seed, "big")).shuffle(order)
    n = N // S
    members = tuple(tuple(order[i * S:(i + 1) * S]) for i in range(n))
    shard_of = [0] * N
    for s, ms in enumerate(members):
        for m in ms:
            shard_of[m] = s
    starts = start_heights if start_heights is not None else (1,) * n
    return EpochEntry(epoch, tuple(shard_of), members, tuple(starts), rng_seed,
                      tuple(frozenset(ms) for ms in members))


class EpochRegistry:
    """Globally readable membership and policies per epoch."""

    def __init__(self, seed: int, N: int, S: int, adversary: AdversaryConfig):
        self.seed = seed
        self.N = N
        self.S = S
        self.adversary = adversary
        self.entries: dict[int, EpochEntry] = {}
        self.policies: dict[int, dict[int, NodePolicy]] = {}
        self._fixed_roles = self._random_roles() if adversary.placement == "random" else None

    def _random_roles(self) -> dict[int, NodePolicy]:
        a = self.adversary
        nb = round(a.f_b * self.N)
        na = round(a.f_a * self.N)
        picked = derive_rng(self.seed, "roles").sample(range(self.N), nb + na)
        roles = {}
        for i, node in enumerate(picked):
            roles[node] = NodePolicy.parse("byzantine", a.behavior) if i < nb else NodePolicy(Role.ABC)
        return roles

    def _pinned_roles(self, entry: EpochEntry) -> dict[int, NodePolicy]:
        a = self.adversary
        roles = {}
        for p in a.pinned:
            members = list(entry.members[p.shard])
            rng = derive_rng(self.seed, "pinned", entry.epoch, p.shard)
            idx = list(range(len(members)))
            rng.shuffle(idx)
            if p.byzantine_leader and p.byzantine:
                # the view-0 leader is members[0]
                idx.remove(0)
                idx.insert(0, 0)
            elif p.byzantine:
                # keep the leader honest unless asked otherwise
                idx.remove(0)
                idx.append(0)
            byz = NodePolicy.parse("byzantine", p.behavior or a.behavior)
            for k, i in enumerate(idx[:p.byzantine + p.abc]):
                roles[members[i]] = byz if k < p.byzantine else NodePolicy(Role.ABC)
        return roles

    def add_epoch(self, epoch: int, start_heights: tuple | None = None) -> EpochEntry:
        entry = reconfigure_epoch(self.seed, epoch, self.N, self.S, start_heights)
        self.entries[epoch] = entry
        if self._fixed_roles is not None:
            self.policies[epoch] = self._fixed_roles
        else:
            self.policies[epoch] = self._pinned_roles(entry)
        return entry

    def members(self, shard: int, epoch: int) -> frozenset:
        entry = self.entries.get(epoch)
        return entry.member_set(shard) if entry else frozenset()

    def policy(self, node: int, epoch: int) -> NodePolicy:
        return self.policies[epoch].get(node, HONEST)

    def shard_policies(self, shard: int, epoch: int) -> dict[int, NodePolicy]:
        pol = self.policies[epoch]
        return {m: pol[m] for m in self.entries[epoch].members[shard] if m in pol}
