"""Block/header model, shard and group arithmetic, ancestry checks.

Canonical header encoding (all integers big-endian):

    shard            u32
    epoch            u32
    height           u64
    view             u32
    parent           32 bytes
    tx_root          32 bytes
    latest_finalized 32 bytes
    endorsement_list u16 count, then count x 32 bytes (oldest first)
    proposer         u32

The quorum certificate is appended (u16 count, then sorted u32 voter ids)
only for the wire encoding; ``content_hash`` never covers it.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

Hash = bytes

ZERO_HASH: Hash = bytes(32)
NO_PROPOSER = 0xFFFFFFFF


class ConfigError(ValueError):
    """Raised for invalid configuration or parameters."""


def sha256(data: bytes) -> Hash:
    return hashlib.sha256(data).digest()


class BlockStatus(str, Enum):
    PREPARED = "Prepared"
    FINALIZED = "Finalized"
    DISCARDED = "Discarded"


_HEAD = struct.Struct(">IIQI32s32s32s")


@dataclass(frozen=True)
class BlockHeader:
    shard: int
    epoch: int
    height: int
    view: int
    parent: Hash
    tx_root: Hash
    latest_finalized: Hash
    endorsement_list: tuple[Hash, ...] = ()
    proposer: int = NO_PROPOSER
    quorum_cert: frozenset[int] = field(default=frozenset(), compare=False)

    def encode(self, with_cert: bool = False) -> bytes:
        parts = [
            _HEAD.pack(self.shard, self.epoch, self.height, self.view,
                       self.parent, self.tx_root, self.latest_finalized),
            struct.pack(">H", len(self.endorsement_list)),
            *self.endorsement_list,
            struct.pack(">I", self.proposer),
        ]
        if with_cert:
            voters = sorted(self.quorum_cert)
            parts.append(struct.pack(">H", len(voters)))
            parts.extend(struct.pack(">I", v) for v in voters)
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "BlockHeader":
        """Inverse of ``encode(with_cert=True)``."""
        shard, epoch, height, view, parent, tx_root, fin = _HEAD.unpack_from(data, 0)
        pos = _HEAD.size
        (n,) = struct.unpack_from(">H", data, pos)
        pos += 2
        elist = tuple(data[pos + 32 * i: pos + 32 * (i + 1)] for i in range(n))
        pos += 32 * n
        (proposer,) = struct.unpack_from(">I", data, pos)
        pos += 4
        (nv,) = struct.unpack_from(">H", data, pos)
        pos += 2
        voters = struct.unpack_from(">%dI" % nv, data, pos)
        if pos + 4 * nv != len(data):
            raise ValueError("trailing bytes in header encoding")
        return cls(shard, epoch, height, view, parent, tx_root, fin, elist,
                   proposer, frozenset(voters))

    @cached_property
    def hash(self) -> Hash:
        return sha256(self.encode(with_cert=False))

    def with_cert(self, voters: Iterable[int]) -> "BlockHeader":
        return replace(self, quorum_cert=frozenset(voters))

    def endorsed(self) -> Hash | None:
        """Hash of the block this header endorses directly, if any."""
        return self.endorsement_list[-1] if self.endorsement_list else None


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    body: tuple = ()

    @property
    def hash(self) -> Hash:
        return self.header.hash


def content_hash(header: BlockHeader) -> Hash:
    return header.hash


def genesis_header(shard: int) -> BlockHeader:
    return BlockHeader(shard=shard, epoch=0, height=0, view=0, parent=ZERO_HASH,
                       tx_root=sha256(b""), latest_finalized=ZERO_HASH)


def shard_of_account(address: bytes, num_shards: int) -> int:
    if num_shards < 1:
        raise ConfigError("num_shards must be >= 1")
    return int.from_bytes(sha256(address), "big") % num_shards


def num_shards(n_nodes: int, shard_size: int) -> int:
    if shard_size < 1 or n_nodes % shard_size:
        raise ConfigError(f"N={n_nodes} is not divisible by S={shard_size}")
    return n_nodes // shard_size


def group_of(shard: int, G: int) -> int:
    return shard // G


def group_neighbors(w: int, G: int) -> tuple[int, int]:
    """(predecessor, successor) of shard ``w`` in its circular endorsement order."""
    if G < 1:
        raise ConfigError("G must be >= 1")
    base = (w // G) * G
    off = w - base
    return base + (off - 1) % G, base + (off + 1) % G


def successor(w: int, G: int) -> int:
    return group_neighbors(w, G)[1]


def predecessor(w: int, G: int) -> int:
    return group_neighbors(w, G)[0]


def quorum_size(S: int) -> int:
    """ceil(2S/3)."""
    return (2 * S + 2) // 3


def verify_ancestry(descendant: Hash, ancestor: Hash, chain: Sequence[BlockHeader]) -> bool:
    """Check that ``chain`` is a parent-linked run from ``ancestor`` to ``descendant``.

    ``chain[0]`` is either the ancestor itself or its direct child.
    """
    if not chain:
        return False
    first = chain[0]
    if first.hash != ancestor and first.parent != ancestor:
        return False
    for prev, cur in zip(chain, chain[1:]):
        if cur.parent != prev.hash or cur.height != prev.height + 1:
            return False
    return chain[-1].hash == descendant
