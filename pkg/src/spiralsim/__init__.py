"""Sharding simulator with linked cross-shard endorsement, plus the epoch
security calculator used to size shards and endorsement groups."""

__version__ = "0.1.0"
