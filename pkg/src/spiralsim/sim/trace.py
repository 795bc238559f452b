"""State-transition trace and its offline audit.

One CSV row per block status change, then a trailer line ``# end <rows>``
so truncated files are detected.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from ..core import ZERO_HASH

COLUMNS = ["tick", "shard", "block_hash", "old_status", "new_status", "witness_hash",
           "parent_hash", "height", "epoch"]

_ALLOWED = {
    "": {"Prepared"},
    "Prepared": {"Finalized", "Discarded"},
}
_ZERO_HEX = ZERO_HASH.hex()


class MalformedTrace(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class TraceWriter:
    def __init__(self):
        self.rows: list[tuple] = []

    def record(self, tick: int, shard: int, block: bytes, old: str, new: str,
               witness: bytes | None, parent: bytes, height: int, epoch: int) -> None:
        self.rows.append((tick, shard, block.hex(), old, new, witness.hex() if witness else "",
                          parent.hex(), height, epoch))

    def text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(self.rows)
        buf.write(f"# end {len(self.rows)}\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.text(), newline="\n")


@dataclass
class AuditResult:
    errors: list = field(default_factory=list)  # (line, message)
    rows: int = 0
    finalized: int = 0
    discarded: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass
class _Blk:
    shard: int
    parent: str
    height: int
    epoch: int
    status: str = ""


def parse_trace(text: str) -> list[tuple[int, dict]]:
    lines = text.splitlines()
    if not lines or lines[0].split(",") != COLUMNS:
        raise MalformedTrace(1, "missing or wrong header")
    if len(lines) < 2 or not lines[-1].startswith("# end "):
        raise MalformedTrace(len(lines), "missing trailer (truncated trace?)")
    try:
        declared = int(lines[-1][len("# end "):])
    except ValueError:
        raise MalformedTrace(len(lines), "bad trailer") from None
    body = lines[1:-1]
    if declared != len(body):
        raise MalformedTrace(len(lines), f"trailer declares {declared} rows, found {len(body)}")
    out = []
    for i, row in enumerate(csv.reader(body), start=2):
        if len(row) != len(COLUMNS):
            raise MalformedTrace(i, f"expected {len(COLUMNS)} fields")
        rec = dict(zip(COLUMNS, row))
        try:
            for k in ("tick", "shard", "height", "epoch"):
                rec[k] = int(rec[k])
            for k in ("block_hash", "parent_hash"):
                if len(bytes.fromhex(rec[k])) != 32:
                    raise ValueError
            if rec["witness_hash"] and len(bytes.fromhex(rec["witness_hash"])) != 32:
                raise ValueError
        except ValueError:
            raise MalformedTrace(i, "bad field value") from None
        if rec["new_status"] not in ("Prepared", "Finalized", "Discarded"):
            raise MalformedTrace(i, f"unknown status {rec['new_status']!r}")
        out.append((i, rec))
    return out


def audit_text(text: str) -> AuditResult:
    """Re-check every trace invariant. Raises MalformedTrace on unparsable input."""
    rows = parse_trace(text)
    res = AuditResult(rows=len(rows))
    blocks: dict[str, _Blk] = {}
    fin_child: dict[str, str] = {}
    events: dict[tuple, list] = {}
    last_tick = 0
    for ln, r in rows:
        h = r["block_hash"]
        if r["tick"] < last_tick:
            res.errors.append((ln, "ticks go backwards"))
        last_tick = r["tick"]
        b = blocks.get(h)
        cur = b.status if b else ""
        if r["old_status"] != cur:
            res.errors.append((ln, f"old status {r['old_status']!r} but block is {cur!r}"))
        if r["new_status"] not in _ALLOWED.get(cur, set()):
            res.errors.append((ln, f"illegal transition {cur!r} -> {r['new_status']!r}"))
            continue
        if b is None:
            if r["parent_hash"] != _ZERO_HEX and r["parent_hash"] not in blocks:
                res.errors.append((ln, "parent unknown"))
            b = blocks[h] = _Blk(r["shard"], r["parent_hash"], r["height"], r["epoch"])
        b.status = r["new_status"]
        if b.status == "Finalized":
            res.finalized += 1
            par = b.parent
            if par != _ZERO_HEX:
                pb = blocks.get(par)
                if pb is None or pb.status != "Finalized":
                    res.errors.append((ln, "finalized block's parent is not finalized"))
                if par in fin_child and fin_child[par] != h:
                    res.errors.append((ln, "conflicting finalization: parent already has a finalized child"))
                fin_child[par] = h
            if r["witness_hash"]:
                events.setdefault((r["tick"], r["witness_hash"]), []).append((ln, h))
        elif b.status == "Discarded":
            res.discarded += 1
    for (tick, wit), members in events.items():
        w = blocks.get(wit)
        ln = members[0][0]
        if w is None:
            res.errors.append((ln, "witness header never prepared"))
            continue
        top = max((blocks[h] for _, h in members), key=lambda x: x.height)
        if top.epoch != w.epoch:
            res.errors.append((ln, f"finalized by a witness from epoch {w.epoch}, block is epoch {top.epoch}"))
    first_line = {}
    for ln, r in rows:
        first_line.setdefault(r["block_hash"], ln)
    for h, b in blocks.items():
        if b.status != "Discarded":
            continue
        child, par = h, b.parent
        while par in blocks and blocks[par].status != "Finalized":
            child, par = par, blocks[par].parent
        if par not in blocks or fin_child.get(par) in (None, child):
            res.errors.append((first_line[h], "discarded block does not conflict with a finalized block"))
    return res


def audit_file(path) -> AuditResult:
    return audit_text(Path(path).read_text())
