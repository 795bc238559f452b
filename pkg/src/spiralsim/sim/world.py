"""Deterministic discrete-event world.

Honest members of a shard share one local view (chain, ledger, predecessor
inbox); malicious behavior enters through leader proposals and votes. A
global observer sees every prepared header at once and decides
finalization; local views finalize when the witness header reaches them
and must never run ahead of the observer.

Events are ordered by (tick, sequence number), and every random draw comes
from streams derived from the scenario seed.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..consensus import (
    ShardConsensusState,
    collect_votes,
    propose_block,
    trigger_view_change,
    validate_candidate,
)
from ..core import Block, BlockHeader, BlockStatus, Hash, shard_of_account, sha256, successor
from ..lce import (
    FinalizationEvent,
    Observer,
    SafetyViolation,
    ShardChainState,
    Verdict,
    endorsement_target,
    epoch_boundary_reset,
    extend_endorsement_list,
)
from ..ledger import (
    Deposit,
    InvalidBlock,
    LedgerError,
    ShardLedger,
    Transaction,
    TxKind,
    accept_relay,
    emit_cross_shard_relays,
    load_genesis,
)
from .config import ScenarioConfig
from .metrics import Finalized, collect_metrics, frames_csv, latency_stats
from .network import is_partitioned, sample_delay
from .registry import EpochRegistry, derive_rng
from .trace import TraceWriter, audit_text

TICK_SECONDS = 0.01


class InvariantViolation(AssertionError):
    pass


# event kinds, in no particular order
ROUND, PREPARE, HEADER, VIEW_CHANGE, RELAY, EPOCH = range(6)


@dataclass
class ShardView:
    shard: int
    chain: ShardChainState
    ledger: ShardLedger
    cons: ShardConsensusState
    accounts: list
    token: int = 0
    credit_pool: dict = field(default_factory=dict)
    view_changes: int = 0


def make_accounts(num_shards: int, per_shard: int) -> list[list[bytes]]:
    """Deterministic addresses, ``per_shard`` of them homed in each shard."""
    out: list[list[bytes]] = [[] for _ in range(num_shards)]
    i = 0
    while any(len(a) < per_shard for a in out):
        addr = sha256(b"account" + i.to_bytes(8, "big"))[:20]
        s = shard_of_account(addr, num_shards)
        if len(out[s]) < per_shard:
            out[s].append(addr)
        i += 1
    return out


@dataclass
class RunResult:
    config: ScenarioConfig
    report: dict
    frames: list
    trace_text: str
    events: list  # (tick, FinalizationEvent)
    observer: Observer
    violations: list

    @property
    def ok(self) -> bool:
        return self.report["ok"]

    def report_json(self) -> str:
        return json.dumps(self.report, sort_keys=True, indent=2) + "\n"

    def metrics_csv(self) -> str:
        return frames_csv(self.frames)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.report_json(), newline="\n")
        (out / "metrics.csv").write_text(self.metrics_csv(), newline="\n")
        (out / "trace.csv").write_text(self.trace_text, newline="\n")


class World:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.S = cfg.shard_size
        self.G = cfg.group_size
        self.n = cfg.num_shards
        self.q = (2 * self.S + 2) // 3
        self.gst = cfg.gst
        self.rng_net = derive_rng(cfg.seed, "network")
        self.registry = EpochRegistry(cfg.seed, cfg.n_nodes, self.S, cfg.adversary)
        self.registry.add_epoch(0)
        self.epoch = 0
        self.observer = Observer(self.n, self.G)
        self.trace = TraceWriter()
        self.queue: list = []
        self.seq = 0
        self.now = 0
        self.records: list[Finalized] = []
        self.events: list[tuple[int, FinalizationEvent]] = []
        self.inflight: dict = {}
        self.violations: list[str] = []
        self.stats = Counter()
        self.rejects = Counter()
        self.proc_ticks = math.ceil(cfg.processing_per_member * self.S)

        accounts = make_accounts(self.n, cfg.workload.accounts_per_shard)
        self.all_accounts = [(s, a) for s in range(self.n) for a in accounts[s]]
        alloc: list[dict] = [{a: cfg.workload.initial_balance for a in accounts[s]} for s in range(self.n)]
        if cfg.workload.genesis_file:
            alloc = [{} for _ in range(self.n)]
            for addr, bal in load_genesis(cfg.workload.genesis_file).items():
                alloc[shard_of_account(addr, self.n)][addr] = bal
            accounts = [sorted(a) or accounts[s] for s, a in enumerate(alloc)]
        self.views: list[ShardView] = []
        entry = self.registry.entries[0]
        for s in range(self.n):
            chain = ShardChainState(s, self.G)
            ledger = ShardLedger(s, chain.genesis, alloc[s])
            cons = ShardConsensusState(s, 0, entry.members[s])
            self.views.append(ShardView(s, chain, ledger, cons, list(accounts[s])))
            g = chain.header(chain.genesis)
            self.trace.record(0, s, g.hash, "", "Prepared", None, g.parent, 0, 0)
            self.trace.record(0, s, g.hash, "Prepared", "Finalized", None, g.parent, 0, 0)
        self.supply = self._canonical_total()

    # -- plumbing ---------------------------------------------------------------
    def schedule(self, tick: int, kind: int, *payload: Any) -> None:
        heapq.heappush(self.queue, (tick, self.seq, kind, payload))
        self.seq += 1

    def delay(self, src: int, dst: int, at: int) -> int:
        return sample_delay(self.rng_net, src, dst, at, self.cfg.partitions, self.cfg.network, self.gst)

    def _canonical_total(self) -> int:
        return sum(v.ledger.total_balance() for v in self.views) + sum(self.inflight.values())

    def policy(self, node: int):
        return self.registry.policy(node, self.epoch)

    # -- workload -----------------------------------------------------------------
    def _build_payload(self, v: ShardView, parent: Hash, t: int):
        cfg = self.cfg
        state = v.ledger.state_at(parent)
        cap = cfg.block_capacity
        credits = [tx for ref, tx in v.credit_pool.items() if ref not in state.credited][:cap]
        served = v.chain.blocks[parent].served
        arrived = math.floor(cfg.workload.tx_rate * t)
        n = max(0, min(cap - len(credits), arrived - served))
        nonces: dict = {}
        txs = list(credits)
        accts = v.accounts
        k = len(accts)
        ratio = cfg.workload.cross_shard_ratio
        others = [a for s, a in self.all_accounts if s != v.shard]
        for seq in range(served, served + n):
            sender = accts[seq % k]
            nonce = nonces.get(sender, state.nonce(sender)) + 1
            nonces[sender] = nonce
            mix = ((seq + 1) * 2654435761 + v.shard * 40503) % 1000
            if others and mix < ratio * 1000:
                to = others[(seq * 7 + v.shard) % len(others)]
                kind = TxKind.CROSS_DEBIT
            else:
                to = accts[(seq + 1) % k]
                kind = TxKind.INTRA
            txs.append(Transaction(kind, sender, to, 1 + seq % 5, nonce))
        return txs, served + n, nonces, state

    def _extras(self, v: ShardView, nonces: dict, state, branches: int):
        """Zero-value fillers (one per branch, differing by recipient) and an overspend."""
        a = v.accounts[0]
        nonce = nonces.get(a, state.nonce(a)) + 1
        fillers = [Transaction(TxKind.INTRA, a, v.accounts[j % len(v.accounts)], 0, nonce)
                   for j in range(branches)]
        overspend = Transaction(TxKind.INTRA, a, v.accounts[-1], state.balance(a) + 10**9, nonce)
        return fillers, overspend

    # -- consensus rounds -----------------------------------------------------------
    def _round(self, s: int, token: int) -> None:
        v = self.views[s]
        if token != v.token:
            return
        t = self.now
        cfg = self.cfg
        st = v.cons
        leader = st.leader
        pol = self.policy(leader)
        parent_hash = v.chain.best_tip()
        parent = v.chain.header(parent_hash)
        target = endorsement_target(v.chain, parent_hash, self.epoch)
        elist = extend_endorsement_list(target, self.G) if target is not None else ()
        payload, served, nonces, state = self._build_payload(v, parent_hash, t)
        heights = cfg.adversary.attack_heights
        attack = heights is None or parent.height + 1 in heights
        fillers, overspend = self._extras(v, nonces, state, max(pol.branches, 1))
        cands = propose_block(st, pol, parent, payload, elist, v.chain.latest_finalized,
                              attack=attack, filler=fillers, overspend=overspend)
        deadline = t + cfg.vc_timeout
        if not cands:
            self.schedule(deadline, VIEW_CHANGE, s, token)
            return
        verdicts = [validate_candidate(v.chain, v.ledger, c, self.epoch) for c in cands]
        for vd in verdicts:
            self.stats[f"verdict_{vd.value}"] += 1
        members = st.members
        policies = self.registry.shard_policies(s, self.epoch)
        votes = collect_votes(members, policies, verdicts, cfg.adversary.abc_votes_invalid)
        prepared = []
        for c, voters in zip(cands, votes):
            if len(voters) < self.q:
                continue
            arrivals = []
            for m in voters:
                if m == leader:
                    arrivals.append((t, m))
                    continue
                d1 = self.delay(s, s, t)
                d2 = self.delay(s, s, t + d1)
                arrivals.append((t + d1 + d2, m))
            arrivals.sort()
            t_q = arrivals[self.q - 1][0]
            t_prep = t_q + self.proc_ticks
            if t_prep <= deadline:
                cert = [m for a, m in arrivals if a <= t_q]
                prepared.append((t_prep, c, cert))
        if prepared:
            for t_prep, c, cert in prepared:
                self.schedule(t_prep, PREPARE, s, token, c, tuple(cert), t, served)
            nxt = max(p[0] for p in prepared) + cfg.block_interval
            self.schedule(max(nxt, t + 1), ROUND, s, token)
            return
        non_byz = sum(1 for m in members if self.policy(m).participates)
        if all(vd is not Verdict.VALID for vd in verdicts) and non_byz >= self.q:
            self.schedule(t + cfg.vc_detect_ticks, VIEW_CHANGE, s, token)
        else:
            self.schedule(deadline, VIEW_CHANGE, s, token)

    def _view_change(self, s: int, token: int) -> None:
        v = self.views[s]
        if token != v.token:
            return
        members = v.cons.members
        participants = 0 if is_partitioned(s, self.now, self.cfg.partitions) else \
            sum(1 for m in members if self.policy(m).participates)
        v.cons, ok = trigger_view_change(v.cons, participants, self.now, self.cfg.vc_timeout)
        if ok:
            v.view_changes += 1
            self.schedule(self.now + self.cfg.network.base_latency, ROUND, s, token)
        else:
            self.schedule(self.now + self.cfg.vc_timeout, VIEW_CHANGE, s, token)

    def _prepare(self, s: int, token: int, block: Block, cert: tuple, proposed: int, served: int) -> None:
        v = self.views[s]
        if token != v.token:
            return
        now = self.now
        header = block.header.with_cert(cert)
        h = header.hash
        if h in v.chain.blocks:
            return
        v.chain.add_prepared(header, block.body, proposed_tick=proposed, prepared_tick=now,
                             served=served)
        local_dead = v.chain.discard_if_dead(h)
        if not local_dead:
            try:
                v.ledger.apply_block(h, header.parent, block.body)
            except InvalidBlock as exc:
                raise InvariantViolation(f"shard {s}: block with invalid transaction {exc.index} prepared")
        self.stats["prepared"] += 1

        dead, ev = self.observer.on_header_prepared(header, block.body, proposed_tick=proposed, tick=now)
        self.trace.record(now, s, h, "", "Prepared", None, header.parent, header.height, header.epoch)
        if dead:
            self.trace.record(now, s, h, "Prepared", "Discarded", None, header.parent,
                              header.height, header.epoch)
        if ev is not None:
            self._record_event(ev)

        if self.G == 1:
            if not local_dead:
                self._local_finalize(s, h, header)
            return
        dest = successor(s, self.G)
        relayers = [m for m in cert if self.policy(m).participates]
        self.stats["header_messages"] += len(relayers)
        if relayers:
            arrive = min(now + self.delay(s, dest, now) for _ in relayers)
            self.schedule(arrive, HEADER, dest, header)

    def _record_event(self, ev: FinalizationEvent) -> None:
        now = self.now
        chain = self.observer.chains[ev.shard]
        w = ev.witness.hash
        for h in ev.finalized:
            rec = chain.blocks[h]
            hd = rec.header
            self.trace.record(now, ev.shard, h, "Prepared", "Finalized", w, hd.parent, hd.height, hd.epoch)
            self.records.append(Finalized(now, ev.shard, len(rec.body), now - rec.proposed_tick))
        for h in ev.discarded:
            hd = chain.blocks[h].header
            self.trace.record(now, ev.shard, h, "Prepared", "Discarded", w, hd.parent, hd.height, hd.epoch)
        self.events.append((now, ev))

    def _header(self, dst: int, header: BlockHeader) -> None:
        v = self.views[dst]
        if not v.chain.receive_predecessor_header(header):
            return
        elist = header.endorsement_list
        if self.G >= 2 and len(elist) == self.G - 1:
            rec = v.chain.blocks.get(elist[0])
            if rec is not None and rec.header.epoch == header.epoch:
                self._local_finalize(dst, elist[0], header)

    # -- local finality, ledger and relays -----------------------------------------------
    def _local_finalize(self, s: int, target: Hash, witness: BlockHeader) -> None:
        v = self.views[s]
        if v.chain.status(target) is BlockStatus.FINALIZED:
            return
        fin, disc = v.chain.finalize(target)
        for h in fin:
            if self.observer.status(h) is not BlockStatus.FINALIZED:
                raise InvariantViolation(f"shard {s}: local finality ahead of the observer")
        for h in disc:
            v.ledger.rollback_block(h)
        for h in fin:
            v.ledger.finalize(h)
            rec = v.chain.blocks[h]
            for tx in rec.body:
                if tx.kind is TxKind.CROSS_CREDIT:
                    if tx.origin_ref not in self.inflight:
                        raise InvariantViolation("credit finalized without a finalized debit")
                    del self.inflight[tx.origin_ref]
                    v.credit_pool.pop(tx.origin_ref, None)
            has_debits = any(tx.kind is TxKind.CROSS_DEBIT for tx in rec.body)
            if not has_debits:
                continue
            ancestry = v.chain.chain_between(h, target)
            relays = emit_cross_shard_relays(rec.header, rec.body, True, ancestry, witness, self.n)
            for r in relays:
                self.inflight[r.ref] = r.tx.amount
                dest = shard_of_account(r.tx.to, self.n)
                arrive = self.now + self.delay(s, dest, self.now)
                for k in range(max(1, self.cfg.workload.relay_duplicates)):
                    self.schedule(arrive + k * self.cfg.network.base_latency, RELAY, dest, r)
                self.stats["relays_emitted"] += 1
        if self._canonical_total() != self.supply:
            raise InvariantViolation("conservation: balances plus in-flight relays changed")

    def _relay(self, dst: int, relay) -> None:
        if self.observer.status(relay.proof.subject) is not BlockStatus.FINALIZED:
            raise InvariantViolation("deposit attempted from a block that is not finalized")
        v = self.views[dst]
        res = accept_relay(dst, v.ledger, relay, self.registry, self.S, self.G, self.n)
        if isinstance(res, Deposit):
            v.credit_pool[res.ref] = res.credit
            self.stats["relays_accepted"] += 1
        else:
            self.rejects[res.reason.value] += 1

    # -- epochs -----------------------------------------------------------------------------
    def _epoch(self) -> None:
        self.epoch += 1
        starts = tuple(v.chain.header(v.chain.best_tip()).height + 1 for v in self.views)
        entry = self.registry.add_epoch(self.epoch, starts)
        resume = self.now + self.cfg.sync_pause
        for v in self.views:
            v.token += 1
            v.cons = ShardConsensusState(v.shard, self.epoch, entry.members[v.shard])
            epoch_boundary_reset(v.chain, self.epoch)
            self.schedule(resume, ROUND, v.shard, v.token)
        nxt = self.now + self.cfg.epoch_length_ticks
        if nxt < self.cfg.run_ticks:
            self.schedule(nxt, EPOCH)

    # -- driver -------------------------------------------------------------------------------
    def run(self) -> RunResult:
        cfg = self.cfg
        for v in self.views:
            self.schedule(0, ROUND, v.shard, v.token)
        if cfg.epoch_length_ticks > 0 and cfg.epoch_length_ticks < cfg.run_ticks:
            self.schedule(cfg.epoch_length_ticks, EPOCH)
        handlers = {
            ROUND: self._round,
            PREPARE: self._prepare,
            HEADER: self._header,
            VIEW_CHANGE: self._view_change,
            RELAY: self._relay,
            EPOCH: self._epoch,
        }
        try:
            while self.queue and self.queue[0][0] < cfg.run_ticks:
                tick, _, kind, payload = heapq.heappop(self.queue)
                self.now = tick
                handlers[kind](*payload)
        except (SafetyViolation, InvariantViolation, LedgerError) as exc:
            self.violations.append(f"tick {self.now}: {exc}")
        return self._finish()

    def _finish(self) -> RunResult:
        cfg = self.cfg
        frames = collect_metrics(self.records, cfg.run_ticks, cfg.frame_ticks, self.n)
        trace_text = self.trace.text()
        audit = audit_text(trace_text)
        balances = sum(v.ledger.total_balance() for v in self.views)
        in_flight = sum(self.inflight.values())
        conserved = balances + in_flight == self.supply
        shards = []
        for s, chain in enumerate(self.observer.chains):
            statuses = Counter(r.status for h, r in chain.blocks.items() if h != chain.genesis)
            shards.append({
                "shard": s,
                "prepared": sum(statuses.values()),
                "finalized": statuses[BlockStatus.FINALIZED],
                "discarded": statuses[BlockStatus.DISCARDED],
                "finalized_height": chain.header(chain.latest_finalized).height,
                "view_changes": self.views[s].view_changes,
            })
        mean, p99 = latency_stats(self.records)
        fin_txs = sum(r.txs for r in self.records)
        liveness = self._liveness(frames) if cfg.window_ticks > 0 else None
        ok = not self.violations and audit.ok and conserved
        report = {
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "epochs": self.epoch + 1,
            "shards": shards,
            "totals": {
                "prepared": sum(x["prepared"] for x in shards),
                "finalized": sum(x["finalized"] for x in shards),
                "discarded": sum(x["discarded"] for x in shards),
                "finalized_txs": fin_txs,
                "tps": fin_txs / (cfg.run_ticks * TICK_SECONDS),
                "mean_latency_ticks": mean,
                "p99_latency_ticks": p99,
                "view_changes": sum(x["view_changes"] for x in shards),
                "finalization_events": len(self.events),
                "header_messages": self.stats["header_messages"],
                "relays_emitted": self.stats["relays_emitted"],
                "relays_accepted": self.stats["relays_accepted"],
                "relay_rejects": dict(sorted(self.rejects.items())),
            },
            "conservation": {"supply": self.supply, "balances": balances, "in_flight": in_flight,
                             "ok": conserved},
            "audit": {"ok": audit.ok, "errors": [f"line {ln}: {m}" for ln, m in audit.errors[:20]]},
            "liveness": liveness,
            "violations": self.violations,
            "ok": ok,
        }
        return RunResult(cfg, report, frames, trace_text, self.events, self.observer, self.violations)

    def _liveness(self, frames) -> dict:
        """Does every shard's finalized height grow in every window of W ticks?"""
        W = self.cfg.window_ticks
        stalled = []
        for s in range(self.n):
            fin_ticks = sorted(t for t, ev in self.events if ev.shard == s)
            last = 0
            for t in fin_ticks + [self.cfg.run_ticks]:
                if t - last > W:
                    stalled.append(s)
                    break
                last = t
        return {"window_ticks": W, "stalled_shards": stalled, "ok": not stalled}


def run(cfg: ScenarioConfig) -> RunResult:
    return World(cfg).run()


def _run_one(args):
    cfg, out = args
    res = run(cfg)
    if out is not None:
        res.write(out)
    return cfg.seed, res.ok, res.report_json()


def run_batch(cfg: ScenarioConfig, seeds, out_dir=None, workers: int | None = None) -> list[tuple[int, bool]]:
    """Independent runs over ``seeds``; each writes to ``out_dir/seed_<n>``."""

    jobs = [(cfg.with_seed(s), None if out_dir is None else Path(out_dir) / f"seed_{s}") for s in seeds]
    if workers == 1 or len(jobs) == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, jobs))
    return [(seed, ok) for seed, ok, _ in results]
