"""Real-time monitor: analyze every new contract creation and emit one JSON alert line per attack."""

from __future__ import annotations

import json
import logging
import queue
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, TextIO

from tokenflow.chain import ContractCreation, RpcClient, stream_creations
from tokenflow.config import Config
from tokenflow.detector.analyze import AnalysisReport, analyze_contract
from tokenflow.evm.hashing import keccak256
from tokenflow.resolver import CachingResolver
from tokenflow.semantics.templates import load_template_db

log = logging.getLogger(__name__)

_END = object()


def alert_record(c: ContractCreation, report: AnalysisReport, chain_id: int | None, now: float) -> dict[str, Any]:
    d = report.to_dict(timings=False)["detections"]
    first = d[0]
    return {
        "timestamp": round(now, 3),
        "chain_id": chain_id,
        "contract": f"{c.address:#042x}",
        "deployer": None if c.deployer is None else f"{c.deployer:#042x}",
        "block": c.block,
        "tx_hash": c.tx_hash,
        "kind": first["kind"],
        "rule": first["rule"],
        "pool_or_victim": first["pool_or_victim"],
        "tokens": [first["token_in"], first["token_out"]],
        "detections": len(d),
        "latency_ms": round(max(0.0, now - c.block_time) * 1000, 1),
    }


@dataclass
class MonitorStats:
    creations: int = 0
    analyzed: int = 0
    alerts: int = 0
    failures: int = 0
    suppressed: int = 0
    blocks: list[int] = field(default_factory=list)


class Monitor:
    """Stream consumer, bounded work queue, ``config.workers`` analyzers and one in-order writer."""

    def __init__(
        self,
        client: RpcClient,
        config: Config,
        *,
        out: TextIO | None = None,
        analyzer: Callable[..., AnalysisReport] = analyze_contract,
        stop: threading.Event | None = None,
    ) -> None:
        self.client = client
        self.config = config
        self.out = out or sys.stdout
        self.analyzer = analyzer
        self.stop = stop or threading.Event()
        self.stats = MonitorStats()
        self.db = load_template_db(config.templates)

    def _analyze(self, c: ContractCreation) -> dict[str, Any] | None:
        if not c.code:
            return None
        resolver = CachingResolver(self.client)
        report = self.analyzer(c.code, self.config, resolver, db=self.db, address=c.address)
        if report.error:
            log.warning("contract %#x: %s", c.address, report.error)
        if not report.detections:
            return None
        return alert_record(c, report, self.config.chain_id, time.time())

    def _worker(self, work: queue.Queue, results: queue.Queue) -> None:
        while True:
            item = work.get()
            if item is _END:
                return
            seq, c = item
            try:
                rec = self._analyze(c)
                ok = True
            except Exception:  # noqa: BLE001 - one bad contract never stops the stream
                log.exception("analysis of %#x failed", c.address)
                rec, ok = None, False
            results.put((seq, c, rec, ok))

    def _writer(self, results: queue.Queue) -> None:
        pending: dict[int, tuple] = {}
        nxt = 0
        total: int | None = None
        seen_hashes: set[bytes] = set()
        while total is None or nxt < total:
            item = results.get()
            if item[0] is _END:
                total = item[1]
            else:
                pending[item[0]] = item
            while nxt in pending:
                _, c, rec, ok = pending.pop(nxt)
                nxt += 1
                self.stats.analyzed += 1
                if not ok:
                    self.stats.failures += 1
                if rec is None:
                    continue
                if self.config.dedup_by_codehash:
                    h = keccak256(c.code)
                    if h in seen_hashes:
                        self.stats.suppressed += 1
                        continue
                    seen_hashes.add(h)
                self.out.write(json.dumps(rec, separators=(",", ":")) + "\n")
                self.out.flush()
                self.stats.alerts += 1

    def run(self, *, until_block: int | None = None) -> MonitorStats:
        work: queue.Queue = queue.Queue(maxsize=self.config.workers * 4)
        results: queue.Queue = queue.Queue()
        workers = [threading.Thread(target=self._worker, args=(work, results), daemon=True)
                   for _ in range(self.config.workers)]
        writer = threading.Thread(target=self._writer, args=(results,), daemon=True)
        for t in workers:
            t.start()
        writer.start()
        seq = 0
        try:
            for c in stream_creations(self.client, self.config.from_block, self.config.poll_interval,
                                      stop=self.stop, until_block=until_block,
                                      trace_internal=self.config.trace_internal):
                if not self.stats.blocks or self.stats.blocks[-1] != c.block:
                    self.stats.blocks.append(c.block)
                work.put((seq, c))
                seq += 1
        finally:
            self.stats.creations = seq
            for _ in workers:
                work.put(_END)
            for t in workers:
                t.join()
            results.put((_END, seq))
            writer.join()
        return self.stats
