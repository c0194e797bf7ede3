"""End-to-end analysis of one contract and its JSON report."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any

from tokenflow.callinfo import Addr
from tokenflow.config import Config
from tokenflow.detector.expand import expand_on_sensitive
from tokenflow.detector.paths import filter_sensitive_paths
from tokenflow.detector.rules import Detection, evaluate
from tokenflow.detector.sigma import Sigma
from tokenflow.evm.disasm import parse_hex
from tokenflow.graph import TokenFlowGraph
from tokenflow.lifter.core import Budget
from tokenflow.pipeline import lift_contract, tfg_from_lifted, timed
from tokenflow.resolver import Resolver, ResolverError
from tokenflow.semantics.templates import TemplateDB, load_template_db

log = logging.getLogger(__name__)

REPORT_SCHEMA = "tokenflow.report/1"


def _addr_text(a: Addr) -> str:
    if a.value is not None:
        return f"{a.value:#042x}"
    return a.text or a.kind


@dataclass
class AnalysisReport:
    contract: int | None
    detections: list[Detection] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    timings_ms: dict[str, float] = field(default_factory=dict)
    # node id -> callsite pc, for witness rendering
    pcs: dict[str, int | None] = field(default_factory=dict)
    stats: dict[str, Any] = field(default_factory=dict)
    error: str | None = None
    tfg: TokenFlowGraph | None = field(default=None, repr=False)

    @property
    def verdict(self) -> frozenset[tuple[str, str]]:
        return frozenset((d.kind, d.rule) for d in self.detections)

    @property
    def total_ms(self) -> float:
        return sum(self.timings_ms.values())

    def to_dict(self, *, timings: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "schema": REPORT_SCHEMA,
            "contract": None if self.contract is None else f"{self.contract:#042x}",
            "detections": [
                {
                    "kind": d.kind,
                    "rule": d.rule,
                    "pool_or_victim": _addr_text(d.target),
                    "token_in": _addr_text(d.token_in),
                    "token_out": _addr_text(d.token_out),
                    "witness": list(d.witness),
                    "witness_pcs": [None if self.pcs.get(n) is None else f"{self.pcs[n]:#x}" for n in d.witness],
                    "sigma": d.sigma,
                    "confidence": d.confidence,
                    "notes": list(d.notes),
                }
                for d in self.detections
            ],
            "diagnostics": list(self.diagnostics),
            "stats": dict(self.stats),
            "error": self.error,
        }
        if timings:
            out["timings_ms"] = {k: round(v, 3) for k, v in self.timings_ms.items()}
        return out

    def to_json(self, *, timings: bool = True, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(timings=timings), indent=indent, sort_keys=False)

    def to_text(self) -> str:
        head = f"contract {self.to_dict()['contract']}: {len(self.detections)} detection(s)"
        lines = [head]
        for d in self.to_dict()["detections"]:
            lines.append(f"  {d['kind']} rule {d['rule']} target={d['pool_or_victim']} "
                         f"tokens=({d['token_in']}, {d['token_out']}) witness={d['witness']} "
                         f"confidence={d['confidence']}")
        lines.extend(f"  ! {x}" for x in self.diagnostics)
        if self.error:
            lines.append(f"  error: {self.error}")
        return "\n".join(lines)


def _sorted(dets) -> list[Detection]:
    return sorted(dets, key=lambda d: (d.kind, d.rule, d.witness, _addr_text(d.target), _addr_text(d.token_in),
                                       _addr_text(d.token_out)))


def analyze_contract(
    target: bytes | str | int,
    config: Config | None = None,
    resolver: Resolver | None = None,
    *,
    db: TemplateDB | None = None,
    address: int | None = None,
) -> AnalysisReport:
    """Run the whole pipeline on runtime code, or on the code at an address.

    ``target`` is code (bytes or hex text) or an address (int, fetched through
    ``resolver``). Every stage failure is recorded in the report's diagnostics;
    a report is always returned.
    """
    config = config or Config()
    start = time.monotonic()
    budget = Budget(timeout_secs=config.timeout_secs, deadline=start + config.timeout_secs)
    report = AnalysisReport(address if not isinstance(target, int) else target)
    t = report.timings_ms
    try:
        if db is None:
            with timed(t, "templates"):
                db = load_template_db(config.templates)
        report.diagnostics.extend(f"templates: {d}" for d in db.diagnostics)
        if isinstance(target, int):
            if resolver is None:
                raise ValueError("an address target needs a resolver")
            with timed(t, "fetch"):
                code = resolver.get_code(target)
        else:
            code = parse_hex(target) if isinstance(target, str) else bytes(target)
        if not code:
            report.diagnostics.append("no code")
            return report
        contract = report.contract
        sigma = Sigma(contract)
        with timed(t, "lift"):
            lifted = lift_contract(code, contract=contract, resolver=resolver, db=db, budget=budget)
        report.diagnostics.extend(lifted.diagnostics)
        with timed(t, "tfg"):
            tfg = tfg_from_lifted(lifted, db, resolver, contract, names=config.signatures)
        if resolver is not None and config.depth_limit > 0 and config.expand:
            with timed(t, "expand"):
                ex = expand_on_sensitive(tfg, resolver, db, sigma=sigma, depth_limit=config.depth_limit,
                                         budget=budget, path_cap=config.path_cap,
                                         sensitive_only=config.sensitive_filter, names=config.signatures)
            tfg = ex.tfg
            report.diagnostics.extend(ex.diagnostics)
            report.stats["expanded"] = list(ex.expanded)
        with timed(t, "paths"):
            paths = filter_sensitive_paths(tfg, sigma, cap=config.path_cap)
        if paths.truncated:
            report.diagnostics.append(f"path enumeration stopped at the cap of {config.path_cap}")
        with timed(t, "rules"):
            dets = evaluate([p.nodes for p in paths.paths], tfg, sigma)
        report.detections = _sorted(dets)
        report.pcs = {n: node.pc for n, node in tfg.nodes.items()}
        report.stats.update(nodes=len(tfg.call_nodes), cf_edges=len(tfg.cf), df_edges=len(tfg.df),
                            paths_enumerated=paths.enumerated, sensitive_paths=len(paths.paths),
                            truncated=paths.truncated, timed_out=lifted.timed_out)
        report.tfg = tfg
    except (ResolverError, ValueError, RecursionError) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
        report.diagnostics.append(report.error)
    except Exception as exc:  # noqa: BLE001 - the report must always be produced
        log.exception("analysis failed")
        report.error = f"{type(exc).__name__}: {exc}"
        report.diagnostics.append(report.error)
    return report
