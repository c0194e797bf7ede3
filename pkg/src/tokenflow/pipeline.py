"""Bytecode to token flow graph: disassembly, lifting, call description and labeling."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from tokenflow.callinfo import CallSite, describe_callsites
from tokenflow.evm.cfg import Cfg, build_cfg
from tokenflow.evm.disasm import disassemble
from tokenflow.evm.functions import FALLBACK, PUBLIC, FunctionUnit, detect_functions
from tokenflow.graph import Xfcg, build_tfg, build_xfcg, TokenFlowGraph
from tokenflow.lifter.core import Budget, ExecGraph, LiftError, LiftTimeout, lift_function
from tokenflow.resolver import Resolver
from tokenflow.semantics.actions import TokenAction, classify_call, classify_entry, infer_swap_pairs
from tokenflow.semantics.templates import TemplateDB


@dataclass
class LiftedContract:
    """Everything the graph builders need from one contract's code."""

    cfg: Cfg
    units: tuple[FunctionUnit, ...]
    graph: ExecGraph | None
    callsites: list[CallSite]
    # synthetic entry node id -> (unit uid, selector)
    entries: dict[str, tuple[str, int]] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)
    timed_out: bool = False


def entry_node(uid: str) -> str:
    return f"entry:{uid}"


def select_units(units: Sequence[FunctionUnit], selector: int | None) -> list[FunctionUnit]:
    """Public and fallback units, or the one unit a call with ``selector`` would run."""
    if selector is None:
        return [u for u in units if u.kind in (PUBLIC, FALLBACK)]
    hit = [u for u in units if u.kind == PUBLIC and u.selector == selector]
    return hit or [u for u in units if u.kind == FALLBACK]


def lift_contract(
    code: bytes,
    *,
    contract: int | None,
    resolver: Resolver | None,
    db: TemplateDB,
    budget: Budget,
    selector: int | None = None,
    entry_markers: bool = True,
) -> LiftedContract:
    """Lift the callable units of ``code`` (all of them, or the one ``selector`` picks)."""
    cfg = build_cfg(disassemble(code))
    units = detect_functions(cfg)
    diags: list[str] = []
    for pc in cfg.dynamic_jumps:
        diags.append(f"dynamic jump at {pc:#x} connected to all pushed jump targets")
    graph: ExecGraph | None = None
    calls = []
    timed_out = False
    for unit in select_units(units, selector):
        try:
            fb = lift_function(unit, cfg, budget, units=units)
        except LiftTimeout as exc:
            fb = exc.facts
            timed_out = True
            diags.append(f"lift of {unit.uid} timed out; partial facts used")
        except LiftError as exc:
            diags.append(f"lift of {unit.uid} failed: {exc}")
            continue
        diags.extend(f"{unit.uid}: {d}" for d in fb.diagnostics)
        graph = fb.graph if graph is None else graph.merge(fb.graph)
        calls.extend(fb.calls)
    sites = describe_callsites(calls, resolver, contract=contract, cfg=cfg, units=units, signatures=db.signatures())
    for cs in sites:
        diags.extend(f"{cs.node_id}: {d}" for d in cs.diagnostics)
    entries = {}
    if entry_markers and graph is not None:
        for u in units:
            if u.kind == PUBLIC and u.uid in graph.unit_entries:
                t = db.get(u.selector)
                if t is not None and t.entry:
                    entries[entry_node(u.uid)] = (u.uid, u.selector)
    return LiftedContract(cfg, units, graph, sites, entries, diags, timed_out)


def label_callsites(
    sites: Sequence[CallSite], db: TemplateDB, resolver: Resolver | None, contract: int | None
) -> dict[str, TokenAction]:
    """Template labels, then positional swap inference for the misses."""
    actions: dict[str, TokenAction] = {}
    for cs in sites:
        act = classify_call(cs, db, resolver, contract)
        if act is not None:
            actions[cs.node_id] = act
    known = {cs.node_id for cs in sites if cs.node_id in actions or db.get(cs.selector) is not None}
    actions.update(infer_swap_pairs(sites, known, resolver, contract))
    return actions


def _entry_offsets(db: TemplateDB, selector: int) -> int:
    t = db.get(selector)
    ref = t.role("amt") if t is not None else None
    return ref.arg if ref is not None and ref.arg is not None else -1


def tfg_from_lifted(
    lifted: LiftedContract,
    db: TemplateDB,
    resolver: Resolver | None,
    contract: int | None,
    *,
    callsites: Sequence[CallSite] | None = None,
    rename: Callable[[str], str] | None = None,
    provenance: tuple[tuple[str, int], ...] = (),
    names: Mapping[int, str] | None = None,
) -> TokenFlowGraph:
    """Build the token flow graph; ``callsites`` overrides the lifted ones (after substitution)."""
    sites = list(lifted.callsites if callsites is None else callsites)
    if lifted.graph is None:
        return build_tfg(Xfcg({"Entry": None, "Exit": None}, frozenset({("Entry", "Exit")})), {})
    markers = {lifted.graph.unit_entries[uid]: n for n, (uid, _) in lifted.entries.items()}
    xfcg = build_xfcg(lifted.graph, (), markers)
    if rename is not None:
        xfcg = xfcg.renamed(rename)
    by_id = {cs.node_id: cs for cs in sites}
    xfcg = Xfcg({n: by_id.get(n) for n in xfcg.nodes}, xfcg.edges, xfcg.entry, xfcg.exit)
    actions = label_callsites(sites, db, resolver, contract)
    entry_params: dict[str, tuple[str, frozenset[int]]] = {}
    for n, (uid, sel) in lifted.entries.items():
        act = classify_entry(sel, db, n, contract)
        if act is not None:
            actions[n] = act
        arg = _entry_offsets(db, sel)
        entry_params[n] = (uid, frozenset({4 + 32 * arg}) if arg >= 0 else frozenset())
    return build_tfg(xfcg, actions, entry_params, signature_names(db, names), provenance)


def timed(timings: dict[str, float], stage: str):
    """Context manager accumulating wall-clock milliseconds per stage."""
    return _Timer(timings, stage)


class _Timer:
    def __init__(self, timings: dict[str, float], stage: str) -> None:
        self.timings = timings
        self.stage = stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc) -> None:
        self.timings[self.stage] = self.timings.get(self.stage, 0.0) + (time.perf_counter() - self.t0) * 1000


def signature_names(db: TemplateDB, extra: Mapping[int, str] | None = None) -> dict[int, str]:
    names = db.signatures()
    names.update(extra or {})
    return names
