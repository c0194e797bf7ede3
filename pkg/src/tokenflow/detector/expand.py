"""Bounded cross-contract expansion of unlabeled call nodes on sensitive paths."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from tokenflow.callinfo import CallSite
from tokenflow.detector.paths import DEFAULT_PATH_CAP, filter_sensitive_paths
from tokenflow.detector.sigma import Sigma
from tokenflow.graph import DEFAULT_DEPTH_LIMIT, DepthExceeded, ProvenanceCycle, TokenFlowGraph, splice_cross_contract
from tokenflow.lifter import values as V
from tokenflow.lifter.core import Budget
from tokenflow.lifter.values import AbstractValue
from tokenflow.pipeline import lift_contract, tfg_from_lifted
from tokenflow.resolver import Resolver, ResolverError
from tokenflow.semantics.templates import TemplateDB

_CALL_KINDS = frozenset({"CALL", "STATICCALL", "DELEGATECALL", "CALLCODE"})


@dataclass
class ExpansionResult:
    tfg: TokenFlowGraph
    expanded: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    rounds: int = 0


def _ctx(provenance: tuple[tuple[str, int], ...]) -> str | None:
    return provenance[-1][0] if provenance else None


def callee_substitution(
    cs: CallSite, callee: int, parent_ctx: str | None, prefix: str
) -> tuple[Callable[[AbstractValue], AbstractValue | None], str | None]:
    """Map a callee's own leaves into the caller's terms.

    Calldata words become the caller's argument values, ``ADDRESS``/``CALLER``
    become the callee and the caller, storage is tagged with the callee's
    context, and call results are renamed into the spliced node namespace.
    Returns the mapping and the callee's context tag.
    """
    delegate = cs.call_kind in ("DELEGATECALL", "CALLCODE")
    ctx = parent_ctx if delegate else f"{callee:#x}"
    me = V.env("ADDRESS", ctx=parent_ctx) if delegate else V.env("ADDRESS", ctx=ctx)
    caller = V.env("CALLER", ctx=parent_ctx) if delegate else V.env("ADDRESS", ctx=parent_ctx)

    def fn(v: AbstractValue) -> AbstractValue | None:
        if v.kind == V.CALLRET:
            return V.callret(prefix + v.op, v.value)
        if v.ctx is not None:
            return v
        if v.kind == V.CALLDATA:
            off = v.args[0]
            if off.is_const and off.value >= 4 and (off.value - 4) % 32 == 0:
                a = cs.arg((off.value - 4) // 32)
                if a is not None and a.usable:
                    return a.av
            return V.calldata(off.substitute(fn), ctx=ctx)
        if v.kind == V.STORAGE:
            return V.storage(v.args[0].substitute(fn), ctx=ctx)
        if v.kind == V.ENV and not v.args:
            if v.op == "ADDRESS":
                return me
            if v.op == "CALLER":
                return caller
            if v.op == "CALLVALUE":
                return V.env("CALLVALUE", ctx=parent_ctx) if delegate else cs.value_av
        return None

    return fn, ctx


def expandable(tfg: TokenFlowGraph, n: str) -> bool:
    node = tfg.nodes.get(n)
    if node is None or node.callsite is None or n in tfg.T:
        return False
    cs = node.callsite
    return cs.call_kind in _CALL_KINDS and cs.callee.value is not None


def callee_graph(
    tfg: TokenFlowGraph,
    n: str,
    resolver: Resolver,
    db: TemplateDB,
    budget: Budget,
    contract: int | None,
    names: Mapping[int, str] | None = None,
) -> tuple[TokenFlowGraph, str] | None:
    """The callee function's graph for node ``n``, rewritten into the caller's terms."""
    node = tfg.nodes[n]
    cs = node.callsite
    callee = cs.callee.value
    code_addr = cs.callee.implementation or callee
    code = resolver.get_code(code_addr)
    if not code:
        return None
    # the callee keeps its proxy identity; only the code comes from the implementation
    lifted = lift_contract(code, contract=callee, resolver=resolver, db=db, budget=budget,
                           selector=cs.selector, entry_markers=False)
    prefix = f"{n}/"
    fn, ctx = callee_substitution(cs, callee, _ctx(node.provenance), prefix)
    sites = [c.substitute(fn, resolver, contract, prefix) for c in lifted.callsites]
    sub = tfg_from_lifted(lifted, db, resolver, contract, callsites=sites, rename=lambda x: prefix + x,
                          names=names)
    return sub, ctx or f"{callee:#x}"


def expand_on_sensitive(
    tfg: TokenFlowGraph,
    resolver: Resolver,
    db: TemplateDB,
    *,
    sigma: Sigma,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    budget: Budget | None = None,
    path_cap: int = DEFAULT_PATH_CAP,
    sensitive_only: bool = True,
    candidates: Iterable[str] | None = None,
    names: Mapping[int, str] | None = None,
) -> ExpansionResult:
    """Splice callee graphs for unlabeled external calls, one depth level per round.

    With ``sensitive_only`` (the default) only nodes on retained sensitive paths
    are expanded; otherwise every unlabeled call node is.
    """
    budget = budget or Budget()
    res = ExpansionResult(tfg)
    attempted: set[str] = set()
    for depth in range(1, depth_limit + 1):
        g = res.tfg
        if candidates is not None and depth == 1:
            pool = set(candidates)
        elif sensitive_only:
            pool = set(filter_sensitive_paths(g, sigma, cap=path_cap).nodes)
        else:
            pool = set(g.call_nodes)
        todo = sorted(n for n in pool if n not in attempted and expandable(g, n) and g.nodes[n].depth == depth - 1)
        if not todo:
            break
        res.rounds = depth
        for n in todo:
            attempted.add(n)
            try:
                built = callee_graph(res.tfg, n, resolver, db, budget, sigma.contract, names)
            except ResolverError as exc:
                res.diagnostics.append(f"{n}: callee fetch failed: {exc}")
                continue
            except Exception as exc:  # a broken callee must not sink the caller's analysis
                res.diagnostics.append(f"{n}: callee analysis failed: {type(exc).__name__}: {exc}")
                continue
            if built is None:
                res.diagnostics.append(f"{n}: callee has no code")
                continue
            sub, ctx = built
            if not sub.call_nodes:
                continue
            try:
                res.tfg = splice_cross_contract(res.tfg, n, sub, contract=ctx, depth=depth, depth_limit=depth_limit)
            except (DepthExceeded, ProvenanceCycle) as exc:
                res.diagnostics.append(f"{n}: not expanded: {exc}")
                continue
            res.expanded.append(n)
    return res
