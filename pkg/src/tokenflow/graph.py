"""Cross-function callsite graphs (xFCG) and token flow graphs (TFG)."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from tokenflow.callinfo import CallSite
from tokenflow.evm.cfg import Cfg
from tokenflow.lifter.core import ExecGraph
from tokenflow.semantics.actions import BALANCE_OF, TokenAction

ENTRY = "Entry"
EXIT = "Exit"
DEFAULT_DEPTH_LIMIT = 3


class DepthExceeded(Exception):
    pass


class ProvenanceCycle(Exception):
    """Splicing would put the same contract twice on one provenance chain."""


@dataclass(frozen=True)
class Xfcg:
    # node id -> CallSite (None for Entry/Exit and synthetic entry nodes)
    nodes: dict[str, CallSite | None]
    edges: frozenset[tuple[str, str]]
    entry: str = ENTRY
    exit: str = EXIT

    def successors(self, n: str) -> list[str]:
        return sorted(b for a, b in self.edges if a == n)

    def renamed(self, fn) -> Xfcg:
        """Same graph with every call node id mapped through ``fn`` (Entry/Exit kept)."""

        def r(n: str) -> str:
            return n if n in (self.entry, self.exit) else fn(n)

        return Xfcg({r(n): cs for n, cs in self.nodes.items()}, frozenset((r(a), r(b)) for a, b in self.edges),
                    self.entry, self.exit)


def _chains(graph: ExecGraph, markers: Mapping[tuple, str]) -> dict[tuple, list[str]]:
    chains: dict[tuple, list[str]] = {}
    for inst in graph.instances:
        chain = ([markers[inst]] if inst in markers else []) + list(graph.calls.get(inst, ()))
        if chain:
            chains[inst] = chain
    return chains


def build_xfcg(
    source: ExecGraph | Cfg,
    callsites: Sequence[CallSite] = (),
    entry_markers: Mapping[tuple, str] | None = None,
) -> Xfcg:
    """Collapse call-free block instances; a block with k calls becomes a k-node chain.

    ``entry_markers`` places a synthetic node at the head of a block instance
    (used for flashloan-callback entries).
    """
    graph = source if isinstance(source, ExecGraph) else ExecGraph.from_cfg(source)
    markers = dict(entry_markers or {})
    succ: dict[tuple, set[tuple]] = {}
    for a, b in graph.edges:
        succ.setdefault(a, set()).add(b)
    chains = _chains(graph, markers)
    sites = {cs.node_id: cs for cs in callsites}
    nodes: dict[str, CallSite | None] = {ENTRY: None}
    edges: set[tuple[str, str]] = set()
    for inst in sorted(chains):
        chain = chains[inst]
        for n in chain:
            nodes[n] = sites.get(n)
        edges.update(zip(chain, chain[1:]))
    nodes[EXIT] = None

    def link(src: str, start: Iterable[tuple]) -> None:
        seen = set()
        todo = deque(sorted(start))
        while todo:
            inst = todo.popleft()
            if inst in seen:
                continue
            seen.add(inst)
            if inst in chains:
                edges.add((src, chains[inst][0]))
                continue
            if inst in graph.exits:
                edges.add((src, EXIT))
            todo.extend(sorted(succ.get(inst, ())))

    link(ENTRY, [graph.entry])
    for inst, chain in chains.items():
        if inst in graph.exits:
            edges.add((chain[-1], EXIT))
        link(chain[-1], succ.get(inst, ()))
    return Xfcg(nodes, frozenset(edges))


# -- token flow graph ----------------------------------------------------------


@dataclass(frozen=True)
class TfgNode:
    id: str
    callsite: CallSite | None = None
    label: str = ""
    # (contract tag, depth) from the analyzed contract down to this node's contract
    provenance: tuple[tuple[str, int], ...] = ()

    @property
    def pc(self) -> int | None:
        return self.callsite.callsite if self.callsite is not None else None

    @property
    def depth(self) -> int:
        return len(self.provenance)


@dataclass(frozen=True)
class DataEdge:
    src: str
    dst: str
    # destination argument index; None for synthetic edges (swap output to balance reads)
    arg: int | None

    def __iter__(self):
        return iter((self.src, self.dst, self.arg))


@dataclass
class TokenFlowGraph:
    nodes: dict[str, TfgNode]
    cf: frozenset[tuple[str, str]]
    df: frozenset[DataEdge]
    T: dict[str, TokenAction] = field(default_factory=dict)
    entry: str = ENTRY
    exit: str = EXIT
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        succ: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in sorted(self.cf):
            succ.setdefault(a, []).append(b)
        self._succ = succ

    def successors(self, n: str) -> list[str]:
        return self._succ.get(n, [])

    def predecessors(self, n: str) -> list[str]:
        return sorted(a for a, b in self.cf if b == n)

    @property
    def call_nodes(self) -> list[str]:
        return [n for n in self.nodes if n not in (self.entry, self.exit)]

    def label(self, n: str) -> TokenAction | None:
        return self.T.get(n)

    def data_in(self, n: str) -> list[DataEdge]:
        return sorted((e for e in self.df if e.dst == n), key=lambda e: (e.src, e.arg if e.arg is not None else -9))

    def data_out(self, n: str) -> list[DataEdge]:
        return sorted((e for e in self.df if e.src == n), key=lambda e: (e.dst, e.arg if e.arg is not None else -9))

    def cf_reachable(self, n: str) -> set[str]:
        seen: set[str] = set()
        todo = list(self.successors(n))
        while todo:
            m = todo.pop()
            if m not in seen:
                seen.add(m)
                todo.extend(self.successors(m))
        return seen

    def to_dot(self) -> str:
        lines = ["digraph tfg {"]
        for n, node in self.nodes.items():
            act = self.T.get(n)
            text = node.label or n
            if act is not None:
                text += f"\\n{act}"
            lines.append(f'  "{n}" [label="{text}"];')
        for a, b in sorted(self.cf):
            lines.append(f'  "{a}" -> "{b}" [label="cf", style=dotted];')
        for e in sorted(self.df, key=lambda e: (e.src, e.dst, str(e.arg))):
            tag = "df" if e.arg is None else f"df:{e.arg}"
            lines.append(f'  "{e.src}" -> "{e.dst}" [label="{tag}"];')
        lines.append("}")
        return "\n".join(lines)


def node_label(cs: CallSite | None, names: Mapping[int, str] | None = None) -> str:
    if cs is None:
        return ""
    if cs.signature:
        return cs.signature.split("(", 1)[0]
    if names and cs.selector in names:
        return names[cs.selector].split("(", 1)[0]
    return f"{cs.selector:#010x}" if cs.selector is not None else "?"


def swap_output_edges(nodes: Iterable[str], T: Mapping[str, TokenAction], cf_reach) -> set[DataEdge]:
    """Swap outputs are fresh values: link each swap to later balanceOf reads of its output token."""
    out = set()
    balance = [n for n in nodes if T.get(n) is not None and T[n].kind == "Balance"]
    for n in nodes:
        act = T.get(n)
        if act is None or act.kind != "ST" or act.tk_out is None:
            continue
        reach = cf_reach(n)
        for b in balance:
            if b in reach and T[b].token is not None and T[b].token.matches(act.tk_out):
                out.add(DataEdge(n, b, None))
    return out


def build_tfg(
    xfcg: Xfcg,
    actions: Mapping[str, TokenAction],
    entry_params: Mapping[str, tuple[str, frozenset[int]]] | None = None,
    names: Mapping[int, str] | None = None,
    provenance: tuple[tuple[str, int], ...] = (),
) -> TokenFlowGraph:
    """Label xFCG nodes and add data edges.

    ``entry_params`` maps a synthetic entry node to (unit uid, calldata offsets of
    the parameters it provides); every call argument in that unit derived from
    those offsets gets a data edge from the entry node.
    """
    nodes = {
        n: TfgNode(n, cs, n if n in (ENTRY, EXIT) else node_label(cs, names) or n, provenance if cs else ())
        for n, cs in xfcg.nodes.items()
    }
    T = {n: a for n, a in actions.items() if n in nodes}
    df: set[DataEdge] = set()
    for n, cs in xfcg.nodes.items():
        if cs is None:
            continue
        for src, idx in cs.data_sources():
            if src in nodes and src != n or (src == n and (n, n) in xfcg.edges):
                df.add(DataEdge(src, n, idx))
    for fl, (uid, offsets) in (entry_params or {}).items():
        if fl not in nodes or not offsets:
            continue
        for n, cs in xfcg.nodes.items():
            if cs is None or cs.unit != uid:
                continue
            for a in cs.args:
                vals = [a.av, *(a.elements or ())]
                if any(v.calldata_offsets() & offsets for v in vals):
                    df.add(DataEdge(fl, n, a.index))
    tfg = TokenFlowGraph(nodes, xfcg.edges, frozenset(), T)
    df |= swap_output_edges(nodes, T, tfg.cf_reachable)
    tfg.df = frozenset(df)
    return tfg


def splice_cross_contract(
    tfg: TokenFlowGraph,
    node: str,
    sub: TokenFlowGraph,
    *,
    contract: str,
    depth: int,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
) -> TokenFlowGraph:
    """Replace ``node`` by the callee's graph ``sub`` (whose node ids are already unique).

    ``contract`` tags the callee; ``depth`` is the expansion depth of the splice.
    """
    if depth > depth_limit:
        raise DepthExceeded(f"depth {depth} exceeds limit {depth_limit}")
    if node not in tfg.nodes or node in (tfg.entry, tfg.exit):
        raise KeyError(node)
    host = tfg.nodes[node]
    if any(tag == contract for tag, _ in host.provenance):
        raise ProvenanceCycle(f"{contract} already on the provenance chain of {node}")
    chain = host.provenance + ((contract, depth),)
    inner = [n for n in sub.nodes if n not in (sub.entry, sub.exit)]
    clash = set(inner) & set(tfg.nodes)
    if clash:
        raise ValueError(f"sub-graph node ids collide: {sorted(clash)[:3]}")

    nodes = {n: v for n, v in tfg.nodes.items() if n != node}
    for n in inner:
        nodes[n] = replace(sub.nodes[n], provenance=chain + sub.nodes[n].provenance[len(chain):])
    # keep Exit last for stable ordering
    nodes[tfg.exit] = nodes.pop(tfg.exit)

    preds = [p for p in tfg.predecessors(node) if p != node]
    succs = [s for s in tfg.successors(node) if s != node]
    self_loop = (node, node) in tfg.cf
    heads = sub.successors(sub.entry)
    tails = [a for a, b in sub.cf if b == sub.exit]

    cf = {(a, b) for a, b in tfg.cf if node not in (a, b)}
    cf |= {(a, b) for a, b in sub.cf if a != sub.entry and b != sub.exit}
    for p in preds:
        for h in heads:
            if h == sub.exit:
                cf.update((p, s) for s in succs)
            else:
                cf.add((p, h))
    for t in tails:
        if t == sub.entry:
            continue
        cf.update((t, s) for s in succs)
        if self_loop:
            cf.update((t, h) for h in heads if h != sub.exit)

    df = {e for e in tfg.df if node not in (e.src, e.dst)}
    df |= set(sub.df)
    ins = [e for e in tfg.df if e.dst == node and e.src != node]
    outs = [e for e in tfg.df if e.src == node and e.dst != node]
    for n in inner:
        cs = sub.nodes[n].callsite
        if cs is None:
            continue
        for src, idx in cs.data_sources():
            if src in nodes and src not in inner:
                df.add(DataEdge(src, n, idx))
    for i in ins:
        for o in outs:
            df.add(DataEdge(i.src, o.dst, o.arg))
    for t in tails:
        if t != sub.entry:
            df.update(DataEdge(t, o.dst, o.arg) for o in outs)

    T = {n: a for n, a in tfg.T.items() if n != node}
    T.update({n: sub.T[n] for n in inner if n in sub.T})
    out = TokenFlowGraph(nodes, frozenset(cf), frozenset(), T, tfg.entry, tfg.exit,
                         tfg.diagnostics + sub.diagnostics)
    df |= swap_output_edges(nodes, T, out.cf_reachable)
    out.df = frozenset(df)
    return out
