"""Pump-and-dump witnesses and the DPM/IPM detection rules over sensitive paths."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from tokenflow.callinfo import CONCRETE, Addr
from tokenflow.detector.sigma import Sigma
from tokenflow.graph import DataEdge, TokenFlowGraph
from tokenflow.semantics.actions import TokenAction

DPM = "DPM"
IPM = "IPM"


@dataclass(frozen=True)
class PdWitness:
    path: tuple[str, ...]
    n1: str
    n2: str


@dataclass(frozen=True)
class Detection:
    kind: str  # DPM | IPM
    rule: str  # "1+2" | "1+3" | "1+4"
    target: Addr  # manipulated pool (rule 2) or victim
    token_in: Addr
    token_out: Addr
    # N0, N1, N2 for rule 1+2; N1, N2, N3 for rules 1+3 and 1+4
    witness: tuple[str, ...]
    sigma: str = "self"  # which reading of the subject matched the final recipient
    notes: tuple[str, ...] = ()

    @property
    def confidence(self) -> str:
        return "low" if self.notes else "high"

    def key(self) -> tuple:
        return (self.kind, self.rule, self.target.key(), self.token_in.key(), self.token_out.key(), self.witness)


def _firm(a: Addr | None) -> bool:
    return a is not None and a.value is not None


def confidence_notes(named: Mapping[str, Addr | None]) -> tuple[str, ...]:
    """One note per operand that was matched only symbolically."""
    return tuple(f"{k} symbolic ({v})" for k, v in named.items() if not _firm(v))


def same(a: Addr | None, b: Addr | None) -> bool:
    return a is not None and a.matches(b)


class DataFlow:
    """Reachability over data edges, answering ``a -> a'`` queries at argument granularity."""

    def __init__(self, df: Iterable[DataEdge]) -> None:
        self._into: dict[tuple[str, int | None], set[str]] = {}
        self._succ: dict[str, set[str]] = {}
        for e in df:
            self._into.setdefault((e.dst, e.arg), set()).add(e.src)
            self._succ.setdefault(e.src, set()).add(e.dst)
        self._reach: dict[str, frozenset[str]] = {}

    def reach(self, n: str) -> frozenset[str]:
        """Nodes reachable from ``n`` (reflexive)."""
        if n not in self._reach:
            seen = {n}
            todo = [n]
            while todo:
                for m in self._succ.get(todo.pop(), ()):
                    if m not in seen:
                        seen.add(m)
                        todo.append(m)
            self._reach[n] = frozenset(seen)
        return self._reach[n]

    def flows(self, src: str, dst: str, arg: int | None) -> bool:
        """A data path from ``src`` whose last edge enters ``dst`` at ``arg`` (any argument when None)."""
        reach = self.reach(src)
        if arg is None:
            return any(s in reach for (d, _), srcs in self._into.items() if d == dst for s in srcs)
        return any(s in reach for s in self._into.get((dst, arg), ()))


def _act(T: Mapping[str, TokenAction], n: str, kind: str) -> TokenAction | None:
    a = T.get(n)
    return a if a is not None and a.kind == kind else None


def _amt_arg(a: TokenAction) -> int | None:
    return a.amt_in.arg if a.amt_in is not None else None


def pump_and_dump(T, flow: DataFlow, sigma: Sigma, n1: str, n2: str) -> str | None:
    """Rule 1 premises on a node pair; the matched subject role, or None."""
    a1, a2 = _act(T, n1, "ST"), _act(T, n2, "ST")
    if a1 is None or a2 is None:
        return None
    if not same(a1.pr, a2.pr) or not same(a1.tk_out, a2.tk_in):
        return None
    role = sigma.role(a2.to)
    if role is None:
        return None
    return role if flow.flows(n1, n2, _amt_arg(a2)) else None


def flashloan_feeds(T, flow: DataFlow, sigma: Sigma, n0: str, n1: str) -> bool:
    """Rule 2 premises: the loan's token and amount feed the first swap, both sent to the subject."""
    fl, st = _act(T, n0, "FL"), _act(T, n1, "ST")
    if fl is None or st is None:
        return False
    if sigma.role(fl.to) is None or sigma.role(st.to) is None:
        return False
    if not same(fl.token, st.tk_in):
        return False
    return flow.flows(n0, n1, _amt_arg(st))


def victim_of(T, sigma: Sigma, n1: str, n2: str, direct: bool) -> Addr | None:
    """Rule 3 (``direct``) or rule 4 premises on the middle node; returns vc."""
    st = _act(T, n1, "ST")
    mid = T.get(n2)
    if st is None or mid is None:
        return None
    t, t2, pr = st.tk_in, st.tk_out, st.pr
    if direct:
        if mid.kind == "Tr" and same(mid.token, t) and same(mid.to, pr):
            vc = mid.frm
        elif mid.kind == "AL" and same(mid.pr, pr) and same(mid.tk_in, t):
            vc = mid.to
        elif mid.kind == "RL" and same(mid.pr, pr) and same(mid.tk_out, t2):
            vc = mid.to
        else:
            return None
    else:
        if mid.kind == "Tr" and sigma.role(mid.to):
            vc = mid.frm
        elif mid.kind == "AL" and same(mid.tk_in, t) and sigma.role(mid.to):
            vc = mid.pr
        elif mid.kind == "RL" and same(mid.tk_out, t2) and sigma.role(mid.to):
            vc = mid.pr
        else:
            return None
    # the subject itself is never its own victim
    if vc is None or sigma.role(vc) is not None:
        return None
    return vc


def match_pump_and_dump(path: Sequence[str], tfg: TokenFlowGraph, sigma: Sigma,
                        flow: DataFlow | None = None) -> set[PdWitness]:
    """Rule 1: ordered swap pairs on ``path`` through one pool, the second paying the subject."""
    flow = flow or DataFlow(tfg.df)
    path = tuple(path)
    st_pos = [i for i, n in enumerate(path) if _act(tfg.T, n, "ST")]
    out = set()
    for x, i in enumerate(st_pos):
        for j in st_pos[x + 1 :]:
            if pump_and_dump(tfg.T, flow, sigma, path[i], path[j]):
                out.add(PdWitness(path, path[i], path[j]))
    return out


def _between(w: PdWitness) -> list[tuple[int, int]]:
    """(i, j) index pairs realising N1 before N2 on the witness path."""
    ii = [i for i, m in enumerate(w.path) if m == w.n1]
    jj = [j for j, m in enumerate(w.path) if m == w.n2]
    return [(i, j) for i in ii for j in jj if i < j]


def match_dpm(witnesses: Iterable[PdWitness], tfg: TokenFlowGraph, sigma: Sigma,
              flow: DataFlow | None = None) -> set[Detection]:
    """Rules 2 and 3 on top of pump-and-dump witnesses."""
    flow = flow or DataFlow(tfg.df)
    T = tfg.T
    out: set[Detection] = set()
    for w in witnesses:
        first = T[w.n1]
        role = sigma.role(T[w.n2].to) or "self"
        for i, j in _between(w):
            for k in range(i):
                if flashloan_feeds(T, flow, sigma, w.path[k], w.n1):
                    notes = confidence_notes({"pr": first.pr, "t": first.tk_in, "t'": first.tk_out})
                    out.add(Detection(DPM, "1+2", first.pr, first.tk_in, first.tk_out, (w.path[k], w.n1, w.n2),
                                      role, notes))
            for m in range(i + 1, j):
                vc = victim_of(T, sigma, w.n1, w.path[m], direct=True)
                if vc is not None:
                    notes = confidence_notes({"vc": vc, "t": first.tk_in, "t'": first.tk_out})
                    out.add(Detection(DPM, "1+3", vc, first.tk_in, first.tk_out, (w.n1, w.path[m], w.n2),
                                      role, notes))
    return out


def match_ipm(witnesses: Iterable[PdWitness], tfg: TokenFlowGraph, sigma: Sigma) -> set[Detection]:
    """Rule 4 on top of pump-and-dump witnesses."""
    T = tfg.T
    out: set[Detection] = set()
    for w in witnesses:
        first = T[w.n1]
        role = sigma.role(T[w.n2].to) or "self"
        for i, j in _between(w):
            for m in range(i + 1, j):
                vc = victim_of(T, sigma, w.n1, w.path[m], direct=False)
                if vc is not None:
                    notes = confidence_notes({"vc": vc, "t": first.tk_in, "t'": first.tk_out})
                    out.add(Detection(IPM, "1+4", vc, first.tk_in, first.tk_out, (w.n1, w.path[m], w.n2),
                                      role, notes))
    return out


def detections_on_path(path: Sequence[str], tfg: TokenFlowGraph, sigma: Sigma,
                       flow: DataFlow | None = None) -> set[Detection]:
    flow = flow or DataFlow(tfg.df)
    ws = match_pump_and_dump(path, tfg, sigma, flow)
    return match_dpm(ws, tfg, sigma, flow) | match_ipm(ws, tfg, sigma)


def evaluate(paths: Iterable[Sequence[str]], tfg: TokenFlowGraph, sigma: Sigma) -> set[Detection]:
    """All detections over the given (sensitive) paths."""
    flow = DataFlow(tfg.df)
    out: set[Detection] = set()
    for p in paths:
        out |= detections_on_path(p, tfg, sigma, flow)
    return out


def by_key(dets: Iterable[Detection]) -> dict[tuple, Detection]:
    return {d.key(): d for d in dets}


def describe(a: Addr) -> str:
    if a.kind == CONCRETE:
        return f"{a.value:#042x}"
    return str(a)
