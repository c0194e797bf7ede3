"""Entry-to-Exit path enumeration and sensitive-path filtering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from tokenflow.detector.sigma import Sigma
from tokenflow.graph import TokenFlowGraph
from tokenflow.semantics.actions import TokenAction

DEFAULT_PATH_CAP = 10_000

FUND_PREPARATION = "FundPreparation"
TOKEN_EXCHANGE = "TokenExchange"
FUND_TRANSFER = "FundTransfer"


@dataclass(frozen=True)
class SensitivePath:
    nodes: tuple[str, ...]
    triggers: frozenset[str]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class PathSet:
    paths: tuple[SensitivePath, ...]
    enumerated: int
    # enumeration stopped at the path cap; ``paths`` holds what was retained so far
    truncated: bool = False

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset(n for p in self.paths for n in p.nodes)


def iter_paths(tfg: TokenFlowGraph) -> Iterator[tuple[str, ...]]:
    """Entry-to-Exit walks in which no control-flow edge is used twice.

    Every back edge is therefore traversed at most once per path. Successors are
    visited in sorted order so the enumeration order is deterministic.
    """
    entry, exit_ = tfg.entry, tfg.exit
    path = [entry]
    used: set[tuple[str, str]] = set()
    # frame: (successor iterator, edge that entered this node)
    frames: list[tuple[Iterator[str], tuple[str, str] | None]] = [(iter(tfg.successors(entry)), None)]
    while frames:
        it, entered = frames[-1]
        nxt = next(it, None)
        if nxt is None:
            frames.pop()
            path.pop()
            if entered is not None:
                used.discard(entered)
            continue
        edge = (path[-1], nxt)
        if edge in used:
            continue
        if nxt == exit_:
            yield (*path, exit_)
            continue
        used.add(edge)
        path.append(nxt)
        frames.append((iter(tfg.successors(nxt)), edge))


def segments(path: Sequence[str], T: dict[str, TokenAction], sigma: Sigma) -> list[tuple[tuple[str, ...], str]]:
    """Sub-sequences of ``path`` selected by the three trigger conditions."""
    out = []
    fl = [i for i, n in enumerate(path) if _kind(T, n) == "FL" and sigma.role(T[n].to)]
    if fl:
        out.append((tuple(path[fl[0]:]), FUND_PREPARATION))
    st = [i for i, n in enumerate(path) if _kind(T, n) == "ST"]
    if len(st) >= 2:
        out.append((tuple(path[st[0] : st[-1] + 1]), TOKEN_EXCHANGE))
    tr = [i for i, n in enumerate(path) if _kind(T, n) == "Tr" and sigma.role(T[n].to)]
    if tr:
        out.append((tuple(path[: tr[-1] + 1]), FUND_TRANSFER))
    return out


def _kind(T: dict[str, TokenAction], n: str) -> str | None:
    a = T.get(n)
    return a.kind if a is not None else None


def is_subsequence(short: Sequence[str], long: Sequence[str]) -> bool:
    it = iter(long)
    return all(any(x == y for y in it) for x in short)


def keep_longest(paths: Iterable[SensitivePath]) -> list[SensitivePath]:
    """Drop every path that is an order-preserving sub-sequence of another one."""
    merged: dict[tuple[str, ...], set[str]] = {}
    for p in paths:
        merged.setdefault(p.nodes, set()).update(p.triggers)
    ordered = sorted(merged, key=lambda n: (-len(n), n))
    kept: list[tuple[str, ...]] = []
    for nodes in ordered:
        if not any(is_subsequence(nodes, k) for k in kept):
            kept.append(nodes)
    return [SensitivePath(n, frozenset(merged[n])) for n in kept]


def filter_sensitive_paths(
    tfg: TokenFlowGraph, sigma: Sigma, *, cap: int = DEFAULT_PATH_CAP, subsume: bool = True
) -> PathSet:
    """Retain trigger segments of every Entry-to-Exit path, keeping only the longest."""
    if cap <= 0:
        raise ValueError("path cap must be positive")
    found: list[SensitivePath] = []
    count = 0
    truncated = False
    for path in iter_paths(tfg):
        if count >= cap:
            truncated = True
            break
        count += 1
        for nodes, trig in segments(path, tfg.T, sigma):
            found.append(SensitivePath(nodes, frozenset({trig})))
    paths = keep_longest(found) if subsume else _merge_triggers(found)
    return PathSet(tuple(paths), count, truncated)


def _merge_triggers(paths: Iterable[SensitivePath]) -> list[SensitivePath]:
    merged: dict[tuple[str, ...], set[str]] = {}
    for p in paths:
        merged.setdefault(p.nodes, set()).update(p.triggers)
    return [SensitivePath(n, frozenset(t)) for n, t in sorted(merged.items())]
