from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenflow.callinfo import CALLER, CONCRETE, SELF, Addr
from tokenflow.detector.paths import (
    FUND_PREPARATION,
    FUND_TRANSFER,
    TOKEN_EXCHANGE,
    filter_sensitive_paths,
    is_subsequence,
    iter_paths,
    keep_longest,
    segments,
    SensitivePath,
)
from tokenflow.detector.sigma import Sigma
from tokenflow.graph import ENTRY, EXIT, TfgNode, TokenFlowGraph
from tokenflow.semantics.actions import Amount, TokenAction
from tokenflow.testing.randgraph import random_tfg

ME = Addr(SELF, text="ADDRESS")
P, A, B = Addr(CONCRETE, 0xB001), Addr(CONCRETE, 0x70C1), Addr(CONCRETE, 0x70C2)


def graph(edges, T=None):
    ids = sorted({n for e in edges for n in e} - {ENTRY, EXIT})
    nodes = {n: TfgNode(n, None, n) for n in [ENTRY, *ids, EXIT]}
    return TokenFlowGraph(nodes, frozenset(edges), frozenset(), dict(T or {}))


def st_(a, b, to=ME):
    return TokenAction("ST", pr=P, tk_in=a, tk_out=b, amt_in=Amount(0, "x"), amt_out=Amount(None, "y"), to=to)


def test_paths_of_a_diamond():
    g = graph([(ENTRY, "a"), (ENTRY, "b"), ("a", "c"), ("b", "c"), ("c", EXIT)])
    assert list(iter_paths(g)) == [(ENTRY, "a", "c", EXIT), (ENTRY, "b", "c", EXIT)]


def test_back_edge_used_at_most_once():
    g = graph([(ENTRY, "a"), ("a", "b"), ("b", "a"), ("a", EXIT), ("b", EXIT)])
    assert set(iter_paths(g)) == {(ENTRY, "a", EXIT), (ENTRY, "a", "b", EXIT), (ENTRY, "a", "b", "a", EXIT)}
    # repeating a -> b would reuse an edge
    assert (ENTRY, "a", "b", "a", "b", EXIT) not in set(iter_paths(g))


def test_self_loop_once():
    g = graph([(ENTRY, "a"), ("a", "a"), ("a", EXIT)])
    assert set(iter_paths(g)) == {(ENTRY, "a", "a", EXIT), (ENTRY, "a", EXIT)}


def test_segments_by_trigger():
    T = {
        "f": TokenAction("FL", pr=P, token=A, amt=Amount(0, "a"), to=ME),
        "s1": st_(A, B),
        "s2": st_(B, A),
        "t": TokenAction("Tr", token=A, frm=P, to=Addr(CALLER, text="CALLER"), amt=Amount(1, "a")),
        "o": TokenAction("Tr", token=A, frm=ME, to=Addr(CONCRETE, 0x3333), amt=Amount(1, "a")),
    }
    path = (ENTRY, "x", "f", "s1", "y", "s2", "t", "o", EXIT)
    segs = dict((kind, nodes) for nodes, kind in segments(path, T, Sigma()))
    assert segs[FUND_PREPARATION] == path[2:]
    assert segs[TOKEN_EXCHANGE] == ("s1", "y", "s2")
    assert segs[FUND_TRANSFER] == path[:7]


def test_no_segments_on_unlabeled_path():
    assert segments((ENTRY, "a", EXIT), {}, Sigma()) == []


def test_subsequence_is_order_preserving():
    assert is_subsequence(("a", "c"), ("a", "b", "c"))
    assert not is_subsequence(("c", "a"), ("a", "b", "c"))
    kept = keep_longest([SensitivePath(("a", "c"), frozenset({"x"})), SensitivePath(("a", "b", "c"), frozenset({"y"})),
                         SensitivePath(("c", "a"), frozenset({"z"}))])
    assert [p.nodes for p in kept] == [("a", "b", "c"), ("c", "a")]


def test_cap_truncates_and_rejects_nonpositive():
    # a ladder of k diamonds has 2**k paths
    edges, prev = [], ENTRY
    for i in range(8):
        edges += [(prev, f"l{i}"), (prev, f"r{i}"), (f"l{i}", f"j{i}"), (f"r{i}", f"j{i}")]
        prev = f"j{i}"
    edges.append((prev, EXIT))
    g = graph(edges, {"j0": st_(A, B), "j7": st_(B, A)})
    full = filter_sensitive_paths(g, Sigma())
    assert full.enumerated == 256 and not full.truncated
    capped = filter_sensitive_paths(g, Sigma(), cap=10)
    assert capped.truncated and capped.enumerated == 10
    with pytest.raises(ValueError):
        filter_sensitive_paths(g, Sigma(), cap=0)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32))
def test_retained_paths_are_not_subsumed(seed):
    g = random_tfg(random.Random(seed), max_nodes=8)
    ps = filter_sensitive_paths(g, Sigma(0x5E1F000000000000000000000000000000005E1F))
    nodes = [p.nodes for p in ps.paths]
    for i, a in enumerate(nodes):
        assert not any(j != i and is_subsequence(a, b) for j, b in enumerate(nodes))
        assert all(n in g.nodes for n in a)
