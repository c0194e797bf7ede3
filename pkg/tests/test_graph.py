from __future__ import annotations

import pytest

from tokenflow.callinfo import CONCRETE, SELF, Addr
from tokenflow.evm.cfg import build_cfg
from tokenflow.evm.disasm import disassemble
from tokenflow.graph import (
    ENTRY,
    EXIT,
    DataEdge,
    DepthExceeded,
    ProvenanceCycle,
    TfgNode,
    TokenFlowGraph,
    build_xfcg,
    splice_cross_contract,
)
from tokenflow.lifter.core import Budget
from tokenflow.pipeline import lift_contract, tfg_from_lifted
from tokenflow.semantics.actions import Amount, TokenAction
from tokenflow.testing import fixtures as F
from tokenflow.testing.asm import assemble
from tokenflow.testing.builder import Arg, Call, Contract, Function, Halt, If

P = 0x9000000000000000000000000000000000000009


def tfg_of(code, db, fx=None):
    contract = fx.address if fx else None
    resolver = fx.resolver if fx else None
    lifted = lift_contract(code, contract=contract, resolver=resolver, db=db, budget=Budget())
    return tfg_from_lifted(lifted, db, resolver, contract)


def by_label(tfg, label):
    return [n for n, v in tfg.nodes.items() if v.label == label]


def test_call_free_code_collapses_to_entry_exit():
    x = build_xfcg(build_cfg(disassemble(assemble("PUSH1 0x01 PUSH1 0x02 ADD POP STOP"))))
    assert set(x.nodes) == {ENTRY, EXIT} and x.edges == {(ENTRY, EXIT)}


def test_contract_without_calls(db):
    tfg = tfg_of(Contract(functions=[Function("f()", [Halt()])]).compile(), db)
    assert tfg.call_nodes == [] and tfg.cf == {(ENTRY, EXIT)}


def test_diamond(db):
    body = [If(Arg(0), [Call(P, "a()", [])], [Call(P, "b()", [])]), Call(P, "c()", []), Halt()]
    tfg = tfg_of(Contract(functions=[Function("f(uint256)", body)]).compile(), db)
    (a,), (b,), (c,) = by_label(tfg, "0x0dbe671f"), by_label(tfg, "0x4df7e3d0"), by_label(tfg, "0xc3da42b8")
    assert {(ENTRY, a), (ENTRY, b), (a, c), (b, c), (c, EXIT)} <= tfg.cf
    assert (a, b) not in tfg.cf and (b, a) not in tfg.cf


def test_ulme_balance_feeds_second_swap(db):
    fx = F.ulme(F.Options())
    tfg = tfg_of(fx.code, db, fx)
    swaps = by_label(tfg, "swapExactTokensForTokens")
    assert len(swaps) == 2
    second = max(swaps, key=lambda n: tfg.nodes[n].pc)
    bal = [n for n in by_label(tfg, "balanceOf") if tfg.T[n].owner.kind == SELF]
    assert len(bal) == 1
    into_second = [e for e in tfg.data_in(second) if e.src in by_label(tfg, "balanceOf")]
    assert into_second == [DataEdge(bal[0], second, 0)]
    assert {tfg.T[s].kind for s in swaps} == {"ST"}
    assert any(tfg.T.get(n) is not None and tfg.T[n].kind == "FL" for n in tfg.nodes)


def test_ulme_node_labels(db):
    fx = F.ulme(F.Options())
    labels = sorted(v.label for n, v in tfg_of(fx.code, db, fx).nodes.items() if v.callsite is not None)
    assert labels == sorted(["swapExactTokensForTokens"] * 2 + ["balanceOf"] * 2 + ["allowance", "0x8a43bb01"])


def _line(*ids, T=None, df=(), prov=()):
    order = [ENTRY, *ids, EXIT]
    nodes = {n: TfgNode(n, None, n, prov if n in ids else ()) for n in order}
    return TokenFlowGraph(nodes, frozenset(zip(order, order[1:])), frozenset(df), dict(T or {}))


def test_splice_single_node_subgraph():
    host = _line("a", "x", "b", df=[DataEdge("a", "x", 0), DataEdge("x", "b", 1)])
    tr = TokenAction("Tr", token=Addr(CONCRETE, 1), frm=Addr(SELF), to=Addr(CONCRETE, 2), amt=Amount(0, "a"))
    sub = _line("x/y", T={"x/y": tr})
    out = splice_cross_contract(host, "x", sub, contract="0xc", depth=1)
    assert "x" not in out.nodes and out.T["x/y"] is tr
    assert {("a", "x/y"), ("x/y", "b")} <= out.cf
    assert out.nodes["x/y"].provenance == (("0xc", 1),)
    assert DataEdge("a", "b", 1) in out.df


def test_splice_depth_and_cycle():
    sub = _line("x/y")
    with pytest.raises(DepthExceeded):
        splice_cross_contract(_line("x"), "x", sub, contract="0xc", depth=4, depth_limit=3)
    host = _line("x", prov=(("0xc", 1),))
    with pytest.raises(ProvenanceCycle):
        splice_cross_contract(host, "x", sub, contract="0xc", depth=2)


def test_splice_empty_subgraph_bypasses_node():
    host = _line("a", "x", "b")
    out = splice_cross_contract(host, "x", _line(), contract="0xc", depth=1)
    assert ("a", "b") in out.cf and "x" not in out.nodes


def test_to_dot_lists_nodes_and_edges():
    dot = _line("a", "b", df=[DataEdge("a", "b", 0)]).to_dot()
    assert dot.startswith("digraph") and '"a" -> "b" [label="df:0"]' in dot and 'label="cf"' in dot
