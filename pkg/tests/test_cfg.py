from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenflow.evm.cfg import CfgError, build_cfg
from tokenflow.evm.disasm import disassemble
from tokenflow.evm.functions import FALLBACK, PUBLIC, detect_functions
from tokenflow.evm.hashing import selector
from tokenflow.testing import fixtures as F
from tokenflow.testing.asm import assemble
from tokenflow.testing.builder import Call, Contract, Function, Halt, If, Arg, Lit
from tokenflow.testing.interp import Interpreter


def cfg_of(code: bytes):
    return build_cfg(disassemble(code))


def test_straight_line_single_block():
    cfg = cfg_of(assemble("PUSH1 0 STOP"))
    assert len(cfg.blocks) == 1 and not cfg.edges


def test_static_jump_edge_confirmed_by_execution():
    code = assemble("PUSH1 0x04 JUMP INVALID JUMPDEST STOP")
    cfg = cfg_of(code)
    assert (0, 4) in cfg.edges
    ex = Interpreter(code).run()
    assert ex.jumps == [(2, 4)] and ex.halt == "STOP"


def test_dispatcher_branch_has_two_successors():
    code = Contract(functions=[Function("balanceOf(address)", [Halt()])]).compile()
    cfg = cfg_of(code)
    jumpi = [b for b in cfg.blocks.values() if b.last.name == "JUMPI"]
    assert any(len(b.successors) == 2 for b in jumpi)
    ex = Interpreter(code, selector("balanceOf(address)").to_bytes(4, "big")).run()
    for src, dst in ex.jumps:
        assert dst in cfg.blocks[cfg.block_of(src).start].successors


def test_empty_code_is_an_error():
    with pytest.raises(CfgError):
        cfg_of(b"")


def test_two_selector_dispatcher_units():
    code = Contract(functions=[Function("a()", [Halt()]), Function("b()", [Halt()])]).compile()
    units = detect_functions(cfg_of(code))
    public = {u.selector for u in units if u.kind == PUBLIC}
    assert public == {selector("a()"), selector("b()")}
    assert sum(u.kind == FALLBACK for u in units) == 1


def test_dispatcherless_code_is_one_fallback_unit():
    code = Contract(dispatcher=False, body=[If(Arg(0).gt(3), [Call(Lit(0xBEEF), "f()", [])]), Halt()]).compile()
    units = detect_functions(cfg_of(code))
    assert [u.kind for u in units if u.kind != "private"] == [FALLBACK]


@pytest.mark.parametrize("fx", F.corpus(), ids=lambda f: f.name)
def test_executed_jumps_are_cfg_edges(fx):
    """Every jump the interpreter takes on any public entry is an edge of the recovered CFG."""
    cfg = cfg_of(fx.code)
    units = detect_functions(cfg)
    storage = fx.resolver.storage.get(fx.address, {})
    for u in units:
        data = (u.selector or 0).to_bytes(4, "big") + bytes(32 * 8)
        ex = Interpreter(fx.code, data, storage, address=fx.address).run()
        for src, dst in ex.jumps:
            assert dst in cfg.blocks[cfg.block_of(src).start].successors, (u, hex(src), hex(dst))


@settings(max_examples=200)
@given(st.binary(min_size=1, max_size=300))
def test_blocks_partition_reachable_code(code):
    cfg = cfg_of(code)
    starts = sorted(cfg.blocks)
    for a, b in zip(starts, starts[1:]):
        assert cfg.blocks[a].end <= b
    for blk in cfg.blocks.values():
        assert blk.successors <= set(cfg.blocks)
