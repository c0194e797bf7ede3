"""Bounded, path-sensitive symbolic evaluation of function units.

Each public (or fallback) unit is explored from offset 0 through the dispatcher;
paths that wander into another unit's entry are pruned. Private functions are
inlined under a call string of pushed return addresses, so a call site is
identified by its pc plus that string. Every block instance is visited at most
``loop_bound`` times per path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable

from tokenflow.evm.cfg import Cfg
from tokenflow.evm.disasm import Instruction, reassemble
from tokenflow.evm.functions import FALLBACK, PRIVATE, PUBLIC, FunctionUnit, detect_functions
from tokenflow.evm.hashing import keccak256
from tokenflow.evm.opcodes import CALLS
from tokenflow.lifter import values as V
from tokenflow.lifter.values import AbstractValue

Inst = tuple  # (block start, call string)

_NULLARY_ENV = frozenset(
    {"ADDRESS", "ORIGIN", "CALLER", "CALLVALUE", "CALLDATASIZE", "GASPRICE", "RETURNDATASIZE", "COINBASE",
     "TIMESTAMP", "NUMBER", "PREVRANDAO", "GASLIMIT", "CHAINID", "SELFBALANCE", "BASEFEE", "BLOBBASEFEE",
     "MSIZE", "GAS"}
)
_UNARY_ENV = frozenset({"BALANCE", "EXTCODESIZE", "EXTCODEHASH", "BLOCKHASH", "BLOBHASH"})
_SHUFFLE = ("PUSH", "DUP", "SWAP")
_TRACE_LIMIT = 2048


class LiftError(Exception):
    pass


class LiftTimeout(LiftError):
    """Wall-clock budget exhausted; ``facts`` holds everything lifted so far."""

    def __init__(self, facts: FactBase) -> None:
        super().__init__(f"lifting {facts.unit} timed out after {facts.paths} paths")
        self.facts = facts


class UnknownValue(LiftError):
    pass


@dataclass(frozen=True)
class Budget:
    max_paths: int = 4096
    timeout_secs: float = 120.0
    loop_bound: int = 2
    max_call_depth: int = 16
    # absolute time.monotonic() deadline shared by several units; overrides timeout_secs
    deadline: float | None = None

    def __post_init__(self) -> None:
        if self.max_paths <= 0 or self.timeout_secs <= 0 or self.loop_bound <= 0:
            raise ValueError("budget limits must be positive")

    def until(self) -> float:
        return self.deadline if self.deadline is not None else time.monotonic() + self.timeout_secs


@dataclass(frozen=True)
class Fact:
    pc: int
    opcode: str
    operands: tuple[AbstractValue, ...]
    result: AbstractValue | None

    def __str__(self) -> str:
        ops = ",".join(map(str, self.operands))
        return f"{self.pc:#x}\t{self.opcode}\t{ops}\t{'' if self.result is None else self.result}"


@dataclass(frozen=True)
class MemEvent:
    pc: int
    op: str  # MLOAD | MSTORE | MSTORE8 | CALL
    offset: AbstractValue
    value: AbstractValue


@dataclass(frozen=True)
class CallRecord:
    node_id: str
    pc: int
    call_string: tuple[int, ...]
    kind: str
    gas: AbstractValue
    address: AbstractValue
    value: AbstractValue
    in_offset: AbstractValue
    in_length: AbstractValue
    out_offset: AbstractValue
    out_length: AbstractValue
    # memory events leading up to the call, in program order
    trace: tuple[MemEvent, ...]
    unit: str


def node_id(pc: int, call_string: tuple[int, ...]) -> str:
    """``0x1a3`` or ``0x1a3<0x45<0x99`` (innermost return address first)."""
    return f"{pc:#x}" + "".join(f"<{r:#x}" for r in reversed(call_string))


@dataclass
class ExecGraph:
    """Block instances visited by the lifter and the transfers between them."""

    entry: Inst
    edges: set = field(default_factory=set)
    exits: set = field(default_factory=set)
    dead: set = field(default_factory=set)
    calls: dict = field(default_factory=dict)  # Inst -> tuple of node ids in block order
    unit_entries: dict = field(default_factory=dict)  # uid -> Inst

    @property
    def instances(self) -> set:
        out = {self.entry} | self.exits | self.dead | set(self.calls)
        for a, b in self.edges:
            out.add(a)
            out.add(b)
        return out

    def merge(self, other: ExecGraph) -> ExecGraph:
        g = ExecGraph(self.entry, set(self.edges), set(self.exits), set(self.dead), dict(self.calls),
                      dict(self.unit_entries))
        g.edges |= other.edges
        g.exits |= other.exits
        g.dead |= other.dead
        g.calls.update(other.calls)
        g.unit_entries.update(other.unit_entries)
        return g

    @classmethod
    def from_cfg(cls, cfg: Cfg, units: Iterable[FunctionUnit] = ()) -> ExecGraph:
        """Context-insensitive graph straight from the CFG (no lifting)."""
        g = cls((cfg.entry, ()))
        for b in cfg.blocks.values():
            inst = (b.start, ())
            for s in b.successors:
                g.edges.add((inst, (s, ())))
            if b.terminator == "halt":
                (g.exits if b.last.name in ("STOP", "RETURN", "SELFDESTRUCT") else g.dead).add(inst)
            pcs = [i.offset for i in b.instructions if i.name in CALLS]
            if pcs:
                g.calls[inst] = tuple(node_id(pc, ()) for pc in pcs)
        for u in units:
            if u.kind in (PUBLIC, FALLBACK):
                g.unit_entries[u.uid] = (u.entry, ())
        return g


@dataclass
class FactBase:
    unit: str
    facts: tuple[Fact, ...]
    mem_writes: tuple[tuple[int, AbstractValue, AbstractValue], ...]
    storage_reads: tuple[tuple[int, AbstractValue], ...]
    calls: tuple[CallRecord, ...]
    graph: ExecGraph
    paths: int = 0
    coverage_truncated: bool = False
    timed_out: bool = False
    diagnostics: tuple[str, ...] = ()
    values: frozenset = frozenset()

    def dump(self) -> str:
        """Line-oriented ``pc<TAB>kind<TAB>operands<TAB>result`` text."""
        return "\n".join(str(f) for f in self.facts)

    def facts_at(self, pc: int) -> list[Fact]:
        return [f for f in self.facts if f.pc == pc]


@dataclass(frozen=True)
class Resolution:
    concrete: int | None = None
    symbolic: str | None = None

    @property
    def flag(self) -> bool:
        """True exactly when the value is concrete."""
        return self.concrete is not None

    def __str__(self) -> str:
        return hex(self.concrete) if self.concrete is not None else str(self.symbolic)


def resolve(v: AbstractValue) -> Resolution:
    return Resolution(concrete=v.value) if v.is_const else Resolution(symbolic=str(v))


def backtrace_value(fb: FactBase, v: AbstractValue) -> Resolution:
    if not v.is_const and v not in fb.values:
        raise UnknownValue(str(v))
    return resolve(v)


# -- path state --------------------------------------------------------------


class _State:
    __slots__ = ("block", "cs", "stack", "cells", "havoc", "sstore", "visits", "trace", "last_call", "fresh")

    def __init__(self, block: int) -> None:
        self.block = block
        self.cs: tuple[int, ...] = ()
        self.stack: list[AbstractValue] = []
        # byte offset -> (word value, byte index within that word)
        self.cells: dict[int, tuple[AbstractValue, int]] = {}
        self.havoc = False
        self.sstore: dict[AbstractValue, AbstractValue] = {}
        self.visits: dict[Inst, int] = {}
        self.trace: tuple | None = None  # cons list of MemEvent
        self.last_call: str | None = None
        self.fresh = 0

    def fork(self, block: int, cs: tuple[int, ...] | None = None) -> _State:
        s = _State.__new__(_State)
        s.block = block
        s.cs = self.cs if cs is None else cs
        s.stack = list(self.stack)
        s.cells = dict(self.cells)
        s.havoc = self.havoc
        s.sstore = dict(self.sstore)
        s.visits = dict(self.visits)
        s.trace = self.trace
        s.last_call = self.last_call
        s.fresh = self.fresh
        return s


class _Lifter:
    def __init__(self, cfg: Cfg, unit: FunctionUnit, units: tuple[FunctionUnit, ...], budget: Budget) -> None:
        self.cfg = cfg
        self.unit = unit
        self.budget = budget
        self.code = reassemble(cfg.instructions)
        self.private_entries = frozenset(u.entry for u in units if u.kind == PRIVATE)
        if unit.kind == PUBLIC:
            self.stops = frozenset(u.entry for u in units if u.kind in (PUBLIC, FALLBACK) and u.uid != unit.uid)
        elif unit.kind == FALLBACK:
            self.stops = frozenset(u.entry for u in units if u.kind == PUBLIC)
        else:
            self.stops = frozenset()
        self.start = unit.entry if unit.kind == PRIVATE else cfg.entry
        self.graph = ExecGraph((self.start, ()))
        self.graph.unit_entries[unit.uid] = (unit.entry, ())
        self.facts: dict[tuple, Fact] = {}
        self.mem_writes: dict[tuple, None] = {}
        self.storage_reads: dict[tuple, None] = {}
        self.calls: list[CallRecord] = []
        self.values: set[AbstractValue] = set()
        self.diag: dict[str, None] = {}
        self.paths = 0
        self.truncated = False

    # bookkeeping
    def fact(self, pc: int, op: str, operands: tuple, result: AbstractValue | None) -> None:
        key = (pc, op, operands, result)
        if key not in self.facts:
            self.facts[key] = Fact(pc, op, operands, result)
            self.values.update(operands)
            if result is not None:
                self.values.add(result)

    def end(self, inst: Inst, kind: str) -> None:
        self.paths += 1
        (self.graph.exits if kind == "exit" else self.graph.dead).add(inst)

    def run(self) -> FactBase:
        deadline = self.budget.until()
        work = [_State(self.start)]
        steps = 0
        timed_out = False
        while work:
            if self.paths >= self.budget.max_paths:
                self.truncated = True
                self.diag["coverage_truncated: path budget exhausted"] = None
                break
            steps += 1
            if steps % 64 == 0 and time.monotonic() > deadline:
                timed_out = True
                self.truncated = True
                self.diag["coverage_truncated: lift timeout"] = None
                break
            st = work.pop()
            work.extend(reversed(self.block(st)))
        fb = FactBase(
            unit=self.unit.uid,
            facts=tuple(self.facts.values()),
            mem_writes=tuple(self.mem_writes),
            storage_reads=tuple(self.storage_reads),
            calls=tuple(self.calls),
            graph=self.graph,
            paths=self.paths,
            coverage_truncated=self.truncated,
            timed_out=timed_out,
            diagnostics=tuple(self.diag),
            values=frozenset(self.values),
        )
        if timed_out:
            raise LiftTimeout(fb)
        return fb

    # memory helpers
    def mstore(self, st: _State, off: AbstractValue, val: AbstractValue, size: int) -> None:
        if off.is_const and off.value + size <= 1 << 32:
            o = off.value
            if size == 32:
                for i in range(32):
                    st.cells[o + i] = (val, i)
            else:
                st.cells[o] = (val, 31)
        else:
            self.weaken(st)

    def weaken(self, st: _State) -> None:
        """Write through an unknown offset: only the free memory pointer survives."""
        st.cells = {k: v for k, v in st.cells.items() if 0x40 <= k < 0x60}
        st.havoc = True

    def byte_of(self, st: _State, o: int) -> int | None:
        cell = st.cells.get(o)
        if cell is None:
            return None if st.havoc else 0
        v, k = cell
        return (v.value >> (8 * (31 - k))) & 0xFF if v.is_const else None

    def mload(self, st: _State, off: AbstractValue) -> AbstractValue:
        if not off.is_const or off.value > 1 << 32:
            return V.mem(off)
        o = off.value
        first = st.cells.get(o)
        if first is not None and first[1] == 0:
            w = first[0]
            if all(st.cells.get(o + i) == (w, i) for i in range(1, 32)):
                return w
        out = 0
        for i in range(32):
            b = self.byte_of(st, o + i)
            if b is None:
                return V.mem(off)
            out = (out << 8) | b
        return V.const(out)

    def region_words(self, st: _State, o: int, size: int) -> list[AbstractValue] | None:
        words = []
        for w in range(0, size, 32):
            v = self.mload(st, V.const(o + w))
            if v.kind == V.MEM:
                return None
            words.append(v)
        return words

    def sha3(self, st: _State, off: AbstractValue, size: AbstractValue) -> AbstractValue:
        if off.is_const and size.is_const and size.value <= 4096:
            o, n = off.value, size.value
            raw = [self.byte_of(st, o + i) for i in range(n)]
            if all(b is not None for b in raw):
                return V.const(int.from_bytes(keccak256(bytes(raw)), "big"))
            if n % 32 == 0:
                words = self.region_words(st, o, n)
                if words is not None:
                    return V.expr("SHA3", *words)
        return V.expr("SHA3", V.mem(off), size)

    def copy_cells(self, st: _State, dst: AbstractValue, size: AbstractValue, source) -> None:
        if dst.is_const and size.is_const and size.value <= 4096:
            d = dst.value
            for i in range(size.value):
                st.cells[d + i] = source(i)
        elif not (size.is_const and size.value == 0):
            self.weaken(st)

    def event(self, st: _State, pc: int, op: str, off: AbstractValue, val: AbstractValue) -> None:
        st.trace = (MemEvent(pc, op, off, val), st.trace)

    def window(self, st: _State, in_off: AbstractValue) -> tuple[MemEvent, ...]:
        out = []
        node = st.trace
        while node is not None and len(out) < _TRACE_LIMIT:
            ev, node = node
            out.append(ev)
            if ev.op == "MLOAD" and ev.offset.is_const and ev.offset.value == 0x40 and ev.value == in_off:
                break
        out.reverse()
        return tuple(out)

    # execution
    def block(self, st: _State) -> list[_State]:
        cfg = self.cfg
        blk = cfg.blocks[st.block]
        inst = (blk.start, st.cs)
        count = st.visits.get(inst, 0) + 1
        if count > self.budget.loop_bound:
            self.truncated = True
            self.diag["coverage_truncated: loop bound reached"] = None
            self.end(inst, "dead")
            return []
        st.visits[inst] = count
        stack = st.stack

        def pop() -> AbstractValue:
            if stack:
                return stack.pop()
            st.fresh += 1
            return V.env("STACKIN", V.const(st.fresh))

        call_nodes: list[str] = []
        for ins in blk.instructions:
            name = ins.name
            pc = ins.offset
            if name.startswith(_SHUFFLE):
                if name.startswith("PUSH"):
                    stack.append(V.const(ins.value or 0))
                elif name.startswith("DUP"):
                    n = int(name[3:])
                    while len(stack) < n:
                        stack.insert(0, pop())
                    stack.append(stack[-n])
                else:
                    n = int(name[4:])
                    while len(stack) < n + 1:
                        st.fresh += 1
                        stack.insert(0, V.env("STACKIN", V.const(st.fresh)))
                    stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
                if len(stack) > 1024:
                    self.diag[f"stack overflow at {pc:#x}"] = None
                    self.end(inst, "dead")
                    return []
                continue
            if name in ("JUMPDEST", "POP"):
                if name == "POP":
                    pop()
                continue
            if name in V.FOLD:
                n = 1 if name in ("ISZERO", "NOT") else 3 if name in ("ADDMOD", "MULMOD") else 2
                ops = tuple(pop() for _ in range(n))
                res = V.expr(name, *ops)
                stack.append(res)
                self.fact(pc, name, ops, res)
            elif name in _NULLARY_ENV:
                res = V.env(name)
                stack.append(res)
                self.fact(pc, name, (), res)
            elif name in _UNARY_ENV:
                a = pop()
                res = V.env(name, a)
                stack.append(res)
                self.fact(pc, name, (a,), res)
            elif name == "PC":
                stack.append(V.const(pc))
            elif name == "CODESIZE":
                stack.append(V.const(len(self.code)))
            elif name == "SHA3":
                off, size = pop(), pop()
                res = self.sha3(st, off, size)
                stack.append(res)
                self.fact(pc, name, (off, size), res)
            elif name == "CALLDATALOAD":
                off = pop()
                res = V.calldata(off)
                stack.append(res)
                self.fact(pc, name, (off,), res)
            elif name == "MLOAD":
                off = pop()
                res = self.mload(st, off)
                stack.append(res)
                self.fact(pc, name, (off,), res)
                self.event(st, pc, name, off, res)
            elif name in ("MSTORE", "MSTORE8"):
                off, val = pop(), pop()
                self.mstore(st, off, val, 32 if name == "MSTORE" else 1)
                self.fact(pc, name, (off, val), None)
                self.mem_writes[(pc, off, val)] = None
                self.event(st, pc, name, off, val)
            elif name in ("SLOAD", "TLOAD"):
                slot = pop()
                if name == "SLOAD":
                    res = st.sstore.get(slot) or V.storage(slot)
                    self.storage_reads[(pc, slot)] = None
                else:
                    res = st.sstore.get(V.env("T", slot)) or V.env("TLOAD", slot)
                stack.append(res)
                self.fact(pc, name, (slot,), res)
            elif name in ("SSTORE", "TSTORE"):
                slot, val = pop(), pop()
                st.sstore[slot if name == "SSTORE" else V.env("T", slot)] = val
                self.fact(pc, name, (slot, val), None)
            elif name == "CALLDATACOPY":
                dst, src, size = pop(), pop(), pop()
                if src.is_const:
                    s = src.value
                    self.copy_cells(st, dst, size, lambda i: (V.calldata(s + (i // 32) * 32), i % 32))
                else:
                    self.copy_cells(st, dst, size, lambda i: (V.TOP_VALUE, 0))
                self.fact(pc, name, (dst, src, size), None)
            elif name == "CODECOPY":
                dst, src, size = pop(), pop(), pop()
                if src.is_const:
                    code, s = self.code, src.value
                    self.copy_cells(
                        st, dst, size, lambda i: (V.const(code[s + i] if s + i < len(code) else 0), 31)
                    )
                else:
                    self.copy_cells(st, dst, size, lambda i: (V.TOP_VALUE, 0))
            elif name == "RETURNDATACOPY":
                dst, src, size = pop(), pop(), pop()
                last = st.last_call
                if src.is_const and last is not None:
                    s = src.value
                    self.copy_cells(st, dst, size, lambda i: (V.callret(last, (s + i) // 32), (s + i) % 32))
                else:
                    self.copy_cells(st, dst, size, lambda i: (V.TOP_VALUE, 0))
                self.fact(pc, name, (dst, src, size), None)
            elif name == "EXTCODECOPY":
                _, dst, _, size = pop(), pop(), pop(), pop()
                self.copy_cells(st, dst, size, lambda i: (V.TOP_VALUE, 0))
            elif name == "MCOPY":
                dst, src, size = pop(), pop(), pop()
                if src.is_const and dst.is_const and size.is_const and size.value <= 4096:
                    snapshot = {i: st.cells.get(src.value + i) for i in range(size.value)}
                    zero = (V.const(0), 31) if not st.havoc else (V.TOP_VALUE, 0)
                    self.copy_cells(st, dst, size, lambda i: snapshot[i] or zero)
                else:
                    self.weaken(st)
            elif name in CALLS:
                gas, addr = pop(), pop()
                value = pop() if name in ("CALL", "CALLCODE") else V.const(0)
                in_off, in_len, out_off, out_len = pop(), pop(), pop(), pop()
                nid = node_id(pc, st.cs)
                rec = CallRecord(nid, pc, st.cs, name, gas, addr, value, in_off, in_len, out_off, out_len,
                                 self.window(st, in_off), self.unit.uid)
                self.calls.append(rec)
                call_nodes.append(nid)
                self.copy_cells(st, out_off, out_len, lambda i: (V.callret(nid, i // 32), i % 32))
                st.last_call = nid
                res = V.callret(nid, -1)
                stack.append(res)
                self.fact(pc, name, (gas, addr, value, in_off, in_len, out_off, out_len), res)
                self.event(st, pc, "CALL", in_off, in_len)
            elif name in ("CREATE", "CREATE2"):
                ops = tuple(pop() for _ in range(3 if name == "CREATE" else 4))
                res = V.env(name, *ops)
                stack.append(res)
                self.fact(pc, name, ops, res)
            elif name.startswith("LOG"):
                for _ in range(2 + int(name[3:])):
                    pop()
            elif name in ("STOP", "RETURN", "SELFDESTRUCT"):
                self.record_calls(inst, call_nodes)
                self.end(inst, "exit")
                return []
            elif name in ("REVERT", "INVALID"):
                self.record_calls(inst, call_nodes)
                self.end(inst, "dead")
                return []
            elif name in ("JUMP", "JUMPI"):
                self.record_calls(inst, call_nodes)
                return self.jump(st, inst, ins, pop, count)
            else:
                self.diag[f"unsupported opcode {name} at {pc:#x}"] = None
                self.end(inst, "dead")
                return []
        self.record_calls(inst, call_nodes)
        nxt = blk.end
        if nxt not in cfg.blocks:
            self.end(inst, "exit")  # running off the end of code halts normally
            return []
        return self.follow(st, inst, [(nxt, st.cs)])

    def record_calls(self, inst: Inst, nodes: list[str]) -> None:
        if nodes:
            self.graph.calls[inst] = tuple(nodes)

    def follow(self, st: _State, inst: Inst, targets: list[tuple[int, tuple[int, ...]]]) -> list[_State]:
        out = []
        for k, (b, cs) in enumerate(targets):
            if b in self.stops:
                continue
            self.graph.edges.add((inst, (b, cs)))
            out.append(st if k == len(targets) - 1 else st.fork(b, cs))
            out[-1].block, out[-1].cs = b, cs
        if not out:
            self.end(inst, "dead")
        return out

    def jump(self, st: _State, inst: Inst, ins: Instruction, pop, count: int) -> list[_State]:
        dst = pop()
        jumpdests = self.cfg.jumpdests
        if ins.name == "JUMPI":
            cond = pop()
            fall = ins.next_offset
            taken_ok = dst.is_const and dst.value in jumpdests
            if cond.is_const and count < self.budget.loop_bound:
                if cond.value:
                    if not taken_ok:
                        self.end(inst, "dead")
                        return []
                    return self.follow(st, inst, [(dst.value, st.cs)])
                return self.follow(st, inst, [(fall, st.cs)])
            # symbolic condition, or the last permitted visit of this block: explore both ways
            targets = [(fall, st.cs)]
            if taken_ok:
                targets.insert(0, (dst.value, st.cs))
            elif not dst.is_const:
                self.diag[f"unresolved jump at {ins.offset:#x}"] = None
            return self.follow(st, inst, targets)
        if self.unit.kind == PRIVATE and not st.cs and not dst.is_const:
            self.end(inst, "exit")  # return from the private function being lifted
            return []
        if not dst.is_const:
            self.diag[f"unresolved jump at {ins.offset:#x}"] = None
            self.end(inst, "dead")
            return []
        target = dst.value
        if target not in jumpdests:
            self.end(inst, "dead")
            return []
        cs = st.cs
        if target in self.private_entries:
            ret = next((v.value for v in reversed(st.stack) if v.is_const and v.value in jumpdests
                        and v.value != target), None)
            if ret is not None:
                if len(cs) >= self.budget.max_call_depth:
                    self.truncated = True
                    self.diag["coverage_truncated: call depth"] = None
                    self.end(inst, "dead")
                    return []
                cs = cs + (ret,)
        elif cs and target == cs[-1]:
            cs = cs[:-1]
        return self.follow(st, inst, [(target, cs)])


def lift_function(
    unit: FunctionUnit,
    cfg: Cfg,
    budget: Budget | None = None,
    *,
    units: tuple[FunctionUnit, ...] | None = None,
) -> FactBase:
    """Lift one function unit. Raises LiftTimeout (carrying partial facts) on timeout."""
    if unit.entry not in cfg.blocks:
        raise LiftError(f"unit {unit.uid} is not part of this cfg")
    if units is None:
        units = detect_functions(cfg)
    return _Lifter(cfg, unit, units, budget or Budget()).run()


def lift_snippet(cfg: Cfg, budget: Budget | None = None) -> FactBase:
    """Lift code as a single unit starting at its entry (no dispatcher handling)."""
    unit = FunctionUnit("fallback", FALLBACK, cfg.entry, frozenset(cfg.blocks))
    return _Lifter(cfg, unit, (unit,), budget or Budget()).run()
