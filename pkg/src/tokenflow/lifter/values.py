"""Abstract values tracked by the lifter.

Values are hash-consed-style immutable trees. Arithmetic over constants folds
eagerly; anything touching calldata, storage, the environment or a call result
stays symbolic and renders in a compact, deterministic text form such as
``calldata_0x4 + 1`` or ``TIMESTAMP + 1000``.
"""

from __future__ import annotations

from typing import Callable, Iterator

M = 1 << 256
MASK256 = M - 1
ADDRESS_MASK = (1 << 160) - 1

CONST = "const"
CALLDATA = "calldata"
STORAGE = "storage"
MEM = "mem"
CALLRET = "callret"
ENV = "env"
EXPR = "expr"
TOP = "top"

MAX_DEPTH = 32

_COMMUTATIVE = frozenset({"ADD", "MUL", "AND", "OR", "XOR", "EQ"})
_INFIX = {
    "ADD": "+", "SUB": "-", "MUL": "*", "DIV": "/", "MOD": "%", "EXP": "**", "AND": "&", "OR": "|",
    "XOR": "^", "LT": "<", "GT": ">", "EQ": "==", "SLT": "<s", "SGT": ">s", "SDIV": "/s", "SMOD": "%s",
}


class AbstractValue:
    """One node of a symbolic value tree.

    ``op`` holds the opcode for ``expr``/``env`` values and the call node id for
    ``callret``; ``value`` holds the word for ``const`` and the return word index
    for ``callret``. ``ctx`` tags leaves that belong to a spliced callee contract.
    """

    __slots__ = ("kind", "op", "args", "value", "ctx", "depth", "_hash", "_text", "_refs")

    def __init__(self, kind: str, op: str = "", args: tuple = (), value: int = 0, ctx: str | None = None) -> None:
        self.kind = kind
        self.op = op
        self.args = args
        self.value = value
        self.ctx = ctx
        self.depth = 1 + max((a.depth for a in args), default=0)
        self._hash = hash((kind, op, args, value, ctx))
        self._text: str | None = None
        self._refs: frozenset | None = None

    def _key(self) -> tuple:
        return (self.kind, self.op, self.args, self.value, self.ctx)

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, AbstractValue) or self._hash != other._hash:
            return False
        return self._key() == other._key()

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"<{self.kind} {self}>"

    def __str__(self) -> str:
        if self._text is None:
            self._text = _render(self)
        return self._text

    @property
    def is_const(self) -> bool:
        return self.kind == CONST

    @property
    def is_top(self) -> bool:
        return self.kind == TOP

    def walk(self) -> Iterator[AbstractValue]:
        yield self
        for a in self.args:
            yield from a.walk()

    def callrets(self) -> frozenset[tuple[str, int]]:
        """(node id, word index) of every call result this value depends on."""
        if self._refs is None:
            if self.kind == CALLRET:
                refs = frozenset({(self.op, self.value)}) if self.value >= 0 else frozenset()
            else:
                refs = frozenset().union(*(a.callrets() for a in self.args)) if self.args else frozenset()
            self._refs = refs
        return self._refs

    def calldata_offsets(self) -> frozenset[int]:
        return frozenset(
            v.args[0].value for v in self.walk() if v.kind == CALLDATA and v.args[0].is_const and v.ctx is None
        )

    def strip_mask(self) -> AbstractValue:
        """Drop a 160-bit address mask (``x & 0xff..ff``)."""
        v = self
        while v.kind == EXPR and v.op == "AND" and len(v.args) == 2:
            a, b = v.args
            if b.is_const and b.value == ADDRESS_MASK:
                v = a
            elif a.is_const and a.value == ADDRESS_MASK:
                v = b
            else:
                break
        return v

    def substitute(self, fn: Callable[[AbstractValue], AbstractValue | None]) -> AbstractValue:
        """Rebuild bottom-up; ``fn`` returns a replacement or None to keep a node."""
        hit = fn(self)
        if hit is not None:
            return hit
        if not self.args:
            return self
        args = tuple(a.substitute(fn) for a in self.args)
        if args == self.args:
            return self
        if self.kind == EXPR:
            return expr(self.op, *args)
        return _make(self.kind, self.op, args, self.value, self.ctx)


def _make(kind: str, op: str = "", args: tuple = (), value: int = 0, ctx: str | None = None) -> AbstractValue:
    v = AbstractValue(kind, op, args, value, ctx)
    return TOP_VALUE if v.depth > MAX_DEPTH else v


TOP_VALUE = AbstractValue(TOP)


def const(value: int) -> AbstractValue:
    return AbstractValue(CONST, value=value & MASK256)


def calldata(offset: AbstractValue | int, ctx: str | None = None) -> AbstractValue:
    off = const(offset) if isinstance(offset, int) else offset
    return _make(CALLDATA, args=(off,), ctx=ctx)


def storage(slot: AbstractValue | int, ctx: str | None = None) -> AbstractValue:
    s = const(slot) if isinstance(slot, int) else slot
    return _make(STORAGE, args=(s,), ctx=ctx)


def mem(offset: AbstractValue) -> AbstractValue:
    return _make(MEM, args=(offset,))


def callret(node: str, index: int) -> AbstractValue:
    return AbstractValue(CALLRET, op=node, value=index)


def env(name: str, *operands: AbstractValue, ctx: str | None = None) -> AbstractValue:
    return _make(ENV, op=name, args=tuple(operands), ctx=ctx)


# -- arithmetic --------------------------------------------------------------


def _s(x: int) -> int:
    return x - M if x >> 255 else x


def _sdiv(a: int, b: int) -> int:
    if b == 0:
        return 0
    q = abs(_s(a)) // abs(_s(b))
    return -q if (_s(a) < 0) ^ (_s(b) < 0) else q


def _smod(a: int, b: int) -> int:
    if b == 0:
        return 0
    r = abs(_s(a)) % abs(_s(b))
    return -r if _s(a) < 0 else r


def _signextend(k: int, x: int) -> int:
    if k > 30:
        return x
    bits = 8 * (k + 1)
    x &= (1 << bits) - 1
    return x - (1 << bits) if x >> (bits - 1) else x


FOLD: dict[str, Callable[..., int]] = {
    "ADD": lambda a, b: a + b,
    "MUL": lambda a, b: a * b,
    "SUB": lambda a, b: a - b,
    "DIV": lambda a, b: a // b if b else 0,
    "SDIV": _sdiv,
    "MOD": lambda a, b: a % b if b else 0,
    "SMOD": _smod,
    "ADDMOD": lambda a, b, n: (a + b) % n if n else 0,
    "MULMOD": lambda a, b, n: (a * b) % n if n else 0,
    "EXP": lambda a, b: pow(a, b, M),
    "SIGNEXTEND": _signextend,
    "LT": lambda a, b: int(a < b),
    "GT": lambda a, b: int(a > b),
    "SLT": lambda a, b: int(_s(a) < _s(b)),
    "SGT": lambda a, b: int(_s(a) > _s(b)),
    "EQ": lambda a, b: int(a == b),
    "ISZERO": lambda a: int(a == 0),
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "XOR": lambda a, b: a ^ b,
    "NOT": lambda a: ~a,
    "BYTE": lambda i, x: (x >> (8 * (31 - i))) & 0xFF if i < 32 else 0,
    "SHL": lambda s, v: v << s if s < 256 else 0,
    "SHR": lambda s, v: v >> s if s < 256 else 0,
    "SAR": lambda s, v: _s(v) >> min(s, 255),
}


def _order(args: tuple[AbstractValue, ...]) -> tuple[AbstractValue, ...]:
    # symbolic operands first, then by rendering: stable across runs and paths
    return tuple(sorted(args, key=lambda v: (v.is_const, str(v))))


def expr(op: str, *args: AbstractValue) -> AbstractValue:
    """Build ``op(args)`` in pop order, folding whatever can be folded."""
    if any(a.is_top for a in args):
        return TOP_VALUE
    if all(a.is_const for a in args) and op in FOLD:
        return const(FOLD[op](*(a.value for a in args)))
    if op in _COMMUTATIVE:
        args = _order(args)
        x, c = args
        if c.is_const:
            k = c.value
            if (op in ("ADD", "OR", "XOR") and k == 0) or (op == "MUL" and k == 1) or (op == "AND" and k == MASK256):
                return x
            if (op == "MUL" or op == "AND") and k == 0:
                return const(0)
            # (x + c1) + c2 -> x + (c1 + c2); (x & m) & m -> x & m
            if x.kind == EXPR and x.op == op and x.args[1].is_const and op in ("ADD", "AND"):
                return expr(op, x.args[0], const(FOLD[op](x.args[1].value, k)))
    elif op in ("SUB", "DIV") and len(args) == 2 and args[1].is_const:
        if (op == "SUB" and args[1].value == 0) or (op == "DIV" and args[1].value == 1):
            return args[0]
    return _make(EXPR, op, tuple(args))


# -- rendering ---------------------------------------------------------------


def _num(x: int) -> str:
    return str(x) if x < 1 << 32 else hex(x)


def _operand(v: AbstractValue) -> str:
    text = str(v)
    return f"({text})" if v.kind == EXPR and (v.op in _INFIX or v.op in ("SHL", "SHR")) else text


def _render(v: AbstractValue) -> str:
    k = v.kind
    tag = f"@{v.ctx}" if v.ctx else ""
    if k == CONST:
        return _num(v.value)
    if k == TOP:
        return "TOP"
    if k == CALLDATA:
        off = v.args[0]
        return (f"calldata_{off.value:#x}" if off.is_const else f"calldata[{off}]") + tag
    if k == STORAGE:
        slot = v.args[0]
        return (f"stor_{slot.value:#x}" if slot.is_const else f"stor[{slot}]") + tag
    if k == MEM:
        off = v.args[0]
        return f"mem_{off.value:#x}" if off.is_const else f"mem[{off}]"
    if k == CALLRET:
        return f"ret({v.op})" if v.value < 0 else f"ret_{v.op}_{v.value}"
    if k == ENV:
        if not v.args:
            return v.op + tag
        return f"{v.op}({', '.join(map(str, v.args))}){tag}"
    op, args = v.op, v.args
    if op in _INFIX and len(args) == 2:
        return f"{_operand(args[0])} {_INFIX[op]} {_operand(args[1])}"
    if op in ("SHL", "SHR") and len(args) == 2:
        sym = "<<" if op == "SHL" else ">>"
        return f"{_operand(args[1])} {sym} {_operand(args[0])}"
    if op == "ISZERO":
        return f"!{_operand(args[0])}"
    if op == "NOT":
        return f"~{_operand(args[0])}"
    return f"{op}({', '.join(map(str, args))})"
