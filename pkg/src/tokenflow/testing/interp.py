"""Concrete single-path EVM interpreter.

Used as the independent oracle for the CFG, the lifter and argument
recovery: it executes fixture bytecode with concrete calldata and storage and
records every executed instruction, jump and outgoing call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from tokenflow.evm.hashing import keccak256

M = 1 << 256
MASK = M - 1


def _signed(x: int) -> int:
    return x - M if x >> 255 else x


@dataclass(frozen=True)
class CapturedCall:
    pc: int
    kind: str
    gas: int
    address: int
    value: int
    input: bytes
    out_offset: int
    out_length: int

    @property
    def selector(self) -> int | None:
        return int.from_bytes(self.input[:4], "big") if len(self.input) >= 4 else None

    def word(self, index: int) -> int:
        chunk = self.input[4 + 32 * index : 4 + 32 * (index + 1)]
        return int.from_bytes(chunk.ljust(32, b"\0"), "big")


@dataclass
class Execution:
    halt: str
    calls: list[CapturedCall] = field(default_factory=list)
    # (pc, mnemonic, pushed value or None) per executed step
    steps: list[tuple[int, str, int | None]] = field(default_factory=list)
    jumps: list[tuple[int, int]] = field(default_factory=list)
    storage: dict[int, int] = field(default_factory=dict)


CallHandler = Callable[[CapturedCall], "tuple[bool, bytes]"]


def _default_handler(call: CapturedCall) -> tuple[bool, bytes]:
    return True, (1).to_bytes(32, "big") * max(1, call.out_length // 32)


class Interpreter:
    def __init__(
        self,
        code: bytes,
        calldata: bytes = b"",
        storage: dict[int, int] | None = None,
        *,
        address: int = 0xA11CE,
        caller: int = 0xCA11E4,
        origin: int | None = None,
        timestamp: int = 1_700_000_000,
        number: int = 18_000_000,
        callvalue: int = 0,
        call_handler: CallHandler = _default_handler,
        code_size: Callable[[int], int] = lambda addr: 1,
        step_limit: int = 200_000,
    ) -> None:
        self.code = code
        self.calldata = calldata
        self.storage = dict(storage or {})
        self.env = {
            "ADDRESS": address,
            "CALLER": caller,
            "ORIGIN": caller if origin is None else origin,
            "TIMESTAMP": timestamp,
            "NUMBER": number,
            "CALLVALUE": callvalue,
            "GASPRICE": 1,
            "CHAINID": 1,
            "COINBASE": 0,
            "PREVRANDAO": 0,
            "GASLIMIT": 30_000_000,
            "BASEFEE": 1,
            "SELFBALANCE": 0,
            "BLOBBASEFEE": 1,
        }
        self.call_handler = call_handler
        self.code_size = code_size
        self.step_limit = step_limit
        self.jumpdests = self._jumpdests()

    def _jumpdests(self) -> set[int]:
        out, pc = set(), 0
        while pc < len(self.code):
            op = self.code[pc]
            if op == 0x5B:
                out.add(pc)
            pc += 1 + (op - 0x5F if 0x60 <= op <= 0x7F else 0)
        return out

    def run(self) -> Execution:
        code = self.code
        stack: list[int] = []
        mem = bytearray()
        ret = b""
        ex = Execution("running", storage=self.storage)

        def grow(end: int) -> None:
            if end > len(mem):
                mem.extend(b"\0" * (((end + 31) // 32) * 32 - len(mem)))

        def mread(off: int, size: int) -> bytes:
            if size == 0:
                return b""
            grow(off + size)
            return bytes(mem[off : off + size])

        def mwrite(off: int, data: bytes) -> None:
            if data:
                grow(off + len(data))
                mem[off : off + len(data)] = data

        def pop() -> int:
            if not stack:
                raise IndexError("stack underflow")
            return stack.pop()

        pc = 0
        for _ in range(self.step_limit):
            if pc >= len(code):
                ex.halt = "STOP"
                return ex
            op = code[pc]
            nxt = pc + 1
            pushed: int | None = None
            if 0x60 <= op <= 0x7F:
                n = op - 0x5F
                pushed = int.from_bytes(code[pc + 1 : pc + 1 + n].ljust(n, b"\0"), "big")
                stack.append(pushed)
                ex.steps.append((pc, f"PUSH{n}", pushed))
                pc = pc + 1 + n
                continue
            if 0x80 <= op <= 0x8F:
                stack.append(stack[-(op - 0x7F)])
                ex.steps.append((pc, f"DUP{op - 0x7F}", stack[-1]))
                pc = nxt
                continue
            if 0x90 <= op <= 0x9F:
                n = op - 0x8F
                stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
                ex.steps.append((pc, f"SWAP{n}", None))
                pc = nxt
                continue
            name = _NAMES.get(op, "INVALID")
            if name in _BINARY:
                a, b = pop(), pop()
                pushed = _BINARY[name](a, b)
            elif name == "ISZERO":
                pushed = int(pop() == 0)
            elif name == "NOT":
                pushed = MASK ^ pop()
            elif name in ("ADDMOD", "MULMOD"):
                a, b, n = pop(), pop(), pop()
                pushed = 0 if n == 0 else ((a + b) if name == "ADDMOD" else (a * b)) % n
            elif name == "SHA3":
                off, size = pop(), pop()
                pushed = int.from_bytes(keccak256(mread(off, size)), "big")
            elif name in self.env:
                pushed = self.env[name]
            elif name == "PUSH0":
                pushed = 0
            elif name == "CALLDATALOAD":
                off = pop()
                pushed = int.from_bytes(self.calldata[off : off + 32].ljust(32, b"\0"), "big") if off < 1 << 64 else 0
            elif name == "CALLDATASIZE":
                pushed = len(self.calldata)
            elif name == "CALLDATACOPY":
                dst, src, size = pop(), pop(), pop()
                mwrite(dst, self.calldata[src : src + size].ljust(size, b"\0"))
            elif name == "CODESIZE":
                pushed = len(code)
            elif name == "CODECOPY":
                dst, src, size = pop(), pop(), pop()
                mwrite(dst, code[src : src + size].ljust(size, b"\0"))
            elif name == "RETURNDATASIZE":
                pushed = len(ret)
            elif name == "RETURNDATACOPY":
                dst, src, size = pop(), pop(), pop()
                mwrite(dst, ret[src : src + size].ljust(size, b"\0"))
            elif name in ("BALANCE", "EXTCODEHASH", "BLOCKHASH", "BLOBHASH"):
                pop()
                pushed = 0
            elif name == "EXTCODESIZE":
                pushed = self.code_size(pop())
            elif name == "POP":
                pop()
            elif name == "MLOAD":
                pushed = int.from_bytes(mread(pop(), 32), "big")
            elif name == "MSTORE":
                off, val = pop(), pop()
                mwrite(off, val.to_bytes(32, "big"))
            elif name == "MSTORE8":
                off, val = pop(), pop()
                mwrite(off, bytes([val & 0xFF]))
            elif name in ("SLOAD", "TLOAD"):
                pushed = self.storage.get(pop(), 0)
            elif name in ("SSTORE", "TSTORE"):
                slot, val = pop(), pop()
                self.storage[slot] = val
            elif name == "PC":
                pushed = pc
            elif name == "MSIZE":
                pushed = len(mem)
            elif name == "GAS":
                pushed = 1_000_000
            elif name == "JUMPDEST":
                pass
            elif name == "JUMP":
                dst = pop()
                ex.jumps.append((pc, dst))
                if dst not in self.jumpdests:
                    ex.halt = "BADJUMP"
                    return ex
                ex.steps.append((pc, name, None))
                pc = dst
                continue
            elif name == "JUMPI":
                dst, cond = pop(), pop()
                if cond:
                    ex.jumps.append((pc, dst))
                    if dst not in self.jumpdests:
                        ex.halt = "BADJUMP"
                        return ex
                    ex.steps.append((pc, name, None))
                    pc = dst
                    continue
                ex.jumps.append((pc, nxt))
            elif name.startswith("LOG"):
                for _ in range(2 + int(name[3:])):
                    pop()
            elif name in ("CALL", "CALLCODE", "DELEGATECALL", "STATICCALL"):
                gas, addr = pop(), pop()
                value = pop() if name in ("CALL", "CALLCODE") else 0
                in_off, in_len, out_off, out_len = pop(), pop(), pop(), pop()
                cap = CapturedCall(pc, name, gas, addr & ((1 << 160) - 1), value, mread(in_off, in_len), out_off, out_len)
                ex.calls.append(cap)
                ok, ret = self.call_handler(cap)
                mwrite(out_off, ret[:out_len].ljust(out_len, b"\0") if out_len else b"")
                pushed = int(ok)
            elif name in ("CREATE", "CREATE2"):
                for _ in range(3 if name == "CREATE" else 4):
                    pop()
                pushed = 0
            elif name in ("STOP", "RETURN", "REVERT", "SELFDESTRUCT", "INVALID", "MCOPY"):
                if name == "MCOPY":
                    dst, src, size = pop(), pop(), pop()
                    mwrite(dst, mread(src, size))
                else:
                    ex.steps.append((pc, name, None))
                    ex.halt = name
                    return ex
            else:
                ex.halt = "INVALID"
                return ex
            if pushed is not None:
                stack.append(pushed & MASK)
            ex.steps.append((pc, name, pushed if pushed is None else pushed & MASK))
            pc = nxt
        ex.halt = "STEP_LIMIT"
        return ex


def _sdiv(a: int, b: int) -> int:
    if b == 0:
        return 0
    sa, sb = _signed(a), _signed(b)
    q = abs(sa) // abs(sb)
    return (-q if (sa < 0) != (sb < 0) else q) % M


def _smod(a: int, b: int) -> int:
    if b == 0:
        return 0
    sa, sb = _signed(a), _signed(b)
    r = abs(sa) % abs(sb)
    return (-r if sa < 0 else r) % M


def _signextend(b: int, x: int) -> int:
    if b >= 31:
        return x
    bit = 8 * b + 7
    low = x & ((1 << (bit + 1)) - 1)
    return (low | (MASK ^ ((1 << (bit + 1)) - 1))) if (x >> bit) & 1 else low


def _byte(i: int, x: int) -> int:
    return 0 if i >= 32 else x.to_bytes(32, "big")[i]


_BINARY: dict[str, Callable[[int, int], int]] = {
    "ADD": lambda a, b: (a + b) % M,
    "MUL": lambda a, b: (a * b) % M,
    "SUB": lambda a, b: (a - b) % M,
    "DIV": lambda a, b: a // b if b else 0,
    "SDIV": _sdiv,
    "MOD": lambda a, b: a % b if b else 0,
    "SMOD": _smod,
    "EXP": lambda a, b: pow(a, b, M),
    "SIGNEXTEND": _signextend,
    "LT": lambda a, b: int(a < b),
    "GT": lambda a, b: int(a > b),
    "SLT": lambda a, b: int(_signed(a) < _signed(b)),
    "SGT": lambda a, b: int(_signed(a) > _signed(b)),
    "EQ": lambda a, b: int(a == b),
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "XOR": lambda a, b: a ^ b,
    "BYTE": _byte,
    "SHL": lambda s, v: (v << s) % M if s < 256 else 0,
    "SHR": lambda s, v: v >> s if s < 256 else 0,
    "SAR": lambda s, v: (_signed(v) >> min(s, 256)) % M,
}

_NAMES = {
    0x00: "STOP", 0x01: "ADD", 0x02: "MUL", 0x03: "SUB", 0x04: "DIV", 0x05: "SDIV", 0x06: "MOD", 0x07: "SMOD",
    0x08: "ADDMOD", 0x09: "MULMOD", 0x0A: "EXP", 0x0B: "SIGNEXTEND", 0x10: "LT", 0x11: "GT", 0x12: "SLT",
    0x13: "SGT", 0x14: "EQ", 0x15: "ISZERO", 0x16: "AND", 0x17: "OR", 0x18: "XOR", 0x19: "NOT", 0x1A: "BYTE",
    0x1B: "SHL", 0x1C: "SHR", 0x1D: "SAR", 0x20: "SHA3", 0x30: "ADDRESS", 0x31: "BALANCE", 0x32: "ORIGIN",
    0x33: "CALLER", 0x34: "CALLVALUE", 0x35: "CALLDATALOAD", 0x36: "CALLDATASIZE", 0x37: "CALLDATACOPY",
    0x38: "CODESIZE", 0x39: "CODECOPY", 0x3A: "GASPRICE", 0x3B: "EXTCODESIZE", 0x3D: "RETURNDATASIZE",
    0x3E: "RETURNDATACOPY", 0x3F: "EXTCODEHASH", 0x40: "BLOCKHASH", 0x41: "COINBASE", 0x42: "TIMESTAMP",
    0x43: "NUMBER", 0x44: "PREVRANDAO", 0x45: "GASLIMIT", 0x46: "CHAINID", 0x47: "SELFBALANCE", 0x48: "BASEFEE",
    0x49: "BLOBHASH", 0x4A: "BLOBBASEFEE", 0x50: "POP", 0x51: "MLOAD", 0x52: "MSTORE", 0x53: "MSTORE8",
    0x54: "SLOAD", 0x55: "SSTORE", 0x56: "JUMP", 0x57: "JUMPI", 0x58: "PC", 0x59: "MSIZE", 0x5A: "GAS",
    0x5B: "JUMPDEST", 0x5C: "TLOAD", 0x5D: "TSTORE", 0x5E: "MCOPY", 0x5F: "PUSH0", 0xA0: "LOG0", 0xA1: "LOG1",
    0xA2: "LOG2", 0xA3: "LOG3", 0xA4: "LOG4", 0xF0: "CREATE", 0xF1: "CALL", 0xF2: "CALLCODE", 0xF3: "RETURN",
    0xF4: "DELEGATECALL", 0xF5: "CREATE2", 0xFA: "STATICCALL", 0xFD: "REVERT", 0xFE: "INVALID",
    0xFF: "SELFDESTRUCT",
}
