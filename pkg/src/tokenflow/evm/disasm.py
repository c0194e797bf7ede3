"""Bytecode disassembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

from tokenflow.evm.opcodes import OPCODES

log = logging.getLogger(__name__)

MAX_CODE_SIZE = 24_576


@dataclass(frozen=True)
class Instruction:
    """A single decoded instruction."""

    offset: int
    opcode: int
    immediate: bytes = b""
    # False for bytes outside the opcode table and for truncated PUSH tails
    valid: bool = True

    @property
    def name(self) -> str:
        if not self.valid:
            return "INVALID"
        return OPCODES[self.opcode].name

    @property
    def size(self) -> int:
        return 1 + len(self.immediate)

    @property
    def next_offset(self) -> int:
        return self.offset + self.size

    @property
    def value(self) -> int | None:
        """Integer payload of a PUSH, None otherwise."""
        if not self.valid or not self.name.startswith("PUSH"):
            return None
        return int.from_bytes(self.immediate, "big") if self.immediate else 0

    def encode(self) -> bytes:
        return bytes([self.opcode]) + self.immediate

    def __str__(self) -> str:
        text = f"{self.offset}: {self.name}"
        if self.immediate:
            text += " 0x" + self.immediate.hex()
        return text


def parse_hex(text: str) -> bytes:
    """Decode a hex string with or without ``0x``; raises ValueError on bad input."""
    text = text.strip()
    if text[:2] in ("0x", "0X"):
        text = text[2:]
    if len(text) % 2:
        raise ValueError("odd-length hex string")
    return bytes.fromhex(text)


def disassemble(code: bytes | str) -> list[Instruction]:
    if isinstance(code, str):
        code = parse_hex(code)
    if len(code) > MAX_CODE_SIZE:
        log.warning("code is %d bytes, above the %d byte deployment cap", len(code), MAX_CODE_SIZE)
    out: list[Instruction] = []
    pc = 0
    n = len(code)
    while pc < n:
        op = code[pc]
        meta = OPCODES.get(op)
        if meta is None:
            out.append(Instruction(pc, op, b"", valid=False))
            pc += 1
            continue
        width = meta.immediate
        if pc + 1 + width > n:
            # truncated PUSH: keep the remainder so the bytes round-trip
            out.append(Instruction(pc, op, code[pc + 1 :], valid=False))
            break
        out.append(Instruction(pc, op, code[pc + 1 : pc + 1 + width]))
        pc += 1 + width
    return out


def reassemble(instrs: Iterable[Instruction]) -> bytes:
    return b"".join(i.encode() for i in instrs)


def dump(instrs: Iterable[Instruction]) -> str:
    """One ``offset: MNEMONIC immediate`` line per instruction."""
    return "\n".join(str(i) for i in instrs)
