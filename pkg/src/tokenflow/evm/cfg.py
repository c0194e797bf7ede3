"""Basic blocks and the intra-contract control flow graph."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

from tokenflow.evm.disasm import Instruction
from tokenflow.evm.opcodes import HALTING, OPCODES

JUMP = "JUMP"
JUMPI = "JUMPI"
FALLTHROUGH = "fallthrough"
HALT = "halt"


class CfgError(Exception):
    pass


class NoCode(CfgError):
    """Raised for an empty instruction sequence."""


@dataclass(frozen=True)
class BasicBlock:
    start: int
    instructions: tuple[Instruction, ...]
    terminator: str
    successors: frozenset[int] = frozenset()
    # jump target could not be resolved locally
    dynamic: bool = False

    @property
    def end(self) -> int:
        return self.instructions[-1].next_offset

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]

    def __contains__(self, pc: int) -> bool:
        return self.start <= pc < self.end


@dataclass(frozen=True)
class Cfg:
    instructions: tuple[Instruction, ...]
    blocks: dict[int, BasicBlock]
    jumpdests: frozenset[int]
    entry: int = 0
    warnings: tuple[str, ...] = field(default=())

    @cached_property
    def _starts(self) -> list[int]:
        return sorted(self.blocks)

    @cached_property
    def predecessors(self) -> dict[int, frozenset[int]]:
        preds: dict[int, set[int]] = {b: set() for b in self.blocks}
        for b in self.blocks.values():
            for s in b.successors:
                preds[s].add(b.start)
        return {k: frozenset(v) for k, v in preds.items()}

    @cached_property
    def dynamic_jumps(self) -> tuple[int, ...]:
        return tuple(b.start for b in self.blocks.values() if b.dynamic)

    @cached_property
    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset((b.start, s) for b in self.blocks.values() for s in b.successors)

    def block_of(self, pc: int) -> BasicBlock:
        starts = self._starts
        i = bisect.bisect_right(starts, pc) - 1
        if i < 0 or pc not in self.blocks[starts[i]]:
            raise KeyError(pc)
        return self.blocks[starts[i]]

    def reachable(self, start: int | None = None, stop: frozenset[int] = frozenset()) -> set[int]:
        """Blocks reachable from ``start``; traversal does not enter ``stop``."""
        start = self.entry if start is None else start
        seen = {start}
        todo = [start]
        while todo:
            b = todo.pop()
            for s in self.blocks[b].successors:
                if s not in seen and s not in stop:
                    seen.add(s)
                    todo.append(s)
        return seen


def _split(instrs: Sequence[Instruction]) -> list[list[Instruction]]:
    chunks: list[list[Instruction]] = []
    cur: list[Instruction] = []
    for ins in instrs:
        if ins.name == "JUMPDEST" and cur:
            chunks.append(cur)
            cur = []
        cur.append(ins)
        if ins.name in (JUMP, JUMPI) or ins.name in HALTING:
            chunks.append(cur)
            cur = []
    if cur:
        chunks.append(cur)
    return chunks


def _local_jump_target(block: Sequence[Instruction]) -> int | None:
    """Constant-propagate PUSH/DUP/SWAP/AND within one block to find the jump target."""
    stack: list[int | None] = []

    def pop() -> int | None:
        return stack.pop() if stack else None

    for ins in block[:-1]:
        name = ins.name
        if ins.value is not None:
            stack.append(ins.value)
        elif name.startswith("DUP"):
            n = int(name[3:])
            stack.append(stack[-n] if len(stack) >= n else None)
        elif name.startswith("SWAP"):
            n = int(name[4:])
            while len(stack) < n + 1:
                stack.insert(0, None)
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        elif name == "AND":
            a, b = pop(), pop()
            stack.append(a & b if a is not None and b is not None else None)
        elif name == "JUMPDEST":
            continue
        else:
            meta = OPCODES.get(ins.opcode) if ins.valid else None
            pops, pushes = (meta.pops, meta.pushes) if meta else (0, 0)
            for _ in range(pops):
                pop()
            stack.extend([None] * pushes)
    return stack[-1] if stack else None


def build_cfg(instrs: Sequence[Instruction]) -> Cfg:
    if not instrs:
        raise NoCode("empty instruction sequence")
    jumpdests = frozenset(i.offset for i in instrs if i.name == "JUMPDEST")
    # JUMPDESTs that appear as pushed constants: candidate targets for dynamic jumps
    pushed = frozenset(i.value for i in instrs if i.value is not None and i.value in jumpdests)
    chunks = _split(instrs)
    blocks: dict[int, BasicBlock] = {}
    warnings: list[str] = []
    for k, chunk in enumerate(chunks):
        last = chunk[-1]
        follow = chunks[k + 1][0].offset if k + 1 < len(chunks) else None
        succ: set[int] = set()
        dynamic = False
        if last.name in (JUMP, JUMPI):
            term = last.name
            target = _local_jump_target(chunk)
            if target is None:
                dynamic = True
                succ |= pushed
                warnings.append(f"dynamic jump at {last.offset:#x}")
            elif target in jumpdests:
                succ.add(target)
            if term == JUMPI and follow is not None:
                succ.add(follow)
        elif last.name in HALTING:
            term = HALT
        else:
            term = FALLTHROUGH
            if follow is not None:
                succ.add(follow)
        blocks[chunk[0].offset] = BasicBlock(chunk[0].offset, tuple(chunk), term, frozenset(succ), dynamic)
    return Cfg(tuple(instrs), blocks, jumpdests, instrs[0].offset, tuple(warnings))
