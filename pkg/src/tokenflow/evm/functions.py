"""Function boundaries recovered from the selector dispatcher."""

from __future__ import annotations

from dataclasses import dataclass

from tokenflow.evm.cfg import HALT, JUMPI, Cfg

PUBLIC = "public"
FALLBACK = "fallback"
PRIVATE = "private"

# opcodes a compiler-emitted dispatcher block is made of
_DISPATCH_OPS = frozenset(
    {"JUMPDEST", "JUMP", "JUMPI", "POP", "EQ", "GT", "LT", "ISZERO", "SHR", "DIV", "AND", "CALLDATALOAD",
     "CALLDATASIZE", "CALLVALUE", "MSTORE", "PUSH0"}
)


@dataclass(frozen=True)
class FunctionUnit:
    uid: str
    kind: str
    entry: int
    blocks: frozenset[int]
    selector: int | None = None
    # blocks this unit shares with other units (common tails, helpers)
    shared: frozenset[int] = frozenset()

    def __str__(self) -> str:
        return f"{self.uid}@{self.entry:#x}"


def _dispatch_like(block) -> bool:
    for ins in block.instructions:
        name = ins.name
        if name.startswith(("PUSH", "DUP", "SWAP")):
            continue
        if name not in _DISPATCH_OPS:
            return False
    return True


def _selector_branch(block) -> int | None:
    """PUSH4 selector compared with EQ right before the JUMPI."""
    if block.terminator != JUMPI:
        return None
    names = [i.name for i in block.instructions]
    if "EQ" not in names:
        return None
    eq = len(names) - 1 - names[::-1].index("EQ")
    for ins in block.instructions[max(0, eq - 3) : eq]:
        if ins.name == "PUSH4":
            return ins.value
    return None


def _unit_blocks(cfg: Cfg, entry: int, stop: frozenset[int]) -> frozenset[int]:
    """Reachable blocks; dynamic jumps only follow return addresses pushed inside the unit."""
    seen = {entry}
    todo = [entry]
    pushed: set[int] = set()
    dynamic: list[int] = []
    while True:
        while todo:
            b = todo.pop()
            blk = cfg.blocks[b]
            pushed.update(i.value for i in blk.instructions if i.value is not None and i.value in cfg.jumpdests)
            if blk.dynamic:
                dynamic.append(b)
                targets = [blk.instructions[-1].next_offset] if blk.terminator == JUMPI else []
            else:
                targets = list(blk.successors)
            for s in targets:
                if s in cfg.blocks and s not in seen and s not in stop:
                    seen.add(s)
                    todo.append(s)
        grown = False
        for b in dynamic:
            for s in cfg.blocks[b].successors & pushed:
                if s not in seen and s not in stop:
                    seen.add(s)
                    todo.append(s)
                    grown = True
        if not grown:
            return frozenset(seen)


def _private_entries(cfg: Cfg) -> list[int]:
    """Targets of jumps made with a return address pushed in the same block."""
    found = set()
    for blk in cfg.blocks.values():
        if blk.terminator != "JUMP" or blk.dynamic or len(blk.successors) != 1:
            continue
        (target,) = blk.successors
        ret = [i.value for i in blk.instructions[:-1] if i.value in cfg.jumpdests and i.value != target]
        if ret:
            found.add(target)
    return sorted(found)


def detect_functions(cfg: Cfg) -> tuple[FunctionUnit, ...]:
    public: dict[int, int] = {}
    region: list[int] = []
    default: list[int] = []
    seen = {cfg.entry}
    todo = [cfg.entry]
    reads_selector = False
    while todo:
        b = todo.pop(0)
        blk = cfg.blocks[b]
        if blk.terminator == HALT or not _dispatch_like(blk):
            default.append(b)
            continue
        region.append(b)
        reads_selector |= any(i.name == "CALLDATALOAD" for i in blk.instructions)
        sel = _selector_branch(blk)
        fall = blk.instructions[-1].next_offset
        for s in sorted(blk.successors):
            if sel is not None and s != fall and not blk.dynamic:
                public.setdefault(sel, s)
                continue
            if s not in seen:
                seen.add(s)
                todo.append(s)

    units: list[FunctionUnit] = []
    if not public or not reads_selector:
        units.append(FunctionUnit("fallback", FALLBACK, cfg.entry, frozenset(cfg.reachable())))
    else:
        stops = frozenset(public.values())
        for sel, entry in sorted(public.items()):
            units.append(FunctionUnit(f"{sel:#010x}", PUBLIC, entry, _unit_blocks(cfg, entry, stops - {entry}), sel))
        members: set[int] = set(region)
        for d in default:
            members |= _unit_blocks(cfg, d, stops)
        entry = min(default) if default else cfg.entry
        units.append(FunctionUnit("fallback", FALLBACK, entry, frozenset(members)))

    taken = {u.entry for u in units}
    for entry in _private_entries(cfg):
        if entry in taken:
            continue
        units.append(FunctionUnit(f"priv_{entry:#x}", PRIVATE, entry, _unit_blocks(cfg, entry, frozenset())))

    count: dict[int, int] = {}
    for u in units:
        for b in u.blocks:
            count[b] = count.get(b, 0) + 1
    return tuple(
        FunctionUnit(u.uid, u.kind, u.entry, u.blocks, u.selector, frozenset(b for b in u.blocks if count[b] > 1))
        for u in units
    )


def unreachable_blocks(cfg: Cfg, units: tuple[FunctionUnit, ...]) -> frozenset[int]:
    covered = set().union(*(u.blocks for u in units)) if units else set()
    return frozenset(cfg.blocks) - covered
