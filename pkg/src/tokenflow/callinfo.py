"""Call-site description: callee address, selector and recovered arguments."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

from tokenflow.evm.cfg import Cfg
from tokenflow.evm.functions import FunctionUnit
from tokenflow.lifter import values as V
from tokenflow.lifter.core import CallRecord, MemEvent, Resolution, resolve
from tokenflow.lifter.values import AbstractValue
from tokenflow.resolver import ADDRESS_MASK, Resolver, ResolverError, implementation_of

# address kinds
CONCRETE = "const"
PLACEHOLDER = "calldata"
SLOT = "storage"
SELF = "self"
CALLER = "caller"
ORIGIN = "origin"
SYMBOLIC = "symbolic"
UNKNOWN = "unknown"

# longest buffer considered when the input length is symbolic
_MAX_BUFFER = 4 + 32 * 64


class NoBasePointer(Exception):
    pass


@dataclass(frozen=True)
class Addr:
    kind: str
    value: int | None = None  # concrete or storage-resolved address
    slot: int | None = None  # storage slot or calldata offset
    ctx: str | None = None  # None for the analyzed contract, else the callee's context tag
    text: str = ""
    via_proxy: bool = False
    implementation: int | None = None

    @property
    def concrete(self) -> int | None:
        return self.value

    def key(self) -> tuple | None:
        """Identity used when matching operands; None never matches anything."""
        if self.value is not None:
            return ("addr", self.value)
        if self.kind == SLOT:
            return ("storage", self.ctx, self.slot)
        if self.kind == PLACEHOLDER:
            return ("calldata", self.ctx, self.slot)
        if self.kind in (SELF, CALLER):
            return (self.kind, self.ctx)
        if self.kind == ORIGIN:
            return ("origin",)
        if self.kind == SYMBOLIC:
            return ("sym", self.ctx, self.text)
        return None

    def matches(self, other: Addr | None) -> bool:
        return other is not None and self.key() is not None and self.key() == other.key()

    def __str__(self) -> str:
        if self.kind == CONCRETE:
            return f"{self.value:#042x}"
        if self.kind == SLOT and self.value is not None:
            return f"{self.text}={self.value:#042x}"
        return self.text or self.kind


UNKNOWN_ADDR = Addr(UNKNOWN, text="unknown")


def resolve_address(
    av: AbstractValue,
    resolver: Resolver | None = None,
    contract: int | None = None,
    diagnostics: list[str] | None = None,
) -> Addr:
    """Classify an address-valued abstract value, resolving storage through ``resolver``."""
    v = av.strip_mask()
    text = str(v)
    if v.is_const:
        return _proxied(Addr(CONCRETE, v.value & ADDRESS_MASK, text=text), resolver, diagnostics)
    if v.kind == V.CALLDATA and v.args[0].is_const:
        return Addr(PLACEHOLDER, slot=v.args[0].value, ctx=v.ctx, text=text)
    if v.kind == V.STORAGE and v.args[0].is_const:
        slot = v.args[0].value
        owner = int(v.ctx, 16) if v.ctx else contract
        resolved = None
        if resolver is not None and owner is not None:
            try:
                resolved = (resolver.get_storage(owner, slot) & ADDRESS_MASK) or None
            except ResolverError as exc:
                if diagnostics is not None:
                    diagnostics.append(f"storage resolution failed for {text}: {exc}")
        return _proxied(Addr(SLOT, resolved, slot, v.ctx, text), resolver, diagnostics)
    if v.kind == V.ENV and not v.args:
        if v.op == "ADDRESS":
            value = int(v.ctx, 16) if v.ctx else contract
            return Addr(SELF, value, ctx=v.ctx, text="SELF" if not v.ctx else text)
        if v.op == "CALLER":
            return Addr(CALLER, ctx=v.ctx, text=text)
        if v.op == "ORIGIN":
            return Addr(ORIGIN, text="ORIGIN")
    if v.is_top:
        return UNKNOWN_ADDR
    return Addr(SYMBOLIC, ctx=v.ctx, text=text)


def _proxied(addr: Addr, resolver: Resolver | None, diagnostics: list[str] | None) -> Addr:
    if resolver is None or addr.value is None:
        return addr
    try:
        impl = implementation_of(resolver, addr.value)
    except ResolverError as exc:
        if diagnostics is not None:
            diagnostics.append(f"proxy check failed for {addr.value:#x}: {exc}")
        return addr
    return replace(addr, via_proxy=True, implementation=impl) if impl else addr


# -- signatures and type checks ----------------------------------------------


def split_types(params: str) -> list[str]:
    out, depth, cur = [], 0, ""
    for ch in params:
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    if cur:
        out.append(cur)
    return out


def is_dynamic(t: str) -> bool:
    if t in ("bytes", "string") or t.endswith("[]"):
        return True
    if t.startswith("("):
        return any(is_dynamic(x) for x in split_types(t[1 : t.rindex(")")]))
    m = re.fullmatch(r"(.*)\[(\d+)\]", t)
    return bool(m) and is_dynamic(m.group(1))


def param_types(signature: str) -> list[str]:
    """Head-slot types of a canonical signature; static tuples are flattened."""
    inner = signature[signature.index("(") + 1 : signature.rindex(")")]
    out: list[str] = []
    for t in split_types(inner):
        if t.startswith("(") and not is_dynamic(t) and t.endswith(")"):
            out.extend(param_types("f" + t))
        else:
            out.append(t)
    return out


def type_check(declared: str, word: int) -> bool:
    if declared == "address":
        return word < 1 << 160
    if declared == "bool":
        return word in (0, 1)
    m = re.fullmatch(r"uint(\d*)", declared)
    if m:
        return word < 1 << int(m.group(1) or 256)
    m = re.fullmatch(r"int(\d*)", declared)
    if m:
        bits = int(m.group(1) or 256)
        signed = word - (1 << 256) if word >> 255 else word
        return -(1 << (bits - 1)) <= signed < 1 << (bits - 1)
    m = re.fullmatch(r"bytes(\d+)", declared)
    if m:
        n = int(m.group(1))
        return word & ((1 << (8 * (32 - n))) - 1) == 0
    return True


# -- call site ---------------------------------------------------------------


@dataclass(frozen=True)
class RecoveredArg:
    index: int
    av: AbstractValue
    value: Resolution
    declared_type: str | None = None
    offset_in_buffer: int | None = None
    type_mismatch: bool = False
    # element values of a dynamic array argument, when their stores are visible
    elements: tuple[AbstractValue, ...] | None = None
    missing: bool = False

    @property
    def usable(self) -> bool:
        return not (self.type_mismatch or self.missing)

    def element(self, i: int) -> AbstractValue | None:
        if not self.elements:
            return None
        try:
            return self.elements[i]
        except IndexError:
            return None

    def __str__(self) -> str:
        if self.elements is not None:
            return "[" + ", ".join(str(resolve(e)) for e in self.elements) + "]"
        return str(self.value)


@dataclass(frozen=True)
class CallSite:
    node_id: str
    callsite: int
    call_kind: str
    address_av: AbstractValue
    callee: Addr
    selector: int | None
    selector_source: str  # memory | push4 | unknown
    args: tuple[RecoveredArg, ...]
    value_av: AbstractValue
    unit: str
    signature: str | None = None
    diagnostics: tuple[str, ...] = ()

    @property
    def triplet(self) -> tuple[int, Addr, int | None]:
        return (self.callsite, self.callee, self.selector)

    def arg(self, i: int) -> RecoveredArg | None:
        for a in self.args:
            if a.index == i:
                return a
        return None

    def data_sources(self) -> set[tuple[str, int]]:
        """(source node id, destination arg index) for every call result feeding an argument."""
        out: set[tuple[str, int]] = set()
        for a in self.args:
            vals = [a.av, *(a.elements or ())]
            for v in vals:
                for node, _ in v.callrets():
                    out.add((node, a.index))
        for node, _ in self.address_av.callrets():
            out.add((node, -1))
        return out

    def substitute(
        self,
        fn: Callable[[AbstractValue], AbstractValue | None],
        resolver: Resolver | None = None,
        contract: int | None = None,
        prefix: str = "",
    ) -> CallSite:
        """Rewrite every value through ``fn`` (used when splicing a callee)."""
        diags: list[str] = []
        args = tuple(
            replace(
                a,
                av=(av := a.av.substitute(fn)),
                value=resolve(av),
                elements=None if a.elements is None else tuple(e.substitute(fn) for e in a.elements),
            )
            for a in self.args
        )
        address_av = self.address_av.substitute(fn)
        return replace(
            self,
            node_id=prefix + self.node_id,
            address_av=address_av,
            callee=resolve_address(address_av, resolver, contract, diags),
            args=args,
            value_av=self.value_av.substitute(fn),
            diagnostics=self.diagnostics + tuple(diags),
        )

    def __str__(self) -> str:
        sel = f"{self.selector:#010x}" if self.selector is not None else "?"
        return f"{self.node_id}: {self.callee}.{self.signature or sel}({', '.join(map(str, self.args))})"


# -- extraction ---------------------------------------------------------------


def extract_callee_address(
    rec: CallRecord, resolver: Resolver | None = None, contract: int | None = None,
    diagnostics: list[str] | None = None,
) -> Addr:
    return resolve_address(rec.address, resolver, contract, diagnostics)


def _byte_written(events: Sequence[MemEvent], p: int) -> int | None:
    """Latest concrete byte stored at memory offset ``p`` by the given events."""
    for ev in reversed(events):
        if ev.op not in ("MSTORE", "MSTORE8"):
            continue
        if not ev.offset.is_const:
            return None
        o = ev.offset.value
        if ev.op == "MSTORE8" and o == p:
            return ev.value.value & 0xFF if ev.value.is_const else None
        if ev.op == "MSTORE" and o <= p < o + 32:
            return (ev.value.value >> (8 * (31 - (p - o)))) & 0xFF if ev.value.is_const else None
    return None


def _push4_before(rec: CallRecord, cfg: Cfg | None, unit: FunctionUnit | None) -> int | None:
    if cfg is None:
        return None
    members = unit.blocks if unit is not None else None
    for ins in reversed(cfg.instructions):
        if ins.offset >= rec.pc or ins.name != "PUSH4":
            continue
        if members is not None:
            try:
                if cfg.block_of(ins.offset).start not in members:
                    continue
            except KeyError:
                continue
        return ins.value
    return None


def extract_selector(
    rec: CallRecord, cfg: Cfg | None = None, unit: FunctionUnit | None = None
) -> tuple[int | None, str]:
    """Selector and the path that produced it (``memory``, ``push4`` or ``unknown``)."""
    if rec.in_length.is_const and rec.in_length.value == 0:
        return None, "unknown"
    if rec.in_offset.is_const and (not rec.in_length.is_const or rec.in_length.value >= 4):
        o = rec.in_offset.value
        raw = [_byte_written(rec.trace, o + i) for i in range(4)]
        if all(b is not None for b in raw):
            return int.from_bytes(bytes(raw), "big"), "memory"
    sel = _push4_before(rec, cfg, unit)
    return (sel, "push4") if sel is not None else (None, "unknown")


def _diff(ptr: AbstractValue, base: AbstractValue) -> int | None:
    if ptr == base:
        return 0
    if ptr.is_const and base.is_const:
        return ptr.value - base.value
    if ptr.kind == V.EXPR and ptr.op == "ADD" and ptr.args[0] == base and ptr.args[1].is_const:
        return ptr.args[1].value
    return None


def _find_base(events: Sequence[MemEvent], in_off: AbstractValue) -> int | None:
    fallback = None
    for k in range(len(events) - 1, -1, -1):
        ev = events[k]
        if ev.op == "MLOAD" and ev.offset.is_const and ev.offset.value == 0x40:
            if ev.value == in_off:
                return k
            if fallback is None:
                fallback = k
    return fallback


def recover_arguments(rec: CallRecord, signature: str | None = None) -> tuple[list[RecoveredArg], list[str]]:
    """Heuristic recovery of argument positions and values from the call buffer.

    Returns the arguments and any diagnostics. Raises NoBasePointer when no load of
    the free memory pointer precedes the call.
    """
    events = rec.trace
    k = _find_base(events, rec.in_offset)
    if k is None:
        raise NoBasePointer(f"no mload(0x40) before call at {rec.pc:#x}")
    base = events[k].value
    diags: list[str] = []
    in_len = rec.in_length.value if rec.in_length.is_const else _MAX_BUFFER
    stores: dict[int, AbstractValue] = {}
    counter = 0
    for ev in events[k + 1 :]:
        if ev.op not in ("MSTORE",):
            continue
        off = _diff(ev.offset, base)
        if off is None:
            # offset not expressible against the base: keep position by program order
            while 4 + 32 * counter in stores:
                counter += 1
            off = 4 + 32 * counter
            diags.append(f"store at {ev.pc:#x} has symbolic offset; placed at index {counter}")
        if not 0 <= off < in_len or off < 4 or (off - 4) % 32:
            continue
        stores[off] = ev.value
        counter = max(counter, (off - 4) // 32 + 1)
    if rec.in_offset != base:
        diags.append(f"call input at {rec.in_offset} does not start at the loaded base {base}")

    types = param_types(signature) if signature else None
    n_head = len(types) if types is not None else _guess_head(stores, in_len)
    args: list[RecoveredArg] = []
    for i in range(n_head):
        off = 4 + 32 * i
        declared = types[i] if types is not None else None
        av = stores.get(off)
        if av is None:
            sym = V.env("ARG", V.const(i))
            args.append(RecoveredArg(i, sym, Resolution(symbolic=f"arg{i}"), declared, off, missing=True))
            continue
        res = resolve(av)
        mismatch = False
        elements = None
        dyn = declared is not None and is_dynamic(declared)
        if res.flag and declared is not None:
            if dyn:
                mismatch = not (32 * n_head <= res.concrete < in_len - 4)
            else:
                mismatch = not type_check(declared, res.concrete)
            if mismatch:
                diags.append(f"type mismatch at arg {i}: {declared} vs {res.concrete:#x}")
        if res.flag and not mismatch and (dyn or (declared is None and _looks_like_head(res.concrete, n_head, in_len))):
            elements = _array_elements(stores, 4 + res.concrete, in_len)
        args.append(RecoveredArg(i, av, res, declared, off, mismatch, elements))
    return args, diags


def _looks_like_head(word: int, n_head: int, in_len: int) -> bool:
    return word % 32 == 0 and 32 * n_head <= word < in_len - 4


def _guess_head(stores: Mapping[int, AbstractValue], in_len: int) -> int:
    if not stores:
        return 0
    last = max(stores)
    n = (last - 4) // 32 + 1
    for off in sorted(stores):
        i = (off - 4) // 32
        if i >= n:
            break
        v = stores[off]
        # a word pointing past the slots seen so far marks a dynamic head
        if v.is_const and v.value % 32 == 0 and 32 * (i + 1) <= v.value < in_len - 4:
            n = min(n, v.value // 32)
    return n


def _array_elements(stores: Mapping[int, AbstractValue], at: int, in_len: int) -> tuple[AbstractValue, ...] | None:
    length = stores.get(at)
    if length is not None and length.is_const and length.value <= 64:
        n = length.value
    else:
        n = 0
        while at + 32 * (n + 1) in stores:
            n += 1
    out = []
    for j in range(n):
        v = stores.get(at + 32 * (j + 1))
        if v is None or at + 32 * (j + 1) >= in_len:
            return None
        out.append(v)
    return tuple(out)


# -- composition -------------------------------------------------------------


def _merge_values(vals: Sequence[AbstractValue]) -> AbstractValue:
    distinct = list(dict.fromkeys(vals))
    if len(distinct) == 1:
        return distinct[0]
    return V._make(V.EXPR, "PHI", tuple(sorted(distinct, key=str)))


def _merge_args(per_visit: Sequence[Sequence[RecoveredArg]]) -> tuple[RecoveredArg, ...]:
    first = per_visit[0]
    if len(per_visit) == 1:
        return tuple(first)
    out = []
    for a in first:
        peers = [next((b for b in args if b.index == a.index), None) for args in per_visit]
        if any(p is None for p in peers):
            out.append(a)
            continue
        av = _merge_values([p.av for p in peers])
        elements = a.elements
        if all(p.elements is not None and len(p.elements) == len(a.elements or ()) for p in peers) and a.elements:
            elements = tuple(_merge_values([p.elements[j] for p in peers]) for j in range(len(a.elements)))
        else:
            elements = None if any(p.elements is None for p in peers) else a.elements
        out.append(replace(a, av=av, value=resolve(av), elements=elements,
                           type_mismatch=any(p.type_mismatch for p in peers)))
    return tuple(out)


def describe_callsites(
    calls: Iterable[CallRecord],
    resolver: Resolver | None = None,
    *,
    contract: int | None = None,
    cfg: Cfg | None = None,
    units: Sequence[FunctionUnit] = (),
    signatures: Mapping[int, str] | None = None,
) -> list[CallSite]:
    """One CallSite per call node, ordered by callsite offset then node id."""
    by_node: dict[str, list[CallRecord]] = {}
    for rec in calls:
        by_node.setdefault(rec.node_id, []).append(rec)
    unit_of = {u.uid: u for u in units}
    sites = []
    for nid, recs in by_node.items():
        diags: list[str] = []
        first = recs[0]
        unit = unit_of.get(first.unit)
        sels = {extract_selector(r, cfg, unit) for r in recs}
        if len({s for s, _ in sels}) == 1:
            sel, source = sorted(sels, key=lambda s: s[1])[0]
        else:
            sel, source = None, "unknown"
            diags.append("selector differs between visits")
        signature = signatures.get(sel) if signatures and sel is not None else None
        per_visit = []
        for r in recs:
            try:
                args, d = recover_arguments(r, signature)
            except NoBasePointer as exc:
                args, d = [], [str(exc)]
            per_visit.append(args)
            diags.extend(d)
        if len({len(a) for a in per_visit}) > 1:
            longest = max(len(a) for a in per_visit)
            per_visit = [a for a in per_visit if len(a) == longest]
        address_av = _merge_values([r.address for r in recs])
        callee = resolve_address(address_av, resolver, contract, diags)
        sites.append(
            CallSite(
                node_id=nid,
                callsite=first.pc,
                call_kind=first.kind,
                address_av=address_av,
                callee=callee,
                selector=sel,
                selector_source=source,
                args=_merge_args(per_visit),
                value_av=_merge_values([r.value for r in recs]),
                unit=first.unit,
                signature=signature,
                diagnostics=tuple(dict.fromkeys(diags)),
            )
        )
    sites.sort(key=lambda s: (s.callsite, s.node_id))
    return sites
