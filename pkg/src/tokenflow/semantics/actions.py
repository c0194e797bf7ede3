"""Token actions attached to call sites."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

from tokenflow.callinfo import CONCRETE, UNKNOWN, UNKNOWN_ADDR, Addr, CallSite, resolve_address
from tokenflow.evm.hashing import selector as selector_of
from tokenflow.lifter import values as V
from tokenflow.lifter.values import AbstractValue
from tokenflow.resolver import Resolver
from tokenflow.semantics.templates import REQUIRED, RoleRef, SignatureTemplate, TemplateDB

BALANCE_OF = selector_of("balanceOf(address)")

ACTION_KINDS = ("Tr", "ST", "AL", "RL", "FL")


@dataclass(frozen=True)
class Amount:
    """An amount operand: the argument slot carrying it (None when implicit) and its value."""

    arg: int | None
    text: str
    value: int | None = None

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class TokenAction:
    kind: str
    pr: Addr | None = None
    token: Addr | None = None
    frm: Addr | None = None
    to: Addr | None = None
    tk_in: Addr | None = None
    tk_out: Addr | None = None
    owner: Addr | None = None
    spender: Addr | None = None
    amt: Amount | None = None
    amt_in: Amount | None = None
    amt_out: Amount | None = None
    inferred: bool = False

    @property
    def is_action(self) -> bool:
        return self.kind in ACTION_KINDS

    def operands(self) -> tuple:
        """Operands in grammar order."""
        k = self.kind
        if k == "Tr":
            return (self.token, self.frm, self.to, self.amt)
        if k == "FL":
            return (self.pr, self.token, self.amt, self.to)
        if k in ("ST", "AL", "RL"):
            return (self.pr, self.tk_in, self.tk_out, self.amt_in, self.amt_out, self.to)
        if k == "Balance":
            return (self.token, self.owner)
        if k == "Allowance":
            return (self.token, self.owner, self.spender)
        return ()

    def well_formed(self) -> bool:
        """Arity and operand sorts match the production for this kind."""
        ops = self.operands()
        if len(ops) != len(REQUIRED.get(self.kind, ())):
            return False
        for role, op in zip(REQUIRED[self.kind], ops):
            want = Amount if role in ("amt", "amt_in", "amt_out") else Addr
            if not isinstance(op, want):
                return False
        return True

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(str(o) for o in self.operands())})"


_ADDR_ROLES = {"pr": "pr", "token": "token", "from": "frm", "to": "to", "tk_in": "tk_in", "tk_out": "tk_out",
               "owner": "owner", "spender": "spender"}
_AMOUNT_ROLES = {"amt": "amt", "amt_in": "amt_in", "amt_out": "amt_out"}


def _addr_operand(ref: RoleRef, cs: CallSite | None, resolver: Resolver | None, contract: int | None,
                  calldata_args: bool) -> Addr:
    if ref.implicit == "callee":
        return cs.callee if cs is not None else UNKNOWN_ADDR
    if ref.implicit == "self":
        return resolve_address(V.env("ADDRESS"), None, contract)
    if ref.implicit == "sender":
        return resolve_address(V.env("CALLER"))
    if ref.implicit is not None:
        return UNKNOWN_ADDR
    if calldata_args:
        if ref.element is not None:
            return UNKNOWN_ADDR
        return resolve_address(V.calldata(4 + 32 * ref.arg))
    arg = cs.arg(ref.arg)
    if arg is None or not arg.usable:
        return UNKNOWN_ADDR
    if ref.element is not None:
        el = arg.element(ref.element)
        return UNKNOWN_ADDR if el is None else resolve_address(el, resolver, contract)
    return resolve_address(arg.av, resolver, contract)


def _amount_operand(ref: RoleRef, cs: CallSite | None, node: str, calldata_args: bool) -> Amount:
    if ref.implicit == "fresh":
        return Amount(None, f"out_{node}")
    if ref.implicit == "value":
        v = cs.value_av if cs is not None else V.env("CALLVALUE")
        return Amount(None, str(v), v.value if v.is_const else None)
    if ref.implicit is not None:
        return Amount(None, "?")
    if calldata_args:
        if ref.element is not None:
            return Amount(None, f"calldata_{4 + 32 * ref.arg:#x}[{ref.element}]")
        return Amount(None, str(V.calldata(4 + 32 * ref.arg)))
    arg = cs.arg(ref.arg)
    if arg is None:
        return Amount(ref.arg, "?")
    if ref.element is not None:
        el = arg.element(ref.element)
        if el is None:
            return Amount(ref.arg, f"{arg.value}[{ref.element}]")
        return Amount(ref.arg, str(el), el.value if el.is_const else None)
    return Amount(ref.arg, str(arg.value), arg.value.concrete)


def _build(t: SignatureTemplate, cs: CallSite | None, node: str, resolver: Resolver | None,
           contract: int | None, calldata_args: bool) -> TokenAction:
    kw: dict = {}
    for role, ref in t.roles:
        if role in _ADDR_ROLES:
            kw[_ADDR_ROLES[role]] = _addr_operand(ref, cs, resolver, contract, calldata_args)
        elif role in _AMOUNT_ROLES:
            kw[_AMOUNT_ROLES[role]] = _amount_operand(ref, cs, node, calldata_args)
    return TokenAction(t.kind, **kw)


def classify_call(
    cs: CallSite, db: TemplateDB, resolver: Resolver | None = None, contract: int | None = None
) -> TokenAction | None:
    """Token action for a call site via its selector's template; None on a miss."""
    t = db.get(cs.selector)
    if t is None or t.entry or t.kind == "None":
        return None
    return _build(t, cs, cs.node_id, resolver, contract, calldata_args=False)


def classify_entry(selector: int | None, db: TemplateDB, node: str, contract: int | None = None) -> TokenAction | None:
    """Action implied by a public function being invoked (flashloan callbacks)."""
    t = db.get(selector)
    if t is None or not t.entry:
        return None
    return _build(t, None, node, None, contract, calldata_args=True)


# -- positional swap inference ----------------------------------------------


def _addressish(a: Addr) -> bool:
    if a.key() is None:
        return False
    return a.kind != CONCRETE or (a.value is not None and a.value >= 1 << 32)


def _reversed_pair(c1: CallSite, c2: CallSite, resolver, contract) -> tuple[Addr, Addr] | None:
    """(A, B) when c1 carries A before B and c2 carries B before A."""

    def addr(av: AbstractValue) -> Addr:
        return resolve_address(av, resolver, contract)

    # case i: inside one array argument
    for a1 in c1.args:
        a2 = c2.arg(a1.index)
        if not a1.elements or a2 is None or not a2.elements:
            continue
        e1 = [addr(e) for e in a1.elements]
        e2 = [addr(e) for e in a2.elements]
        for p, q in combinations(range(len(e1)), 2):
            A, B = e1[p], e1[q]
            if not (_addressish(A) and _addressish(B)) or A.matches(B):
                continue
            pos_a = next((k for k, x in enumerate(e2) if x.matches(A)), None)
            pos_b = next((k for k, x in enumerate(e2) if x.matches(B)), None)
            if pos_a is not None and pos_b is not None and pos_b < pos_a:
                return A, B
    # case ii: two scalar arguments swapped
    scal1 = [(a.index, addr(a.av)) for a in c1.args if a.elements is None and a.usable]
    scal2 = {a.index: addr(a.av) for a in c2.args if a.elements is None and a.usable}
    for (i, A), (j, B) in combinations(scal1, 2):
        if not (_addressish(A) and _addressish(B)) or A.matches(B):
            continue
        if i in scal2 and j in scal2 and scal2[i].matches(B) and scal2[j].matches(A):
            return A, B
    return None


def _recipient(cs: CallSite, resolver, contract) -> Addr:
    for a in cs.args:
        if a.elements is None and a.usable:
            r = resolve_address(a.av, resolver, contract)
            if r.kind in ("self", "caller"):
                return r
    return UNKNOWN_ADDR


def infer_swap_pairs(
    callsites: Sequence[CallSite],
    classified: Iterable[str] = (),
    resolver: Resolver | None = None,
    contract: int | None = None,
) -> dict[str, TokenAction]:
    """Positional ST inference for template misses.

    Two calls with the same callee and selector, in the same function unit, whose
    address operands appear in reversed order become a swap pair, provided some
    ``balanceOf`` call involves one of the two addresses.
    """
    done = set(classified)
    balance_addrs: list[tuple[str, Addr]] = []
    for cs in callsites:
        if cs.selector == BALANCE_OF:
            balance_addrs.append((cs.unit, cs.callee))
            a0 = cs.arg(0)
            if a0 is not None and a0.usable:
                balance_addrs.append((cs.unit, resolve_address(a0.av, resolver, contract)))

    def has_balance(unit: str, a: Addr, b: Addr) -> bool:
        return any(u == unit and (x.matches(a) or x.matches(b)) for u, x in balance_addrs)

    out: dict[str, TokenAction] = {}
    misses = [c for c in callsites if c.node_id not in done and c.selector is not None and c.callee.kind != UNKNOWN]
    for c1, c2 in combinations(misses, 2):
        if c1.unit != c2.unit or c1.selector != c2.selector or not c1.callee.matches(c2.callee):
            continue
        pair = _reversed_pair(c1, c2, resolver, contract)
        if pair is None:
            continue
        A, B = pair
        if not has_balance(c1.unit, A, B):
            continue
        for cs, (tin, tout) in ((c1, (A, B)), (c2, (B, A))):
            out.setdefault(cs.node_id, TokenAction(
                "ST", pr=cs.callee, tk_in=tin, tk_out=tout, amt_in=Amount(None, "?"),
                amt_out=Amount(None, f"out_{cs.node_id}"), to=_recipient(cs, resolver, contract), inferred=True,
            ))
    return out

