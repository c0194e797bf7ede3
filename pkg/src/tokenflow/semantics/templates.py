"""Signature template database.

One record per line, tab separated::

    selector_hex  canonical_signature  kind  role:idx,...

``idx`` is an argument position, ``N[0]``/``N[-1]`` an element of the array at
position N, or one of the implicit values ``callee``, ``self``, ``sender``,
``fresh``, ``value`` and ``?`` (unknown). A bare ``@entry`` flag marks callbacks
whose invocation itself is the action (flashloan callbacks).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from tokenflow.callinfo import param_types
from tokenflow.evm.hashing import selector as selector_of

log = logging.getLogger(__name__)

KINDS = ("Tr", "ST", "AL", "RL", "FL", "Balance", "Allowance", "None")

REQUIRED = {
    "Tr": ("token", "from", "to", "amt"),
    "FL": ("pr", "token", "amt", "to"),
    "ST": ("pr", "tk_in", "tk_out", "amt_in", "amt_out", "to"),
    "AL": ("pr", "tk_in", "tk_out", "amt_in", "amt_out", "to"),
    "RL": ("pr", "tk_in", "tk_out", "amt_in", "amt_out", "to"),
    "Balance": ("token", "owner"),
    "Allowance": ("token", "owner", "spender"),
    "None": (),
}
AMOUNT_ROLES = frozenset({"amt", "amt_in", "amt_out"})
IMPLICIT = frozenset({"callee", "self", "sender", "fresh", "value", "?"})

_ROLE_VALUE = re.compile(r"^(?:(\d+)(?:\[(0|-1)\])?|callee|self|sender|fresh|value|\?)$")


class DbFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RoleRef:
    """Where a role's operand comes from."""

    arg: int | None = None
    element: int | None = None
    implicit: str | None = None

    @classmethod
    def parse(cls, text: str) -> RoleRef:
        m = _ROLE_VALUE.match(text)
        if not m:
            raise DbFormatError(f"bad role value {text!r}")
        if m.group(1) is None:
            return cls(implicit=text)
        return cls(int(m.group(1)), None if m.group(2) is None else int(m.group(2)))

    def __str__(self) -> str:
        if self.implicit:
            return self.implicit
        return f"{self.arg}" + ("" if self.element is None else f"[{self.element}]")


@dataclass(frozen=True)
class SignatureTemplate:
    selector: int
    signature: str
    kind: str
    roles: tuple[tuple[str, RoleRef], ...] = ()
    entry: bool = False

    def role(self, name: str) -> RoleRef | None:
        for r, ref in self.roles:
            if r == name:
                return ref
        return None

    @property
    def name(self) -> str:
        return self.signature.split("(", 1)[0]

    def to_line(self) -> str:
        roles = ",".join([f"{r}:{ref}" for r, ref in self.roles] + (["@entry"] if self.entry else []))
        return f"{self.selector:#010x}\t{self.signature}\t{self.kind}\t{roles}"


def parse_line(line: str) -> SignatureTemplate:
    parts = line.rstrip("\n").split("\t")
    if len(parts) == 3:
        parts.append("")
    if len(parts) != 4:
        raise DbFormatError(f"expected 4 tab-separated fields, got {len(parts)}")
    sel_text, sig, kind, role_text = parts
    try:
        sel = int(sel_text, 16)
    except ValueError:
        raise DbFormatError(f"bad selector {sel_text!r}") from None
    if kind not in KINDS:
        raise DbFormatError(f"unknown action kind {kind!r}")
    if "(" not in sig or not sig.endswith(")"):
        raise DbFormatError(f"bad signature {sig!r}")
    expected = selector_of(sig)
    if sel != expected:
        raise DbFormatError(f"selector {sel:#010x} does not match {sig} ({expected:#010x})")
    roles: list[tuple[str, RoleRef]] = []
    entry = False
    for item in filter(None, (x.strip() for x in role_text.split(","))):
        if item == "@entry":
            entry = True
            continue
        if ":" not in item:
            raise DbFormatError(f"bad role {item!r}")
        name, value = item.split(":", 1)
        roles.append((name, RoleRef.parse(value)))
    names = {r for r, _ in roles}
    missing = [r for r in REQUIRED[kind] if r not in names]
    if missing:
        raise DbFormatError(f"{sig}: {kind} needs roles {missing}")
    n = len(param_types(sig))
    for r, ref in roles:
        if ref.arg is not None and ref.arg >= n:
            raise DbFormatError(f"{sig}: role {r} refers to argument {ref.arg} of {n}")
    return SignatureTemplate(sel, sig, kind, tuple(roles), entry)


@dataclass
class TemplateDB:
    templates: dict[int, SignatureTemplate] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    def get(self, sel: int | None) -> SignatureTemplate | None:
        return None if sel is None else self.templates.get(sel)

    def __len__(self) -> int:
        return len(self.templates)

    def __contains__(self, sel: int) -> bool:
        return sel in self.templates

    def signatures(self) -> dict[int, str]:
        return {s: t.signature for s, t in self.templates.items()}

    def add(self, t: SignatureTemplate) -> None:
        self.templates[t.selector] = t


def parse_db(text: str, *, strict: bool = False) -> TemplateDB:
    db = TemplateDB()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            db.add(parse_line(line))
        except DbFormatError as exc:
            if strict:
                raise
            msg = f"line {lineno}: {exc}"
            log.warning("template skipped, %s", msg)
            db.diagnostics.append(msg)
    return db


def load_template_db(source: str | Path | None = None, *, strict: bool = False) -> TemplateDB:
    """Load the bundled database, or a user-supplied file when ``source`` is given."""
    if source is None:
        text = resources.files("tokenflow.data").joinpath("templates.tsv").read_text(encoding="utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    return parse_db(text, strict=strict)
