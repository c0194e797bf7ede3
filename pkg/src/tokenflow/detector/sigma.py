"""The analysis subject: the analyzed contract's own address or the transaction sender."""

from __future__ import annotations

from dataclasses import dataclass

from tokenflow.callinfo import CALLER, ORIGIN, SELF, Addr


@dataclass(frozen=True)
class Sigma:
    contract: int | None = None

    def role(self, a: Addr | None) -> str | None:
        """``"self"`` or ``"sender"`` when ``a`` denotes the subject, else None."""
        if a is None:
            return None
        if a.kind == SELF and (a.ctx is None or (a.value is not None and a.value == self.contract)):
            return "self"
        if a.kind != SELF and self.contract is not None and a.value == self.contract:
            return "self"
        if a.kind == CALLER and a.ctx is None:
            return "sender"
        if a.kind == ORIGIN:
            return "sender"
        return None
