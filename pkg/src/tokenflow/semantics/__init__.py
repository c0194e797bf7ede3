"""Token-action semantics for call sites."""

from tokenflow.semantics.actions import Amount, TokenAction, classify_call, classify_entry, infer_swap_pairs
from tokenflow.semantics.templates import DbFormatError, SignatureTemplate, TemplateDB, load_template_db

__all__ = [
    "Amount",
    "DbFormatError",
    "SignatureTemplate",
    "TemplateDB",
    "TokenAction",
    "classify_call",
    "classify_entry",
    "infer_swap_pairs",
    "load_template_db",
]
