"""Lift code to register facts and read off every external call with its operands."""

# %%
from tokenflow.lifter.core import Budget
from tokenflow.pipeline import lift_contract
from tokenflow.semantics.templates import load_template_db
from tokenflow.testing import fixtures as F

db = load_template_db()
fx = F.ups()
lifted = lift_contract(fx.code, contract=fx.address, resolver=fx.resolver, db=db, budget=Budget())

# %% callee, selector and arguments; storage-held addresses are resolved through the fixture state
for cs in lifted.callsites:
    args = ", ".join(str(a) for a in cs.args)
    print(f"{cs.node_id:>12} {cs.call_kind:<10} {str(cs.callee):<52} {cs.signature or cs.selector}({args})")

# %% anything the lifter could not settle is reported, not dropped
print(lifted.diagnostics)
