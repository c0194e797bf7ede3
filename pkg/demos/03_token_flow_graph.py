"""Build a token flow graph, look at its labels and data edges, and export it as Graphviz."""

# %%
from tokenflow.lifter.core import Budget
from tokenflow.pipeline import lift_contract, tfg_from_lifted
from tokenflow.semantics.templates import load_template_db
from tokenflow.testing import fixtures as F

db = load_template_db()
fx = F.ulme()
lifted = lift_contract(fx.code, contract=fx.address, resolver=fx.resolver, db=db, budget=Budget())
tfg = tfg_from_lifted(lifted, db, fx.resolver, fx.address)

# %% token actions attached to call nodes (unlabeled nodes are candidates for expansion)
for n, node in tfg.nodes.items():
    print(f"{n:>18} {node.label:<26} {tfg.T.get(n, '')}")

# %% data edges: the balance read feeds the amount of the second swap
for e in sorted(tfg.df, key=str):
    print(e)

# %% Graphviz text; render with `dot -Tsvg`
print(tfg.to_dot()[:400], "...")
