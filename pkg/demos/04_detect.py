"""Run the full detector on the bundled attack and benign fixtures."""

# %%
from tokenflow.config import Config
from tokenflow.detector.analyze import analyze_contract
from tokenflow.testing import fixtures as F

for make in F.ATTACKS + F.BENIGN:
    fx = make()
    rep = analyze_contract(fx.code, Config(), fx.resolver, address=fx.address)
    print(f"{fx.name:<22} expected={sorted(fx.expected)} got={sorted(rep.verdict)}")

# %% a report in detail: witness nodes, victim, token pair and confidence
fx = F.ulme()
rep = analyze_contract(fx.code, Config(), fx.resolver, address=fx.address)
print(rep.to_text())
print(rep.stats["expanded"])

# %% without cross-contract expansion the buyMiner call stays opaque and nothing is found
print(analyze_contract(fx.code, Config(expand=False), fx.resolver, address=fx.address).verdict)
