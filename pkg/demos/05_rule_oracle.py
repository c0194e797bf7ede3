"""Cross-check the rule engine against an exhaustive matcher on random labeled graphs."""

# %%
import random
from collections import Counter

from tokenflow.detector import detect
from tokenflow.detector.sigma import Sigma
from tokenflow.testing.oracle import brute_force
from tokenflow.testing.randgraph import SUBJECT, random_tfg

rng = random.Random(1)
seen = Counter()
for _ in range(300):
    tfg = random_tfg(rng)
    got, _ = detect(tfg, Sigma(SUBJECT))
    want = brute_force(tfg, SUBJECT)
    assert {d.key() for d in got} == {d.key() for d in want}
    seen.update((d.kind, d.rule, d.confidence) for d in got)
print(seen)
