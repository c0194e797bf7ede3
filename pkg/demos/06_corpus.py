"""Write a labeled corpus to disk and score it, as `tokenflow corpus DIR` does."""

# %%
import tempfile

from tokenflow.cli import main
from tokenflow.corpus import write_case
from tokenflow.testing import fixtures as F

root = tempfile.mkdtemp(prefix="tokenflow-corpus-")
for fx in F.corpus(F.Options()):
    write_case(root, fx.name, fx.code, fx.expected, fx.address, fx.resolver)
for n in (4, 8, 16, 32):
    fx = F.scaled_attack(n)
    write_case(root, fx.name, fx.code, fx.expected, fx.address, fx.resolver)

# %% per-case verdicts, precision/recall, timing and the size/time relation
main(["corpus", "--output", "text", root])
