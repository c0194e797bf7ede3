"""Disassemble runtime code, recover the control-flow graph and split it into functions."""

# %%
from tokenflow.evm.cfg import build_cfg
from tokenflow.evm.disasm import disassemble, dump, reassemble
from tokenflow.evm.functions import detect_functions
from tokenflow.testing import fixtures as F

code = F.ups().code
instrs = disassemble(code)
print(len(code), "bytes,", len(instrs), "instructions")
print(dump(instrs[:12]))

# %% disassembly is lossless, even for data that is not valid code
assert reassemble(instrs) == code
assert reassemble(disassemble(bytes.fromhex("fe60"))) == bytes.fromhex("fe60")

# %% basic blocks and edges
cfg = build_cfg(instrs)
print(len(cfg.blocks), "blocks,", len(cfg.edges), "edges")

# %% one unit per dispatcher selector
for unit in detect_functions(cfg):
    print(unit)
