"""Watch a scripted chain for new contracts and alert on the attack among them."""

# %%
import io
import threading

from tokenflow.chain import ChainEndpoint, RpcClient
from tokenflow.config import Config
from tokenflow.monitor import Monitor
from tokenflow.testing import fixtures as F
from tokenflow.testing.rpcserver import ScriptedRpcServer, deployment_chain

benign = [F.erc20, F.vault, F.arbitrage]
deps = [(0xC0DE000000000000000000000000000000000000 + i, benign[i % 3]()) for i in range(10)]
deps.insert(6, (F.ATTACKER, F.ups()))
chain = deployment_chain(deps, block_time=0.2)

# %% one block every 0.2 s; the node drops every request for half a second in the middle
out = io.StringIO()
with ScriptedRpcServer(chain) as srv:
    client = RpcClient(ChainEndpoint(srv.url, 56, timeout=2, max_retries=2, backoff=0.05))
    threading.Timer(0.6, chain.outage, args=(0.5,)).start()
    stats = Monitor(client, Config(chain_id=56, from_block=100, poll_interval=0.1, workers=4),
                    out=out).run(until_block=chain.last_number)

print(out.getvalue())
print(stats)
