"""JSON-RPC chain access: code and storage lookups, and an ordered stream of contract creations."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterator

import requests

from tokenflow.resolver import ResolverError

log = logging.getLogger(__name__)


class RpcError(ResolverError):
    """Transport or decode failure after retries, or a JSON-RPC error object."""


@dataclass(frozen=True)
class ChainEndpoint:
    url: str
    chain_id: int | None = None
    timeout: float = 10.0
    max_retries: int = 5
    backoff: float = 0.25

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must not be negative")
        if self.backoff < 0:
            raise ValueError("backoff must not be negative")


@dataclass(frozen=True)
class ContractCreation:
    address: int
    deployer: int | None
    block: int
    tx_hash: str
    code: bytes
    # block timestamp (chain clock) and local observation time, both in unix seconds
    block_time: float
    observed_at: float
    tx_index: int = 0


def _hex_int(x: Any) -> int:
    if isinstance(x, int):
        return x
    if not isinstance(x, str):
        raise RpcError(f"expected a hex quantity, got {x!r}")
    return int(x, 16)


def _hex_bytes(x: Any) -> bytes:
    if not isinstance(x, str) or not x.startswith("0x"):
        raise RpcError(f"expected hex data, got {x!r}")
    try:
        return bytes.fromhex(x[2:])
    except ValueError:
        raise RpcError(f"bad hex data {x[:20]!r}") from None


def _addr(x: int) -> str:
    return f"{x:#042x}"


class RpcClient:
    """Blocking JSON-RPC 2.0 client with retries; also usable as an analysis resolver."""

    def __init__(self, endpoint: ChainEndpoint, session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.endpoint = endpoint
        self.session = session or requests.Session()
        self.sleep = sleep
        self.retries = 0
        self.requests = 0
        self._id = 0
        self._lock = threading.Lock()

    def call(self, method: str, params: list[Any]) -> Any:
        with self._lock:
            self._id += 1
            rid = self._id
        body = {"jsonrpc": "2.0", "id": rid, "method": method, "params": params}
        last: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt:
                with self._lock:
                    self.retries += 1
                log.info("retrying %s (attempt %d) after %s", method, attempt + 1, last)
                self.sleep(min(self.endpoint.backoff * 2 ** (attempt - 1), 5.0))
            try:
                with self._lock:
                    self.requests += 1
                resp = self.session.post(self.endpoint.url, json=body, timeout=self.endpoint.timeout)
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = RpcError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise RpcError(f"{method}: HTTP {resp.status_code}")
                data = resp.json()
            except requests.RequestException as exc:
                last = exc
                continue
            except ValueError as exc:  # undecodable body counts as transient
                last = exc
                continue
            if not isinstance(data, dict):
                raise RpcError(f"{method}: malformed response")
            if data.get("error") is not None:
                raise RpcError(f"{method}: {data['error']}")
            return data.get("result")
        raise RpcError(f"{method}: giving up after {self.endpoint.max_retries} retries: {last}")

    # -- queries -----------------------------------------------------------

    def block_number(self) -> int:
        return _hex_int(self.call("eth_blockNumber", []))

    def get_block(self, number: int) -> dict | None:
        return self.call("eth_getBlockByNumber", [hex(number), True])

    def get_receipt(self, tx_hash: str) -> dict | None:
        return self.call("eth_getTransactionReceipt", [tx_hash])

    def fetch_code(self, address: int, block: str = "latest") -> bytes:
        return _hex_bytes(self.call("eth_getCode", [_addr(address), block]))

    def fetch_storage(self, address: int, slot: int, block: str = "latest") -> int:
        word = self.call("eth_getStorageAt", [_addr(address), hex(slot), block])
        return _hex_int(word) if word not in (None, "0x") else 0

    def trace_block(self, number: int) -> list[dict]:
        return self.call("trace_block", [hex(number)]) or []

    # resolver interface
    def get_code(self, address: int) -> bytes:
        return self.fetch_code(address)

    def get_storage(self, address: int, slot: int) -> int:
        return self.fetch_storage(address, slot)


def creations_in_block(client: RpcClient, number: int, *, trace_internal: bool = False) -> list[ContractCreation]:
    """All creations in one block, in transaction-index order. Raises RpcError on any failure."""
    block = client.get_block(number)
    if block is None:
        raise RpcError(f"block {number} not available")
    block_time = float(_hex_int(block.get("timestamp", "0x0")))
    out: list[ContractCreation] = []
    seen: set[int] = set()
    txs = sorted(block.get("transactions") or [], key=lambda t: _hex_int(t.get("transactionIndex", "0x0")))
    for tx in txs:
        if tx.get("to") is not None:
            continue
        receipt = client.get_receipt(tx["hash"])
        if receipt is None or not receipt.get("contractAddress"):
            continue
        addr = _hex_int(receipt["contractAddress"])
        if str(receipt.get("status", "0x1")) == "0x0":
            continue
        code = client.fetch_code(addr)
        seen.add(addr)
        out.append(ContractCreation(addr, _hex_int(tx["from"]) if tx.get("from") else None, number, tx["hash"],
                                    code, block_time, time.time(), _hex_int(tx.get("transactionIndex", "0x0"))))
    if trace_internal:
        for tr in client.trace_block(number):
            if tr.get("type") != "create" or not (tr.get("result") or {}).get("address"):
                continue
            addr = _hex_int(tr["result"]["address"])
            if addr in seen:
                continue
            seen.add(addr)
            frm = (tr.get("action") or {}).get("from")
            out.append(ContractCreation(addr, _hex_int(frm) if frm else None, number, tr.get("transactionHash", ""),
                                        client.fetch_code(addr), block_time, time.time(),
                                        _hex_int(tr.get("transactionPosition", 0))))
    return out


def stream_creations(
    client: RpcClient,
    from_block: int | None = None,
    poll_interval: float = 3.0,
    *,
    stop: threading.Event | None = None,
    until_block: int | None = None,
    trace_internal: bool = False,
    sleep: Callable[[float], None] | None = None,
) -> Iterator[ContractCreation]:
    """Yield every creation exactly once, in block order, polling for new blocks.

    A block is yielded only after all of its creations were fetched, and the
    cursor advances one block at a time, so an RPC failure pauses the stream on
    that block instead of skipping it. Stops after ``until_block`` or when
    ``stop`` is set.
    """
    stop = stop or threading.Event()
    wait = sleep or stop.wait
    cursor = from_block
    while not stop.is_set():
        try:
            head = client.block_number()
        except RpcError as exc:
            log.warning("block number unavailable: %s; retrying", exc)
            wait(poll_interval)
            continue
        if cursor is None:
            cursor = head
        log.info("poll: head=%d next=%d", head, cursor)
        while cursor <= head and not stop.is_set():
            if until_block is not None and cursor > until_block:
                return
            try:
                batch = creations_in_block(client, cursor, trace_internal=trace_internal)
            except RpcError as exc:
                log.warning("block %d: %s; will retry", cursor, exc)
                break
            yield from batch
            cursor += 1
        if until_block is not None and cursor > until_block:
            return
        wait(poll_interval)
