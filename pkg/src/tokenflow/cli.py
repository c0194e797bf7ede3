"""Command line: ``tokenflow analyze|monitor|corpus``.

Exit codes of ``analyze``: 0 no detection, 2 detection(s), 1 analysis error,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import threading
from pathlib import Path
from typing import Any, Sequence, TextIO

from tokenflow.chain import ChainEndpoint, RpcClient
from tokenflow.config import Config, ConfigError, load_config
from tokenflow.corpus import load_corpus, render_table, run_corpus, state_from_json, summarize
from tokenflow.detector.analyze import analyze_contract
from tokenflow.evm.disasm import parse_hex
from tokenflow.resolver import CachingResolver
from tokenflow.semantics.templates import load_template_db

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_DETECTED = 2
EXIT_USAGE = 64

_ADDRESS = re.compile(r"^0x[0-9a-fA-F]{40}$")

log = logging.getLogger("tokenflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which collides with "detected"
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--rpc-url")
    p.add_argument("--depth", type=int, dest="depth_limit")
    p.add_argument("--timeout-secs", type=float)
    p.add_argument("--path-cap", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--templates")
    p.add_argument("--output", choices=("json", "text"))
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = _Parser(prog="tokenflow", description="Static detection of price-manipulation attack contracts.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    a = sub.add_parser("analyze", parents=[common], help="analyze one contract")
    a.add_argument("target", help="file with hex runtime code, or a 0x-prefixed 20-byte address")
    a.add_argument("--address", help="address the code is deployed at (for file targets)")
    a.add_argument("--state", help="chain-state JSON for file targets (default: <name>.state.json if present)")
    m = sub.add_parser("monitor", parents=[common], help="watch new blocks and alert on attack contracts")
    m.add_argument("--from-block", type=lambda s: int(s, 0))
    m.add_argument("--dedup-by-codehash", action="store_true", default=None)
    m.add_argument("--poll-interval", type=float)
    m.add_argument("--until-block", type=lambda s: int(s, 0), help="stop after this block")
    m.add_argument("--trace-internal", action="store_true", default=None,
                   help="also analyze contracts created by contracts (needs trace_block)")
    c = sub.add_parser("corpus", parents=[common], help="analyze a labeled directory of hex files")
    c.add_argument("dir")
    return p


_OVERRIDES = ("rpc_url", "depth_limit", "timeout_secs", "path_cap", "workers", "templates", "output",
              "from_block", "dedup_by_codehash", "poll_interval", "trace_internal")


def config_from_args(ns: argparse.Namespace) -> Config:
    overrides = {k: getattr(ns, k, None) for k in _OVERRIDES}
    try:
        return load_config(ns.config, overrides)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _client(config: Config) -> RpcClient:
    return RpcClient(ChainEndpoint(config.rpc_url, config.chain_id, config.request_timeout, config.max_retries,
                                   config.retry_backoff))


def _parse_address(text: str) -> int:
    if not _ADDRESS.match(text):
        raise UsageError(f"not a 20-byte address: {text!r}")
    return int(text, 16)


def cmd_analyze(ns: argparse.Namespace, config: Config, out: TextIO) -> int:
    target: bytes | int
    resolver = None
    address = _parse_address(ns.address) if ns.address else None
    if _ADDRESS.match(ns.target) and not Path(ns.target).exists():
        if not config.rpc_url:
            raise UsageError("address targets need --rpc-url, a config file entry or TOKENFLOW_RPC_URL")
        target = int(ns.target, 16)
    else:
        try:
            text = Path(ns.target).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise UsageError(f"cannot read {ns.target}: {exc}") from None
        try:
            target = parse_hex(text)
        except ValueError as exc:
            raise UsageError(f"{ns.target}: bad hex: {exc}") from None
        if not target:
            raise UsageError(f"{ns.target}: empty code")
        state = Path(ns.state) if ns.state else Path(ns.target).with_name(Path(ns.target).stem + ".state.json")
        if ns.state or state.exists():
            try:
                st_addr, resolver = state_from_json(json.loads(state.read_text(encoding="utf-8")), target)
            except (OSError, ValueError, KeyError) as exc:
                raise UsageError(f"bad state file {state}: {exc}") from None
            address = address if address is not None else st_addr
            if address is not None:
                resolver.code[address] = target
    if resolver is None and config.rpc_url:
        resolver = CachingResolver(_client(config))
    report = analyze_contract(target, config, resolver, address=address)
    out.write((report.to_json(indent=2) if config.output == "json" else report.to_text()) + "\n")
    if report.error:
        return EXIT_ERROR
    return EXIT_DETECTED if report.detections else EXIT_CLEAN


def cmd_monitor(ns: argparse.Namespace, config: Config, out: TextIO) -> int:
    from tokenflow.monitor import Monitor

    if not config.rpc_url:
        raise UsageError("monitor needs --rpc-url, a config file entry or TOKENFLOW_RPC_URL")
    stop = threading.Event()
    mon = Monitor(_client(config), config, out=out, stop=stop)
    try:
        stats = mon.run(until_block=ns.until_block)
    except KeyboardInterrupt:
        stop.set()
        stats = mon.stats
    log.info("monitor stopped: %s", stats)
    return EXIT_CLEAN


def cmd_corpus(ns: argparse.Namespace, config: Config, out: TextIO) -> int:
    root = Path(ns.dir)
    if not root.is_dir():
        raise UsageError(f"not a directory: {ns.dir}")
    db = load_template_db(config.templates)
    rpc = CachingResolver(_client(config)) if config.rpc_url else None
    cases = load_corpus(root)
    for c in cases:
        if c.error:
            log.warning("%s: %s", c.path, c.error)

    def one(case):
        return analyze_contract(case.code, config, case.resolver or rpc, db=db, address=case.address)

    results = run_corpus(cases, one)
    summary = summarize(results)
    if config.output == "json":
        doc: dict[str, Any] = {
            "cases": [{"name": r.name, "bytes": r.size, "error": r.error, "ms": round(r.ms, 3),
                       "verdict": None if r.verdict is None else sorted(map(list, r.verdict)),
                       "expected": None if r.expected is None else sorted(map(list, r.expected)),
                       "correct": r.correct, "timings_ms": {k: round(v, 3) for k, v in r.timings_ms.items()}}
                      for r in results],
            "summary": summary,
        }
        out.write(json.dumps(doc, indent=2) + "\n")
    else:
        out.write(render_table(results, summary) + "\n")
    return EXIT_CLEAN


_COMMANDS = {"analyze": cmd_analyze, "monitor": cmd_monitor, "corpus": cmd_corpus}


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), stream=sys.stderr,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        config = config_from_args(ns)
        return _COMMANDS[ns.cmd](ns, config, out)
    except UsageError as exc:
        print(f"tokenflow: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
