"""Labeled corpus directories: ``<name>.hex`` code files with optional sidecars.

``<name>.expected`` lists the expected verdict, one ``KIND RULE`` pair per line
(an empty file means benign). ``<name>.state.json`` holds the chain state the
analysis may consult::

    {"address": "0x..", "code": {"0x..": "0x.."}, "storage": {"0x..": {"0x2": "0x.."}}}
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from tokenflow.evm.disasm import parse_hex
from tokenflow.resolver import FixtureResolver, Resolver


@dataclass
class CorpusCase:
    name: str
    path: Path
    code: bytes | None = None
    expected: frozenset[tuple[str, str]] | None = None
    address: int | None = None
    resolver: Resolver | None = None
    error: str | None = None


@dataclass
class CaseResult:
    name: str
    size: int
    verdict: frozenset[tuple[str, str]] | None
    expected: frozenset[tuple[str, str]] | None
    ms: float
    timings_ms: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def correct(self) -> bool | None:
        if self.expected is None or self.verdict is None:
            return None
        return self.verdict == self.expected


def parse_expected(text: str) -> frozenset[tuple[str, str]]:
    out = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line or line.lower() in ("none", "benign"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("DPM", "IPM"):
            raise ValueError(f"bad expected-verdict line {line!r}")
        out.add((parts[0], parts[1]))
    return frozenset(out)


def format_expected(expected: Iterable[tuple[str, str]]) -> str:
    lines = [f"{k} {r}" for k, r in sorted(expected)]
    return "\n".join(lines) + "\n" if lines else "none\n"


def _int(x: str | int) -> int:
    return x if isinstance(x, int) else int(x, 0)


def state_to_json(address: int, resolver: FixtureResolver) -> dict[str, Any]:
    return {
        "address": f"{address:#042x}",
        "code": {f"{a:#042x}": "0x" + c.hex() for a, c in sorted(resolver.code.items()) if a != address},
        "storage": {f"{a:#042x}": {hex(k): hex(v) for k, v in sorted(s.items())}
                    for a, s in sorted(resolver.storage.items())},
    }


def state_from_json(data: dict[str, Any], code: bytes) -> tuple[int | None, FixtureResolver]:
    address = _int(data["address"]) if data.get("address") else None
    r = FixtureResolver(
        code={_int(a): parse_hex(c) for a, c in (data.get("code") or {}).items()},
        storage={_int(a): {_int(k): _int(v) for k, v in s.items()} for a, s in (data.get("storage") or {}).items()},
    )
    if address is not None:
        r.code.setdefault(address, code)
    return address, r


def load_corpus(directory: str | Path) -> list[CorpusCase]:
    """Every ``*.hex`` file in ``directory``, sorted by name; unreadable ones carry an error."""
    root = Path(directory)
    cases = []
    for p in sorted(root.glob("*.hex")):
        case = CorpusCase(p.stem, p)
        try:
            case.code = parse_hex(p.read_text(encoding="utf-8"))
            exp = p.with_suffix(".expected")
            if exp.exists():
                case.expected = parse_expected(exp.read_text(encoding="utf-8"))
            st = p.with_name(p.stem + ".state.json")
            if st.exists():
                case.address, case.resolver = state_from_json(json.loads(st.read_text(encoding="utf-8")), case.code)
        except (OSError, ValueError, KeyError, UnicodeDecodeError) as exc:
            case.error = f"{type(exc).__name__}: {exc}"
        cases.append(case)
    return cases


def write_case(directory: str | Path, name: str, code: bytes, expected: Iterable[tuple[str, str]] | None = None,
               address: int | None = None, resolver: FixtureResolver | None = None) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{name}.hex"
    path.write_text("0x" + code.hex() + "\n", encoding="utf-8")
    if expected is not None:
        (root / f"{name}.expected").write_text(format_expected(expected), encoding="utf-8")
    if address is not None and resolver is not None:
        (root / f"{name}.state.json").write_text(json.dumps(state_to_json(address, resolver), indent=1),
                                                 encoding="utf-8")
    return path


def percentile(xs: list[float], q: float) -> float:
    """Nearest-rank percentile."""
    if not xs:
        return 0.0
    s = sorted(xs)
    k = max(0, math.ceil(q / 100 * len(s)) - 1)
    return s[k]


def summarize(results: list[CaseResult]) -> dict[str, Any]:
    """Case-level precision/recall (any detection counts as flagged) and timing distribution."""
    labeled = [r for r in results if r.expected is not None and r.verdict is not None]
    tp = sum(1 for r in labeled if r.expected and r.verdict)
    fp = sum(1 for r in labeled if not r.expected and r.verdict)
    fn = sum(1 for r in labeled if r.expected and not r.verdict)
    times = [r.ms for r in results if r.verdict is not None]
    sizes = [r.size for r in results if r.verdict is not None]
    out: dict[str, Any] = {
        "cases": len(results),
        "labeled": len(labeled),
        "errors": sum(1 for r in results if r.error),
        "exact": sum(1 for r in labeled if r.correct),
        "tp": tp, "fp": fp, "fn": fn,
        "precision": tp / (tp + fp) if tp + fp else None,
        "recall": tp / (tp + fn) if tp + fn else None,
        "mean_ms": statistics.fmean(times) if times else None,
        "p99_ms": percentile(times, 99) if times else None,
        "size_time_correlation": None,
        "size_time_exponent": None,
    }
    if len(times) >= 2 and len(set(sizes)) >= 2 and len(set(times)) >= 2:
        out["size_time_correlation"] = statistics.correlation(sizes, times)
        logs = [(math.log(s), math.log(t)) for s, t in zip(sizes, times) if s > 0 and t > 0]
        if len({a for a, _ in logs}) >= 2:
            out["size_time_exponent"] = statistics.linear_regression([a for a, _ in logs],
                                                                     [b for _, b in logs]).slope
    return out


def run_corpus(cases: list[CorpusCase], analyze: Callable[[CorpusCase], Any]) -> list[CaseResult]:
    """Analyze every readable case; ``analyze`` returns an AnalysisReport."""
    results = []
    for c in cases:
        if c.error or c.code is None:
            results.append(CaseResult(c.name, 0, None, c.expected, 0.0, error=c.error))
            continue
        rep = analyze(c)
        results.append(CaseResult(c.name, len(c.code), rep.verdict if not rep.error else None, c.expected,
                                  rep.total_ms, dict(rep.timings_ms), rep.error))
    return results


def _fmt_verdict(v: frozenset | None) -> str:
    if v is None:
        return "-"
    return ",".join(f"{k}:{r}" for k, r in sorted(v)) or "none"


def _fmt(x: float | None, spec: str) -> str:
    return "n/a" if x is None else format(x, spec)


def render_table(results: list[CaseResult], summary: dict[str, Any]) -> str:
    head = f"{'case':<28} {'bytes':>7} {'verdict':<18} {'expected':<18} {'ok':<4} {'ms':>9}  stages"
    lines = [head, "-" * len(head)]
    for r in results:
        ok = {True: "yes", False: "NO", None: "-"}[r.correct]
        stages = " ".join(f"{k}={v:.1f}" for k, v in r.timings_ms.items())
        if r.error:
            stages = f"error: {r.error}"
        lines.append(f"{r.name:<28} {r.size:>7} {_fmt_verdict(r.verdict):<18} {_fmt_verdict(r.expected):<18} "
                     f"{ok:<4} {r.ms:>9.1f}  {stages}")
    s = summary
    lines.append("")
    lines.append(f"cases={s['cases']} labeled={s['labeled']} exact={s['exact']} errors={s['errors']} "
                 f"tp={s['tp']} fp={s['fp']} fn={s['fn']} precision={_fmt(s['precision'], '.3f')} "
                 f"recall={_fmt(s['recall'], '.3f')}")
    lines.append(f"time mean={_fmt(s['mean_ms'], '.1f')}ms p99={_fmt(s['p99_ms'], '.1f')}ms "
                 f"size/time correlation={_fmt(s['size_time_correlation'], '.3f')} "
                 f"log-log slope={_fmt(s['size_time_exponent'], '.2f')}")
    return "\n".join(lines)
