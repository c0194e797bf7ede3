"""Sensitive paths, detection rules and cross-contract expansion over token flow graphs."""

from __future__ import annotations

from tokenflow.detector.paths import DEFAULT_PATH_CAP, PathSet, filter_sensitive_paths
from tokenflow.detector.rules import DPM, IPM, Detection, evaluate
from tokenflow.detector.sigma import Sigma
from tokenflow.graph import TokenFlowGraph


def detect(tfg: TokenFlowGraph, sigma: Sigma, *, cap: int = DEFAULT_PATH_CAP) -> tuple[set[Detection], PathSet]:
    """Filter sensitive paths, then apply the rules on them."""
    paths = filter_sensitive_paths(tfg, sigma, cap=cap)
    return evaluate([p.nodes for p in paths.paths], tfg, sigma), paths


__all__ = ["DPM", "IPM", "Detection", "PathSet", "Sigma", "detect", "evaluate", "filter_sensitive_paths"]
