"""Pruning-quality metrics and structured run reports.

The report serializes to a single ``report.json`` (full-precision
numbers, stable key order) plus an optional ``trace.csv`` of per-epoch
block objectives for plotting.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numkit
from .errors import ConfigError, FormatError, ShapeError
from .localprune import Mask, Pattern, SemiStructured, Unstructured

REPORT_VERSION = 1


def global_output_error(dense_out, pruned_out) -> float:
    """Mean squared difference between two output matrices."""
    a = numkit.as_matrix(dense_out, "dense output")
    b = numkit.as_matrix(pruned_out, "pruned output")
    if a.shape != b.shape:
        raise ShapeError(f"output shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def mask_audit(mask: Mask) -> dict:
    """Zero fraction and declared-pattern validity of one mask."""
    return {
        "zero_fraction": mask.zero_fraction(),
        "violations": mask.violations(),
        "pattern_valid": mask.violations() == 0,
    }


def weight_sparsity(net) -> tuple[dict[str, float], float]:
    """Zero fraction per weight matrix and in aggregate (biases excluded)."""
    per = {}
    zeros = 0
    numel = 0
    for i, blk in enumerate(net.blocks):
        for key in blk.weight_keys():
            w = blk.weights[key]
            z = w.size - int(np.count_nonzero(w))
            per[f"block{i}.{key}"] = z / w.size
            zeros += z
            numel += w.size
    return per, zeros / numel


def pattern_violations(w, pattern: Pattern) -> int:
    """Violations of a declared pattern by the zero structure of weights."""
    w = numkit.as_matrix(w, "weights")
    return Mask(w != 0.0, pattern).violations()


def perplexity(logits, targets) -> float:
    """exp of the mean negative log-softmax probability of the targets."""
    logits = numkit.as_matrix(logits, "logits")
    targets = np.asarray(targets, dtype=np.intp).ravel()
    if targets.size == 0:
        raise ConfigError("targets must be nonempty")
    if targets.size != logits.shape[1]:
        raise ShapeError(
            f"targets length ({targets.size}) must match logits columns ({logits.shape[1]})")
    if targets.min() < 0 or targets.max() >= logits.shape[0]:
        raise ConfigError("target indices out of vocabulary range")
    m = logits.max(axis=0)
    lse = m + np.log(np.exp(logits - m[None, :]).sum(axis=0))
    nll = lse - logits[targets, np.arange(targets.size)]
    return float(np.exp(np.mean(nll)))


@dataclass
class BlockReport:
    index: int
    kind: str
    mode: str  # "global" | "local" | "skipped"
    layer_errors: dict[str, float]
    trace: list[float]
    sparsity: dict[str, float]
    pattern_violations: dict[str, int]
    wall_time_s: float


@dataclass
class PruneReport:
    format_version: int
    seed: int
    config: dict
    blocks: list[BlockReport]
    global_mse: float
    total_nonzero_fraction: float
    total_wall_time_s: float

    def validate(self) -> None:
        epochs = self.config.get("epochs")
        for blk in self.blocks:
            if blk.mode == "global" and len(blk.trace) != epochs:
                raise FormatError(
                    f"block {blk.index}: trace length {len(blk.trace)} != epochs {epochs}")
            if blk.mode != "global" and blk.trace:
                raise FormatError(
                    f"block {blk.index}: unexpected trace for mode {blk.mode!r}")


def pattern_to_dict(pattern: Pattern) -> dict:
    if isinstance(pattern, Unstructured):
        return {"kind": "unstructured", "fraction": pattern.fraction}
    return {"kind": "semi_structured", "n": pattern.n, "m": pattern.m}


def pattern_from_dict(d: dict) -> Pattern:
    if d.get("kind") == "unstructured":
        return Unstructured(float(d["fraction"]))
    if d.get("kind") == "semi_structured":
        return SemiStructured(int(d["n"]), int(d["m"]))
    raise FormatError(f"unknown pattern {d!r}")


def config_to_dict(cfg) -> dict:
    return {
        "pattern": pattern_to_dict(cfg.pattern),
        "criterion": cfg.criterion,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "epochs": cfg.epochs,
        "damp": cfg.damp,
        "omega_mode": cfg.omega_mode,
        "omega_overrides": {str(k): v for k, v in cfg.omega_overrides.items()},
        "layer_fraction": cfg.layer_fraction,
        "seed": cfg.seed,
        "output_update_mode": cfg.output_update_mode,
        "threads": cfg.threads,
    }


def assemble_report(cfg, blocks: list[BlockReport], global_mse: float,
                    total_nonzero_fraction: float,
                    total_wall_time_s: float) -> PruneReport:
    report = PruneReport(
        format_version=REPORT_VERSION,
        seed=cfg.seed,
        config=config_to_dict(cfg),
        blocks=blocks,
        global_mse=float(global_mse),
        total_nonzero_fraction=float(total_nonzero_fraction),
        total_wall_time_s=float(total_wall_time_s),
    )
    report.validate()
    return report


def report_to_dict(report: PruneReport) -> dict:
    return asdict(report)


def report_from_dict(d: dict) -> PruneReport:
    try:
        blocks = [BlockReport(**b) for b in d["blocks"]]
        report = PruneReport(
            format_version=int(d["format_version"]),
            seed=int(d["seed"]),
            config=dict(d["config"]),
            blocks=blocks,
            global_mse=d["global_mse"],
            total_nonzero_fraction=d["total_nonzero_fraction"],
            total_wall_time_s=d["total_wall_time_s"],
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed report: {exc}") from exc
    if report.format_version != REPORT_VERSION:
        raise FormatError(f"unsupported report version {report.format_version!r}")
    report.validate()
    return report


def write_report(report: PruneReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_to_dict(report), f, indent=2, sort_keys=True)
        f.write("\n")


def read_report(path) -> PruneReport:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"report not found: {path}")
    with open(path, encoding="utf-8") as f:
        return report_from_dict(json.load(f))


def write_trace_csv(report: PruneReport, path) -> None:
    """Flat (block, epoch, objective) rows for the globally pruned blocks."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["block,epoch,objective"]
    for blk in report.blocks:
        for epoch, obj in enumerate(blk.trace, start=1):
            lines.append(f"{blk.index},{epoch},{obj!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def strip_wall_time(d: dict) -> dict:
    """Report dict with timing fields removed (determinism comparisons)."""
    out = dict(d)
    out.pop("total_wall_time_s", None)
    out["blocks"] = [{k: v for k, v in b.items() if k != "wall_time_s"}
                     for b in out.get("blocks", [])]
    return out
