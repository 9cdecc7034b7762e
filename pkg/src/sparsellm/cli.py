"""Command-line interface: ``prune``, ``eval`` and ``fixture`` subcommands.

Configuration comes from defaults, an optional JSON config file, and
command-line flags, in increasing precedence.  ``SPARSELLM_LOG``
controls log verbosity.  All subcommands exit nonzero with a diagnostic
on any failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evalkit, netmodel, solver
from .errors import ConfigError, SparseLLMError
from .localprune import SemiStructured, Unstructured

log = logging.getLogger(__name__)

_DEFAULTS = {
    "alpha": 0.1,
    "beta": 0.1,
    "epochs": 4,
    "samples": 64,
    "sparsity": 0.5,
    "criterion": "magnitude",
    "omega": "global",
    "layer_fraction": 1.0,
    "damp": 0.01,
    "output_update": "exact",
    "seed": 0,
    "threads": 1,
}
_CONFIG_KEYS = set(_DEFAULTS) | {"model", "fixture", "calib", "nm", "out"}
_FIXTURE_KEYS = ("seed", "depth", "dim", "kind")


@dataclass
class RunConfig:
    prune: solver.PruneConfig
    model_path: str | None
    fixture: dict | None
    calib_path: str | None
    samples: int | None
    out: str | None

    def describe_sources(self) -> dict:
        return {
            "model_source": "container" if self.model_path else "fixture",
            "fixture": self.fixture,
            "calib_source": "container" if self.calib_path else "generated",
            "samples": self.samples,
        }


def parse_fixture_spec(value) -> dict:
    """Normalize ``seed=..,depth=..,dim=..,kind=..`` (or a dict) to a spec."""
    if isinstance(value, dict):
        spec = {str(k): v for k, v in value.items()}
    else:
        spec = {}
        for item in str(value).split(","):
            if not item:
                continue
            if "=" not in item:
                raise ConfigError(f"fixture spec item {item!r} is not key=value")
            key, val = item.split("=", 1)
            spec[key] = val
    for key in spec:
        if key not in _FIXTURE_KEYS:
            raise ConfigError(f"unknown fixture key {key!r}")
    try:
        return {
            "seed": int(spec.get("seed", 0)),
            "depth": int(spec.get("depth", 3)),
            "dim": int(spec.get("dim", 64)),
            "kind": str(spec.get("kind", "mixed")),
        }
    except ValueError as exc:
        raise ConfigError(f"bad fixture spec value: {exc}") from exc


def _parse_nm(text: str) -> SemiStructured:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"--nm expects N:M, got {text!r}")
    try:
        return SemiStructured(int(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise ConfigError(f"bad --nm value {text!r}") from exc


def _load_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    for key in data:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    return data


def resolve_config(args, need_model: bool = True) -> RunConfig:
    """Merge defaults, config file and flags; flags win."""
    file_cfg = _load_config_file(args.config) if args.config else {}

    def pick(key, flag_value):
        if flag_value is not None:
            return flag_value, True
        if key in file_cfg:
            return file_cfg[key], True
        return _DEFAULTS.get(key), False

    model_path, has_model = pick("model", args.model)
    fixture_raw, has_fixture = pick("fixture", args.fixture)
    calib_path, has_calib = pick("calib", args.calib)
    samples, has_samples = pick("samples", args.samples)
    sparsity, has_sparsity = pick("sparsity", args.sparsity)
    nm, has_nm = pick("nm", args.nm)

    if need_model:
        if has_model and has_fixture:
            raise ConfigError("give exactly one of --model and --fixture, not both")
        if not has_model and not has_fixture:
            raise ConfigError("one of --model or --fixture is required")
    if has_calib and has_samples:
        raise ConfigError("give exactly one of --calib and --samples, not both")
    if has_sparsity and has_nm:
        raise ConfigError("give exactly one of --sparsity and --nm, not both")

    if has_nm:
        pattern = nm if isinstance(nm, SemiStructured) else _parse_nm(str(nm))
    else:
        try:
            pattern = Unstructured(float(sparsity))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad sparsity value {sparsity!r}") from exc

    fixture = parse_fixture_spec(fixture_raw) if has_fixture else None

    def num(key, value, cast, low=None, high=None):
        try:
            v = cast(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
        if (low is not None and v < low) or (high is not None and v > high):
            raise ConfigError(f"{key} out of range: {v}")
        return v

    prune_cfg = solver.PruneConfig(
        pattern=pattern,
        criterion=str(pick("criterion", args.criterion)[0]),
        alpha=num("alpha", pick("alpha", args.alpha)[0], float),
        beta=num("beta", pick("beta", args.beta)[0], float),
        epochs=num("epochs", pick("epochs", args.epochs)[0], int, low=1),
        damp=num("damp", pick("damp", args.damp)[0], float, low=0.0),
        omega_mode=str(pick("omega", args.omega)[0]),
        layer_fraction=num("layer_fraction",
                           pick("layer_fraction", args.layer_fraction)[0],
                           float, low=0.0, high=1.0),
        seed=num("seed", pick("seed", args.seed)[0], int, low=0),
        output_update_mode=str(pick("output_update", args.output_update)[0]),
        threads=num("threads", pick("threads", args.threads)[0], int, low=1),
    )
    out, _ = pick("out", args.out)
    return RunConfig(
        prune=prune_cfg,
        model_path=str(model_path) if has_model else None,
        fixture=fixture,
        calib_path=str(calib_path) if has_calib else None,
        samples=None if has_calib else num("samples", samples, int, low=1),
        out=str(out) if out is not None else None,
    )


def _resolve_inputs(cfg: RunConfig):
    if cfg.model_path:
        net = netmodel.load_model(cfg.model_path)
    else:
        fx = cfg.fixture
        net, fixture_calib = netmodel.synthesize_fixture(
            fx["seed"], fx["depth"], fx["dim"], fx["kind"],
            samples=cfg.samples or _DEFAULTS["samples"])
    if cfg.calib_path:
        calib = netmodel.load_calibration(cfg.calib_path)
        if calib.x.shape[0] != net.input_dim:
            raise ConfigError(
                f"calibration X rows ({calib.x.shape[0]}) do not match model "
                f"input dim ({net.input_dim})")
        fresh = netmodel.forward(net, calib.x)
        if fresh.shape != calib.y_dense.shape:
            raise ConfigError("calibration y_dense shape does not match model output")
        return net, calib
    if cfg.model_path:
        rng = np.random.default_rng(cfg.prune.seed)
        x = rng.standard_normal((net.input_dim, cfg.samples))
        calib = netmodel.CalibrationSet(x, netmodel.forward(net, x))
    else:
        calib = fixture_calib
    return net, calib


def run_prune(cfg: RunConfig) -> int:
    if not cfg.out:
        raise ConfigError("--out is required for prune")
    net, calib = _resolve_inputs(cfg)
    pruned, report = solver.prune_network(net, calib, cfg.prune)
    out = Path(cfg.out)
    netmodel.save_model(pruned, out)
    netmodel.save_calibration(calib, out / "calib")

    # Metrics are recomputed from the round-tripped container so that a
    # later `eval` reproduces them exactly even for narrow storage dtypes.
    reloaded = netmodel.load_model(out)
    report.global_mse = evalkit.global_output_error(
        calib.y_dense, netmodel.forward(reloaded, calib.x))
    _, zero_fraction = evalkit.weight_sparsity(reloaded)
    report.total_nonzero_fraction = 1.0 - zero_fraction
    report.config["source"] = cfg.describe_sources()

    evalkit.write_report(report, out / "report.json")
    evalkit.write_trace_csv(report, out / "trace.csv")
    print(f"pruned model written to {out}")
    print(f"global output MSE: {report.global_mse!r}")
    print(f"nonzero weight fraction: {report.total_nonzero_fraction!r}")
    return 0


def run_eval(args) -> int:
    net = netmodel.load_model(args.model)
    calib = netmodel.load_calibration(args.calib)
    mse = evalkit.global_output_error(calib.y_dense, netmodel.forward(net, calib.x))
    per_tensor, aggregate = evalkit.weight_sparsity(net)
    result = {
        "global_mse": mse,
        "total_nonzero_fraction": 1.0 - aggregate,
        "sparsity": per_tensor,
    }

    report_path = Path(args.report) if args.report else Path(args.model) / "report.json"
    status = 0
    if report_path.is_file():
        report = evalkit.read_report(report_path)
        mismatches = []
        for blk in report.blocks:
            for key, stored in blk.sparsity.items():
                actual = per_tensor[f"block{blk.index}.{key}"]
                if stored != actual:
                    mismatches.append(
                        f"block{blk.index}.{key}: stored {stored!r}, actual {actual!r}")
        result["audit_ok"] = not mismatches
        result["report_global_mse"] = report.global_mse
        if mismatches:
            print(json.dumps(result, indent=2, sort_keys=True))
            for line in mismatches:
                print(f"audit mismatch: {line}", file=sys.stderr)
            return 1
    print(json.dumps(result, indent=2, sort_keys=True))
    return status


def run_fixture(cfg: RunConfig) -> int:
    if not cfg.out:
        raise ConfigError("--out is required for fixture")
    if cfg.fixture is None:
        raise ConfigError("--fixture spec is required")
    fx = cfg.fixture
    net, calib = netmodel.synthesize_fixture(
        fx["seed"], fx["depth"], fx["dim"], fx["kind"],
        samples=cfg.samples or _DEFAULTS["samples"])
    out = Path(cfg.out)
    netmodel.save_model(net, out)
    netmodel.save_calibration(calib, out / "calib")
    print(f"fixture model written to {out} (calibration in {out / 'calib'})")
    return 0


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--model", help="model container directory")
    p.add_argument("--fixture", help="fixture spec seed=..,depth=..,dim=..,kind=relu|gated|mixed")
    p.add_argument("--calib", help="calibration container directory")
    p.add_argument("--samples", type=int, help="calibration sample count (default 64)")
    p.add_argument("--sparsity", type=float, help="unstructured sparsity fraction")
    p.add_argument("--nm", help="semi-structured pattern N:M, e.g. 2:4")
    p.add_argument("--alpha", type=float, help="output-constraint weight (default 0.1)")
    p.add_argument("--beta", type=float, help="activation-constraint weight (default 0.1)")
    p.add_argument("--epochs", type=int, help="alternating epochs (default 4)")
    p.add_argument("--criterion", choices=["magnitude", "wanda"])
    p.add_argument("--omega", choices=["global", "local"])
    p.add_argument("--layer-fraction", dest="layer_fraction", type=float,
                   help="leading fraction of blocks to prune (default 1.0)")
    p.add_argument("--damp", type=float, help="reconstruction damping (default 0.01)")
    p.add_argument("--output-update", dest="output_update", choices=["exact", "paper"])
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsellm",
        description="Adaptive global pruning of layered networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_prune = sub.add_parser("prune", help="prune a model and write artifacts")
    _add_common_flags(p_prune)

    p_eval = sub.add_parser("eval", help="recompute metrics from saved artifacts")
    p_eval.add_argument("--model", required=True, help="pruned model container")
    p_eval.add_argument("--calib", required=True, help="calibration container")
    p_eval.add_argument("--report", help="report to audit (default <model>/report.json)")

    p_fix = sub.add_parser("fixture", help="synthesize and save a toy model")
    _add_common_flags(p_fix)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SPARSELLM_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "prune":
            return run_prune(resolve_config(args))
        if args.command == "eval":
            return run_eval(args)
        if args.command == "fixture":
            return run_fixture(resolve_config(args, need_model=False))
        raise ConfigError(f"unknown command {args.command!r}")
    except SparseLLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
