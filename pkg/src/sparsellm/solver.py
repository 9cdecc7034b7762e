"""Global pruning of FFN blocks by alternating closed-form updates.

Each FFN block is relaxed into penalty form over auxiliary copies of
its intermediates: the hidden activation ``a``, the up-projection
output ``z``, and (for gated blocks) the gate output ``s``.  One epoch
re-derives weight targets from the auxiliaries via cached pseudo-
inverses, prunes them with the layer-wise solver, then minimizes the
penalty exactly in ``a``, ``z`` and ``s`` in turn.  Every non-FFN dense
layer is pruned with the purely local objective, and ``omega_mode``
switches FFN blocks between the coupled (global) solve and independent
local solves.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import evalkit, kernels, localprune, numkit
from .errors import ConfigError, NumericalError
from .localprune import Mask, Pattern, SemiStructured, Unstructured
from .netmodel import (
    DENSE_LOCAL,
    FFN_GATED,
    FFN_RELU,
    BlockRecord,
    BlockSpec,
    CalibrationSet,
    NetworkSpec,
    dense_apply,
    forward,
    forward_record,
)

log = logging.getLogger(__name__)

OMEGA_MODES = ("global", "local")
OUTPUT_UPDATE_MODES = ("exact", "paper")
GATE_BRACKET_BASE = 8.0


@dataclass(frozen=True)
class PruneConfig:
    pattern: Pattern = Unstructured(0.5)
    criterion: str = "magnitude"
    alpha: float = 0.1
    beta: float = 0.1
    epochs: int = 4
    damp: float = 0.01
    omega_mode: str = "global"
    omega_overrides: dict = field(default_factory=dict)
    layer_fraction: float = 1.0
    seed: int = 0
    output_update_mode: str = "exact"
    threads: int = 1

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError(f"alpha and beta must be > 0, got {self.alpha}, {self.beta}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.damp < 0:
            raise ConfigError(f"damp must be >= 0, got {self.damp}")
        if self.omega_mode not in OMEGA_MODES:
            raise ConfigError(f"omega_mode must be one of {OMEGA_MODES}, got {self.omega_mode!r}")
        if self.criterion not in localprune.CRITERIA:
            raise ConfigError(f"criterion must be one of {localprune.CRITERIA}, got {self.criterion!r}")
        if self.output_update_mode not in OUTPUT_UPDATE_MODES:
            raise ConfigError(
                f"output_update_mode must be one of {OUTPUT_UPDATE_MODES}, got {self.output_update_mode!r}")
        if not (0.0 <= self.layer_fraction <= 1.0):
            raise ConfigError(f"layer_fraction must be in [0, 1], got {self.layer_fraction}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        for idx, mode in self.omega_overrides.items():
            if mode not in OMEGA_MODES:
                raise ConfigError(f"omega override for block {idx} must be one of {OMEGA_MODES}")

    def omega_for(self, block_index: int) -> str:
        return self.omega_overrides.get(block_index, self.omega_mode)


@dataclass
class BlockState:
    """Auxiliary variables and caches for one FFN block solve."""

    kind: str
    a: np.ndarray                 # auxiliary hidden activation
    z: np.ndarray                 # auxiliary up-projection output
    s: np.ndarray | None          # auxiliary gate output (gated only)
    a_pre_in: np.ndarray          # block input, fixed
    z_pre_out: np.ndarray         # dense down-projection output, fixed
    pinv_a_pre: np.ndarray        # cached pseudo-inverse of the block input
    weights: dict[str, np.ndarray]
    biases: dict[str, np.ndarray | None]
    masks: dict[str, Mask] = field(default_factory=dict)
    layer_errors: dict[str, float] = field(default_factory=dict)

    def phi(self) -> np.ndarray:
        if self.kind == FFN_RELU:
            return numkit.relu(self.z)
        return numkit.silu(self.s) * self.z


def init_block_state(block: BlockSpec, a_pre_in: np.ndarray,
                     z_pre_out: np.ndarray) -> BlockState:
    """Auxiliaries start at the dense model's intermediate values."""
    if block.kind not in (FFN_RELU, FFN_GATED):
        raise ConfigError(f"global solve applies to FFN blocks, got {block.kind!r}")
    biases = {k: block.bias(k) for k in block.weight_keys()}
    z_pre = dense_apply(block.weights["w_up"], a_pre_in, biases["w_up"])
    if block.kind == FFN_GATED:
        s_pre = dense_apply(block.weights["w_gate"], a_pre_in, biases["w_gate"])
        a0 = numkit.silu(s_pre) * z_pre
        s0 = s_pre.copy()
    else:
        s0 = None
        a0 = numkit.relu(z_pre)
    return BlockState(
        kind=block.kind,
        a=a0,
        z=z_pre.copy(),
        s=s0,
        a_pre_in=a_pre_in,
        z_pre_out=z_pre_out,
        pinv_a_pre=numkit.pinv(a_pre_in),
        weights=dict(block.weights),
        biases=biases,
    )


def _sumsq(d: np.ndarray) -> float:
    return float(np.sum(d * d))


def block_objective(state: BlockState, cfg: PruneConfig) -> float:
    """Penalty value of the current (weights, a, z, s) configuration."""
    pred_out = dense_apply(state.weights["w_down"], state.a, state.biases["w_down"])
    pred_up = dense_apply(state.weights["w_up"], state.a_pre_in, state.biases["w_up"])
    obj = (cfg.alpha * _sumsq(state.z_pre_out - pred_out)
           + cfg.beta * _sumsq(state.a - state.phi())
           + cfg.alpha * _sumsq(state.z - pred_up))
    if state.kind == FFN_GATED:
        pred_gate = dense_apply(state.weights["w_gate"], state.a_pre_in,
                                state.biases["w_gate"])
        obj += cfg.alpha * _sumsq(state.s - pred_gate)
    return obj


def _keeps_everything(pattern: Pattern) -> bool:
    if isinstance(pattern, Unstructured):
        return pattern.fraction == 0.0
    return isinstance(pattern, SemiStructured) and pattern.n == pattern.m


def prune_weights_step(state: BlockState, cfg: PruneConfig) -> BlockState:
    """Re-derive weight targets from the auxiliaries and prune them.

    Up/gate targets come from the cached input pseudo-inverse; the down
    target uses a fresh pseudo-inverse of the current hidden auxiliary.
    Pruning nothing is the identity: masks are all-ones and the current
    weights are kept untouched.
    """
    if _keeps_everything(cfg.pattern):
        for key in state.weights:
            state.masks[key] = Mask(np.ones(state.weights[key].shape, dtype=bool),
                                    cfg.pattern)
            state.layer_errors[key] = 0.0
        return state

    def subtract_bias(target: np.ndarray, key: str) -> np.ndarray:
        b = state.biases[key]
        return target if b is None else target - b[:, None]

    t_up = subtract_bias(state.z, "w_up") @ state.pinv_a_pre
    targets = {"w_up": (t_up, state.a_pre_in)}
    if state.kind == FFN_GATED:
        t_gate = subtract_bias(state.s, "w_gate") @ state.pinv_a_pre
        targets["w_gate"] = (t_gate, state.a_pre_in)
    t_down = subtract_bias(state.z_pre_out, "w_down") @ numkit.pinv(state.a)
    targets["w_down"] = (t_down, state.a)

    for key, (target, calib_in) in targets.items():
        mask, w_hat, err = localprune.prune_layer_local(
            target, calib_in, cfg.pattern, cfg.criterion, cfg.damp)
        state.masks[key] = mask
        state.weights[key] = w_hat
        state.layer_errors[key] = err
    return state


def update_activation(state: BlockState, cfg: PruneConfig) -> BlockState:
    """Exact ridge-style minimizer of the penalty in the hidden activation."""
    w_down = state.weights["w_down"]
    target = state.z_pre_out
    b = state.biases["w_down"]
    if b is not None:
        target = target - b[:, None]
    rhs = cfg.alpha * (w_down.T @ target) + cfg.beta * state.phi()
    state.a = numkit.spd_solve(w_down, cfg.alpha, cfg.beta, rhs)
    return state


def _up_projection(state: BlockState) -> np.ndarray:
    return dense_apply(state.weights["w_up"], state.a_pre_in, state.biases["w_up"])


def update_output_relu(state: BlockState, cfg: PruneConfig) -> BlockState:
    """Per-entry two-branch update of the up-projection auxiliary."""
    c = _up_projection(state)
    state.z = kernels.relu_branch_update(
        c, state.a, cfg.alpha, cfg.beta, exact=cfg.output_update_mode == "exact")
    return state


def update_output_gated(state: BlockState, cfg: PruneConfig) -> BlockState:
    """Per-entry stationary point of the gated quadratic in z."""
    c = _up_projection(state)
    g = numkit.silu(state.s)
    state.z = kernels.gated_output_update(c, g, state.a, cfg.alpha, cfg.beta)
    return state


def update_gate(state: BlockState, cfg: PruneConfig) -> BlockState:
    """Per-entry bracketed minimization of the gate auxiliary.

    The refined minimizer replaces the incumbent entry only when it does
    not increase that entry's loss, so the step never ascends.
    """
    w_e = dense_apply(state.weights["w_gate"], state.a_pre_in, state.biases["w_gate"])
    hw = GATE_BRACKET_BASE + np.abs(w_e)
    s_new = kernels.gate_minimize(state.a, state.z, w_e, cfg.alpha, cfg.beta, hw)

    def entry_loss(s):
        r = state.a - numkit.silu(s) * state.z
        d = s - w_e
        return cfg.beta * r * r + cfg.alpha * d * d

    state.s = np.where(entry_loss(s_new) <= entry_loss(state.s), s_new, state.s)
    return state


@dataclass
class BlockSolveResult:
    weights: dict[str, np.ndarray]
    masks: dict[str, Mask]
    layer_errors: dict[str, float]
    trace: list[float]


def prune_block_global(block: BlockSpec, a_pre_in: np.ndarray,
                       z_pre_out: np.ndarray, cfg: PruneConfig,
                       step_hook=None) -> BlockSolveResult:
    """Run the alternating solve for one FFN block.

    ``step_hook(step_name, objective)`` is invoked after every substep
    when provided; the per-epoch trace records the objective at the end
    of each epoch.
    """
    state = init_block_state(block, a_pre_in, z_pre_out)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        steps = [("weights", prune_weights_step), ("activation", update_activation)]
        if state.kind == FFN_RELU:
            steps.append(("output", update_output_relu))
        else:
            steps.append(("output", update_output_gated))
            steps.append(("gate", update_gate))
        for name, fn in steps:
            fn(state, cfg)
            if step_hook is not None:
                step_hook(name, block_objective(state, cfg))
        obj = block_objective(state, cfg)
        if not np.isfinite(obj):
            raise NumericalError(
                f"non-finite block objective in epoch {epoch} after step "
                f"{steps[-1][0]}")
        trace.append(obj)
        log.debug("epoch %d objective %.6e", epoch, obj)
    return BlockSolveResult(dict(state.weights), dict(state.masks),
                            dict(state.layer_errors), trace)


def _prune_block_local(block: BlockSpec, rec: BlockRecord,
                       cfg: PruneConfig) -> BlockSolveResult:
    """Independent layer-wise pruning of every dense layer in a block."""
    inputs = {"w": rec.x, "w_up": rec.x, "w_gate": rec.x, "w_down": rec.hidden}
    weights, masks, errors = {}, {}, {}
    for key in block.weight_keys():
        mask, w_hat, err = localprune.prune_layer_local(
            block.weights[key], inputs[key], cfg.pattern, cfg.criterion, cfg.damp)
        weights[key] = w_hat
        masks[key] = mask
        errors[key] = err
    return BlockSolveResult(weights, masks, errors, [])


def _solve_block(index: int, block: BlockSpec, rec: BlockRecord,
                 cfg: PruneConfig, prune: bool):
    start = time.perf_counter()
    if not prune:
        result = BlockSolveResult(dict(block.weights), {}, {}, [])
        mode = "skipped"
    elif block.kind == DENSE_LOCAL or cfg.omega_for(index) == "local":
        result = _prune_block_local(block, rec, cfg)
        mode = "local"
    else:
        result = prune_block_global(block, rec.x, rec.out, cfg)
        mode = "global"
    elapsed = time.perf_counter() - start
    log.info("block %d (%s, %s) done in %.3fs", index, block.kind, mode, elapsed)
    return result, mode, elapsed


def prune_network(net: NetworkSpec, calib: CalibrationSet,
                  cfg: PruneConfig) -> tuple[NetworkSpec, "evalkit.PruneReport"]:
    """Prune a network against one dense-model recording.

    Every block consumes the dense model's recorded activations, so
    block solves are independent and may run on a thread pool; results
    do not depend on the schedule.
    """
    t0 = time.perf_counter()
    _, recording = forward_record(net, calib.x)
    n_blocks = len(net.blocks)
    n_prune = int(np.floor(cfg.layer_fraction * n_blocks + 0.5))

    tasks = [(i, net.blocks[i], recording.blocks[i], cfg, i < n_prune)
             for i in range(n_blocks)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(lambda args: _solve_block(*args), tasks))
    else:
        outcomes = [_solve_block(*args) for args in tasks]

    pruned_blocks = []
    block_reports = []
    for i, (result, mode, elapsed) in enumerate(outcomes):
        src = net.blocks[i]
        pruned_blocks.append(BlockSpec(src.kind, dict(result.weights),
                                       dict(src.biases), dict(src.dtypes)))
        block_reports.append(evalkit.BlockReport(
            index=i,
            kind=src.kind,
            mode=mode,
            layer_errors=result.layer_errors,
            trace=list(result.trace),
            sparsity={k: m.zero_fraction() for k, m in result.masks.items()},
            pattern_violations={k: m.violations() for k, m in result.masks.items()},
            wall_time_s=elapsed,
        ))

    pruned_net = NetworkSpec(pruned_blocks, net.input_dim)
    pruned_out = forward(pruned_net, calib.x)
    global_mse = evalkit.global_output_error(calib.y_dense, pruned_out)
    nonzero = sum(int(np.count_nonzero(b.weights[k])) for b in pruned_blocks
                  for k in b.weight_keys())
    numel = sum(b.weights[k].size for b in pruned_blocks for k in b.weight_keys())
    report = evalkit.assemble_report(
        cfg=cfg,
        blocks=block_reports,
        global_mse=global_mse,
        total_nonzero_fraction=nonzero / numel,
        total_wall_time_s=time.perf_counter() - t0,
    )
    return pruned_net, report
