"""Composite-network description, forward recording, and container I/O.

A network is an ordered chain of blocks: plain dense layers (attention
stand-ins, always pruned locally) and FFN blocks in two flavours, a
ReLU up/down pair or a SiLU-gated up/gate/down triple.  Forward passes
record every intermediate so the pruning solvers can anchor their
objectives on the dense model's activations.

On disk a model is a directory: ``manifest.json`` plus one raw
little-endian row-major binary blob per tensor.  Calibration data uses
the same container with tensors ``X`` and ``y_dense``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkit
from .errors import FormatError, ShapeError

FORMAT_VERSION = 1

DENSE_LOCAL = "dense_local"
FFN_RELU = "ffn_relu"
FFN_GATED = "ffn_gated"

_WEIGHT_KEYS = {
    DENSE_LOCAL: ("w",),
    FFN_RELU: ("w_up", "w_down"),
    FFN_GATED: ("w_up", "w_gate", "w_down"),
}
_BIAS_FOR = {"w": "b", "w_up": "b_up", "w_gate": "b_gate", "w_down": "b_down"}
_DTYPES = {"f32": "<f4", "f64": "<f8"}


def dense_apply(w: np.ndarray, x: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    """Single dense layer; one shared arithmetic path for all callers."""
    z = w @ x
    if b is not None:
        z = z + b[:, None]
    return z


@dataclass
class BlockSpec:
    kind: str
    weights: dict[str, np.ndarray]
    biases: dict[str, np.ndarray] = field(default_factory=dict)
    dtypes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _WEIGHT_KEYS:
            raise FormatError(f"unknown block kind {self.kind!r}")
        keys = _WEIGHT_KEYS[self.kind]
        if set(self.weights) != set(keys):
            raise FormatError(
                f"{self.kind} block needs weights {sorted(keys)}, got {sorted(self.weights)}")
        for k in keys:
            self.weights[k] = numkit.as_matrix(self.weights[k], k)
        for k, b in self.biases.items():
            self.biases[k] = np.ascontiguousarray(b, dtype=np.float64).ravel()
        if self.kind == FFN_RELU or self.kind == FFN_GATED:
            up, down = self.weights["w_up"], self.weights["w_down"]
            if down.shape[1] != up.shape[0]:
                raise ShapeError(
                    f"w_down columns ({down.shape[1]}) must match w_up rows ({up.shape[0]})")
            if self.kind == FFN_GATED:
                gate = self.weights["w_gate"]
                if gate.shape != up.shape:
                    raise ShapeError(
                        f"w_gate shape {gate.shape} must match w_up shape {up.shape}")

    @property
    def in_dim(self) -> int:
        return self.weights["w" if self.kind == DENSE_LOCAL else "w_up"].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights["w" if self.kind == DENSE_LOCAL else "w_down"].shape[0]

    def weight_keys(self) -> tuple[str, ...]:
        return _WEIGHT_KEYS[self.kind]

    def bias(self, weight_key: str) -> np.ndarray | None:
        return self.biases.get(_BIAS_FOR[weight_key])


@dataclass
class NetworkSpec:
    blocks: list[BlockSpec]
    input_dim: int

    def __post_init__(self):
        if not self.blocks:
            raise FormatError("network must contain at least one block")
        dim = self.input_dim
        for i, blk in enumerate(self.blocks):
            if blk.in_dim != dim:
                raise ShapeError(
                    f"block {i} expects input dim {blk.in_dim}, chain provides {dim}")
            dim = blk.out_dim

    @property
    def output_dim(self) -> int:
        return self.blocks[-1].out_dim


@dataclass
class CalibrationSet:
    x: np.ndarray
    y_dense: np.ndarray
    dtypes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.x = numkit.as_matrix(self.x, "X")
        self.y_dense = numkit.as_matrix(self.y_dense, "y_dense")
        if self.x.shape[1] != self.y_dense.shape[1]:
            raise ShapeError(
                f"X samples ({self.x.shape[1]}) != y_dense samples ({self.y_dense.shape[1]})")

    @property
    def n_samples(self) -> int:
        return self.x.shape[1]


@dataclass
class BlockRecord:
    """Dense-model intermediates for one block (hidden dim x samples)."""

    kind: str
    x: np.ndarray                    # block input
    out: np.ndarray                  # block output (down-projection output for FFN)
    z_up: np.ndarray | None = None   # up-projection output
    s_gate: np.ndarray | None = None # gate-projection output (gated only)
    hidden: np.ndarray | None = None # activation entering the down projection


@dataclass
class Recording:
    blocks: list[BlockRecord]


def forward_record(net: NetworkSpec, x) -> tuple[np.ndarray, Recording]:
    """Forward pass that captures every intermediate value."""
    a = numkit.as_matrix(x, "input")
    if a.shape[0] != net.input_dim:
        raise ShapeError(
            f"input rows ({a.shape[0]}) must match network input dim ({net.input_dim})")
    records = []
    for blk in net.blocks:
        if blk.kind == DENSE_LOCAL:
            out = dense_apply(blk.weights["w"], a, blk.bias("w"))
            records.append(BlockRecord(blk.kind, a, out))
        elif blk.kind == FFN_RELU:
            z = dense_apply(blk.weights["w_up"], a, blk.bias("w_up"))
            h = numkit.relu(z)
            out = dense_apply(blk.weights["w_down"], h, blk.bias("w_down"))
            records.append(BlockRecord(blk.kind, a, out, z_up=z, hidden=h))
        else:
            s = dense_apply(blk.weights["w_gate"], a, blk.bias("w_gate"))
            z = dense_apply(blk.weights["w_up"], a, blk.bias("w_up"))
            h = numkit.silu(s) * z
            out = dense_apply(blk.weights["w_down"], h, blk.bias("w_down"))
            records.append(BlockRecord(blk.kind, a, out, z_up=z, s_gate=s, hidden=h))
        a = out
    return a, Recording(records)


def forward(net: NetworkSpec, x) -> np.ndarray:
    out, _ = forward_record(net, x)
    return out


# ---------------------------------------------------------------------------
# Container I/O


def _write_container(path: Path, manifest: dict, tensors: dict[str, tuple[np.ndarray, str]]):
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, (arr, dtype) in tensors.items():
        if dtype not in _DTYPES:
            raise FormatError(f"tensor {name!r}: unsupported dtype {dtype!r}")
        fname = f"{name}.bin"
        arr.astype(_DTYPES[dtype]).tofile(path / fname)
        entries[name] = {"shape": list(arr.shape), "dtype": dtype, "file": fname}
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["tensors"] = entries
    with open(path / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_manifest(path: Path) -> dict:
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise FormatError(f"manifest.json not found in {path}")
    with open(mpath, encoding="utf-8") as f:
        manifest = json.load(f)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version!r}")
    return manifest


def _read_tensor(path: Path, name: str, entry: dict) -> tuple[np.ndarray, str]:
    for key in ("shape", "dtype", "file"):
        if key not in entry:
            raise FormatError(f"tensor {name!r}: missing manifest field {key!r}")
    dtype = entry["dtype"]
    if dtype not in _DTYPES:
        raise FormatError(f"tensor {name!r}: unsupported dtype {dtype!r}")
    shape = tuple(int(s) for s in entry["shape"])
    raw = np.fromfile(path / entry["file"], dtype=_DTYPES[dtype])
    expected = int(np.prod(shape)) if shape else 1
    if raw.size != expected:
        raise FormatError(
            f"tensor {name!r}: blob holds {raw.size} values, shape {list(shape)} "
            f"needs {expected}")
    return raw.reshape(shape).astype(np.float64), dtype


def save_model(net: NetworkSpec, path) -> None:
    path = Path(path)
    blocks_meta = []
    tensors: dict[str, tuple[np.ndarray, str]] = {}
    for i, blk in enumerate(net.blocks):
        refs = {}
        for key in blk.weight_keys():
            name = f"block{i}.{key}"
            refs[key] = name
            tensors[name] = (blk.weights[key], blk.dtypes.get(key, "f64"))
            bkey = _BIAS_FOR[key]
            if bkey in blk.biases:
                bname = f"block{i}.{bkey}"
                refs[bkey] = bname
                tensors[bname] = (blk.biases[bkey], blk.dtypes.get(bkey, "f64"))
        blocks_meta.append({"kind": blk.kind, "tensors": refs})
    manifest = {"container": "model", "input_dim": net.input_dim, "blocks": blocks_meta}
    _write_container(path, manifest, tensors)


def load_model(path) -> NetworkSpec:
    path = Path(path)
    manifest = _read_manifest(path)
    if manifest.get("container") != "model":
        raise FormatError(f"container kind {manifest.get('container')!r} is not 'model'")
    if "blocks" not in manifest or "input_dim" not in manifest:
        raise FormatError("model manifest missing 'blocks' or 'input_dim'")
    entries = manifest.get("tensors", {})
    blocks = []
    for i, meta in enumerate(manifest["blocks"]):
        kind = meta.get("kind")
        if kind not in _WEIGHT_KEYS:
            raise FormatError(f"block {i}: unknown kind {kind!r}")
        refs = meta.get("tensors", {})
        weights, biases, dtypes = {}, {}, {}
        for key in _WEIGHT_KEYS[kind]:
            if key not in refs:
                raise FormatError(f"block {i}: missing tensor reference {key!r}")
            name = refs[key]
            if name not in entries:
                raise FormatError(f"block {i}: tensor {name!r} not in manifest")
            arr, dtype = _read_tensor(path, name, entries[name])
            if arr.ndim != 2:
                raise FormatError(f"tensor {name!r}: weights must be 2-D")
            weights[key] = arr
            dtypes[key] = dtype
            bkey = _BIAS_FOR[key]
            if bkey in refs:
                bname = refs[bkey]
                if bname not in entries:
                    raise FormatError(f"block {i}: tensor {bname!r} not in manifest")
                barr, bdtype = _read_tensor(path, bname, entries[bname])
                biases[bkey] = barr.ravel()
                dtypes[bkey] = bdtype
        blocks.append(BlockSpec(kind, weights, biases, dtypes))
    return NetworkSpec(blocks, int(manifest["input_dim"]))


def save_calibration(calib: CalibrationSet, path) -> None:
    tensors = {
        "X": (calib.x, calib.dtypes.get("X", "f64")),
        "y_dense": (calib.y_dense, calib.dtypes.get("y_dense", "f64")),
    }
    _write_container(Path(path), {"container": "calibration"}, tensors)


def load_calibration(path) -> CalibrationSet:
    path = Path(path)
    manifest = _read_manifest(path)
    if manifest.get("container") != "calibration":
        raise FormatError(
            f"container kind {manifest.get('container')!r} is not 'calibration'")
    entries = manifest.get("tensors", {})
    arrays, dtypes = {}, {}
    for name in ("X", "y_dense"):
        if name not in entries:
            raise FormatError(f"calibration manifest missing tensor {name!r}")
        arrays[name], dtypes[name] = _read_tensor(path, name, entries[name])
    return CalibrationSet(arrays["X"], arrays["y_dense"], dtypes)


# ---------------------------------------------------------------------------
# Synthetic fixtures

_KIND_CYCLES = {
    "relu": (FFN_RELU,),
    "gated": (FFN_GATED,),
    "mixed": (DENSE_LOCAL, FFN_RELU, FFN_GATED),
}


def synthesize_fixture(seed: int, depth: int, dim: int, kind: str = "mixed",
                       expansion: int = 4, samples: int = 64,
                       ) -> tuple[NetworkSpec, CalibrationSet]:
    """Deterministic pseudo-random network plus Gaussian calibration data.

    Weights are drawn with standard deviation ``1/sqrt(fan_in)``; the
    same seed reproduces the fixture bit for bit.
    """
    if depth < 1 or dim < 1:
        raise FormatError(f"need depth >= 1 and dim >= 1, got {depth}, {dim}")
    if kind not in _KIND_CYCLES:
        raise FormatError(f"unknown fixture kind {kind!r}")
    rng = np.random.default_rng(seed)

    def draw(out_dim, in_dim):
        return rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(out_dim, in_dim))

    cycle = _KIND_CYCLES[kind]
    blocks = []
    for i in range(depth):
        bkind = cycle[i % len(cycle)]
        if bkind == DENSE_LOCAL:
            blocks.append(BlockSpec(bkind, {"w": draw(dim, dim)}))
        elif bkind == FFN_RELU:
            blocks.append(BlockSpec(bkind, {
                "w_up": draw(expansion * dim, dim),
                "w_down": draw(dim, expansion * dim),
            }))
        else:
            blocks.append(BlockSpec(bkind, {
                "w_up": draw(expansion * dim, dim),
                "w_gate": draw(expansion * dim, dim),
                "w_down": draw(dim, expansion * dim),
            }))
    net = NetworkSpec(blocks, dim)
    x = rng.standard_normal((dim, samples))
    y = forward(net, x)
    return net, CalibrationSet(x, y)
