"""Tiny MLP inference and training under the 34 KiB parameter budget.

Models are fully-connected networks with reLU hidden layers and a sigmoid
output, stored as one flat float32 parameter array (4 bytes per parameter,
no quantization).  The serialized `SZM1` container must keep its parameter
payload within the memory budget of a classifier node: the budget counts
the payload only, the fixed header is bookkeeping.

The trainer runs deterministic mini-batch gradient descent on logistic loss.
Features are standardized internally and the scaling is folded back into the
first layer, so inference stays a plain forward pass over raw features.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MODEL_BUDGET_BYTES = 34 * 1024  # 34,816
BYTES_PER_PARAM = 4
SZM1_MAGIC = b"SZM1"


class BudgetExceededError(ValueError):
    """Model parameter payload does not fit the memory budget."""


class ModelFormatError(ValueError):
    """Malformed SZM1 container."""


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class ModelSpec:
    layer_sizes: tuple[int, ...]
    weights: np.ndarray  # flat float32, weight-matrix-then-bias per layer
    version: str = "v1"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.weights = np.asarray(self.weights, dtype=np.float32).ravel()
        if any(s <= 0 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        expect = param_count(self.layer_sizes)
        if len(self.weights) != expect:
            raise ValueError(
                f"weight count {len(self.weights)} does not match layers "
                f"{self.layer_sizes} (expected {expect})"
            )

    @property
    def n_params(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Unflatten to [(W, b)] with W of shape (fan_in, fan_out)."""
        out = []
        pos = 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = self.weights[pos : pos + a * b].reshape(a, b)
            pos += a * b
            bias = self.weights[pos : pos + b]
            pos += b
            out.append((w, bias))
        return out


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    logic_cells: int
    dsp_slices: int
    memory_bytes: int
    footprint_mm: tuple[float, float, float]

    def __post_init__(self):
        if min(self.logic_cells, self.dsp_slices, self.memory_bytes) <= 0:
            raise ValueError("hardware resources must be positive")
        if min(self.footprint_mm) <= 0:
            raise ValueError("footprint must be positive")


# Xilinx KV260 dev board carrying each classifier node.
KV260 = HardwareProfile(
    name="KV260",
    logic_cells=256_000,
    dsp_slices=1_200,
    memory_bytes=4 * 1024**3,
    footprint_mm=(60.0, 77.0, 27.0),
)


def header_size(m: ModelSpec) -> int:
    return 4 + 1 + len(m.version.encode("utf-8")) + 1 + 4 * len(m.layer_sizes)


def serialized_size(m: ModelSpec) -> int:
    return header_size(m) + m.n_params * BYTES_PER_PARAM


def check_budget(m: ModelSpec, budget_bytes: int = MODEL_BUDGET_BYTES) -> int:
    """Gate on the parameter payload (header excluded); returns the full
    serialized size."""
    payload = m.n_params * BYTES_PER_PARAM
    if payload > budget_bytes:
        raise BudgetExceededError(
            f"budget exceeded: parameter payload {payload} B > budget {budget_bytes} B"
        )
    return serialized_size(m)


def fits_profile(m: ModelSpec, profile: HardwareProfile) -> bool:
    return serialized_size(m) <= profile.memory_bytes


def save_model(m: ModelSpec, path: str,
               budget_bytes: int = MODEL_BUDGET_BYTES) -> None:
    check_budget(m, budget_bytes)
    version = m.version.encode("utf-8")
    if len(version) > 255:
        raise ValueError("version string too long")
    buf = io.BytesIO()
    buf.write(SZM1_MAGIC)
    buf.write(struct.pack("<B", len(version)))
    buf.write(version)
    buf.write(struct.pack("<B", len(m.layer_sizes)))
    for s in m.layer_sizes:
        buf.write(struct.pack("<I", s))
    buf.write(np.ascontiguousarray(m.weights, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path: str, budget_bytes: int = MODEL_BUDGET_BYTES) -> ModelSpec:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    if buf.read(4) != SZM1_MAGIC:
        raise ModelFormatError("bad magic: not an SZM1 file")
    (vlen,) = struct.unpack("<B", buf.read(1))
    version = buf.read(vlen).decode("utf-8")
    (n_layers,) = struct.unpack("<B", buf.read(1))
    layer_sizes = struct.unpack(f"<{n_layers}I", buf.read(4 * n_layers))
    n = param_count(layer_sizes)
    payload = n * BYTES_PER_PARAM
    if payload > budget_bytes:
        raise BudgetExceededError(
            f"budget exceeded: parameter payload {payload} B > budget {budget_bytes} B"
        )
    blob = buf.read(payload)
    if len(blob) != payload:
        raise ModelFormatError("length mismatch: weight payload truncated")
    weights = np.frombuffer(blob, dtype="<f4").copy()
    return ModelSpec(layer_sizes=layer_sizes, weights=weights, version=version)


# -- inference -----------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def infer(m: ModelSpec, features: np.ndarray) -> float:
    """Forward pass: reLU hidden layers, sigmoid output in (0, 1)."""
    x = np.asarray(features, dtype=np.float64).ravel()
    if len(m.layer_sizes) < 2 or m.layer_sizes[-1] != 1:
        raise ValueError("model must map input to a single output")
    if len(x) != m.input_dim:
        raise ValueError(
            f"feature dimension {len(x)} != model input {m.input_dim}"
        )
    layers = m.layers()
    a = x
    for w, b in layers[:-1]:
        a = np.maximum(0.0, a @ w.astype(np.float64) + b.astype(np.float64))
    w, b = layers[-1]
    z = a @ w.astype(np.float64) + b.astype(np.float64)
    return float(_sigmoid(z)[0])


# -- training ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (16,)
    lr: float = 0.1
    epochs: int = 300
    batch: int = 32
    seed: int = 0
    version: str = "v1"
    budget_bytes: int = MODEL_BUDGET_BYTES


def _unflatten(params: np.ndarray, layer_sizes: Sequence[int]):
    out = []
    pos = 0
    for a, b in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = params[pos : pos + a * b].reshape(a, b)
        pos += a * b
        bias = params[pos : pos + b]
        pos += b
        out.append((w, bias))
    return out


def loss_and_grad(
    params: np.ndarray,
    layer_sizes: Sequence[int],
    x: np.ndarray,
    y: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean logistic loss and its analytic gradient (float64 throughout)."""
    layers = _unflatten(params, layer_sizes)
    n = len(x)
    acts = [x]
    zs = []
    a = x
    for w, b in layers[:-1]:
        z = a @ w + b
        zs.append(z)
        a = np.maximum(0.0, z)
        acts.append(a)
    w, b = layers[-1]
    z_out = (a @ w + b).ravel()
    p = _sigmoid(z_out)
    eps = 1e-12
    loss = -float(np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))

    grad = np.zeros_like(params)
    grads = _unflatten(grad, layer_sizes)  # views into grad
    dz = ((p - y) / n)[:, None]
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = grads[i]
        gw += acts[i].T @ dz
        gb += dz.sum(axis=0)
        if i > 0:
            dz = (dz @ w.T) * (zs[i - 1] > 0)
    return loss, grad


def train(
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
) -> ModelSpec:
    """Deterministic mini-batch gradient descent on logistic loss.

    Standardizes features, trains, then folds the standardization into the
    first layer so the returned model runs on raw features.  The result is
    guaranteed to fit the parameter budget.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be (n_samples, n_features) aligned with labels")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("degenerate labels: need at least one sample per class")

    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0.0] = 1.0
    xs = (x - mu) / sd

    layer_sizes = (x.shape[1],) + tuple(cfg.hidden) + (1,)
    if param_count(layer_sizes) * BYTES_PER_PARAM > cfg.budget_bytes:
        raise BudgetExceededError(
            f"architecture {layer_sizes} exceeds budget {cfg.budget_bytes} B"
        )
    rng = np.random.default_rng(cfg.seed)
    params = np.empty(param_count(layer_sizes))
    views = _unflatten(params, layer_sizes)
    for w, b in views:
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[:] = rng.uniform(-limit, limit, size=w.shape)
        b[:] = 0.0

    n = len(xs)
    batch = max(1, min(cfg.batch, n))
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            sel = perm[start : start + batch]
            _, grad = loss_and_grad(params, layer_sizes, xs[sel], y[sel])
            params -= cfg.lr * grad

    # Fold (x - mu) / sd into the first layer: W' = W / sd, b' = b - (mu/sd) @ W.
    w1, b1 = views[0]
    b1 -= (mu / sd) @ w1
    w1 /= sd[:, None]

    model = ModelSpec(
        layer_sizes=layer_sizes,
        weights=params.astype(np.float32),
        version=cfg.version,
    )
    check_budget(model, cfg.budget_bytes)
    return model
