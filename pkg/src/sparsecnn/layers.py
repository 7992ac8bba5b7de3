"""Sparse forward and backward passes for the layer kinds used by DeepCNet/DeepCNiN.

All layer functions accept a ``SparseGrid`` (one sample) or a ``SparseBatch``
and return the same kind.  Forward passes build a *rulebook*: for every output
row, the input rows read at each filter position.  Output rows ``0..B-1`` are
the ground states, evaluated by the same rulebook with every position pointing
at the input ground row, so ground states need no special casing.

Backward passes work on arrays of deltas aligned with feature rows.  With
``exact_ground=True`` (the default) the delta of a ground row is the summed
delta of every inactive site of that sample, which makes sparse backprop equal
to dense backprop.  ``exact_ground=False`` gives active-only backprop: ground
rows receive and emit no deltas.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .grid import DTYPE, SparseBatch, SparseGrid, as_batch

RELU = "relu"
LEAKY = "leaky3"
LINEAR = "none"
ACTIVATIONS = (RELU, LEAKY, LINEAR)

Sparse = Union[SparseGrid, SparseBatch]


class ShapeError(ValueError):
    pass


def activation(x, kind: str):
    if kind == RELU:
        return np.maximum(x, 0)
    if kind == LEAKY:
        return np.where(x >= 0, x, x / 3)
    if kind == LINEAR:
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(pre, kind: str):
    """Derivative of ``activation`` evaluated at pre-activation ``pre``."""
    if kind == RELU:
        return (pre > 0).astype(pre.dtype)
    if kind == LEAKY:
        return np.where(pre >= 0, 1, 1 / 3).astype(pre.dtype)
    if kind == LINEAR:
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {kind!r}")


def init_uniform(rng: np.random.Generator, fan_in: int, shape, dtype=DTYPE) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class ConvLayer:
    """Valid-mode convolution with stride 1; ``filter_size == 1`` is a NiN layer.

    ``weights`` has shape ``(f*f*in_features, out_features)``, filter positions
    ordered row-major over ``(dy, dx)``.
    """

    filter_size: int
    in_features: int
    out_features: int
    activation: str = RELU
    weights: Optional[np.ndarray] = None
    biases: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.filter_size not in (1, 2, 3):
            raise ValueError(f"filter_size must be 1, 2 or 3, got {self.filter_size}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        fan_in = self.filter_size ** 2 * self.in_features
        if self.weights is None:
            self.weights = np.zeros((fan_in, self.out_features), dtype=DTYPE)
        if self.biases is None:
            self.biases = np.zeros(self.out_features, dtype=self.weights.dtype)
        if self.weights.shape != (fan_in, self.out_features):
            raise ShapeError(f"weights shape {self.weights.shape} != {(fan_in, self.out_features)}")

    @property
    def fan_in(self) -> int:
        return self.filter_size ** 2 * self.in_features

    def offsets(self) -> list[tuple[int, int]]:
        f = self.filter_size
        return [(dy, dx) for dy in range(f) for dx in range(f)]

    def output_size(self, input_size: int) -> int:
        return input_size - self.filter_size + 1


@dataclass
class PoolLayer:
    window: int = 2

    def __post_init__(self):
        if self.window != 2:
            raise ValueError("only 2x2 max-pooling is supported")

    def offsets(self) -> list[tuple[int, int]]:
        return [(0, 0), (0, 1), (1, 0), (1, 1)]

    def output_size(self, input_size: int) -> int:
        return input_size // 2


@dataclass
class OutputLayer:
    in_features: int
    num_classes: int
    weights: Optional[np.ndarray] = None
    biases: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros((self.in_features, self.num_classes), dtype=DTYPE)
        if self.biases is None:
            self.biases = np.zeros(self.num_classes, dtype=self.weights.dtype)

    @property
    def fan_in(self) -> int:
        return self.in_features


@dataclass
class ConvTrace:
    rules: np.ndarray
    gathered: np.ndarray
    pre: np.ndarray
    input_rows: int


@dataclass
class PoolTrace:
    rules: np.ndarray
    choice: np.ndarray
    input_rows: int


@dataclass
class DropoutTrace:
    scale: np.ndarray  # (B, M) per-sample channel multipliers


def _wrap(out: SparseBatch, like: Sparse) -> Sparse:
    """Return ``out`` in the same container type as ``like``.

    A one-sample batch and a ``SparseGrid`` share row numbering, so the
    conversion is free and keeps the trace valid.
    """
    if isinstance(like, SparseBatch):
        return out
    grid = SparseGrid(out.pointer[0], out.features)
    grid.trace = out.trace
    return grid


def _scatter_rows(index: np.ndarray, values: np.ndarray, rows: int, m: int, dtype) -> np.ndarray:
    """Sum ``values[i, :]`` into row ``index[i]`` of a ``(rows, m)`` zero array."""
    flat = (index[:, None] * m + np.arange(m)).ravel()
    acc = np.bincount(flat, weights=values.ravel(), minlength=rows * m)
    return acc.reshape(rows, m).astype(dtype, copy=False)


def _build_rules(x: SparseBatch, offsets, out_size: int, stride: int):
    """Active output sites and the input rows each one reads."""
    b = x.batch_size
    act = x.active_mask()
    span = stride * (out_size - 1) + 1
    out_act = np.zeros((b, out_size, out_size), dtype=bool)
    for dy, dx in offsets:
        out_act |= act[:, dy:dy + span:stride, dx:dx + span:stride]
    bs, ys, xs = np.nonzero(out_act)
    n = len(bs)
    rules = np.empty((b + n, len(offsets)), dtype=np.int64)
    rules[:b] = np.arange(b)[:, None]
    for p, (dy, dx) in enumerate(offsets):
        rules[b:, p] = x.pointer[bs, stride * ys + dy, stride * xs + dx]
    pointer = np.broadcast_to(np.arange(b)[:, None, None], (b, out_size, out_size)).copy()
    pointer[bs, ys, xs] = b + np.arange(n)
    owner = np.concatenate([np.arange(b), bs])
    return rules, pointer, owner


def ground_forward(layer, ground_in) -> np.ndarray:
    """Ground-state row of a layer's output given its input ground row."""
    ground_in = np.asarray(ground_in)
    if isinstance(layer, PoolLayer):
        return ground_in.copy()
    if isinstance(layer, ConvLayer):
        if ground_in.shape != (layer.in_features,):
            raise ShapeError(f"ground row length {ground_in.shape} != {layer.in_features}")
        patch = np.tile(ground_in, layer.filter_size ** 2)
        return activation(patch @ layer.weights + layer.biases, layer.activation)
    raise TypeError(f"no ground state for {type(layer).__name__}")


def conv_forward(layer: ConvLayer, x: Sparse) -> Sparse:
    xb = as_batch(x)
    if xb.num_features != layer.in_features:
        raise ShapeError(f"input has {xb.num_features} features, layer expects {layer.in_features}")
    s = xb.spatial_size
    if s < layer.filter_size:
        raise ShapeError(f"input size {s} smaller than filter {layer.filter_size}")
    out_size = layer.output_size(s)
    if layer.filter_size == 1:
        # NiN: active set unchanged, one row in one row out
        rules = np.arange(xb.features.shape[0])[:, None]
        pointer, owner = xb.pointer, xb.owner
    else:
        rules, pointer, owner = _build_rules(xb, layer.offsets(), out_size, 1)
    gathered = xb.features[rules].reshape(len(rules), -1)
    pre = gathered @ layer.weights + layer.biases
    out = SparseBatch(pointer, activation(pre, layer.activation), owner)
    out.trace = ConvTrace(rules, gathered, pre, xb.features.shape[0])
    return _wrap(out, x)


def pool_forward(layer: PoolLayer, x: Sparse) -> Sparse:
    xb = as_batch(x)
    s = xb.spatial_size
    if s % 2:
        raise ShapeError(f"2x2 max-pooling needs an even input size, got {s}")
    b = xb.batch_size
    rules, pointer, owner = _build_rules(xb, layer.offsets(), s // 2, 2)
    vals = xb.features[rules]  # (rows, 4, M)
    best = vals.max(axis=1)
    ties = vals == best[:, None, :]
    # prefer the first active input among those attaining the max
    preferred = ties & (rules >= b)[:, :, None]
    choice = np.where(preferred.any(axis=1), preferred.argmax(axis=1), ties.argmax(axis=1))
    out = SparseBatch(pointer, best, owner)
    out.trace = PoolTrace(rules, choice, xb.features.shape[0])
    return _wrap(out, x)


def dropout_apply(x: Sparse, p: float, rng: Optional[np.random.Generator] = None, mode: str = "train") -> Sparse:
    """Channel dropout with one mask per sample, shared by all its rows.

    Surviving channels are scaled by ``1/(1-p)`` at train time; test mode is
    the identity.
    """
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    xb = as_batch(x)
    b, m = xb.batch_size, xb.num_features
    if mode == "test" or p == 0:
        scale = np.ones((b, m), dtype=xb.features.dtype)
        feats = xb.features
    else:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = rng.random((b, m)) >= p
        scale = (keep / (1 - p)).astype(xb.features.dtype)
        feats = xb.features * scale[xb.owner]
    out = SparseBatch(xb.pointer, feats, xb.owner)
    out.trace = DropoutTrace(scale)
    return _wrap(out, x)


def top_rows(x: Sparse) -> np.ndarray:
    """Row index of each sample's single site in a 1x1 layer."""
    xb = as_batch(x)
    if xb.spatial_size != 1:
        raise ShapeError(f"output layer needs a 1x1 input, got {xb.spatial_size}x{xb.spatial_size}")
    return xb.pointer[:, 0, 0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def output_logits(layer: OutputLayer, features) -> np.ndarray:
    if isinstance(features, (SparseGrid, SparseBatch)):
        xb = as_batch(features)
        features = xb.features[top_rows(xb)]
    features = np.asarray(features)
    if features.shape[-1] != layer.in_features:
        raise ShapeError(f"feature length {features.shape[-1]} != {layer.in_features}")
    return features @ layer.weights + layer.biases


def output_forward(layer: OutputLayer, features) -> np.ndarray:
    """Class probabilities ``softmax(W x + b)`` for a 1x1 top layer or raw vectors."""
    return softmax(output_logits(layer, features))


def output_backward(layer: OutputLayer, x: Sparse, dlogits: np.ndarray, exact_ground: bool = True):
    """Backprop from logits into the rows of the 1x1 top layer."""
    xb = as_batch(x)
    rows = top_rows(xb)
    feats = xb.features[rows]
    dw = feats.T @ dlogits
    db = dlogits.sum(axis=0)
    dfeat = dlogits @ layer.weights.T
    if not exact_ground:
        dfeat = np.where((rows >= xb.batch_size)[:, None], dfeat, 0)
    din = np.zeros_like(xb.features)
    np.add.at(din, rows, dfeat.astype(din.dtype))
    return din, dw.astype(layer.weights.dtype), db.astype(layer.biases.dtype)


def layer_backward(layer, input: Sparse, output: Sparse, output_deltas: np.ndarray,
                   exact_ground: bool = True):
    """Deltas for ``input`` rows plus weight and bias gradients (``None`` if untrainable)."""
    xb, ob = as_batch(input), as_batch(output)
    trace = output.trace
    output_deltas = np.asarray(output_deltas)
    if output_deltas.shape != ob.features.shape:
        raise ShapeError(f"deltas shape {output_deltas.shape} != output rows {ob.features.shape}")
    b = xb.batch_size
    m_in = xb.num_features
    dtype = xb.features.dtype

    if isinstance(trace, DropoutTrace):
        return output_deltas * trace.scale[xb.owner], None, None

    if isinstance(trace, PoolTrace):
        if not exact_ground:
            output_deltas = output_deltas.copy()
            output_deltas[:b] = 0
        rows, m = output_deltas.shape
        src = trace.rules[np.arange(rows)[:, None], trace.choice]  # (rows, M)
        flat = (src * m + np.arange(m)).ravel()
        din = np.bincount(flat, weights=output_deltas.ravel(), minlength=trace.input_rows * m)
        din = din.reshape(trace.input_rows, m).astype(dtype, copy=False)
        if not exact_ground:
            din[:b] = 0
        return din, None, None

    if isinstance(trace, ConvTrace):
        dpre = output_deltas * activation_grad(trace.pre, layer.activation)
        if not exact_ground:
            dpre[:b] = 0
        dw = trace.gathered.T @ dpre
        db = dpre.sum(axis=0)
        dgathered = (dpre @ layer.weights.T).reshape(-1, m_in)
        din = _scatter_rows(trace.rules.ravel(), dgathered, trace.input_rows, m_in, dtype)
        if not exact_ground:
            din[:b] = 0
        return din, dw.astype(layer.weights.dtype, copy=False), db.astype(layer.biases.dtype, copy=False)

    raise TypeError("output carries no forward trace; run the layer's forward pass first")
