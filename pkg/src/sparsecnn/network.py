"""DeepCNet / DeepCNiN assembly, structural analyses and the network runtime."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import DTYPE, SparseBatch, SparseGrid, as_batch
from .layers import (LEAKY, LINEAR, RELU, ConvLayer, OutputLayer, PoolLayer, ShapeError,
                     conv_forward, dropout_apply, init_uniform, layer_backward, output_backward,
                     output_logits, pool_forward, softmax)

DEEPCNET = "deepcnet"
DEEPCNIN = "deepcnin"
FAMILIES = (DEEPCNET, DEEPCNIN)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "pool" | "output"
    filter_size: int = 0
    in_features: int = 0
    out_features: int = 0
    activation: str = LINEAR
    dropout: float = 0.0  # applied to this layer's input at train time

    @property
    def is_nin(self) -> bool:
        return self.kind == "conv" and self.filter_size == 1

    @property
    def trainable(self) -> bool:
        return self.kind in ("conv", "output")

    @property
    def label(self) -> str:
        if self.kind == "conv":
            return f"{self.out_features}C{self.filter_size}"
        if self.kind == "pool":
            return "MP2"
        return "output"


@dataclass(frozen=True)
class NetworkSpec:
    family: str
    levels: int
    k: int
    num_features: int
    num_classes: int
    layers: tuple[LayerSpec, ...]
    dropout: tuple[float, ...]

    @property
    def input_size(self) -> int:
        return 3 * 2 ** self.levels

    @property
    def trainable_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.trainable]

    def layer_string(self) -> str:
        return "-".join(["input"] + [l.label for l in self.layers])

    def spatial_trace(self) -> list[int]:
        """Spatial size after the input and after every conv/pool layer."""
        sizes = [self.input_size]
        for l in self.layers:
            if l.kind == "conv":
                sizes.append(sizes[-1] - l.filter_size + 1)
            elif l.kind == "pool":
                sizes.append(sizes[-1] // 2)
        return sizes

    def fingerprint(self) -> str:
        key = f"{self.family}|{self.levels}|{self.k}|{self.num_features}|{self.num_classes}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def _check_build_args(levels, k, num_features, num_classes, dropout) -> tuple[float, ...]:
    if levels < 1 or k < 1 or num_features < 1 or num_classes < 1:
        raise ConfigError(f"need levels, k, M, classes >= 1; got {levels}, {k}, {num_features}, {num_classes}")
    dropout = tuple(float(p) for p in (dropout or ()))
    if not dropout:
        dropout = (0.0,) * (levels + 2)
    if len(dropout) != levels + 2:
        raise ConfigError(f"dropout: expected {levels + 2} values (levels+2), got {len(dropout)}")
    for p in dropout:
        if not 0 <= p < 1:
            raise ConfigError(f"dropout: probability {p} outside [0, 1)")
    return dropout


def _build(family, levels, k, num_features, num_classes, dropout) -> NetworkSpec:
    dropout = _check_build_args(levels, k, num_features, num_classes, dropout)
    act = RELU if family == DEEPCNET else LEAKY
    layers = []
    width = num_features
    for n in range(1, levels + 2):
        f = 3 if n == 1 else 2
        layers.append(LayerSpec("conv", f, width, n * k, act, dropout[n - 1]))
        width = n * k
        if n <= levels:
            layers.append(LayerSpec("pool"))
        if family == DEEPCNIN:
            layers.append(LayerSpec("conv", 1, width, width, act))
    layers.append(LayerSpec("output", 0, width, num_classes, LINEAR, dropout[-1]))
    return NetworkSpec(family, levels, k, num_features, num_classes, tuple(layers), dropout)


def build_deepcnet(levels: int, k: int, num_features: int, num_classes: int,
                   dropout: Sequence[float] = ()) -> NetworkSpec:
    """DeepCNet(levels, k): ``levels+1`` conv layers (n-th has n*k filters) split by 2x2 pools."""
    return _build(DEEPCNET, levels, k, num_features, num_classes, dropout)


def build_deepcnin(levels: int, k: int, num_features: int, num_classes: int,
                   dropout: Sequence[float] = ()) -> NetworkSpec:
    """DeepCNet with a 1x1 NiN layer after every pool and after the last conv."""
    return _build(DEEPCNIN, levels, k, num_features, num_classes, dropout)


def build_network(family: str, levels: int, k: int, num_features: int, num_classes: int,
                  dropout: Sequence[float] = ()) -> NetworkSpec:
    if family not in FAMILIES:
        raise ConfigError(f"family: expected one of {FAMILIES}, got {family!r}")
    return _build(family, levels, k, num_features, num_classes, dropout)


# -- analyses -----------------------------------------------------------------

@dataclass(frozen=True)
class ParameterCount:
    conv_weights: int  # 3x3 and 2x2 filters only
    nin_weights: int
    conv_biases: int
    output_weights: int
    output_biases: int

    @property
    def total(self) -> int:
        return (self.conv_weights + self.nin_weights + self.conv_biases
                + self.output_weights + self.output_biases)


def conv_weight_series(levels: int, k: int, num_features: int) -> int:
    """``9*M*k + sum_{n=1..levels} 4*(n*k)*((n+1)*k)``."""
    return 9 * num_features * k + sum(4 * (n * k) * ((n + 1) * k) for n in range(1, levels + 1))


def parameter_count(spec: NetworkSpec) -> ParameterCount:
    conv = nin = cb = ow = ob = 0
    for l in spec.layers:
        if l.kind == "conv":
            w = l.filter_size ** 2 * l.in_features * l.out_features
            if l.is_nin:
                nin += w
            else:
                conv += w
            cb += l.out_features
        elif l.kind == "output":
            ow += l.in_features * l.out_features
            ob += l.out_features
    return ParameterCount(conv, nin, cb, ow, ob)


def count_paths(spec: NetworkSpec) -> np.ndarray:
    """Number of input-to-output routes through the conv/pool windows, per input site.

    Exact Python integers (object array).
    """
    paths = np.ones((1, 1), dtype=object)
    for l in reversed(spec.layers):
        if l.kind == "conv" and l.filter_size > 1:
            f = l.filter_size
            out = paths.shape[0]
            grown = np.zeros((out + f - 1, out + f - 1), dtype=object)
            for dy in range(f):
                for dx in range(f):
                    grown[dy:dy + out, dx:dx + out] += paths
            paths = grown
        elif l.kind == "pool":
            paths = np.repeat(np.repeat(paths, 2, axis=0), 2, axis=1)
    return paths


@dataclass(frozen=True)
class PathSummary:
    corner: int
    center: int
    maximum: int
    plateau_width: int


def summarize_paths(paths: np.ndarray) -> PathSummary:
    s = paths.shape[0]
    mx = max(paths.ravel())
    mid = s // 2
    row = paths[mid]
    return PathSummary(int(paths[0, 0]), int(paths[mid, mid]), int(mx),
                       int(sum(1 for v in row if v == mx)))


@dataclass(frozen=True)
class CensusRow:
    name: str
    size: int
    active: int

    @property
    def fraction(self) -> float:
        return self.active / self.size ** 2


def census_forward(spec: NetworkSpec, grid) -> list[CensusRow]:
    """Per-layer active-site counts using only the active-set propagation rules."""
    if isinstance(grid, (SparseGrid, SparseBatch)):
        mask = as_batch(grid).active_mask()[0]
    else:
        mask = np.asarray(grid, dtype=bool)
    if mask.shape != (spec.input_size, spec.input_size):
        raise ShapeError(f"census input is {mask.shape}, network expects {spec.input_size}x{spec.input_size}")
    rows = [CensusRow("input", mask.shape[0], int(mask.sum()))]
    for l in spec.layers:
        if l.kind == "conv" and l.filter_size > 1:
            f = l.filter_size
            o = mask.shape[0] - f + 1
            out = np.zeros((o, o), dtype=bool)
            for dy in range(f):
                for dx in range(f):
                    out |= mask[dy:dy + o, dx:dx + o]
            mask = out
        elif l.kind == "pool":
            o = mask.shape[0] // 2
            mask = mask[:2 * o, :2 * o].reshape(o, 2, o, 2).any(axis=(1, 3))
        elif l.kind != "conv":
            continue
        rows.append(CensusRow(l.label, mask.shape[0], int(mask.sum())))
    return rows


# -- parameters and runtime ---------------------------------------------------

@dataclass
class ParamSet:
    """Weights and biases for every trainable layer, in network order."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def zeros_like(self) -> "ParamSet":
        return ParamSet([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "ParamSet":
        return ParamSet([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])


GradientSet = ParamSet


def param_shapes(spec: NetworkSpec) -> list[tuple[tuple[int, int], int]]:
    shapes = []
    for l in spec.trainable_layers:
        fan_in = (l.filter_size ** 2 if l.kind == "conv" else 1) * l.in_features
        shapes.append(((fan_in, l.out_features), l.out_features))
    return shapes


def init_params(spec: NetworkSpec, rng: np.random.Generator, dtype=DTYPE, zero_output: bool = True) -> ParamSet:
    """Uniform weights in +-sqrt(6/fan_in), zero biases.

    With ``zero_output`` the classification layer starts at zero, so an
    untrained network predicts the uniform distribution (loss ``ln C``).
    """
    ws, bs = [], []
    shapes = param_shapes(spec)
    for i, ((fan_in, out), nb) in enumerate(shapes):
        w = init_uniform(rng, fan_in, (fan_in, out), dtype)
        if zero_output and i == len(shapes) - 1:
            w[:] = 0
        ws.append(w)
        bs.append(np.zeros(nb, dtype=dtype))
    return ParamSet(ws, bs)


class _Dropout:
    """Marker for dropout steps in a forward trail."""


_DROPOUT = _Dropout()


@dataclass
class ForwardResult:
    logits: np.ndarray
    probs: np.ndarray
    trail: list = field(repr=False)
    top: SparseBatch = field(repr=False)


class Network:
    """Runtime view of a spec plus parameters; layer objects share the parameter arrays."""

    def __init__(self, spec: NetworkSpec, params: ParamSet):
        self.spec = spec
        self.params = params
        self.layers = []
        it = iter(zip(params.weights, params.biases))
        for l in spec.layers:
            if l.kind == "conv":
                w, b = next(it)
                self.layers.append(ConvLayer(l.filter_size, l.in_features, l.out_features, l.activation, w, b))
            elif l.kind == "pool":
                self.layers.append(PoolLayer())
            else:
                w, b = next(it)
                self.layers.append(OutputLayer(l.in_features, l.out_features, w, b))

    def forward(self, x, mode: str = "test", rng: Optional[np.random.Generator] = None) -> ForwardResult:
        x = as_batch(x)
        if x.spatial_size != self.spec.input_size or x.num_features != self.spec.num_features:
            raise ShapeError(f"input {x.spatial_size}x{x.spatial_size}x{x.num_features} does not match "
                             f"network input {self.spec.input_size}x{self.spec.input_size}x{self.spec.num_features}")
        trail = []
        for l, obj in zip(self.spec.layers, self.layers):
            if mode == "train" and l.dropout > 0:
                y = dropout_apply(x, l.dropout, rng, "train")
                trail.append((_DROPOUT, x, y))
                x = y
            if l.kind == "output":
                logits = output_logits(obj, x)
                return ForwardResult(logits, softmax(logits.astype(np.float64)), trail, x)
            y = conv_forward(obj, x) if l.kind == "conv" else pool_forward(obj, x)
            trail.append((obj, x, y))
            x = y
        raise ConfigError("network has no output layer")

    def backward(self, result: ForwardResult, dlogits: np.ndarray, exact_ground: bool = True) -> GradientSet:
        out_layer = self.layers[-1]
        dtype = self.params.weights[0].dtype
        delta, dw, db = output_backward(out_layer, result.top, dlogits.astype(dtype), exact_ground)
        gw, gb = [dw], [db]
        for obj, inp, out in reversed(result.trail):
            delta, dw, db = layer_backward(obj, inp, out, delta, exact_ground)
            if dw is not None:
                gw.append(dw)
                gb.append(db)
        return ParamSet(gw[::-1], gb[::-1])

    def predict_proba(self, x) -> np.ndarray:
        return self.forward(x, "test").probs


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))
