"""Minibatch SGD with momentum, evaluation and bit-exact checkpoints."""

from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, SamplePipeline, iterate_minibatches
from .grid import SparseBatch
from .network import FAMILIES, GradientSet, Network, NetworkSpec, ParamSet, build_network, cross_entropy, init_params

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SPCNCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpoint(CheckpointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.01
    lr_decay: float = 0.98
    momentum: float = 0.9
    seed: int = 0
    checkpoint_interval: int = 0
    exact_ground: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def loss_and_gradients(spec: NetworkSpec, params: ParamSet, batch: SparseBatch, labels,
                       rng: Optional[np.random.Generator] = None, train: bool = True,
                       exact_ground: bool = True) -> tuple[float, GradientSet, float]:
    """Mean softmax cross-entropy, batch-averaged gradients and batch accuracy."""
    labels = np.asarray(labels, dtype=np.int64)
    if batch.batch_size != len(labels) or len(labels) == 0:
        raise ValueError(f"batch of {batch.batch_size} grids with {len(labels)} labels")
    net = Network(spec, params)
    res = net.forward(batch, "train" if train else "test", rng)
    b = len(labels)
    dlogits = res.probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    grads = net.backward(res, dlogits, exact_ground)
    acc = float(np.mean(res.probs.argmax(axis=1) == labels))
    return cross_entropy(res.probs, labels), grads, acc


def sgd_step(params: ParamSet, grads: GradientSet, velocity: ParamSet, lr: float, momentum: float) -> None:
    """In place: ``v <- momentum*v - lr*g``; ``theta <- theta + v``."""
    for p, g, v in zip(params.arrays(), grads.arrays(), velocity.arrays()):
        v *= momentum
        v -= lr * g
        p += v


@dataclass
class EvalResult:
    top1_error: float
    topk_error: Optional[float] = None
    k: Optional[int] = None
    loss: float = 0.0


def predict(spec: NetworkSpec, params: ParamSet, dataset: Dataset, encoder: SamplePipeline,
            batch_size: int = 100, threads: int = 1) -> np.ndarray:
    """Class probabilities for every sample, in dataset order."""
    net = Network(spec, params)
    out = []
    rng = np.random.default_rng(0)
    plain = SamplePipeline(encoder.kind, encoder.encoding, None, encoder.normalize)
    for batch, _ in iterate_minibatches(dataset, batch_size, rng, None, plain, shuffle=False, threads=threads):
        out.append(net.forward(batch, "test").probs)
    return np.concatenate(out) if out else np.zeros((0, spec.num_classes))


def evaluate(spec: NetworkSpec, params: ParamSet, dataset: Dataset, encoder: SamplePipeline,
             top_k: Optional[int] = None, batch_size: int = 100, threads: int = 1) -> EvalResult:
    """Test-mode top-1 (and top-k) error rates."""
    probs = predict(spec, params, dataset, encoder, batch_size, threads)
    y = dataset.labels
    top1 = float(np.mean(probs.argmax(axis=1) != y))
    res = EvalResult(top1, loss=cross_entropy(probs, y))
    if top_k:
        k = min(top_k, spec.num_classes)
        # stable sort keeps ties deterministic
        best = np.argsort(-probs, axis=1, kind="stable")[:, :k]
        res.topk_error = float(np.mean(~np.any(best == y[:, None], axis=1)))
        res.k = top_k
    return res


# -- checkpoints ------------------------------------------------------------------

def _pack_arrays(arrays: Sequence[np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f4")
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def _unpack_arrays(buf: memoryview, pos: int) -> tuple[list[np.ndarray], int]:
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out = []
    for _ in range(n):
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        out.append(np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32))
        pos += 4 * count
    return out, pos


def _split(arrays: list[np.ndarray]) -> ParamSet:
    return ParamSet(arrays[0::2], arrays[1::2])


@dataclass
class TrainState:
    spec: NetworkSpec
    params: ParamSet
    velocity: ParamSet
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0


def checkpoint_save(path, state: TrainState) -> None:
    """Versioned little-endian binary: magic, version, JSON header, float32 arrays, CRC32."""
    spec = state.spec
    header = {
        "family": spec.family, "levels": spec.levels, "k": spec.k, "num_features": spec.num_features,
        "num_classes": spec.num_classes, "dropout": list(spec.dropout), "fingerprint": spec.fingerprint(),
        "epoch": state.epoch, "step": state.step, "rng": state.rng.bit_generator.state,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = (CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes
            + _pack_arrays(state.params.arrays()) + _pack_arrays(state.velocity.arrays()))
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)


def checkpoint_load(path, spec: Optional[NetworkSpec] = None) -> TrainState:
    """Load a checkpoint; with ``spec`` given, refuse one built for another network."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 or raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt checkpoint)")
    buf = memoryview(body)
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", buf, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(bytes(buf[pos:pos + hlen]))
    pos += hlen
    if header["family"] not in FAMILIES:
        raise CheckpointError(f"{path}: unknown family {header['family']!r}")
    saved = build_network(header["family"], header["levels"], header["k"], header["num_features"],
                          header["num_classes"], header["dropout"])
    if spec is not None and spec.fingerprint() != header["fingerprint"]:
        raise IncompatibleCheckpoint(
            f"{path}: checkpoint is {saved.family}(levels={saved.levels}, k={saved.k}, M={saved.num_features}, "
            f"classes={saved.num_classes}); config wants {spec.family}(levels={spec.levels}, k={spec.k}, "
            f"M={spec.num_features}, classes={spec.num_classes})")
    params, pos = _unpack_arrays(buf, pos)
    velocity, pos = _unpack_arrays(buf, pos)
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]
    return TrainState(spec or saved, _split(params), _split(velocity), rng, header["epoch"], header["step"])


# -- trainer ----------------------------------------------------------------------

def _seed_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_error: float
    test_error: Optional[float] = None

    def csv(self) -> str:
        te = "" if self.test_error is None else f"{self.test_error:.6f}"
        return f"{self.epoch},{self.train_loss:.6f},{self.train_error:.6f},{te}"


@dataclass
class Trainer:
    """Owns parameters, momentum buffers and the dropout stream; deterministic under a seed.

    Stream layout for seed ``s``: init ``[s, 0]``, dropout ``[s, 1]``,
    epoch ``e`` data order and augmentation ``[s, 2, e]``.
    """

    spec: NetworkSpec
    config: TrainConfig
    pipeline: SamplePipeline
    state: TrainState = field(init=False)
    threads: int = 1

    def __post_init__(self):
        params = init_params(self.spec, _seed_rng(self.config.seed, 0))
        self.state = TrainState(self.spec, params, params.zeros_like(), _seed_rng(self.config.seed, 1))

    @property
    def params(self) -> ParamSet:
        return self.state.params

    def learning_rate(self, epoch: Optional[int] = None) -> float:
        e = self.state.epoch if epoch is None else epoch
        return self.config.learning_rate * self.config.lr_decay ** e

    def step(self, batch: SparseBatch, labels) -> tuple[float, float]:
        loss, grads, acc = loss_and_gradients(self.spec, self.state.params, batch, labels, self.state.rng,
                                              True, self.config.exact_ground)
        sgd_step(self.state.params, grads, self.state.velocity, self.learning_rate(), self.config.momentum)
        self.state.step += 1
        return loss, acc

    def train_epoch(self, dataset: Dataset) -> EpochStats:
        rng = _seed_rng(self.config.seed, 2, self.state.epoch)
        tot_loss = tot_err = 0.0
        n = 0
        for batch, labels in iterate_minibatches(dataset, self.config.batch_size, rng, None, self.pipeline,
                                                 threads=self.threads):
            loss, acc = self.step(batch, labels)
            tot_loss += loss * len(labels)
            tot_err += (1 - acc) * len(labels)
            n += len(labels)
        self.state.epoch += 1
        return EpochStats(self.state.epoch, tot_loss / max(n, 1), tot_err / max(n, 1))

    def fit(self, train: Dataset, test: Optional[Dataset] = None, metrics_path=None, checkpoint_dir=None,
            epochs: Optional[int] = None) -> list[EpochStats]:
        history = []
        target = self.config.epochs if epochs is None else epochs
        while self.state.epoch < target:
            stats = self.train_epoch(train)
            if test is not None:
                stats.test_error = evaluate(self.spec, self.params, test, self.pipeline, threads=self.threads).top1_error
            history.append(stats)
            log.info("epoch %d loss %.4f train_err %.4f test_err %s", stats.epoch, stats.train_loss,
                     stats.train_error, stats.test_error)
            if metrics_path is not None:
                with open(metrics_path, "a") as fh:
                    fh.write(stats.csv() + "\n")
            if checkpoint_dir is not None:
                iv = self.config.checkpoint_interval
                if (iv and stats.epoch % iv == 0) or self.state.epoch == target:
                    self.save(os.path.join(checkpoint_dir, f"epoch{stats.epoch:04d}.ckpt"))
                    self.save(os.path.join(checkpoint_dir, "last.ckpt"))
        return history

    def save(self, path) -> None:
        checkpoint_save(path, self.state)

    def load(self, path) -> None:
        self.state = checkpoint_load(path, self.spec)
