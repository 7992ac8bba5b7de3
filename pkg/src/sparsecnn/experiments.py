"""Reusable experiment drivers shared by the scripts and the acceptance suite."""

from __future__ import annotations

import os
import statistics
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import AugmentConfig
from .data import GRAY, STROKES, Dataset, SamplePipeline, load_idx_images, load_strokes, load_unipen
from .encoding import EncodingConfig, StrokeCharacter, normalize_character, rasterize
from .grid import SparseGrid
from .network import Network, NetworkSpec, build_deepcnet, init_params
from .training import TrainConfig, Trainer, evaluate


class DatasetUnavailable(FileNotFoundError):
    pass


def data_root() -> Path:
    """``$SPARSECNN_DATA`` or ``data/`` next to the package checkout."""
    env = os.environ.get("SPARSECNN_DATA")
    return Path(env) if env else Path(__file__).resolve().parents[2] / "data"


def _first_existing(folder: Path, names) -> Optional[Path]:
    for n in names:
        for cand in (folder / n, folder / f"{n}.gz"):
            if cand.exists():
                return cand
    return None


def find_pendigits(root: Optional[Path] = None) -> tuple[Dataset, Dataset]:
    """Pendigits train/test from ``<root>/pendigits``: canonical stroke files or the UNIPEN originals."""
    folder = (root or data_root()) / "pendigits"
    tr, te = _first_existing(folder, ["train.txt"]), _first_existing(folder, ["test.txt"])
    if tr and te:
        return load_strokes(tr, "train"), load_strokes(te, "test")
    tr, te = _first_existing(folder, ["pendigits-orig.tra"]), _first_existing(folder, ["pendigits-orig.tes"])
    if tr and te:
        return load_unipen(tr, 10, "train"), load_unipen(te, 10, "test")
    raise DatasetUnavailable(f"Pendigits not found in {folder} (need pendigits-orig.tra/.tes or train.txt/test.txt)")


def find_mnist(root: Optional[Path] = None) -> tuple[Dataset, Dataset]:
    folder = (root or data_root()) / "mnist"
    names = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    paths = [_first_existing(folder, [n, n.replace("-idx", ".idx")]) for n in names]
    if not all(paths):
        raise DatasetUnavailable(f"MNIST IDX files not found in {folder}")
    return (load_idx_images(paths[0], paths[1], 10, "train"), load_idx_images(paths[2], paths[3], 10, "test"))


@dataclass
class RunResult:
    test_error: float
    history: list
    trainer: Trainer


def train_strokes(train: Dataset, test: Dataset, levels: int, k: int, with_histograms: bool, epochs: int,
                  seed: int = 0, config: Optional[TrainConfig] = None, augment: str = "translate",
                  metrics_path=None, threads: int = 1) -> RunResult:
    """DeepCNet on stroke data with the default training config unless one is given."""
    spec = build_deepcnet(levels, k, 9 if with_histograms else 1, train.num_classes)
    cfg = replace(config, epochs=epochs) if config else TrainConfig(epochs=epochs, seed=seed)
    pipe = SamplePipeline(STROKES, EncodingConfig.for_levels(levels, with_histograms),
                          AugmentConfig.default_for_strokes(levels, augment))
    trainer = Trainer(spec, cfg, pipe, threads=threads)
    hist = trainer.fit(train, test, metrics_path)
    err = evaluate(spec, trainer.params, test, pipe, threads=threads).top1_error
    return RunResult(err, hist, trainer)


def train_mnist_subset(train: Dataset, test: Dataset, n_train: int = 10_000, levels: int = 5, k: int = 10,
                       epochs: int = 20, seed: int = 0, metrics_path=None, threads: int = 1) -> RunResult:
    """DeepCNet on the first ``n_train`` MNIST images with integer shifts of up to 2 pixels."""
    spec = build_deepcnet(levels, k, 1, 10)
    pipe = SamplePipeline(GRAY, EncodingConfig(3 * 2 ** levels, 28), AugmentConfig("translate", max_shift=2))
    trainer = Trainer(spec, TrainConfig(epochs=epochs, seed=seed), pipe, threads=threads)
    sub = train.subset(range(min(n_train, len(train))))
    hist = trainer.fit(sub, test, metrics_path)
    return RunResult(hist[-1].test_error, hist, trainer)


def one_stroke_character(levels: int) -> SparseGrid:
    """A single pen stroke (an open arc) drawn at the default character scale."""
    t = np.linspace(0.2, 1.8 * np.pi, 64)
    ch = StrokeCharacter(0, [np.stack([np.cos(t), np.sin(t)], axis=1)])
    enc = EncodingConfig.for_levels(levels)
    return rasterize(normalize_character(ch, enc.character_scale), enc)


def full_grid(size: int, num_features: int = 1, seed: int = 0) -> SparseGrid:
    rng = np.random.default_rng(seed)
    ys, xs = np.divmod(np.arange(size * size), size)
    return SparseGrid.from_sites(size, xs, ys, rng.uniform(0.1, 1.0, (size * size, num_features)).astype(np.float32))


def median_forward_time(spec: NetworkSpec, grid: SparseGrid, runs: int = 50, seed: int = 0) -> float:
    net = Network(spec, init_params(spec, np.random.default_rng(seed), zero_output=False))
    net.forward(grid)  # warm-up
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        net.forward(grid)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)
