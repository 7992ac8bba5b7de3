"""Dataset loading (canonical stroke text, IDX, CIFAR binary) and minibatch iteration."""

from __future__ import annotations

import gzip
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .augment import AugmentConfig, augment_image, augment_strokes
from .encoding import EncodingConfig, StrokeCharacter, embed_image, normalize_character, rasterize
from .grid import SparseBatch, SparseGrid

STROKES, GRAY, RGB = "strokes", "gray", "rgb"
STROKE_MAGIC = "SPARSECHARS"
STROKE_VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    samples: list  # StrokeCharacter, or uint8 image arrays (H, W) / (H, W, 3)
    labels: np.ndarray
    num_classes: int
    kind: str = STROKES
    role: str = "train"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise DataFormatError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, indices, role: Optional[str] = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset([self.samples[i] for i in idx], self.labels[idx], self.num_classes, self.kind,
                       role or self.role)


def _open(path):
    path = os.fspath(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


# -- canonical stroke format ------------------------------------------------------

def save_strokes(path, characters: Sequence[StrokeCharacter], num_classes: int) -> None:
    lines = [f"{STROKE_MAGIC} {STROKE_VERSION} {num_classes}"]
    for ch in characters:
        lines.append(f"CHAR {ch.label} {len(ch.strokes)}")
        for s in ch.strokes:
            coords = " ".join(f"{float(v)!r}" for v in s.ravel())
            lines.append(f"{len(s)} {coords}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_strokes(path, role: str = "train") -> Dataset:
    """Parse the canonical stroke format; errors name the file and line."""

    def fail(lineno, msg):
        raise DataFormatError(f"{path}:{lineno}: {msg}")

    with open(path) as fh:
        lines = [(i + 1, ln.split()) for i, ln in enumerate(fh) if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    lineno, head = lines[0]
    if len(head) != 3 or head[0] != STROKE_MAGIC:
        fail(lineno, f"expected header '{STROKE_MAGIC} {STROKE_VERSION} <num_classes>'")
    if head[1] != str(STROKE_VERSION):
        fail(lineno, f"unsupported format version {head[1]}")
    try:
        num_classes = int(head[2])
    except ValueError:
        fail(lineno, f"bad class count {head[2]!r}")
    chars = []
    pos = 1
    while pos < len(lines):
        lineno, tok = lines[pos]
        if len(tok) != 3 or tok[0] != "CHAR":
            fail(lineno, "expected 'CHAR <label> <num_strokes>'")
        try:
            label, nstrokes = int(tok[1]), int(tok[2])
        except ValueError:
            fail(lineno, "CHAR label and stroke count must be integers")
        if not 0 <= label < num_classes:
            fail(lineno, f"label {label} outside [0, {num_classes})")
        char_line = lineno
        strokes = []
        for _ in range(nstrokes):
            pos += 1
            if pos >= len(lines):
                fail(char_line, f"character declares {nstrokes} strokes but file ends")
            lineno, tok = lines[pos]
            try:
                npts = int(tok[0])
                vals = [float(v) for v in tok[1:]]
            except (ValueError, IndexError):
                fail(lineno, "stroke line must be '<num_points> x1 y1 ...'")
            if npts < 1 or len(vals) != 2 * npts:
                fail(lineno, f"stroke declares {npts} points but has {len(vals)} coordinates "
                             f"(character at line {char_line})")
            strokes.append(np.array(vals).reshape(npts, 2))
        chars.append(StrokeCharacter(label, strokes))
        pos += 1
    return Dataset(chars, [c.label for c in chars], num_classes, STROKES, role)


def load_unipen(path, num_classes: int = 10, role: str = "train") -> Dataset:
    """Read a UNIPEN-style file (e.g. ``pendigits-orig.tra``) of labelled pen strokes.

    Each ``.SEGMENT`` line starts a character whose label is the last quoted
    token; points between ``.PEN_DOWN`` and ``.PEN_UP`` form one stroke.  Other
    dot-commands are ignored.  Tablet y grows upwards, so y is negated to
    match the grid convention.
    """
    chars, strokes, current, label = [], [], None, None

    def flush():
        if label is not None and strokes:
            chars.append(StrokeCharacter(label, [np.array(s, dtype=np.float64) for s in strokes]))

    opener = gzip.open if os.fspath(path).endswith(".gz") else open
    with opener(path, "rt", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if tok[0] == ".SEGMENT":
                flush()
                strokes, current = [], None
                quoted = [t.strip('"') for t in tok if t.startswith('"')]
                try:
                    label = int(quoted[-1])
                except (IndexError, ValueError):
                    raise DataFormatError(f"{path}:{lineno}: .SEGMENT without a numeric quoted label") from None
            elif tok[0] == ".PEN_DOWN":
                current = []
            elif tok[0] == ".PEN_UP":
                if current:
                    strokes.append(current)
                current = None
            elif tok[0].startswith("."):
                continue
            elif current is not None:
                try:
                    x, y = float(tok[0]), float(tok[1])
                except (IndexError, ValueError):
                    raise DataFormatError(f"{path}:{lineno}: expected 'x y' coordinates") from None
                current.append((x, -y))
    flush()
    if not chars:
        raise DataFormatError(f"{path}: no labelled characters found")
    return Dataset(chars, [c.label for c in chars], num_classes, STROKES, role)


# -- IDX (MNIST) ------------------------------------------------------------------

def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def load_idx_images(images_path, labels_path, num_classes: int = 10, role: str = "train") -> Dataset:
    with _open(images_path) as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "IDX image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        pix = np.frombuffer(_read_exact(fh, count * rows * cols, "IDX image data"), dtype=np.uint8)
    with _open(labels_path) as fh:
        magic, nlab = struct.unpack(">II", _read_exact(fh, 8, "IDX label header"))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        labels = np.frombuffer(_read_exact(fh, nlab, "IDX label data"), dtype=np.uint8)
    if nlab != count:
        raise DataFormatError(f"image count {count} != label count {nlab}")
    images = pix.reshape(count, rows, cols)
    return Dataset(list(images), labels, num_classes, GRAY, role)


def save_idx_images(images_path, labels_path, images: np.ndarray, labels) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, r, c = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, r, c) + images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n) + labels.tobytes())


# -- CIFAR binary -----------------------------------------------------------------

def load_cifar_binary(path, label_bytes: int = 1, num_classes: Optional[int] = None, role: str = "train") -> Dataset:
    """CIFAR-10 (``label_bytes=1``) or CIFAR-100 (``label_bytes=2``, coarse label ignored)."""
    with _open(path) as fh:
        raw = np.frombuffer(fh.read(), dtype=np.uint8)
    rec = label_bytes + 3072
    if len(raw) % rec:
        raise DataFormatError(f"{path}: size {len(raw)} is not a multiple of the {rec}-byte record")
    recs = raw.reshape(-1, rec)
    labels = recs[:, label_bytes - 1]
    images = recs[:, label_bytes:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    if num_classes is None:
        num_classes = 10 if label_bytes == 1 else 100
    return Dataset(list(images), labels, num_classes, RGB, role)


def split_first_per_class(dataset: Dataset, n_train: int) -> tuple[Dataset, Dataset]:
    """First ``n_train`` samples of each class (in file order) train, the rest test."""
    seen = np.zeros(dataset.num_classes, dtype=np.int64)
    train, test = [], []
    for i, y in enumerate(dataset.labels):
        (train if seen[y] < n_train else test).append(i)
        seen[y] += 1
    return dataset.subset(train, "train"), dataset.subset(test, "test")


# -- per-sample preparation and batching ------------------------------------------

@dataclass(frozen=True)
class SamplePipeline:
    """Augment (optionally) and encode one sample into an input grid.

    Strokes are transformed exactly before rasterization; images are embedded
    first and then resampled on the grid.
    """

    kind: str
    encoding: EncodingConfig
    augment: Optional[AugmentConfig] = None
    normalize: bool = True

    @property
    def num_features(self) -> int:
        if self.kind == STROKES:
            return self.encoding.num_features
        return 3 if self.kind == RGB else 1

    def __call__(self, sample, rng: Optional[np.random.Generator] = None) -> SparseGrid:
        aug = self.augment if (self.augment is not None and self.augment.mode != "none" and rng is not None) else None
        if self.kind == STROKES:
            ch = normalize_character(sample, self.encoding.character_scale) if self.normalize else sample
            if aug is not None:
                ch = augment_strokes(ch, aug, self.encoding, rng)
            return rasterize(ch, self.encoding)
        grid = embed_image(sample, self.encoding.input_size, self.kind)
        if aug is not None:
            grid = augment_image(grid, aug, rng)
        return grid


def iterate_minibatches(dataset: Dataset, batch_size: int, rng: np.random.Generator,
                        augment: Optional[AugmentConfig] = None, encoder=None, *,
                        shuffle: bool = True, threads: int = 1) -> Iterator[tuple[SparseBatch, np.ndarray]]:
    """One epoch of ``(SparseBatch, labels)`` in shuffled order; the last batch may be short.

    ``encoder`` is a ``SamplePipeline`` or an ``EncodingConfig`` (strokes).
    Per-sample randomness comes from seeds drawn here in sample order, so the
    output does not depend on ``threads``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(encoder, EncodingConfig):
        encoder = SamplePipeline(dataset.kind, encoder, augment)
    elif encoder is None:
        raise ValueError("an encoder is required")
    elif augment is not None and isinstance(encoder, SamplePipeline):
        encoder = SamplePipeline(encoder.kind, encoder.encoding, augment, encoder.normalize)
    n = len(dataset)
    order = rng.permutation(n) if shuffle else np.arange(n)
    seeds = rng.integers(0, 2 ** 63, size=n)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            jobs = [(dataset.samples[i], np.random.default_rng(seeds[j]))
                    for j, i in zip(range(start, start + len(idx)), idx)]
            if pool is None:
                grids = [encoder(s, r) for s, r in jobs]
            else:
                grids = list(pool.map(lambda job: encoder(*job), jobs))
            yield SparseBatch.stack(grids), dataset.labels[idx]
    finally:
        if pool is not None:
            pool.shutdown()
