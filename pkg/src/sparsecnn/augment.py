"""Random translations and affine distortions for strokes and embedded images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import EncodingConfig, StrokeCharacter, _round
from .grid import SparseGrid

MODES = ("none", "translate", "affine")
MAX_ATTEMPTS = 10


class TransformRejected(Exception):
    """The transformed content would leave the input grid."""


@dataclass(frozen=True)
class AffineTransform:
    linear: np.ndarray  # (2, 2)
    translation: np.ndarray  # (2,)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def shift(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(np.eye(2), np.array([dx, dy], dtype=np.float64))

    @classmethod
    def rotation(cls, theta: float) -> "AffineTransform":
        c, s = np.cos(theta), np.sin(theta)
        return cls(np.array([[c, -s], [s, c]]), np.zeros(2))

    def apply(self, points: np.ndarray, center) -> np.ndarray:
        """``p -> A (p - c) + c + t`` for an ``(P, 2)`` array of points."""
        c = np.asarray(center, dtype=np.float64)
        return (np.asarray(points) - c) @ self.linear.T + c + self.translation

    def inverse(self) -> "AffineTransform":
        inv = np.linalg.inv(self.linear)
        return AffineTransform(inv, -inv @ self.translation)

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.linear, np.eye(2)) and not np.any(self.translation))


@dataclass(frozen=True)
class AugmentConfig:
    mode: str = "none"
    max_shift: int = 2
    rotation_range: float = 0.2
    scale_range: tuple[float, float] = (0.8, 1.2)
    shear_range: float = 0.2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"augment mode must be one of {MODES}, got {self.mode!r}")
        if self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")

    @classmethod
    def default_for_strokes(cls, levels: int, mode: str = "translate") -> "AugmentConfig":
        return cls(mode=mode, max_shift=2 ** max(levels - 2, 0))


def sample_transform(config: AugmentConfig, rng: np.random.Generator) -> AffineTransform:
    if config.mode == "none":
        return AffineTransform.identity()
    t = rng.integers(-config.max_shift, config.max_shift + 1, size=2).astype(np.float64)
    if config.mode == "translate":
        return AffineTransform(np.eye(2), t)
    theta = rng.uniform(-config.rotation_range, config.rotation_range)
    sx, sy = rng.uniform(*config.scale_range, size=2)
    h = rng.uniform(-config.shear_range, config.shear_range)
    c, s = np.cos(theta), np.sin(theta)
    a = np.array([[c, -s], [s, c]]) @ np.diag([sx, sy]) @ np.array([[1.0, h], [0.0, 1.0]])
    return AffineTransform(a, t)


def apply_to_strokes(char: StrokeCharacter, transform: AffineTransform, config: EncodingConfig) -> StrokeCharacter:
    """Map every point of a normalized character about the drawing-box centre.

    Raises ``TransformRejected`` if any point would be drawn outside the grid.
    """
    c = (config.box_center, config.box_center)
    out = char.map_points(lambda s: transform.apply(s, c))
    r = _round(out.points()) + config.offset
    if len(r) and (r.min() < 0 or r.max() >= config.input_size):
        raise TransformRejected("transformed character leaves the input grid")
    return out


def apply_to_image(grid: SparseGrid, transform: AffineTransform) -> SparseGrid:
    """Bilinear inverse-mapped resampling about the grid centre.

    Output sites whose bilinear footprint touches only inactive sites stay
    inactive.  Raises ``TransformRejected`` if active content would leave the grid.
    """
    s = grid.spatial_size
    c = np.array([(s - 1) / 2, (s - 1) / 2])
    xs, ys = grid.active_sites()
    if len(xs) == 0 or transform.is_identity:
        return SparseGrid(grid.pointer.copy(), grid.features.copy())
    src = np.stack([xs, ys], axis=1).astype(np.float64)
    corners = np.array([[src[:, 0].min() - 1, src[:, 1].min() - 1], [src[:, 0].max() + 1, src[:, 1].min() - 1],
                        [src[:, 0].min() - 1, src[:, 1].max() + 1], [src[:, 0].max() + 1, src[:, 1].max() + 1]])
    moved = _round(transform.apply(src, c))
    if moved.min() < 0 or moved.max() >= s:
        raise TransformRejected("transformed image leaves the input grid")
    box = transform.apply(corners, c)
    x0, y0 = np.maximum(np.floor(box.min(axis=0)).astype(int), 0)
    x1, y1 = np.minimum(np.ceil(box.max(axis=0)).astype(int), s - 1)
    qy, qx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    q = np.stack([qx.ravel(), qy.ravel()], axis=1).astype(np.float64)
    p = transform.inverse().apply(q, c)
    # snap round-off so integer shifts resample exactly
    p = np.where(np.abs(p - np.round(p)) < 1e-9, np.round(p), p)
    fx, fy = np.floor(p[:, 0]).astype(int), np.floor(p[:, 1]).astype(int)
    wx, wy = p[:, 0] - fx, p[:, 1] - fy
    ptr = np.zeros((s + 2, s + 2), dtype=np.int64)  # 1-site ground border
    ptr[1:-1, 1:-1] = grid.pointer
    feats = grid.features
    acc = np.zeros((len(q), grid.num_features))
    active = np.zeros(len(q), dtype=bool)
    for ox, oy, w in ((0, 0, (1 - wx) * (1 - wy)), (1, 0, wx * (1 - wy)), (0, 1, (1 - wx) * wy), (1, 1, wx * wy)):
        sx = np.clip(fx + ox, -1, s) + 1
        sy = np.clip(fy + oy, -1, s) + 1
        rows = ptr[sy, sx]
        acc += w[:, None] * feats[rows]
        active |= (rows > 0) & (w > 0)
    keep = np.nonzero(active)[0]
    return SparseGrid.from_sites(s, q[keep, 0].astype(int), q[keep, 1].astype(int),
                                 acc[keep].astype(feats.dtype), grid.ground_row.copy())


def augment_strokes(char: StrokeCharacter, config: AugmentConfig, enc: EncodingConfig,
                    rng: np.random.Generator) -> StrokeCharacter:
    """Sample transforms until one keeps the character inside the grid (identity after 10 tries)."""
    for _ in range(MAX_ATTEMPTS):
        try:
            return apply_to_strokes(char, sample_transform(config, rng), enc)
        except TransformRejected:
            continue
    return char


def augment_image(grid: SparseGrid, config: AugmentConfig, rng: np.random.Generator) -> SparseGrid:
    for _ in range(MAX_ATTEMPTS):
        try:
            return apply_to_image(grid, sample_transform(config, rng))
        except TransformRejected:
            continue
    return grid

