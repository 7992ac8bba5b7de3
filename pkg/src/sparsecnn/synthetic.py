"""Synthetic inputs: a drawn circle and a small toy stroke dataset of ten glyph classes."""

from __future__ import annotations

import numpy as np

from .data import STROKES, Dataset
from .encoding import EncodingConfig, StrokeCharacter, rasterize
from .grid import SparseGrid


def circle_character(diameter: float, center: tuple[float, float], points: int = 256) -> StrokeCharacter:
    t = np.linspace(0, 2 * np.pi, points + 1)
    r = diameter / 2
    return StrokeCharacter(0, [np.stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)], axis=1)])


def circle_grid(size: int, diameter: float, with_histograms: bool = False) -> SparseGrid:
    """One-pixel-wide circle outline centred in a ``size`` grid."""
    c = (size - 1) / 2
    return rasterize(circle_character(diameter, (c, c)), EncodingConfig(size, size, with_histograms))


def _arc(a0, a1, n=24, cx=0.0, cy=0.0, r=1.0):
    t = np.linspace(a0, a1, n)
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)


GLYPHS = [
    [_arc(0, 2 * np.pi)],                                   # circle
    [np.array([[0, -1], [0, 1.0]])],                        # vertical bar
    [np.array([[-1, 0], [1.0, 0]])],                        # horizontal bar
    [np.array([[-1, -1], [1.0, 1]])],                       # diagonal
    [np.array([[-1, 1], [1.0, -1]])],                       # anti-diagonal
    [np.array([[-1, 1], [-1, -1], [1.0, -1]])],             # L
    [np.array([[-1, 1], [0, -1], [1.0, 1]])],               # V
    [np.array([[-1, 1], [1, 1], [-1, -1], [1.0, -1]])],     # Z
    [np.array([[-1, 0], [1.0, 0]]), np.array([[0, -1], [0, 1.0]])],  # plus
    [_arc(np.pi / 2, 2.5 * np.pi, cy=0.5, r=0.5), _arc(np.pi / 2, -1.5 * np.pi, cy=-0.5, r=0.5)],  # eight
]


def toy_character(label: int, rng: np.random.Generator, noise: float = 0.06) -> StrokeCharacter:
    """A randomly distorted copy of glyph ``label``."""
    theta = rng.uniform(-0.25, 0.25)
    c, s = np.cos(theta), np.sin(theta)
    a = np.array([[c, -s], [s, c]]) @ np.diag(rng.uniform(0.7, 1.3, size=2))
    strokes = []
    for st in GLYPHS[label]:
        pts = st @ a.T + rng.normal(0, noise, size=st.shape)
        strokes.append(pts * 10.0)
    return StrokeCharacter(label, strokes)


def toy_dataset(per_class: int, seed: int = 0, role: str = "train") -> Dataset:
    rng = np.random.default_rng(seed)
    chars = [toy_character(label, rng) for _ in range(per_class) for label in range(len(GLYPHS))]
    return Dataset(chars, [ch.label for ch in chars], len(GLYPHS), STROKES, role)
