"""Sparse spatial grids: a pointer matrix over sites plus a compact feature matrix.

Every site of a layer either points at its own feature row (an *active* site)
or at the shared ground-state row.  ``SparseGrid`` is the single-sample form
(row 0 is the ground state).  ``SparseBatch`` stacks several samples into one
feature matrix so that layers can be evaluated with a handful of matrix
products per batch; rows ``0..B-1`` are the per-sample ground states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

DTYPE = np.float32


class GridError(ValueError):
    """Invalid dimension, shape or coordinate for a sparse grid."""


class SparseGrid:
    """One sample's state at one network layer.

    ``pointer[y, x]`` is a row index into ``features``; row 0 is the ground
    state and rows ``1..R-1`` are in bijection with the active sites.
    """

    def __init__(self, pointer: np.ndarray, features: np.ndarray):
        pointer = np.asarray(pointer, dtype=np.int64)
        features = np.asarray(features)
        if pointer.ndim != 2 or pointer.shape[0] != pointer.shape[1]:
            raise GridError(f"pointer must be square 2-D, got shape {pointer.shape}")
        if features.ndim != 2 or features.shape[0] < 1:
            raise GridError(f"features must be (R>=1, M), got shape {features.shape}")
        self.pointer = pointer
        self._features = features
        self._rows = features.shape[0]
        self.trace = None

    @classmethod
    def new_empty(cls, spatial_size: int, num_features: int, ground_row=None, dtype=DTYPE) -> "SparseGrid":
        if spatial_size <= 0 or num_features <= 0:
            raise GridError(f"invalid dimensions: spatial_size={spatial_size}, num_features={num_features}")
        if ground_row is None:
            ground_row = np.zeros(num_features, dtype=dtype)
        ground_row = np.asarray(ground_row, dtype=dtype)
        if ground_row.shape != (num_features,):
            raise GridError(f"ground_row must have length {num_features}, got {ground_row.shape}")
        pointer = np.zeros((spatial_size, spatial_size), dtype=np.int64)
        return cls(pointer, ground_row[None, :].copy())

    @classmethod
    def from_sites(cls, spatial_size: int, xs, ys, rows, ground_row=None) -> "SparseGrid":
        """Build a grid from distinct active coordinates and their rows."""
        rows = np.asarray(rows)
        if not np.issubdtype(rows.dtype, np.floating):
            rows = rows.astype(DTYPE)
        rows = rows.reshape(len(rows), -1) if rows.ndim == 1 else rows
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        m = rows.shape[1] if ground_row is None else len(ground_row)
        grid = cls.new_empty(spatial_size, m, ground_row, dtype=rows.dtype)
        if len(xs) == 0:
            return grid
        if (xs.min() < 0 or ys.min() < 0 or xs.max() >= spatial_size or ys.max() >= spatial_size):
            raise GridError("site coordinates out of bounds")
        flat = ys * spatial_size + xs
        if len(np.unique(flat)) != len(flat):
            raise GridError("duplicate active sites")
        grid.pointer[ys, xs] = np.arange(1, len(xs) + 1)
        grid._features = np.vstack([grid._features, rows])
        grid._rows = grid._features.shape[0]
        return grid

    @property
    def spatial_size(self) -> int:
        return self.pointer.shape[0]

    @property
    def num_features(self) -> int:
        return self._features.shape[1]

    @property
    def features(self) -> np.ndarray:
        return self._features[: self._rows]

    @property
    def ground_row(self) -> np.ndarray:
        return self._features[0]

    def set_site(self, x: int, y: int, feature_row) -> None:
        s = self.spatial_size
        if not (0 <= x < s and 0 <= y < s):
            raise GridError(f"site ({x}, {y}) outside {s}x{s} grid")
        feature_row = np.asarray(feature_row, dtype=self._features.dtype)
        if feature_row.shape != (self.num_features,):
            raise GridError(f"feature_row must have length {self.num_features}")
        r = self.pointer[y, x]
        if r == 0:
            if self._rows == self._features.shape[0]:
                grown = np.empty((max(2 * self._rows, 4), self.num_features), dtype=self._features.dtype)
                grown[: self._rows] = self._features[: self._rows]
                self._features = grown
            r = self._rows
            self._rows += 1
            self.pointer[y, x] = r
        self._features[r] = feature_row

    def active_count(self) -> int:
        return self._rows - 1

    def active_mask(self) -> np.ndarray:
        return self.pointer > 0

    def active_sites(self) -> tuple[np.ndarray, np.ndarray]:
        """(xs, ys) of active sites, in row order."""
        ys, xs = np.nonzero(self.pointer)
        order = np.argsort(self.pointer[ys, xs])
        return xs[order], ys[order]

    def to_dense(self) -> np.ndarray:
        """Dense ``(S, S, M)`` array indexed ``[y, x, feature]``."""
        return self.features[self.pointer]

    @classmethod
    def from_dense(cls, dense: np.ndarray, ground_row) -> "SparseGrid":
        dense = np.asarray(dense)
        if dense.ndim != 3 or dense.shape[0] != dense.shape[1]:
            raise GridError(f"dense array must be (S, S, M), got {dense.shape}")
        ground_row = np.asarray(ground_row, dtype=dense.dtype)
        active = np.any(dense != ground_row, axis=2)
        ys, xs = np.nonzero(active)
        return cls.from_sites(dense.shape[0], xs, ys, dense[ys, xs], ground_row)

    def __repr__(self) -> str:
        return (f"SparseGrid(size={self.spatial_size}, features={self.num_features}, "
                f"active={self.active_count()})")


@dataclass
class SparseBatch:
    """Several samples sharing one feature matrix.

    ``pointer`` has shape ``(B, S, S)``.  Row ``b < B`` is sample ``b``'s ground
    state, so a site of sample ``b`` is inactive iff it points at row ``b``.
    ``owner[r]`` is the sample that row ``r`` belongs to.
    """

    pointer: np.ndarray
    features: np.ndarray
    owner: np.ndarray
    trace: Any = field(default=None, repr=False)

    @property
    def batch_size(self) -> int:
        return self.pointer.shape[0]

    @property
    def spatial_size(self) -> int:
        return self.pointer.shape[1]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def active_mask(self) -> np.ndarray:
        return self.pointer >= self.batch_size

    def active_counts(self) -> np.ndarray:
        return np.bincount(self.owner[self.batch_size:], minlength=self.batch_size)

    @classmethod
    def stack(cls, grids: Sequence[SparseGrid]) -> "SparseBatch":
        if not grids:
            raise GridError("cannot stack an empty list of grids")
        s, m = grids[0].spatial_size, grids[0].num_features
        for g in grids:
            if g.spatial_size != s or g.num_features != m:
                raise GridError("grids in a batch must share spatial size and feature count")
        b = len(grids)
        counts = np.array([g.active_count() for g in grids], dtype=np.int64)
        offsets = b + np.concatenate([[0], np.cumsum(counts)[:-1]])
        feats = [np.stack([g.ground_row for g in grids])]
        pointer = np.empty((b, s, s), dtype=np.int64)
        for i, g in enumerate(grids):
            feats.append(g.features[1:])
            # row r>0 of grid i maps to offsets[i] + r - 1; ground maps to i
            pointer[i] = np.where(g.pointer > 0, g.pointer + (offsets[i] - 1), i)
        owner = np.concatenate([np.arange(b), np.repeat(np.arange(b), counts)])
        return cls(pointer, np.vstack(feats).astype(grids[0].features.dtype, copy=False), owner)

    def unstack(self) -> list[SparseGrid]:
        grids = []
        b = self.batch_size
        for i in range(b):
            p = self.pointer[i]
            mask = p >= b
            rows = p[mask]
            order = np.argsort(rows)
            ys, xs = np.nonzero(mask)
            grid = SparseGrid.from_sites(self.spatial_size, xs[order], ys[order],
                                         self.features[rows[order]], self.features[i])
            grids.append(grid)
        return grids

    def to_dense(self) -> np.ndarray:
        """Dense ``(B, S, S, M)`` array."""
        return self.features[self.pointer]


def as_batch(x) -> SparseBatch:
    if isinstance(x, SparseBatch):
        return x
    if isinstance(x, SparseGrid):
        return SparseBatch.stack([x])
    raise TypeError(f"expected SparseGrid or SparseBatch, got {type(x).__name__}")
