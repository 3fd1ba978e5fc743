"""Embedding points in the token-grid semantic space.

An embedding is a flat float64 vector of length tokens*dim together with its
grid shape. Values are immutable once constructed; every transformation
returns a fresh instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EmbeddingShape:
    """Token-grid dimensions. Default working size is 16x768."""

    tokens: int
    dim: int

    def __post_init__(self):
        if self.tokens < 1 or self.dim < 1:
            raise ValueError(
                f"embedding shape must have positive dims, got {self.tokens}x{self.dim}"
            )

    @property
    def flat_len(self) -> int:
        return self.tokens * self.dim


@dataclass(frozen=True, eq=False)
class Embedding:
    """A point q in embedding space, stored as a read-only float64 vector."""

    shape: EmbeddingShape
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != self.shape.flat_len:
            raise ValueError(
                f"embedding length mismatch: shape {self.shape.tokens}x{self.shape.dim} "
                f"needs {self.shape.flat_len} values, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def flat(self) -> np.ndarray:
        """Flat view, length tokens*dim."""
        return self.values

    @property
    def grid(self) -> np.ndarray:
        """Row-major token-grid view: grid[i, j] == flat[i*dim + j]."""
        return self.values.reshape(self.shape.tokens, self.shape.dim)

    def with_values(self, values: np.ndarray) -> "Embedding":
        return Embedding(self.shape, values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)


def from_grid(grid: np.ndarray) -> Embedding:
    """Build an embedding from a 2-D token grid (row-major flattening)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"token grid must be 2-D, got ndim={grid.ndim}")
    shape = EmbeddingShape(grid.shape[0], grid.shape[1])
    return Embedding(shape, grid.reshape(-1))


def random_embedding(shape: EmbeddingShape, seed: int) -> Embedding:
    """Draw i.i.d. standard-normal values from numpy's PCG64 stream.

    The generator is `np.random.default_rng(seed)`, so identical
    (shape, seed) pairs give bit-identical embeddings.
    """
    rng = np.random.default_rng(seed)
    return Embedding(shape, rng.standard_normal(shape.flat_len))
