"""Synthetic ground-truth subjects with planted region structure.

Each region R gets a planted unit direction u_R in embedding space; every
voxel v in R is tuned to w_v = u_R + delta_v with ||delta_v|| <= 0.1, so the
region's mean response tracks the projection of the embedding onto u_R.
Directions of distinct regions are orthonormal by default (co-activation is
then satisfiable and antagonism unambiguous); `direction_overlap` mixes in a
shared component to give every pair a fixed inner product instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import Embedding, EmbeddingShape
from .encoder import ResponseDataset, normalize_per_session
from .objective import RoiAtlas

LINEAR = "linear"
RELU = "relu"


@dataclass
class SyntheticSubject:
    shape: EmbeddingShape
    n_voxels: int
    atlas: RoiAtlas
    tuning_w: np.ndarray  # (n_voxels, flat_len)
    tuning_b: np.ndarray  # (n_voxels,)
    directions: dict[str, np.ndarray]  # region -> planted unit direction
    noise_sigma: float
    nonlinearity: str

    def __post_init__(self):
        if self.nonlinearity not in (LINEAR, RELU):
            raise ValueError(f"nonlinearity must be '{LINEAR}' or '{RELU}'")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.tuning_w = np.asarray(self.tuning_w, dtype=np.float64)
        self.tuning_b = np.asarray(self.tuning_b, dtype=np.float64)
        if self.tuning_w.shape != (self.n_voxels, self.shape.flat_len):
            raise ValueError(
                f"tuning_w must be ({self.n_voxels}, {self.shape.flat_len}), "
                f"got {self.tuning_w.shape}"
            )
        if self.tuning_b.shape != (self.n_voxels,):
            raise ValueError("tuning_b must have one bias per voxel")


def make_subject(
    shape: EmbeddingShape,
    regions: list[tuple[str, int]],
    seed: int,
    noise_sigma: float = 0.0,
    nonlinearity: str = LINEAR,
    direction_overlap: float = 0.0,
    n_voxels: int | None = None,
) -> SyntheticSubject:
    """Plant one seeded unit direction per region and tune its voxels to it.

    Regions occupy consecutive voxel blocks in listing order; extra voxels
    beyond the region blocks (when n_voxels exceeds the size sum) get weak
    unstructured tuning. direction_overlap in [0, 1) sets the pairwise inner
    product of planted directions (0 = orthonormal).
    """
    if not regions:
        raise ValueError("need at least one region")
    if any(size < 1 for _, size in regions):
        raise ValueError("region sizes must be >= 1")
    if not 0.0 <= direction_overlap < 1.0:
        raise ValueError(f"direction_overlap must be in [0, 1), got {direction_overlap}")
    total = sum(size for _, size in regions)
    if n_voxels is None:
        n_voxels = total
    elif n_voxels < total:
        raise ValueError(f"n_voxels={n_voxels} smaller than region size sum {total}")

    flat_len = shape.flat_len
    n_basis = len(regions) + (1 if direction_overlap > 0 else 0)
    if n_basis > flat_len:
        raise ValueError(
            f"{len(regions)} regions need {n_basis} orthogonal directions, "
            f"but the embedding space has only {flat_len} dimensions"
        )

    rng = np.random.default_rng(seed)
    basis = _orthonormal_rows(rng, n_basis, flat_len)
    if direction_overlap > 0:
        shared = basis[-1]
        basis = (
            np.sqrt(1.0 - direction_overlap) * basis[:-1]
            + np.sqrt(direction_overlap) * shared
        )

    tuning_w = np.empty((n_voxels, flat_len))
    tuning_b = np.zeros(n_voxels)
    atlas_regions: dict[str, np.ndarray] = {}
    directions: dict[str, np.ndarray] = {}
    start = 0
    for (name, size), direction in zip(regions, basis):
        idx = np.arange(start, start + size)
        atlas_regions[name] = idx
        directions[name] = direction
        tuning_w[idx] = direction + _bounded_perturbations(rng, size, flat_len, 0.1)
        start += size
    if start < n_voxels:
        tuning_w[start:] = _bounded_perturbations(rng, n_voxels - start, flat_len, 0.1)

    return SyntheticSubject(
        shape=shape,
        n_voxels=n_voxels,
        atlas=RoiAtlas(atlas_regions),
        tuning_w=tuning_w,
        tuning_b=tuning_b,
        directions=directions,
        noise_sigma=noise_sigma,
        nonlinearity=nonlinearity,
    )


def _orthonormal_rows(rng: np.random.Generator, k: int, dim: int) -> np.ndarray:
    """Gram-Schmidt on seeded Gaussian draws; redraws on (measure-zero) collapse."""
    rows = np.empty((k, dim))
    i = 0
    while i < k:
        v = rng.standard_normal(dim)
        for j in range(i):
            v -= np.dot(v, rows[j]) * rows[j]
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            continue
        rows[i] = v / norm
        i += 1
    return rows


def _bounded_perturbations(
    rng: np.random.Generator, n: int, dim: int, max_norm: float
) -> np.ndarray:
    raw = rng.standard_normal((n, dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return raw * rng.uniform(0.0, max_norm, size=(n, 1))


def oracle_response(subject: SyntheticSubject, e: Embedding, seed: int = 0) -> np.ndarray:
    """Ground-truth voxel responses g(w_v . q + b_v) + seeded Gaussian noise."""
    if e.shape != subject.shape:
        raise ValueError(f"embedding shape {e.shape} does not match subject {subject.shape}")
    r = subject.tuning_w @ e.flat + subject.tuning_b
    if subject.nonlinearity == RELU:
        r = np.maximum(r, 0.0)
    if subject.noise_sigma > 0:
        r = r + np.random.default_rng(seed).normal(0.0, subject.noise_sigma, size=r.shape)
    return r


def make_dataset(
    subject: SyntheticSubject, n_samples: int, sessions: int, seed: int
) -> ResponseDataset:
    """Random embeddings + oracle responses in equal session blocks, z-scored per session."""
    if sessions < 1 or n_samples < 2 * sessions:
        raise ValueError(
            f"need n_samples >= 2*sessions so every session can be z-scored, "
            f"got {n_samples} samples / {sessions} sessions"
        )
    rng = np.random.default_rng(seed)
    embeddings = []
    raw = np.empty((n_samples, subject.n_voxels))
    noise_seeds = rng.integers(0, 2**63 - 1, size=n_samples)
    for i in range(n_samples):
        e = Embedding(subject.shape, rng.standard_normal(subject.shape.flat_len))
        embeddings.append(e)
        raw[i] = oracle_response(subject, e, seed=int(noise_seeds[i]))
    session_ids = (np.arange(n_samples) * sessions) // n_samples
    responses = normalize_per_session(raw, session_ids)
    return ResponseDataset(embeddings=embeddings, responses=responses, session_ids=session_ids)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; used to track alignment with planted directions."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
