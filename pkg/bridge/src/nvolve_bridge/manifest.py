"""Reading the trajectory handoff: sample listings and trajectory manifests.

The preferred handoff is a sample listing (samples.txt) naming each picked
embedding with its progress fraction and step. A raw trajectory directory
(manifest.txt) also works: every recorded embedding is used and its fraction
is recomputed from the best-so-far loss record.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nvtf import read_array


class HandoffError(ValueError):
    """Missing or inconsistent trajectory handoff files."""


@dataclass(frozen=True)
class SampledEmbedding:
    fraction: float
    step: int
    source: Path
    grid: np.ndarray  # (tokens, dim)


def _parse_sections(path: Path) -> list[tuple[str, dict[str, str]]]:
    sections: list[tuple[str, dict[str, str]]] = []
    for lineno, raw in enumerate(path.read_text("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            sections.append((line[1:-1], {}))
            continue
        if " = " in line:
            key, value = line.split(" = ", 1)
        elif line.endswith(" ="):
            key, value = line[:-2], ""
        else:
            raise HandoffError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if not sections:
            raise HandoffError(f"{path}:{lineno}: key before any [section]")
        sections[-1][1][key] = value
    return sections


def _load_grid(base: Path, rel: str) -> tuple[Path, np.ndarray]:
    tensor_path = base / rel
    if not tensor_path.exists():
        raise HandoffError(f"referenced tensor missing: {tensor_path}")
    grid = read_array(tensor_path)
    if grid.ndim != 2:
        raise HandoffError(f"{tensor_path}: expected a [tokens, dim] tensor, got shape {grid.shape}")
    return tensor_path, np.asarray(grid, dtype=np.float64)


def load_sample_listing(directory: Path) -> list[SampledEmbedding]:
    listing = directory / "samples.txt"
    out = []
    for name, fields in _parse_sections(listing):
        if not name.startswith("sample "):
            continue
        path, grid = _load_grid(directory, fields["embedding"])
        out.append(
            SampledEmbedding(
                fraction=float(fields["fraction"]),
                step=int(fields["step"]),
                source=path,
                grid=grid,
            )
        )
    if not out:
        raise HandoffError(f"{listing}: no sample records")
    return out


def load_trajectory_manifest(directory: Path) -> list[SampledEmbedding]:
    manifest = directory / "manifest.txt"
    points = []
    for name, fields in _parse_sections(manifest):
        if name.startswith("point "):
            points.append(fields)
    if not points:
        raise HandoffError(f"{manifest}: no points")

    losses = [float(p["loss"]) for p in points]
    best = np.minimum.accumulate(losses)
    total = losses[0] - best[-1]
    out = []
    for fields, b in zip(points, best):
        if "embedding" not in fields:
            continue
        fraction = 1.0 if total <= 0 else (losses[0] - b) / total
        path, grid = _load_grid(directory, fields["embedding"])
        out.append(
            SampledEmbedding(
                fraction=float(fraction), step=int(fields["step"]), source=path, grid=grid
            )
        )
    if not out:
        raise HandoffError(f"{manifest}: no recorded embeddings")
    return out


def load_handoff(directory) -> list[SampledEmbedding]:
    """Sampled embeddings from a sample directory or an exported trajectory."""
    directory = Path(directory)
    if (directory / "samples.txt").exists():
        return load_sample_listing(directory)
    if (directory / "manifest.txt").exists():
        return load_trajectory_manifest(directory)
    raise HandoffError(
        f"{directory}: neither samples.txt nor manifest.txt found; "
        f"point the bridge at a sample output or an exported trajectory"
    )
