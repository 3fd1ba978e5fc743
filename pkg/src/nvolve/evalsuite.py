"""Activation-distribution evaluation: pool vs top-k pool vs top-k generated.

For a region, every embedding is scored by its predicted region-mean
activation under one fixed encoder. The report compares three score
distributions: the whole candidate pool, the top-k of that pool, and the
top-k of a generated set, all ranked and scored by the same encoder.

Quartiles use linear interpolation on the inclusive range (numpy's default
"linear" method), so the emitted CSV is stable across implementations.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .embedding import Embedding
from .encoder import EncoderModel, forward
from .objective import NeuralObjective

DISTRIBUTIONS = ("pool", "top_pool", "generated")
STAT_NAMES = ("count", "min", "q1", "median", "q3", "max", "mean")


@dataclass(frozen=True)
class DistributionStats:
    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float

    @classmethod
    def from_scores(cls, scores: np.ndarray) -> "DistributionStats":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.size == 0:
            raise ValueError("cannot summarize an empty score set")
        q1, med, q3 = np.percentile(scores, [25.0, 50.0, 75.0], method="linear")
        return cls(
            count=int(scores.size),
            minimum=float(scores.min()),
            q1=float(q1),
            median=float(med),
            q3=float(q3),
            maximum=float(scores.max()),
            mean=float(scores.mean()),
        )

    def as_row_values(self) -> list[tuple[str, float]]:
        return [
            ("count", float(self.count)),
            ("min", self.minimum),
            ("q1", self.q1),
            ("median", self.median),
            ("q3", self.q3),
            ("max", self.maximum),
            ("mean", self.mean),
        ]


@dataclass(frozen=True)
class ActivationReport:
    region: str
    k: int
    pool_stats: DistributionStats
    top_pool_stats: DistributionStats
    generated_stats: DistributionStats
    flags: tuple[str, ...] = ()


def region_mean_scores(
    model: EncoderModel, embeddings: list[Embedding], voxel_indices: np.ndarray
) -> np.ndarray:
    """Predicted region-mean activation for each embedding."""
    if not embeddings:
        raise ValueError("no embeddings to score")
    x = np.stack([e.flat for e in embeddings])
    responses = forward(model, x)
    return responses[:, np.asarray(voxel_indices, dtype=np.int64)].mean(axis=1)


def rank_by_region_mean(
    model: EncoderModel, embeddings: list[Embedding], target
) -> np.ndarray:
    """Indices sorted by descending predicted score; ties keep lower index first.

    `target` is either a voxel index array (score = region mean) or a
    NeuralObjective (score = -loss, so better objectives rank first).
    """
    if isinstance(target, NeuralObjective):
        if not embeddings:
            raise ValueError("no embeddings to rank")
        x = np.stack([e.flat for e in embeddings])
        responses = forward(model, x)
        scores = np.array([-target.loss(r) for r in responses])
    else:
        scores = region_mean_scores(model, embeddings, target)
    return np.argsort(-scores, kind="stable")


def activation_report(
    model: EncoderModel,
    region: str,
    voxel_indices: np.ndarray,
    pool: list[Embedding],
    generated: list[Embedding],
    k: int,
) -> ActivationReport:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(pool) or k > len(generated):
        raise ValueError(
            f"k={k} larger than pool ({len(pool)}) or generated ({len(generated)})"
        )
    pool_scores = region_mean_scores(model, pool, voxel_indices)
    gen_scores = region_mean_scores(model, generated, voxel_indices)
    top_pool = np.sort(pool_scores)[::-1][:k]
    top_gen = np.sort(gen_scores)[::-1][:k]
    flags = []
    if k * 10 <= len(pool) and top_pool.min() < np.median(pool_scores):
        flags.append("top_pool_min_below_pool_median")
    return ActivationReport(
        region=region,
        k=k,
        pool_stats=DistributionStats.from_scores(pool_scores),
        top_pool_stats=DistributionStats.from_scores(top_pool),
        generated_stats=DistributionStats.from_scores(top_gen),
        flags=tuple(flags),
    )


def report_csv(reports: list[ActivationReport]) -> str:
    """Deterministic CSV, one row per (region, distribution, statistic)."""
    if not reports:
        raise ValueError("need at least one report")
    buf = io.StringIO()
    buf.write("region,distribution,stat,value\n")
    for rep in reports:
        for dist, stats in zip(
            DISTRIBUTIONS, (rep.pool_stats, rep.top_pool_stats, rep.generated_stats)
        ):
            for stat, value in stats.as_row_values():
                buf.write(f"{rep.region},{dist},{stat},{value!r}\n")
    return buf.getvalue()


def parse_report_csv(text: str) -> dict[tuple[str, str, str], float]:
    """Inverse of report_csv: (region, distribution, stat) -> value."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != "region,distribution,stat,value":
        raise ValueError("not an activation report CSV")
    out = {}
    for line in lines[1:]:
        region, dist, stat, value = line.split(",")
        out[(region, dist, stat)] = float(value)
    return out


def report_svg(reports: list[ActivationReport]) -> str:
    """Deterministic SVG box plot of the three distributions per region."""
    if not reports:
        raise ValueError("need at least one report")
    width_per = 200
    width, height = width_per * len(reports), 260
    top, bottom = 30, 230
    lo = min(r.pool_stats.minimum for r in reports)
    hi = max(
        max(r.top_pool_stats.maximum, r.generated_stats.maximum, r.pool_stats.maximum)
        for r in reports
    )
    span = hi - lo or 1.0

    def y(v: float) -> str:
        return f"{bottom - (v - lo) / span * (bottom - top):.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    colors = {"pool": "#999999", "top_pool": "#4878cf", "generated": "#d65f5f"}
    for ri, rep in enumerate(reports):
        base = ri * width_per
        parts.append(
            f'<text x="{base + width_per // 2}" y="16" text-anchor="middle" '
            f'font-size="13">{rep.region} (k={rep.k})</text>'
        )
        for di, (dist, stats) in enumerate(
            zip(DISTRIBUTIONS, (rep.pool_stats, rep.top_pool_stats, rep.generated_stats))
        ):
            cx = base + 40 + di * 60
            color = colors[dist]
            parts.append(
                f'<line x1="{cx}" y1="{y(stats.minimum)}" x2="{cx}" '
                f'y2="{y(stats.maximum)}" stroke="{color}" stroke-width="1"/>'
            )
            parts.append(
                f'<rect x="{cx - 12}" y="{y(stats.q3)}" width="24" '
                f'height="{float(y(stats.q1)) - float(y(stats.q3)):.2f}" '
                f'fill="{color}" fill-opacity="0.4" stroke="{color}"/>'
            )
            parts.append(
                f'<line x1="{cx - 12}" y1="{y(stats.median)}" x2="{cx + 12}" '
                f'y2="{y(stats.median)}" stroke="{color}" stroke-width="2"/>'
            )
            parts.append(
                f'<text x="{cx}" y="{bottom + 16}" text-anchor="middle" '
                f'font-size="10">{dist}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
