"""Render a sampled embedding trajectory into one image per embedding.

All referenced tensors are read and validated before any image is written,
so malformed input never leaves partial output. The trajectory directory is
read-only to the bridge; images plus a sidecar record go to the output
directory only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .manifest import SampledEmbedding, load_handoff

FIXED = "fixed"
PER_STEP = "per-step"


@dataclass(frozen=True)
class BridgeJob:
    trajectory_dir: Path
    out_dir: Path
    diffusion_steps: int = 50
    image_size: tuple[int, int] = (512, 512)
    prompt: str = ""  # kept empty: generation is conditioned on the embedding alone
    latent_mode: str = FIXED
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trajectory_dir", Path(self.trajectory_dir))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.diffusion_steps < 1:
            raise ValueError(f"diffusion_steps must be >= 1, got {self.diffusion_steps}")
        if self.latent_mode not in (FIXED, PER_STEP):
            raise ValueError(f"latent_mode must be '{FIXED}' or '{PER_STEP}'")


@dataclass(frozen=True)
class RenderedImage:
    fraction: float
    step: int
    image_path: Path
    source: Path


def _image_name(sample: SampledEmbedding, taken: set[str]) -> str:
    base = f"p{int(round(sample.fraction * 100)):03d}_step{sample.step:06d}"
    name = f"{base}.png"
    k = 1
    while name in taken:
        name = f"{base}_{k}.png"
        k += 1
    taken.add(name)
    return name


def render_trajectory(job: BridgeJob, generator) -> list[RenderedImage]:
    samples = load_handoff(job.trajectory_dir)  # validates every tensor up front
    job.out_dir.mkdir(parents=True, exist_ok=True)
    taken: set[str] = set()
    records: list[RenderedImage] = []
    for i, sample in enumerate(samples):
        latent_seed = job.seed if job.latent_mode == FIXED else job.seed + sample.step
        image = generator.render(sample.grid, latent_seed, job.diffusion_steps, job.image_size)
        name = _image_name(sample, taken)
        image.save(job.out_dir / name)
        records.append(
            RenderedImage(
                fraction=sample.fraction,
                step=sample.step,
                image_path=job.out_dir / name,
                source=sample.source,
            )
        )
    _write_sidecar(job, records, getattr(generator, "name", type(generator).__name__))
    return records


def _write_sidecar(job: BridgeJob, records: list[RenderedImage], generator_name: str) -> None:
    lines = [
        "[render]",
        f"generator = {generator_name}",
        f"diffusion_steps = {job.diffusion_steps}",
        f"image_size = {job.image_size[0]}x{job.image_size[1]}",
        f"latent_mode = {job.latent_mode}",
        f"seed = {job.seed}",
        f"count = {len(records)}",
        "",
    ]
    for i, r in enumerate(records):
        lines += [
            f"[image {i}]",
            f"file = {r.image_path.name}",
            f"fraction = {r.fraction!r}",
            f"step = {r.step}",
            f"source = {r.source}",
            "",
        ]
    (job.out_dir / "images.txt").write_text("\n".join(lines), "utf-8")
