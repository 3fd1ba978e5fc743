"""Embedding-conditioned image generators behind a tiny black-box interface.

A generator only needs `render(grid, latent_seed, steps, size) -> PIL.Image`.
The built-in procedural backend runs a deterministic iterative denoising of a
seeded latent toward an embedding-derived pattern, so the bridge can be
exercised end to end without any pretrained weights. Real generators plug in
via "plugin:<module>:<factory>".
"""

from __future__ import annotations

import importlib

import numpy as np
from PIL import Image


class GeneratorSetupError(RuntimeError):
    """The requested generator backend is not usable; message says how to fix it."""


class ProceduralGenerator:
    """Deterministic stand-in generator: denoises a seeded latent toward a
    sinusoidal field whose frequencies, orientations and colors are read off
    the embedding grid. Same (embedding, seed, steps, size) -> same pixels."""

    name = "procedural"

    def render(self, grid: np.ndarray, latent_seed: int, steps: int, size: tuple[int, int]) -> Image.Image:
        grid = np.asarray(grid, dtype=np.float64)
        w, h = size
        yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")

        # per-channel pattern parameters from embedding statistics
        row_m = grid.mean(axis=1)
        col_m = grid.mean(axis=0)
        target = np.empty((h, w, 3))
        for c in range(3):
            fx = 2.0 + 10.0 * _squash(row_m[c % len(row_m)])
            fy = 2.0 + 10.0 * _squash(col_m[c % len(col_m)])
            phase = np.pi * _squash(grid.flat[c] if grid.size > c else 0.0)
            amp = 0.5 + 0.5 * _squash(grid.std())
            target[:, :, c] = amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)

        # exponential approach: after `steps` rounds a (1 - 1/steps)^steps share of
        # the latent survives, so the seed stays visible in the output
        x = np.random.default_rng(latent_seed).normal(size=(h, w, 3))
        for _ in range(steps):
            x = x + (target - x) / steps
        lo, hi = x.min(), x.max()
        span = hi - lo if hi > lo else 1.0
        pixels = np.round((x - lo) / span * 255.0).astype(np.uint8)
        return Image.fromarray(pixels, mode="RGB")


def _squash(v: float) -> float:
    return float(0.5 * (np.tanh(v) + 1.0))


def load_generator(spec: str):
    """Build a generator from its spec string.

    "procedural" gives the built-in deterministic backend. A pretrained
    backend is addressed as "plugin:<module>:<factory>", where the factory
    returns an object with the render() interface; import or construction
    failures raise GeneratorSetupError with setup instructions.
    """
    if spec == "procedural":
        return ProceduralGenerator()
    if spec.startswith("plugin:"):
        rest = spec[len("plugin:"):]
        module_name, sep, attr = rest.partition(":")
        if not sep:
            raise GeneratorSetupError(
                f"generator spec {spec!r} must look like plugin:<module>:<factory>"
            )
        try:
            module = importlib.import_module(module_name)
        except ImportError as err:
            raise GeneratorSetupError(
                f"cannot import generator module {module_name!r} ({err}); install the "
                f"package providing it, or use --generator procedural"
            ) from None
        try:
            factory = getattr(module, attr)
        except AttributeError:
            raise GeneratorSetupError(
                f"module {module_name!r} has no factory {attr!r}"
            ) from None
        generator = factory()
        if not hasattr(generator, "render"):
            raise GeneratorSetupError(
                f"{module_name}:{attr} returned an object without a render() method"
            )
        return generator
    raise GeneratorSetupError(
        f"unknown generator {spec!r}; use 'procedural' or 'plugin:<module>:<factory>'"
    )
