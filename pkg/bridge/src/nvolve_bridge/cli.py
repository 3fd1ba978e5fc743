"""Bridge CLI: nvolve-bridge --trajectory DIR --out DIR [--generator procedural]."""

from __future__ import annotations

import argparse
import sys

from .bridge import BridgeJob, render_trajectory
from .generators import GeneratorSetupError, load_generator
from .manifest import HandoffError
from .nvtf import TensorFormatError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nvolve-bridge",
        description="Render sampled trajectory embeddings into images.",
    )
    parser.add_argument("--trajectory", required=True, help="sample output or exported trajectory dir")
    parser.add_argument("--out", required=True)
    parser.add_argument("--generator", default="procedural")
    parser.add_argument("--steps", type=int, default=50, help="diffusion steps per image")
    parser.add_argument("--size", default="512x512")
    parser.add_argument("--latent-mode", choices=["fixed", "per-step"], default="fixed")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        w, h = (int(t) for t in args.size.lower().split("x"))
    except ValueError:
        print(f"error: --size wants WxH, got {args.size!r}", file=sys.stderr)
        return 2
    try:
        generator = load_generator(args.generator)
        job = BridgeJob(
            trajectory_dir=args.trajectory,
            out_dir=args.out,
            diffusion_steps=args.steps,
            image_size=(w, h),
            latent_mode=args.latent_mode,
            seed=args.seed,
        )
        records = render_trajectory(job, generator)
    except (GeneratorSetupError, HandoffError, TensorFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for r in records:
        print(f"step {r.step} (progress {r.fraction:.2f}) -> {r.image_path}")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
