"""Command-line pipeline: synth -> train -> optimize -> sample -> eval (+ export).

All outputs are files; stdout carries a one-line summary per command. Every
command writes a run_manifest.txt into its output directory recording the
exact argv, so any run can be reproduced bit-for-bit by replaying it.

Exit codes: 0 success, 1 runtime failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .embedding import Embedding, EmbeddingShape, random_embedding
from .encoder import (
    EncoderArchitecture,
    TrainConfig,
    TrainingDivergedError,
    train,
)
from .evalsuite import activation_report, report_csv, report_svg
from .objective import ObjectiveParseError, compile_objective, parse_objective
from .volve import (
    OptimizationDivergedError,
    OptimizeConfig,
    optimize,
    sample_at_fractions,
)
from . import persistence as io
from .synthetic import make_dataset, make_subject


class UsageError(Exception):
    """Bad flag values or missing inputs; exits with code 2."""


def _parse_regions(text: str) -> list[tuple[str, int]]:
    out = []
    for part in text.split(","):
        name, sep, size = part.partition(":")
        if not sep or not name:
            raise UsageError(f"--regions wants NAME:SIZE pairs, got {part!r}")
        try:
            out.append((name, int(size)))
        except ValueError:
            raise UsageError(f"bad region size in {part!r}") from None
    return out


def _parse_shape(text: str) -> EmbeddingShape:
    try:
        tokens, dim = text.lower().split("x")
        return EmbeddingShape(int(tokens), int(dim))
    except (ValueError, TypeError):
        raise UsageError(f"--shape wants TOKENSxDIM (e.g. 16x768), got {text!r}") from None


def _require_exists(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _write_manifest(out_dir: Path, command: str, argv: list[str], args) -> None:
    flags = {k: str(v) for k, v in vars(args).items() if k != "func" and v is not None}
    io.write_run_manifest(out_dir / io.RUN_MANIFEST, command, argv, flags, __version__)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, argv) -> int:
    regions = _parse_regions(args.regions)
    shape = _parse_shape(args.shape)
    if not 0.0 < args.val_fraction < 1.0:
        raise UsageError(f"--val-fraction must be in (0,1), got {args.val_fraction}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    subject = make_subject(
        shape,
        regions,
        seed=args.seed,
        noise_sigma=args.noise,
        nonlinearity=args.nonlinearity,
    )
    n_val = max(1, round(args.samples * args.val_fraction))
    n_train = args.samples - n_val
    train_ds = make_dataset(subject, n_train, args.sessions, seed=args.seed + 1)
    val_ds = make_dataset(subject, n_val, args.val_sessions, seed=args.seed + 2)
    io.save_subject(subject, out / "subject")
    io.save_atlas(subject.atlas, out / "atlas.txt")
    io.save_dataset(train_ds, out / "train")
    io.save_dataset(val_ds, out / "val")
    _write_manifest(out, "synth", argv, args)
    print(
        f"synth: {len(regions)} regions, {subject.n_voxels} voxels, "
        f"{n_train} train / {n_val} val samples -> {out}"
    )
    return 0


def cmd_train(args, argv) -> int:
    if args.lr <= 0 or args.max_epochs < 1 or args.patience < 1 or args.batch_size < 1:
        raise UsageError("lr must be > 0; max-epochs, patience and batch-size must be >= 1")
    train_dir = _require_exists(args.train, "training dataset")
    val_dir = _require_exists(args.val, "validation dataset")
    train_ds = io.load_dataset(train_dir)
    val_ds = io.load_dataset(val_dir)
    shape = train_ds.embeddings[0].shape
    try:
        hidden = tuple(int(t) for t in args.hidden.split(",") if t)
    except ValueError:
        raise UsageError(f"--hidden wants comma-separated widths, got {args.hidden!r}") from None
    arch = EncoderArchitecture(shape.flat_len, hidden, train_ds.n_voxels)
    cfg = TrainConfig(
        learning_rate=args.lr,
        max_epochs=args.max_epochs,
        patience=args.patience,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    model, log = train(train_ds, val_ds, arch, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_csv = log.as_csv()
    io.save_checkpoint(
        model,
        out,
        extra=[
            ("embedding", [("tokens", str(shape.tokens)), ("dim", str(shape.dim))]),
            (
                "train",
                [
                    ("seed", str(cfg.seed)),
                    ("learning_rate", repr(cfg.learning_rate)),
                    ("batch_size", str(cfg.batch_size)),
                    ("weight_decay", repr(cfg.weight_decay)),
                    ("best_epoch", str(log.best_epoch)),
                    ("epochs_ran", str(len(log.epochs))),
                    ("history_sha256", hashlib.sha256(log_csv.encode()).hexdigest()),
                ],
            ),
        ],
    )
    (out / "train_log.csv").write_text(log_csv)
    _write_manifest(out, "train", argv, args)
    best_r = max(r for _, _, r in log.epochs)
    print(
        f"train: {len(log.epochs)} epochs (best {log.best_epoch}), "
        f"val mean R = {best_r:.4f} -> {out}"
    )
    return 0


def _checkpoint_shape(ckpt_dir: Path, flag_shape: str | None) -> EmbeddingShape:
    if flag_shape:
        return _parse_shape(flag_shape)
    sections = io.read_sections(ckpt_dir / io.CHECKPOINT_FILE)
    try:
        emb = io.section_dict(sections, "embedding", str(ckpt_dir))
    except io.StructuredTextError:
        raise UsageError(
            "checkpoint has no [embedding] section; pass --shape TOKENSxDIM"
        ) from None
    return EmbeddingShape(int(emb["tokens"]), int(emb["dim"]))


def cmd_optimize(args, argv) -> int:
    if args.steps < 1 or args.lr <= 0 or args.record_every < 1:
        raise UsageError("steps and record-every must be >= 1 and lr must be > 0")
    if args.seed_embedding and args.seeds:
        raise UsageError("--seed-embedding fixes the start point; combine it with --seed, not --seeds")
    ckpt_dir = _require_exists(args.model, "model checkpoint")
    atlas_path = _require_exists(args.atlas, "atlas")
    model = io.load_checkpoint(ckpt_dir)
    atlas = io.load_atlas(atlas_path)
    terms = parse_objective(args.objective)
    obj = compile_objective(terms, atlas, model.arch.n_voxels)
    shape = _checkpoint_shape(ckpt_dir, args.shape)
    if shape.flat_len != model.arch.input_len:
        raise UsageError(
            f"shape {shape.tokens}x{shape.dim} does not match model input "
            f"{model.arch.input_len}"
        )
    cfg_base = dict(
        steps=args.steps,
        learning_rate=args.lr,
        record_every=args.record_every,
    )
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def run_one(seed: int, run_dir: Path):
        if args.seed_embedding:
            grid = io.read_tensor(_require_exists(args.seed_embedding, "seed embedding"))
            q0 = Embedding(shape, np.asarray(grid, dtype=np.float64).reshape(-1))
        else:
            q0 = random_embedding(shape, seed)
        traj = optimize(model, obj, q0, OptimizeConfig(seed=seed, **cfg_base))
        io.export_trajectory(traj, run_dir)
        return traj

    jobs = args.jobs
    env_cap = os.environ.get("NVOLVE_THREADS")
    if env_cap:
        jobs = max(1, min(jobs, int(env_cap)))
    if len(seeds) == 1:
        trajs = [run_one(seeds[0], out)]
        dirs = [out]
    else:
        dirs = [out / f"seed_{s}" for s in seeds]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trajs = list(pool.map(run_one, seeds, dirs))
    _write_manifest(out, "optimize", argv, args)
    for seed, traj, d in zip(seeds, trajs, dirs):
        print(
            f"optimize[seed {seed}]: {args.objective!r} loss {traj.points[0].loss:.4f} -> "
            f"{traj.best_losses[-1]:.4f} in {traj.final_step} steps -> {d}"
        )
    return 0


def cmd_sample(args, argv) -> int:
    traj_dir = _require_exists(args.trajectory, "trajectory directory")
    fractions = []
    for tok in args.fractions.split(","):
        try:
            fractions.append(float(tok))
        except ValueError:
            raise UsageError(f"bad fraction {tok!r}") from None
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise UsageError(f"fractions must lie in (0, 1], got {f}")
    traj = io.import_trajectory(traj_dir)
    samples = sample_at_fractions(traj, fractions)  # unrecorded step -> ValueError, exit 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sections: io.Sections = [
        ("samples", [("count", str(len(samples))), ("trajectory", str(traj_dir))])
    ]
    for i, (frac, step, emb) in enumerate(samples):
        fname = f"s{i}_p{int(round(frac * 100)):03d}_step{step:06d}.nvtf"
        io.write_tensor(out / fname, emb.grid)
        sections.append(
            (
                f"sample {i}",
                [("fraction", repr(frac)), ("step", str(step)), ("embedding", fname)],
            )
        )
    io.write_sections(out / "samples.txt", sections)
    _write_manifest(out, "sample", argv, args)
    listing = ", ".join(f"{f:g}->step {s}" for f, s, _ in samples)
    print(f"sample: {listing} -> {out}")
    return 0


def _load_embeddings(path: Path) -> list[Embedding]:
    """Embeddings from a dataset dir, a sample dir, a dir of .nvtf, or a stacked tensor."""
    if path.is_dir():
        if (path / io.DATASET_META).exists():
            return io.load_dataset(path).embeddings
        files = sorted(path.glob("*.nvtf"))
        if not files:
            raise UsageError(f"no .nvtf files in {path}")
        out = []
        for f in files:
            grid = io.read_tensor(f)
            out.append(Embedding(EmbeddingShape(*grid.shape), grid.astype(np.float64).reshape(-1)))
        return out
    arr = io.read_tensor(path)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise UsageError(f"{path}: expected a [n, tokens, dim] or [tokens, dim] tensor")
    shape = EmbeddingShape(arr.shape[1], arr.shape[2])
    return [Embedding(shape, row.astype(np.float64).reshape(-1)) for row in arr]


def cmd_eval(args, argv) -> int:
    if args.k < 1:
        raise UsageError(f"--k must be >= 1, got {args.k}")
    ckpt_dir = _require_exists(args.model, "model checkpoint")
    atlas = io.load_atlas(_require_exists(args.atlas, "atlas"))
    model = io.load_checkpoint(ckpt_dir)
    atlas.validate(model.arch.n_voxels)
    pool: list[Embedding] = []
    for p in args.pool:
        pool.extend(_load_embeddings(_require_exists(p, "pool")))
    generated: list[Embedding] = []
    for p in args.generated:
        generated.extend(_load_embeddings(_require_exists(p, "generated set")))
    if args.k > len(pool) or args.k > len(generated):
        raise UsageError(
            f"--k {args.k} larger than pool ({len(pool)}) or generated ({len(generated)})"
        )
    reports = []
    for region in args.region:
        if region not in atlas:
            raise UsageError(f"region {region!r} not in atlas ({sorted(atlas.regions)})")
        reports.append(
            activation_report(model, region, atlas.regions[region], pool, generated, args.k)
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io._atomic_write(out / "report.csv", report_csv(reports).encode("utf-8"))
    if args.plot:
        io._atomic_write(out / "report.svg", report_svg(reports).encode("utf-8"))
    _write_manifest(out, "eval", argv, args)
    for rep in reports:
        print(
            f"eval[{rep.region}]: pool max {rep.pool_stats.maximum:.4f}, "
            f"top{rep.k} pool mean {rep.top_pool_stats.mean:.4f}, "
            f"generated min {rep.generated_stats.minimum:.4f} -> {out / 'report.csv'}"
        )
    return 0


def cmd_export(args, argv) -> int:
    stacks = []
    for d in args.dataset or []:
        ds = io.load_dataset(_require_exists(d, "dataset"))
        stacks.append(np.stack([e.grid for e in ds.embeddings]))
    for t in args.trajectory or []:
        traj = io.import_trajectory(_require_exists(t, "trajectory"))
        grids = [p.embedding.grid for p in traj.points if p.embedding is not None]
        stacks.append(np.stack(grids))
    if not stacks:
        raise UsageError("export needs at least one --dataset or --trajectory")
    shapes = {s.shape[1:] for s in stacks}
    if len(shapes) > 1:
        raise UsageError(f"embedding shapes differ across inputs: {sorted(shapes)}")
    stacked = np.concatenate(stacks, axis=0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_tensor(out, stacked)
    io.write_run_manifest(
        out.with_name(out.name + ".run_manifest.txt"),
        "export",
        argv,
        {k: str(v) for k, v in vars(args).items() if k != "func" and v is not None},
        __version__,
    )
    print(f"export: {stacked.shape[0]} embeddings -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvolve",
        description="Voxelwise encoders and embedding-space optimization under neural objectives.",
    )
    parser.add_argument("--version", action="version", version=f"nvolve {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic subject plus datasets")
    p.add_argument("--regions", required=True, help="NAME:SIZE[,NAME:SIZE...]")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--sessions", type=int, default=4, help="session blocks in the training set")
    p.add_argument(
        "--val-sessions",
        type=int,
        default=1,
        help="session blocks in the validation set (small blocks add z-score jitter)",
    )
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--nonlinearity", choices=["linear", "relu"], default="linear")
    p.add_argument("--shape", default="16x768", help="TOKENSxDIM embedding grid")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the encoding model on a dataset pair")
    p.add_argument("--train", required=True, help="training dataset directory")
    p.add_argument("--val", required=True, help="validation dataset directory")
    p.add_argument("--hidden", default="2048,1024,512")
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("optimize", help="optimize embeddings under a neural objective")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--atlas", required=True)
    p.add_argument("--objective", required=True, help='e.g. "+FFA" or "+FFA:1.0 -PPA:0.5"')
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--shape", default=None, help="override TOKENSxDIM if absent from checkpoint")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int, default=0, help="seed for the random start embedding")
    g.add_argument("--seeds", default=None, help="comma list; runs one trajectory per seed")
    p.add_argument("--seed-embedding", default=None, help="NVTF [tokens, dim] start embedding")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs (capped by NVOLVE_THREADS)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sample", help="pick embeddings at progress fractions")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--fractions", default="0.2,0.5,0.8,1.0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="activation-distribution report: pool vs generated")
    p.add_argument("--model", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--region", action="append", required=True)
    p.add_argument("--pool", action="append", required=True)
    p.add_argument("--generated", action="append", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--plot", action="store_true", help="also write an SVG box plot")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="stack embeddings into one NVTF tensor")
    p.add_argument("--dataset", action="append")
    p.add_argument("--trajectory", action="append")
    p.add_argument("--out", required=True, help="output .nvtf path")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, argv)
    except (UsageError, ObjectiveParseError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (
        TrainingDivergedError,
        OptimizationDivergedError,
        io.PersistenceError,
        ValueError,
        OSError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
