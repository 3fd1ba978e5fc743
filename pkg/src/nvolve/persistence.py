"""Bit-exact file formats: tensors, checkpoints, atlases, trajectories, manifests.

Tensor container (NVTF), all integers little-endian:

    bytes 0-3   magic "NVTF"
    bytes 4-7   u32 version, currently 1
    byte  8     u8 dtype code: 0 = f32, 1 = f64, 2 = i64
    byte  9     u8 ndim
    next 8*ndim u64 dims
    payload     row-major little-endian values, exactly elem_size * prod(dims) bytes

Everything else is line-oriented structured text: `[section]` headers and
`key = value` lines, utf-8, "\n" newlines, floats written with repr() so they
round-trip exactly. All writes go through a temp file + rename.
"""

from __future__ import annotations

import os
import shlex
import struct
from pathlib import Path

import numpy as np

from .embedding import Embedding, EmbeddingShape
from .encoder import EncoderArchitecture, EncoderModel, ResponseDataset
from .objective import RoiAtlas
from .volve import OptimizeConfig, Trajectory, TrajectoryPoint
from .synthetic import SyntheticSubject

MAGIC = b"NVTF"
VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODE_FOR_KIND = {"f4": 0, "f8": 1, "i8": 2}


class PersistenceError(Exception):
    """Base class for format and round-trip failures."""


class BadMagicError(PersistenceError):
    pass


class UnsupportedVersionError(PersistenceError):
    pass


class UnsupportedDtypeError(PersistenceError):
    pass


class TruncatedFileError(PersistenceError):
    pass


class StructuredTextError(PersistenceError):
    pass


class MissingTensorError(PersistenceError):
    pass


class ManifestError(PersistenceError):
    pass


class DanglingReferenceError(ManifestError):
    pass


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# tensors


def tensor_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    key = f"{array.dtype.kind}{array.dtype.itemsize}"
    if key not in _CODE_FOR_KIND:
        raise UnsupportedDtypeError(
            f"dtype {array.dtype} not representable; use f32, f64 or i64"
        )
    if array.ndim > 255:
        raise PersistenceError("at most 255 dims supported")
    code = _CODE_FOR_KIND[key]
    header = MAGIC + struct.pack("<IBB", VERSION, code, array.ndim)
    header += b"".join(struct.pack("<Q", d) for d in array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPE_CODES[code]).tobytes()


def write_tensor(path, array: np.ndarray) -> None:
    _atomic_write(path, tensor_bytes(array))


def tensor_from_bytes(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 10:
        raise TruncatedFileError(f"{source}: header truncated at {len(data)} bytes")
    version, code, ndim = struct.unpack_from("<IBB", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"{source}: version {version}, expected {VERSION}")
    if code not in _DTYPE_CODES:
        raise UnsupportedDtypeError(f"{source}: unknown dtype code {code}")
    offset = 10
    if len(data) < offset + 8 * ndim:
        raise TruncatedFileError(f"{source}: dims truncated")
    dims = struct.unpack_from(f"<{ndim}Q", data, offset)
    offset += 8 * ndim
    dtype = _DTYPE_CODES[code]
    n_elems = 1
    for d in dims:
        n_elems *= d
    expected = dtype.itemsize * n_elems
    payload = data[offset:]
    if len(payload) != expected:
        raise TruncatedFileError(
            f"{source}: payload is {len(payload)} bytes, expected {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype)
    return arr.reshape(dims).copy()


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes(), source=str(path))


# ---------------------------------------------------------------------------
# structured text

Sections = list[tuple[str, list[tuple[str, str]]]]


def sections_text(sections: Sections) -> str:
    lines = []
    for name, pairs in sections:
        lines.append(f"[{name}]")
        for key, value in pairs:
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def write_sections(path, sections: Sections) -> None:
    _atomic_write(path, sections_text(sections).encode("utf-8"))


def parse_sections(text: str, source: str = "<text>") -> Sections:
    sections: Sections = []
    current: list[tuple[str, str]] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = []
            sections.append((line[1:-1], current))
            continue
        if " = " in line:
            key, value = line.split(" = ", 1)
        elif line.endswith(" ="):  # empty value; trailing space was stripped
            key, value = line[:-2], ""
        else:
            raise StructuredTextError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise StructuredTextError(f"{source}:{lineno}: key outside any [section]")
        current.append((key, value))
    return sections


def read_sections(path) -> Sections:
    return parse_sections(Path(path).read_text("utf-8"), source=str(path))


def section_dict(sections: Sections, name: str, source: str = "") -> dict[str, str]:
    for sec, pairs in sections:
        if sec == name:
            return dict(pairs)
    raise StructuredTextError(f"{source}: missing [{name}] section")


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FILE = "checkpoint.txt"


def _param_names(arch: EncoderArchitecture) -> list[str]:
    return [f"layer{i}.{kind}" for i in range(len(arch.layer_dims())) for kind in ("w", "b")]


def save_checkpoint(model: EncoderModel, dirpath, extra: Sections | None = None) -> None:
    """Write one NVTF per parameter plus checkpoint.txt with the architecture."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    arch = model.arch
    tensors = []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        for kind, arr in (("w", w), ("b", b)):
            fname = f"layer{i}.{kind}.nvtf"
            write_tensor(dirpath / fname, arr)
            tensors.append((f"layer{i}.{kind}", fname))
    sections: Sections = [
        ("checkpoint", [("format", "nvolve-checkpoint"), ("version", "1")]),
        (
            "arch",
            [
                ("input_len", str(arch.input_len)),
                ("hidden", ",".join(str(h) for h in arch.hidden)),
                ("n_voxels", str(arch.n_voxels)),
            ],
        ),
        ("tensors", tensors),
    ]
    if extra:
        sections.extend(extra)
    write_sections(dirpath / CHECKPOINT_FILE, sections)


def load_checkpoint(dirpath) -> EncoderModel:
    dirpath = Path(dirpath)
    meta_path = dirpath / CHECKPOINT_FILE
    if not meta_path.exists():
        raise ManifestError(f"{dirpath}: no {CHECKPOINT_FILE}")
    sections = read_sections(meta_path)
    arch_d = section_dict(sections, "arch", str(meta_path))
    hidden = tuple(int(t) for t in arch_d["hidden"].split(",") if t)
    arch = EncoderArchitecture(int(arch_d["input_len"]), hidden, int(arch_d["n_voxels"]))
    tensor_map = section_dict(sections, "tensors", str(meta_path))

    arrays: dict[str, np.ndarray] = {}
    for name in _param_names(arch):
        if name not in tensor_map:
            raise MissingTensorError(f"{meta_path}: checkpoint lacks tensor {name!r}")
        tpath = dirpath / tensor_map[name]
        if not tpath.exists():
            raise DanglingReferenceError(f"{meta_path}: {name} points to missing {tpath}")
        arrays[name] = read_tensor(tpath)

    # validate shapes against declared arch before building anything
    for i, (fin, fout) in enumerate(arch.layer_dims()):
        w, b = arrays[f"layer{i}.w"], arrays[f"layer{i}.b"]
        if w.shape != (fin, fout) or b.shape != (fout,):
            raise ManifestError(
                f"{meta_path}: layer{i} tensors {w.shape}/{b.shape} do not match "
                f"declared arch ({fin},{fout})"
            )
    weights = [arrays[f"layer{i}.w"] for i in range(len(arch.layer_dims()))]
    biases = [arrays[f"layer{i}.b"] for i in range(len(arch.layer_dims()))]
    return EncoderModel(arch, weights, biases)


# ---------------------------------------------------------------------------
# atlases


def atlas_text(atlas: RoiAtlas) -> str:
    return "".join(
        f"{name}: {','.join(str(i) for i in idx)}\n" for name, idx in atlas.regions.items()
    )


def save_atlas(atlas: RoiAtlas, path) -> None:
    _atomic_write(path, atlas_text(atlas).encode("utf-8"))


def load_atlas(path) -> RoiAtlas:
    regions: dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise StructuredTextError(f"{path}:{lineno}: expected 'NAME: i1,i2,...'")
        name, _, rest = line.partition(":")
        try:
            idx = np.array([int(tok) for tok in rest.split(",") if tok.strip() != ""], dtype=np.int64)
        except ValueError as err:
            raise StructuredTextError(f"{path}:{lineno}: bad voxel index ({err})") from None
        regions[name.strip()] = idx
    return RoiAtlas(regions)


# ---------------------------------------------------------------------------
# trajectories

TRAJECTORY_MANIFEST = "manifest.txt"


def export_trajectory(traj: Trajectory, dirpath) -> None:
    """Manifest + one NVTF per recorded embedding under embeddings/."""
    dirpath = Path(dirpath)
    (dirpath / "embeddings").mkdir(parents=True, exist_ok=True)
    regions = list(traj.points[0].region_means)
    cfg = traj.config
    sections: Sections = [
        (
            "trajectory",
            [
                ("objective", traj.objective_text),
                ("final_step", str(traj.final_step)),
                ("n_points", str(len(traj.points))),
            ],
        ),
        (
            "config",
            [
                ("steps", str(cfg.steps)),
                ("learning_rate", _fmt(cfg.learning_rate)),
                ("beta1", _fmt(cfg.beta1)),
                ("beta2", _fmt(cfg.beta2)),
                ("epsilon", _fmt(cfg.epsilon)),
                ("record_every", str(cfg.record_every)),
                ("seed", str(cfg.seed)),
            ],
        ),
        ("regions", [("names", ",".join(regions))]),
    ]
    for p in traj.points:
        pairs = [
            ("step", str(p.step)),
            ("loss", _fmt(p.loss)),
            ("means", ",".join(_fmt(p.region_means[r]) for r in regions)),
        ]
        if p.embedding is not None:
            fname = f"embeddings/step_{p.step:06d}.nvtf"
            write_tensor(dirpath / fname, p.embedding.grid)
            pairs.append(("embedding", fname))
        sections.append((f"point {p.step}", pairs))
    write_sections(dirpath / TRAJECTORY_MANIFEST, sections)


def import_trajectory(dirpath) -> Trajectory:
    dirpath = Path(dirpath)
    manifest = dirpath / TRAJECTORY_MANIFEST
    if not manifest.exists():
        raise ManifestError(f"{dirpath}: no {TRAJECTORY_MANIFEST}")
    sections = read_sections(manifest)
    traj_d = section_dict(sections, "trajectory", str(manifest))
    cfg_d = section_dict(sections, "config", str(manifest))
    cfg = OptimizeConfig(
        steps=int(cfg_d["steps"]),
        learning_rate=float(cfg_d["learning_rate"]),
        beta1=float(cfg_d["beta1"]),
        beta2=float(cfg_d["beta2"]),
        epsilon=float(cfg_d["epsilon"]),
        record_every=int(cfg_d["record_every"]),
        seed=int(cfg_d["seed"]),
    )
    names_value = section_dict(sections, "regions", str(manifest))["names"]
    regions = [n for n in names_value.split(",") if n]

    points: list[TrajectoryPoint] = []
    last_step = -1
    for sec, pairs in sections:
        if not sec.startswith("point "):
            continue
        d = dict(pairs)
        step = int(d["step"])
        if step <= last_step:
            raise ManifestError(f"{manifest}: non-monotone step {step} after {last_step}")
        last_step = step
        means_vals = [float(v) for v in d["means"].split(",")] if regions else []
        if len(means_vals) != len(regions):
            raise ManifestError(f"{manifest}: point {step} has {len(means_vals)} means")
        embedding = None
        if "embedding" in d:
            tpath = dirpath / d["embedding"]
            if not tpath.exists():
                raise DanglingReferenceError(f"{manifest}: point {step} references missing {tpath}")
            grid = read_tensor(tpath)
            if grid.ndim != 2:
                raise ManifestError(f"{manifest}: embedding at step {step} is not 2-D")
            embedding = Embedding(EmbeddingShape(*grid.shape), np.asarray(grid, dtype=np.float64).reshape(-1))
        points.append(
            TrajectoryPoint(
                step=step,
                loss=float(d["loss"]),
                region_means=dict(zip(regions, means_vals)),
                embedding=embedding,
            )
        )
    if not points:
        raise ManifestError(f"{manifest}: no points")
    if points[-1].step != int(traj_d["final_step"]):
        raise ManifestError(f"{manifest}: last point does not match declared final_step")
    return Trajectory(config=cfg, objective_text=traj_d["objective"], points=points)


# ---------------------------------------------------------------------------
# datasets and subjects

DATASET_META = "dataset.txt"
SUBJECT_META = "subject.txt"


def save_dataset(ds: ResponseDataset, dirpath) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    shape = ds.embeddings[0].shape
    stacked = np.stack([e.grid for e in ds.embeddings])
    write_tensor(dirpath / "embeddings.nvtf", stacked)
    write_tensor(dirpath / "responses.nvtf", ds.responses)
    write_tensor(dirpath / "sessions.nvtf", ds.session_ids)
    write_sections(
        dirpath / DATASET_META,
        [
            (
                "dataset",
                [
                    ("samples", str(len(ds.embeddings))),
                    ("tokens", str(shape.tokens)),
                    ("dim", str(shape.dim)),
                    ("n_voxels", str(ds.n_voxels)),
                ],
            )
        ],
    )


def load_dataset(dirpath) -> ResponseDataset:
    dirpath = Path(dirpath)
    meta = section_dict(read_sections(dirpath / DATASET_META), "dataset", str(dirpath))
    stacked = read_tensor(dirpath / "embeddings.nvtf")
    shape = EmbeddingShape(int(meta["tokens"]), int(meta["dim"]))
    if stacked.ndim != 3 or stacked.shape[1:] != (shape.tokens, shape.dim):
        raise ManifestError(f"{dirpath}: embeddings tensor {stacked.shape} does not match meta")
    embeddings = [Embedding(shape, row.reshape(-1)) for row in stacked]
    return ResponseDataset(
        embeddings=embeddings,
        responses=read_tensor(dirpath / "responses.nvtf"),
        session_ids=read_tensor(dirpath / "sessions.nvtf"),
    )


def save_subject(subject: SyntheticSubject, dirpath) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    names = list(subject.directions)
    write_tensor(dirpath / "tuning_w.nvtf", subject.tuning_w)
    write_tensor(dirpath / "tuning_b.nvtf", subject.tuning_b)
    write_tensor(dirpath / "directions.nvtf", np.stack([subject.directions[n] for n in names]))
    save_atlas(subject.atlas, dirpath / "atlas.txt")
    write_sections(
        dirpath / SUBJECT_META,
        [
            (
                "subject",
                [
                    ("tokens", str(subject.shape.tokens)),
                    ("dim", str(subject.shape.dim)),
                    ("n_voxels", str(subject.n_voxels)),
                    ("noise_sigma", _fmt(subject.noise_sigma)),
                    ("nonlinearity", subject.nonlinearity),
                ],
            ),
            ("directions", [("names", ",".join(names))]),
        ],
    )


def load_subject(dirpath) -> SyntheticSubject:
    dirpath = Path(dirpath)
    sections = read_sections(dirpath / SUBJECT_META)
    meta = section_dict(sections, "subject", str(dirpath))
    names = [
        n for n in section_dict(sections, "directions", str(dirpath))["names"].split(",") if n
    ]
    dirs = read_tensor(dirpath / "directions.nvtf")
    return SyntheticSubject(
        shape=EmbeddingShape(int(meta["tokens"]), int(meta["dim"])),
        n_voxels=int(meta["n_voxels"]),
        atlas=load_atlas(dirpath / "atlas.txt"),
        tuning_w=read_tensor(dirpath / "tuning_w.nvtf"),
        tuning_b=read_tensor(dirpath / "tuning_b.nvtf"),
        directions={n: dirs[i] for i, n in enumerate(names)},
        noise_sigma=float(meta["noise_sigma"]),
        nonlinearity=meta["nonlinearity"],
    )


# ---------------------------------------------------------------------------
# run manifests

RUN_MANIFEST = "run_manifest.txt"


def write_run_manifest(path, command: str, argv: list[str], flags: dict[str, str], version: str) -> None:
    write_sections(
        path,
        [
            (
                "run",
                [
                    ("command", command),
                    ("version", version),
                    ("argv", shlex.join(argv)),
                ],
            ),
            ("flags", sorted(flags.items())),
        ],
    )


def read_run_manifest(path) -> tuple[str, list[str], dict[str, str]]:
    sections = read_sections(path)
    run = section_dict(sections, "run", str(path))
    return run["command"], shlex.split(run["argv"]), section_dict(sections, "flags", str(path))
