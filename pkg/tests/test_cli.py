import hashlib
from pathlib import Path

import pytest

from nvolve.cli import main
from nvolve.persistence import read_run_manifest, read_sections, read_tensor


def tree_digest(root: Path) -> dict[str, str]:
    """Relative path -> sha256 for every file under root."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One shared synth -> train -> optimize run for the read-only tests."""
    root = tmp_path_factory.mktemp("pipe")
    assert run([
        "synth", "--regions", "FFA:7,PPA:7,EBA:6", "--samples", 400, "--sessions", 4,
        "--shape", "4x8", "--seed", 1, "--out", root / "data",
    ]) == 0
    assert run([
        "train", "--train", root / "data/train", "--val", root / "data/val",
        "--hidden", "32,16", "--out", root / "ckpt",
    ]) == 0
    assert run([
        "optimize", "--model", root / "ckpt", "--atlas", root / "data/atlas.txt",
        "--objective", "+FFA", "--steps", 120, "--seed", 0, "--out", root / "traj",
    ]) == 0
    return root


# --- synth ---------------------------------------------------------------------


def test_synth_outputs_and_determinism(tmp_path):
    argv = [
        "synth", "--regions", "FFA:4,PPA:4", "--samples", 60, "--sessions", 2,
        "--shape", "2x4", "--seed", 3, "--out", tmp_path / "a",
    ]
    assert run(argv) == 0
    names = (tmp_path / "a" / "atlas.txt").read_text().splitlines()
    assert len(names) == 2
    for sub in ("subject", "train", "val"):
        assert (tmp_path / "a" / sub).is_dir()

    argv2 = [*argv[:-1], tmp_path / "b"]
    assert run(argv2) == 0
    da = tree_digest(tmp_path / "a")
    db = tree_digest(tmp_path / "b")
    # run manifests differ only in the --out path; everything else is identical
    assert {k: v for k, v in da.items() if k != "run_manifest.txt"} == {
        k: v for k, v in db.items() if k != "run_manifest.txt"
    }


def test_synth_requires_regions(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        run(["synth", "--out", tmp_path / "x"])
    assert e.value.code == 2


def test_synth_bad_region_spec(tmp_path):
    assert run(["synth", "--regions", "FFA", "--out", tmp_path / "x"]) == 2


# --- train ----------------------------------------------------------------------


def test_train_single_epoch_log(tmp_path, pipeline):
    assert run([
        "train", "--train", pipeline / "data/train", "--val", pipeline / "data/val",
        "--hidden", "8", "--max-epochs", 1, "--out", tmp_path / "ck1",
    ]) == 0
    lines = (tmp_path / "ck1" / "train_log.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,train_mse,val_mean_r"
    assert len(lines) == 2


def test_train_missing_dataset_exits_2(tmp_path):
    assert run([
        "train", "--train", tmp_path / "nope", "--val", tmp_path / "nope2",
        "--out", tmp_path / "ck",
    ]) == 2


def test_train_prints_val_r(pipeline, capsys):
    # re-run training on the shared data purely for the stdout contract
    assert run([
        "train", "--train", pipeline / "data/train", "--val", pipeline / "data/val",
        "--hidden", "32,16", "--out", pipeline / "ckpt2",
    ]) == 0
    out = capsys.readouterr().out
    assert "val mean R" in out


# --- optimize ---------------------------------------------------------------------


def test_optimize_records_all_losses(pipeline):
    sections = read_sections(pipeline / "traj" / "manifest.txt")
    points = [s for s, _ in sections if s.startswith("point ")]
    assert len(points) == 121  # steps + 1 recorded losses


def test_optimize_rejects_unsigned_objective(pipeline, tmp_path, capsys):
    code = run([
        "optimize", "--model", pipeline / "ckpt", "--atlas", pipeline / "data/atlas.txt",
        "--objective", "FFA", "--out", tmp_path / "t",
    ])
    assert code == 2
    assert "offset 0" in capsys.readouterr().err


def test_optimize_accepts_weighted_multi_term(pipeline, tmp_path):
    assert run([
        "optimize", "--model", pipeline / "ckpt", "--atlas", pipeline / "data/atlas.txt",
        "--objective", "+FFA -PPA:0.5", "--steps", 5, "--out", tmp_path / "t",
    ]) == 0


def test_optimize_multi_seed_directories(pipeline, tmp_path):
    assert run([
        "optimize", "--model", pipeline / "ckpt", "--atlas", pipeline / "data/atlas.txt",
        "--objective", "+FFA", "--steps", 5, "--seeds", "4,5", "--jobs", 2,
        "--out", tmp_path / "multi",
    ]) == 0
    assert (tmp_path / "multi" / "seed_4" / "manifest.txt").exists()
    assert (tmp_path / "multi" / "seed_5" / "manifest.txt").exists()


def test_optimize_thread_cap_env(pipeline, tmp_path, monkeypatch):
    monkeypatch.setenv("NVOLVE_THREADS", "1")
    assert run([
        "optimize", "--model", pipeline / "ckpt", "--atlas", pipeline / "data/atlas.txt",
        "--objective", "+FFA", "--steps", 5, "--seeds", "6,7", "--jobs", 8,
        "--out", tmp_path / "capped",
    ]) == 0
    assert (tmp_path / "capped" / "seed_7" / "manifest.txt").exists()


# --- sample -----------------------------------------------------------------------


def test_sample_default_fractions(pipeline, tmp_path):
    assert run(["sample", "--trajectory", pipeline / "traj", "--out", tmp_path / "s"]) == 0
    files = sorted(p.name for p in (tmp_path / "s").glob("*.nvtf"))
    assert len(files) == 4
    listing = read_sections(tmp_path / "s" / "samples.txt")
    assert [name for name, _ in listing][0] == "samples"
    assert sum(1 for name, _ in listing if name.startswith("sample ")) == 4


def test_sample_single_fraction(pipeline, tmp_path):
    assert run([
        "sample", "--trajectory", pipeline / "traj", "--fractions", "1.0",
        "--out", tmp_path / "s1",
    ]) == 0
    assert len(list((tmp_path / "s1").glob("*.nvtf"))) == 1


def test_sample_rejects_out_of_range_fraction(pipeline, tmp_path):
    assert run([
        "sample", "--trajectory", pipeline / "traj", "--fractions", "1.5",
        "--out", tmp_path / "s2",
    ]) == 2


def test_sample_unrecorded_step_exit_1(pipeline, tmp_path, capsys):
    assert run([
        "optimize", "--model", pipeline / "ckpt", "--atlas", pipeline / "data/atlas.txt",
        "--objective", "+FFA", "--steps", 60, "--record-every", 50,
        "--out", tmp_path / "sparse",
    ]) == 0
    code = run([
        "sample", "--trajectory", tmp_path / "sparse", "--fractions", "0.5",
        "--out", tmp_path / "s3",
    ])
    assert code == 1
    assert "record-every" in capsys.readouterr().err


# --- export and eval -----------------------------------------------------------------


def test_export_stacks_dataset_embeddings(pipeline, tmp_path):
    out = tmp_path / "pool.nvtf"
    assert run([
        "export", "--dataset", pipeline / "data/train", "--dataset", pipeline / "data/val",
        "--out", out,
    ]) == 0
    arr = read_tensor(out)
    assert arr.shape == (400, 4, 8)


def test_eval_pipeline_and_determinism(pipeline, tmp_path):
    pool = tmp_path / "pool.nvtf"
    assert run(["export", "--dataset", pipeline / "data/train", "--out", pool]) == 0
    assert run(["sample", "--trajectory", pipeline / "traj", "--out", tmp_path / "s"]) == 0
    argv = [
        "eval", "--model", pipeline / "ckpt", "--atlas", pipeline / "data/atlas.txt",
        "--region", "FFA", "--pool", pool, "--generated", tmp_path / "s",
        "--k", 1, "--plot", "--out", tmp_path / "r1",
    ]
    assert run(argv) == 0
    assert run([*argv[:-1], tmp_path / "r2"]) == 0
    assert (tmp_path / "r1" / "report.csv").read_bytes() == (tmp_path / "r2" / "report.csv").read_bytes()
    assert (tmp_path / "r1" / "report.svg").exists()


def test_eval_k_zero_exit_2(pipeline, tmp_path):
    assert run([
        "eval", "--model", pipeline / "ckpt", "--atlas", pipeline / "data/atlas.txt",
        "--region", "FFA", "--pool", pipeline / "data/train", "--generated", pipeline / "data/val",
        "--k", 0, "--out", tmp_path / "r",
    ]) == 2


def test_eval_k_too_large_exit_2(pipeline, tmp_path):
    assert run([
        "eval", "--model", pipeline / "ckpt", "--atlas", pipeline / "data/atlas.txt",
        "--region", "FFA", "--pool", pipeline / "data/train", "--generated", pipeline / "data/val",
        "--k", 99999, "--out", tmp_path / "r",
    ]) == 2


# --- manifest reproducibility ----------------------------------------------------------


def test_rerun_from_manifest_is_bit_identical(pipeline, tmp_path):
    command, argv, _ = read_run_manifest(pipeline / "traj" / "run_manifest.txt")
    assert command == "optimize"
    redo = [str(tmp_path / "redo") if a == str(pipeline / "traj") else a for a in argv]
    assert run(redo) == 0
    before = tree_digest(pipeline / "traj")
    after = tree_digest(tmp_path / "redo")
    assert {k: v for k, v in before.items() if k != "run_manifest.txt"} == {
        k: v for k, v in after.items() if k != "run_manifest.txt"
    }
