import numpy as np
import pytest

from nvolve.objective import (
    ACTIVATE,
    SUPPRESS,
    NeuralObjective,
    ObjectiveParseError,
    ObjectiveTerm,
    RegionError,
    RoiAtlas,
    compile_objective,
    format_objective,
    parse_objective,
    region_means,
)

from oracles import fd_input_gradient


def make_obj(text, regions, n_voxels):
    return compile_objective(parse_objective(text), RoiAtlas(regions), n_voxels)


# --- parsing ---------------------------------------------------------------


def test_parse_single_activate():
    assert parse_objective("+FFA") == [ObjectiveTerm("FFA", ACTIVATE, 1.0)]


def test_parse_weighted_pair():
    terms = parse_objective("+FFA:1.0 -PPA:0.5")
    assert terms == [ObjectiveTerm("FFA", ACTIVATE, 1.0), ObjectiveTerm("PPA", SUPPRESS, 0.5)]


def test_parse_missing_sign_offset_zero():
    with pytest.raises(ObjectiveParseError) as e:
        parse_objective("FFA")
    assert e.value.offset == 0


def test_parse_error_offsets():
    with pytest.raises(ObjectiveParseError) as e:
        parse_objective("+FFA -")
    assert e.value.offset == 6
    with pytest.raises(ObjectiveParseError) as e:
        parse_objective("+FFA:")
    assert e.value.offset == 5
    with pytest.raises(ObjectiveParseError) as e:
        parse_objective("+FFA:0")
    assert e.value.offset == 5
    with pytest.raises(ObjectiveParseError) as e:
        parse_objective("+FF*A")
    assert e.value.offset == 3


def test_parse_empty_rejected():
    for text in ("", "   "):
        with pytest.raises(ObjectiveParseError):
            parse_objective(text)


def test_format_parse_round_trip():
    cases = ["+FFA", "+FFA:1.0 -PPA:0.5", "-V1 +V4:2.25 +EBA:0.125", "+A:0.3333333333333333"]
    for text in cases:
        terms = parse_objective(text)
        assert parse_objective(format_objective(terms)) == terms


def test_format_round_trip_random_weights():
    rng = np.random.default_rng(0)
    for _ in range(200):
        w = float(np.exp(rng.uniform(-20, 8)))
        terms = [ObjectiveTerm("R", ACTIVATE, w)]
        assert parse_objective(format_objective(terms)) == terms


# --- atlas and compilation --------------------------------------------------


def test_compile_resolves_masks():
    obj = make_obj("+FFA", {"FFA": [0, 1, 2]}, 5)
    assert list(obj.masks[0]) == [0, 1, 2]


def test_unknown_region_named_in_error():
    with pytest.raises(RegionError, match="XYZ"):
        make_obj("+XYZ", {"FFA": [0]}, 4)


def test_region_index_out_of_bounds():
    with pytest.raises(RegionError, match="out of range"):
        make_obj("+R", {"R": [0, 10]}, 10)


def test_empty_region_rejected():
    with pytest.raises(RegionError, match="empty"):
        RoiAtlas({"R": []})


def test_bad_region_name_rejected():
    with pytest.raises(RegionError):
        RoiAtlas({"bad name": [0]})


# --- loss and cotangent ------------------------------------------------------


def test_loss_maximize_formula():
    obj = make_obj("+R1", {"R1": [0, 1]}, 4)
    assert obj.loss(np.array([1.0, 2.0, 3.0, 4.0])) == -1.5


def test_loss_activate_suppress_formula():
    obj = make_obj("+R1:1.0 -R2:0.5", {"R1": [0, 1], "R2": [2, 3]}, 4)
    assert obj.loss(np.array([1.0, 2.0, 3.0, 4.0])) == pytest.approx(0.25, abs=1e-15)


def test_loss_suppress_constant():
    obj = make_obj("-R", {"R": [0, 1, 2]}, 3)
    for c in (-2.0, 0.0, 3.5):
        assert obj.loss(np.full(3, c)) == pytest.approx(c, abs=1e-15)


def test_cotangent_single_region():
    obj = make_obj("+R", {"R": [0, 1, 2, 3]}, 6)
    cot = obj.cotangent(np.zeros(6))
    assert np.array_equal(cot, [-0.25, -0.25, -0.25, -0.25, 0.0, 0.0])


def test_cotangent_overlapping_regions():
    # v=0 sits in A (|A|=2, activate) and B (|B|=4, suppress): -1/2 + 1/4
    obj = make_obj("+A:1 -B:1", {"A": [0, 1], "B": [0, 2, 3, 4]}, 5)
    cot = obj.cotangent(np.zeros(5))
    assert cot[0] == pytest.approx(-0.25, abs=1e-15)


def test_cotangent_matches_finite_differences():
    rng = np.random.default_rng(3)
    obj = make_obj("+A:0.7 -B:1.3 +C", {"A": [0, 1, 5], "B": [1, 2], "C": [4]}, 6)
    for _ in range(20):
        r = rng.normal(size=6)
        fd = fd_input_gradient(obj.loss, r, h=1e-6)
        assert np.allclose(fd, obj.cotangent(r), atol=1e-9)


def test_length_mismatch():
    obj = make_obj("+R", {"R": [0]}, 3)
    with pytest.raises(ValueError, match="length mismatch"):
        obj.loss(np.zeros(4))
    with pytest.raises(ValueError, match="length mismatch"):
        obj.cotangent(np.zeros(2))


# --- algebraic properties ----------------------------------------------------


def random_objective(rng, n_voxels):
    names = ["A", "B", "C", "D"]
    regions = {
        n: rng.choice(n_voxels, size=rng.integers(1, n_voxels + 1), replace=False)
        for n in names
    }
    k = int(rng.integers(1, 5))
    terms = [
        ObjectiveTerm(
            names[int(rng.integers(0, len(names)))],
            ACTIVATE if rng.random() < 0.5 else SUPPRESS,
            float(rng.uniform(0.1, 3.0)),
        )
        for _ in range(k)
    ]
    return compile_objective(terms, RoiAtlas(regions), n_voxels)


def test_weight_linearity_sign_symmetry_decomposition():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 12))
        obj = random_objective(rng, n)
        r = rng.normal(size=n)
        loss = obj.loss(r)

        c = float(rng.uniform(0.5, 2.0))
        scaled = NeuralObjective(
            terms=tuple(ObjectiveTerm(t.region, t.sign, c * t.weight) for t in obj.terms),
            masks=obj.masks,
            n_voxels=n,
        )
        assert scaled.loss(r) == pytest.approx(c * loss, abs=1e-12, rel=1e-12)

        flipped = NeuralObjective(
            terms=tuple(
                ObjectiveTerm(t.region, SUPPRESS if t.sign == ACTIVATE else ACTIVATE, t.weight)
                for t in obj.terms
            ),
            masks=obj.masks,
            n_voxels=n,
        )
        assert flipped.loss(r) == pytest.approx(-loss, abs=1e-12, rel=1e-12)

        parts = sum(
            NeuralObjective((t,), (m,), n).loss(r) for t, m in zip(obj.terms, obj.masks)
        )
        assert parts == pytest.approx(loss, abs=1e-12, rel=1e-12)


def test_cotangent_affine_consistency():
    # loss is affine in r, so loss(r + h*d) - loss(r) == h * <cot, d>
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(2, 10))
        obj = random_objective(rng, n)
        r = rng.normal(size=n)
        d = rng.normal(size=n)
        h = 0.37
        lhs = obj.loss(r + h * d) - obj.loss(r)
        rhs = h * float(np.dot(obj.cotangent(r), d))
        assert lhs == pytest.approx(rhs, abs=1e-9)


# --- region means -------------------------------------------------------------


def test_region_means_basic():
    atlas = RoiAtlas({"R": [0, 1], "S": [3]})
    means = region_means(atlas, np.array([2.0, 4.0, 9.0, 7.0]))
    assert means == {"R": 3.0, "S": 7.0}


def test_region_means_vs_naive_sum():
    rng = np.random.default_rng(5)
    idx = rng.choice(50, size=17, replace=False)
    atlas = RoiAtlas({"R": idx})
    r = rng.normal(size=50)
    naive = sum(float(r[i]) for i in sorted(idx)) / len(idx)
    assert region_means(atlas, r)["R"] == pytest.approx(naive, abs=1e-12)
