import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import entropy, exhaustive_two_means

from ugsv.dataset import JOINTS_3D, SynthConfig, synth_generate
from ugsv.features import (ActivityConfig, Codebook, VideoInputs, activity_measure, assemble_joint_vectors,
                           build_codebook, fuse, joint_stream_encode, load_feature_cache, quantize_bow,
                           save_feature_cache, to_player_coords)
from ugsv.nncore import LstmCell, ShapeError

TORSO = JOINTS_3D.index("torso")
CENTRES = (-2.0 / 3.0, 0.0, 2.0 / 3.0)  # region centres of the default 3D grid along one axis

# Twelve points in two blobs; optimum of an exhaustive search over all 2-partitions
BLOB_POINTS = [(0.1, 0.0), (-0.2, 0.1), (0.0, -0.15), (0.15, 0.2), (-0.1, -0.1), (0.05, 0.1),
               (5.0, 5.1), (5.2, 4.9), (4.8, 5.0), (5.1, 5.2), (4.9, 4.8), (5.05, 4.95)]
BLOB_OPTIMUM = [(0.0, 0.025), (5.008333333333334, 4.991666666666666)]


# ------------------------------------------------------- player coords --

def test_root_joint_maps_to_origin():
    rng = np.random.default_rng(0)
    joints = rng.normal(size=(2, 15, 3))
    rel = to_player_coords(joints, np.array([True, True]))
    np.testing.assert_array_equal(rel[:, TORSO], 0.0)


@given(st.integers(0, 2**31 - 1), st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_translation_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    joints = rng.normal(size=(4, 2, 15, 3))
    vis = rng.random((4, 2)) > 0.2
    a = to_player_coords(joints, vis)
    b = to_player_coords(joints + np.array(shift), vis)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_2d_translation_invariance_uses_hip_midpoint():
    rng = np.random.default_rng(1)
    joints = rng.normal(size=(2, 13, 2))
    np.testing.assert_allclose(to_player_coords(joints), to_player_coords(joints + 7.5), atol=1e-12)


def test_invisible_player_block_is_zero():
    joints = np.ones((2, 15, 3))
    rel = to_player_coords(joints * np.arange(1, 16)[None, :, None], np.array([True, False]))
    assert np.all(rel[1] == 0.0)
    assert np.any(rel[0] != 0.0)


def test_unknown_root_is_argument_error():
    with pytest.raises(ValueError):
        to_player_coords(np.zeros((1, 15, 3)), root_joint="nose")
    with pytest.raises(ValueError):
        to_player_coords(np.zeros((1, 13, 2)), root_joint="torso")


# ------------------------------------------------------------- activity --

def _frames_for_regions(region_per_frame):
    """One player, one joint; frame f sits in the 3D region with index region_per_frame[f]."""
    pts = [[CENTRES[r // 9], CENTRES[(r // 3) % 3], CENTRES[r % 3]] for r in region_per_frame]
    return np.array(pts)[:, None, None, :]


def test_static_joint_has_zero_entropy():
    a = activity_measure(_frames_for_regions([13] * 10))
    assert a[0] == 0.0


def test_even_split_gives_ln2():
    a = activity_measure(_frames_for_regions([0, 26] * 5))
    assert a[0] == pytest.approx(math.log(2), abs=1e-15)


def test_uniform_occupancy_attains_upper_bound():
    J, V = 15, 27
    rng = np.random.default_rng(0)
    coords = np.zeros((V, 2, J, 3))
    counts = np.zeros((2, J, V), dtype=int)
    for q in range(2):
        for j in range(J):
            perm = rng.permutation(V)
            coords[:, q, j] = _frames_for_regions(perm)[:, 0, 0]
            np.add.at(counts[q, j], perm, 1)
    a = activity_measure(coords)
    oracle = [math.fsum(entropy(list(counts[q, j])) for j in range(J)) for q in range(2)]
    np.testing.assert_allclose(a, oracle, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a, J * math.log(V), rtol=0, atol=1e-12)


def test_out_of_volume_positions_clamp_to_boundary_regions():
    inside = _frames_for_regions([0, 26])
    outside = inside * 50.0
    assert activity_measure(outside)[0] == pytest.approx(activity_measure(inside)[0])


def test_player_never_visible_scores_zero():
    rng = np.random.default_rng(2)
    coords = rng.uniform(-1, 1, (6, 2, 15, 3))
    vis = np.ones((6, 2), bool)
    vis[:, 1] = False
    a = activity_measure(coords, vis)
    assert a[1] == 0.0 and a[0] > 0.0


def test_empty_segment_is_argument_error():
    with pytest.raises(ValueError):
        activity_measure(np.zeros((0, 2, 15, 3)))


def test_activity_config_validation():
    with pytest.raises(ValueError):
        activity_measure(np.zeros((1, 1, 15, 3)), cfg=ActivityConfig(extent=0))
    with pytest.raises(ValueError):
        activity_measure(np.zeros((1, 1, 15, 3)), cfg=ActivityConfig(half_widths=(1.0, -1.0, 1.0)))
    assert ActivityConfig().num_regions(3) == 27 and ActivityConfig().num_regions(2) == 9


def test_2d_grid_has_nine_regions():
    pts = np.array([[x, y] for x in CENTRES for y in CENTRES])[:, None, None, :]
    a = activity_measure(pts, cfg=ActivityConfig(half_widths=(1.0, 1.0)))
    assert a[0] == pytest.approx(math.log(9))


# ---------------------------------------------------------- joint stream --

@pytest.mark.parametrize("J, dims, size", [(15, 3, 90), (13, 2, 52)])
def test_joint_vector_sizes(J, dims, size):
    assert assemble_joint_vectors(np.ones((4, 2, J, dims))).shape == (4, size)


def test_invisible_second_player_zeroes_back_half():
    u = assemble_joint_vectors(np.ones((3, 2, 15, 3)), np.array([[True, False]] * 3))
    assert np.all(u[:, 45:] == 0.0) and np.all(u[:, :45] == 1.0)


def test_zero_cell_encodes_only_activity():
    feat = joint_stream_encode(LstmCell.zeros(90, 90), np.ones((5, 90)), [1.5, 2.5])
    np.testing.assert_array_equal(feat.x, np.r_[np.zeros(90), 1.5, 2.5])


def test_encoding_is_stateless_across_segments():
    cell = LstmCell.init(90, 90, np.random.default_rng(0))
    u = np.random.default_rng(1).normal(size=(8, 90))
    a = joint_stream_encode(cell, u, [0.1, 0.2]).x
    b = joint_stream_encode(cell, u, [0.1, 0.2]).x
    np.testing.assert_array_equal(a, b)
    assert a.shape == (92,)


def test_encoder_shape_error():
    with pytest.raises(ShapeError):
        joint_stream_encode(LstmCell.zeros(52, 52), np.ones((3, 90)), [0, 0])


# -------------------------------------------------------------- codebook --

def test_saturated_codebook_reproduces_descriptors():
    X = np.random.default_rng(0).normal(size=(9, 4))
    cb = build_codebook(X, K=9, seed=1)
    np.testing.assert_allclose(np.sort(cb.centroids, axis=0), np.sort(X, axis=0), atol=1e-12)


def test_two_blob_codebook_matches_exhaustive_two_means():
    sse, cents, _ = exhaustive_two_means(BLOB_POINTS)
    np.testing.assert_allclose(cents, BLOB_OPTIMUM, atol=1e-12)
    cb = build_codebook(np.array(BLOB_POINTS), K=2, seed=0)
    got = sorted(map(tuple, cb.centroids))
    np.testing.assert_allclose(got, BLOB_OPTIMUM, atol=1e-9)
    np.testing.assert_allclose(got, [(0, 0), (5, 5)], atol=0.1)


def test_codebook_is_deterministic_and_round_trips(tmp_path):
    X = np.random.default_rng(3).normal(size=(60, 5))
    a, b = build_codebook(X, 6, seed=4), build_codebook(X, 6, seed=4)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    a.save(tmp_path / "a.npz")
    b.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    np.testing.assert_array_equal(Codebook.load(tmp_path / "a.npz").centroids, a.centroids)


def test_codebook_needs_enough_descriptors():
    with pytest.raises(ValueError):
        build_codebook(np.zeros((3, 2)), K=4)


def test_identical_points_do_not_break_seeding():
    cb = build_codebook(np.ones((10, 3)), K=3, seed=0)
    assert np.all(np.isfinite(cb.centroids))


# ---------------------------------------------------------- bag of words --

def _grid_codebook():
    return Codebook(np.array([[float(k), 0.0] for k in range(6)]))


def test_bow_one_hot():
    h = quantize_bow(_grid_codebook(), np.array([[3.1, 0.1], [2.9, -0.2], [3.0, 0.0]]))
    np.testing.assert_array_equal(h, np.eye(6)[3])


def test_bow_three_to_one_split():
    h = quantize_bow(_grid_codebook(), np.array([[0.0, 0.0], [0.1, 0.0], [-0.2, 0.0], [1.1, 0.0]]))
    np.testing.assert_array_equal(h, [0.75, 0.25, 0, 0, 0, 0])


@given(st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_bow_is_probability_vector(n, seed):
    d = np.random.default_rng(seed).normal(size=(n, 2)) * 3
    h = quantize_bow(_grid_codebook(), d)
    assert np.all(h >= 0) and abs(h.sum() - 1.0) < 1e-12


def test_bow_empty_and_mismatch():
    np.testing.assert_array_equal(quantize_bow(_grid_codebook(), np.zeros((0, 2))), np.zeros(6))
    with pytest.raises(ShapeError):
        quantize_bow(_grid_codebook(), np.zeros((2, 3)))


# ---------------------------------------------------------------- fusion --

@pytest.mark.parametrize("x_dim, y_dim, z_dim", [(92, 400, 492), (54, 400, 454), (92, 0, 92)])
def test_fuse_sizes(x_dim, y_dim, z_dim):
    f = fuse(np.ones(x_dim), np.ones(y_dim) if y_dim else None)
    assert (f.z.size, f.x_dim, f.y_dim) == (z_dim, x_dim, y_dim)


def test_feature_cache_round_trip(tmp_path):
    Z = np.random.default_rng(0).normal(size=(7, 12))
    save_feature_cache(tmp_path / "z.csv", Z, 8, 4, "CUSTOM")
    back, meta = load_feature_cache(tmp_path / "z.csv")
    np.testing.assert_array_equal(back, Z)
    assert meta["x_dim"] == 8 and meta["y_dim"] == 4 and meta["feature_kind"] == "CUSTOM"


# ----------------------------------------------------------- invariances --

@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 3]), st.integers(1, 30))
def test_activity_invariances_and_bounds(seed, dims, F):
    rng = np.random.default_rng(seed)
    J = 15 if dims == 3 else 13
    coords = rng.normal(scale=0.8, size=(F, 2, J, dims))
    vis = rng.random((F, 2)) > 0.1
    rel = to_player_coords(coords, vis)
    a = activity_measure(rel, vis)
    V = 3 ** dims
    assert np.all(a >= 0) and np.all(a <= J * math.log(V) + 1e-9)
    perm = rng.permutation(F)
    np.testing.assert_allclose(activity_measure(rel[perm], vis[perm]), a, rtol=0, atol=1e-12)
    shifted = to_player_coords(coords + rng.normal(size=dims) * 10, vis)
    np.testing.assert_allclose(activity_measure(shifted, vis), a, rtol=0, atol=1e-12)


def test_video_inputs_round_trip(tmp_path):
    from ugsv.pipeline import prepare_corpus

    corpus, _ = prepare_corpus(synth_generate(SynthConfig(num_videos=1, duration=5), 0), K=4)
    inputs = corpus[0][0]
    inputs.save(tmp_path / "a.npz")
    inputs.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back = VideoInputs.load(tmp_path / "a.npz")
    for name in ("frames", "mask", "activity", "holistic"):
        np.testing.assert_array_equal(getattr(back, name), getattr(inputs, name))
    assert back.T == 5 and back.joint_dim == 90


def test_region_enumeration_matches_grid():
    # every region index decodes to a distinct centre triple
    seen = {tuple(_frames_for_regions([r])[0, 0, 0]) for r in range(27)}
    assert len(seen) == 27 == len(list(itertools.product(CENTRES, repeat=3)))
