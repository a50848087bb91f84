import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dispvox.pointset import (NOISE, CorrespondencePair, ErrorStats, ParseError, PointSet,
                              add_sphere_outlier, add_uniform_noise, fit_normalization, load_pair,
                              load_sequence, normalize_pair, read_correspondences, read_points,
                              remove_chunk, remove_random, rmse, split_dataset, split_indices,
                              synth_dataset, write_correspondences, write_points)

coords = arrays(np.float64, st.tuples(st.integers(2, 40), st.just(3)),
                elements=st.floats(-100, 100, allow_nan=False))


def _cloud(n=200, seed=0):
    return PointSet(np.random.default_rng(seed).normal(size=(n, 3)))


def test_pointset_validation():
    with pytest.raises(ValueError):
        PointSet(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        PointSet(np.array([[0.0, np.nan, 1.0]]))
    with pytest.raises(ValueError):
        PointSet(np.zeros((3, 3)), labels=np.array([0, 2, 0]))
    ps = PointSet(np.zeros((3, 3)), labels=np.array([0, 1, 0]))
    np.testing.assert_array_equal(ps.ids, [0, -1, 2])
    with pytest.raises(ValueError):
        ps.points[0, 0] = 1.0  # read-only


def test_correspondence_map_validation():
    a, b = _cloud(5), _cloud(4)
    with pytest.raises(ValueError):
        CorrespondencePair(a, b, np.array([[0, 4]]))
    with pytest.raises(ValueError):
        CorrespondencePair(a, b, np.array([[0, 1], [0, 2]]))
    noisy = add_uniform_noise(b, 1.0, seed=0)
    with pytest.raises(ValueError):
        CorrespondencePair(a, noisy, np.array([[0, 5]]))


@given(coords, st.floats(0.0, 0.4))
def test_normalization_fits_inset_cube_and_inverts(pts, margin):
    if np.ptp(pts, axis=0).max() <= 1e-9:
        return
    tf = fit_normalization(pts, margin=margin)
    out = tf.apply(pts)
    assert out.min() >= margin - 1e-9 and out.max() <= 1 - margin + 1e-9
    assert abs(np.ptp(out, axis=0).max() - (1 - 2 * margin)) <= 1e-9
    np.testing.assert_allclose(tf.invert(out), pts, atol=1e-9 * max(1.0, np.abs(pts).max()))


def test_normalization_rejects_degenerate_box():
    with pytest.raises(ValueError):
        fit_normalization(np.ones((5, 3)))


def test_normalize_pair_uses_one_shared_transform():
    a = PointSet(np.zeros((1, 3)) + [[0, 0, 0]])
    b = PointSet(np.array([[2.0, 0, 0]]))
    pair, tf = normalize_pair(CorrespondencePair.from_ids(a, b))
    np.testing.assert_allclose(pair.template.points, [[0.05, 0.5, 0.5]])
    np.testing.assert_allclose(pair.reference.points, [[0.95, 0.5, 0.5]])
    assert tf.scale == pytest.approx(0.45)


def test_rmse_hand_value_and_identity():
    y = np.zeros((2, 3))
    x = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
    assert rmse(y, x, [[0, 0], [1, 1]]) == pytest.approx(3.0 / math.sqrt(3))
    assert rmse(x, x, [[0, 0], [1, 1]]) == 0.0
    with pytest.raises(ValueError):
        rmse(y, x, np.zeros((0, 2)))


def test_error_stats():
    s = ErrorStats.from_values([1.0, 3.0])
    assert (s.e, s.sigma, s.n) == (2.0, 1.0, 2)


@given(st.floats(0, 1), st.integers(0, 2 ** 32 - 1))
def test_uniform_noise_count_and_box(ratio, seed):
    ps = _cloud(50)
    out = add_uniform_noise(ps, ratio, seed=seed)
    extra = len(out) - len(ps)
    assert extra == math.floor(ratio * 50)
    np.testing.assert_array_equal(out.points[:50], ps.points)
    assert (out.labels[50:] == NOISE).all() and (out.ids[50:] == -1).all()
    lo, hi = ps.bbox()
    assert ((out.points >= lo) & (out.points <= hi)).all()


def test_noise_ratio_counts_real_points_only():
    ps = add_uniform_noise(_cloud(40), 0.5, seed=1)
    assert len(add_uniform_noise(ps, 0.5, seed=2)) == 40 + 20 + 20


def test_noise_ratio_out_of_range():
    with pytest.raises(ValueError):
        add_uniform_noise(_cloud(10), 1.5)


@given(st.floats(0, 0.9), st.integers(0, 1000))
def test_remove_random_keeps_ordered_subset(ratio, seed):
    ps = _cloud(100)
    out = remove_random(ps, ratio, seed=seed)
    assert len(out) == math.ceil((1 - ratio) * 100 - 1e-9)
    assert np.all(np.diff(out.ids) > 0)
    np.testing.assert_array_equal(out.points, ps.points[out.ids])


def test_remove_random_too_few_points():
    with pytest.raises(ValueError):
        remove_random(_cloud(10), 0.5)


def test_sphere_outlier_geometry():
    ps = _cloud(100)
    out = add_sphere_outlier(ps, center=[5, 5, 5], radius=2.0, count=30, seed=0)
    np.testing.assert_allclose(np.linalg.norm(out.points[100:] - 5, axis=1), 2.0)
    assert out.labels[100:].all() and len(out) == 130
    assert len(add_sphere_outlier(ps, seed=0)) == 110


@given(st.integers(0, 500))
def test_remove_chunk_fraction_in_range(seed):
    ps = _cloud(300)
    out, frac = remove_chunk(ps, seed=seed)
    assert 0.10 <= frac <= 0.25
    assert len(out) == round(300 * (1 - frac))


def test_remove_chunk_needs_enough_points():
    with pytest.raises(ValueError):
        remove_chunk(_cloud(50))


def test_replace_carries_ground_truth_through_perturbation():
    states = synth_dataset(seed=0, n_states=3, grid_res=10)
    pair = CorrespondencePair.from_ids(states[0], states[1])
    t = add_uniform_noise(remove_random(pair.template, 0.3, seed=0), 0.5, seed=1)
    r = remove_random(pair.reference, 0.2, seed=2)
    p2 = pair.replace(t, r)
    for i, j in p2.gt_map:
        assert t.ids[i] == r.ids[j] >= 0
    assert len(p2.gt_map) == len(np.intersect1d(t.ids[t.ids >= 0], r.ids))


def test_synth_is_deterministic_and_shaped():
    a = synth_dataset(seed=3, n_states=5, grid_res=7)
    b = synth_dataset(seed=3, n_states=5, grid_res=7)
    assert len(a) == 5 and a[0].points.shape == (49, 3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.points, y.points)
    assert not np.array_equal(a[0].points, synth_dataset(seed=4, n_states=5, grid_res=7)[0].points)


def test_synth_consecutive_states_move_smoothly():
    states = synth_dataset(seed=0, n_states=100)
    step = max(np.linalg.norm(b.points - a.points, axis=1).max() for a, b in zip(states, states[1:]))
    assert step <= 0.35


def test_split_indices_blocks():
    train, test = split_indices(250)
    assert len(train) == 80 + 80 + 40 and len(test) == 20 + 20 + 10
    assert set(train).isdisjoint(test)
    assert list(test[:3]) == [80, 81, 82]


def test_split_dataset_pairs_stay_in_pool():
    states = synth_dataset(seed=0, n_states=100, grid_res=5)
    train, test = split_dataset(states, n_train_pairs=20, n_test_pairs=10, seed=0)
    assert len(train) == 20 and len(test) == 10
    train_full, _ = split_dataset(states, seed=0)
    assert len(train_full) == 80 * 79


@pytest.mark.parametrize("fmt", ["ascii", "binary"])
@pytest.mark.parametrize("noisy", [False, True])
def test_point_file_round_trip(tmp_path, fmt, noisy):
    ps = _cloud(20)
    if noisy:
        ps = add_uniform_noise(ps, 0.5, seed=0)
    path = tmp_path / "p"
    write_points(ps, path, format=fmt)
    back = read_points(path)
    np.testing.assert_array_equal(back.points, ps.points)
    np.testing.assert_array_equal(back.labels, ps.labels)


def test_binary_layout(tmp_path):
    write_points(PointSet(np.array([[1.0, 2.0, 3.0]])), tmp_path / "p", format="binary")
    raw = (tmp_path / "p").read_bytes()
    assert raw[:4] == b"VXPT" and raw[4:6] == b"\x01\x00"
    assert int.from_bytes(raw[6:14], "little") == 1
    assert np.frombuffer(raw[14:38], "<f8").tolist() == [1.0, 2.0, 3.0]
    assert raw[38:] == b"\x00"


@pytest.mark.parametrize("text,line", [("0 0 0\n1 2\n", 2), ("0 0 x\n", 1), ("0 0 0 7\n", 1),
                                       ("0 0 nan\n", 1), ("# only comment\n", 0)])
def test_ascii_parse_errors_name_the_line(tmp_path, text, line):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(ParseError) as err:
        read_points(path)
    assert err.value.line == line


def test_truncated_binary(tmp_path):
    path = tmp_path / "p"
    write_points(_cloud(5), path, format="binary")
    path.write_bytes(path.read_bytes()[:30])
    with pytest.raises(ParseError):
        read_points(path)


def test_correspondence_files_and_load_pair(tmp_path):
    a, b = _cloud(6), _cloud(6, seed=1)
    write_points(a, tmp_path / "a.txt")
    write_points(b, tmp_path / "b.txt")
    write_correspondences([[0, 5], [3, 1]], tmp_path / "c.txt")
    pair = load_pair(tmp_path / "a.txt", tmp_path / "b.txt", tmp_path / "c.txt")
    np.testing.assert_array_equal(pair.gt_map, [[0, 5], [3, 1]])
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(ParseError):
        read_correspondences(tmp_path / "bad.txt")


def test_load_sequence_sorted(tmp_path):
    states = synth_dataset(seed=0, n_states=3, grid_res=4)
    for i, s in enumerate(states):
        write_points(s, tmp_path / f"s{i}.txt")
    back = load_sequence(tmp_path)
    for x, y in zip(back, states):
        np.testing.assert_array_equal(x.points, y.points)
