import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dispvox.pointset import CorrespondencePair, PointSet
from dispvox.voxelproxy import (CORNERS, DisplacementField, affinity_table, nearest_voxel_lookup,
                                p2v, rasterize_gt, read_field, scatter_grad, trilinear_weights,
                                v2p, write_field)

from oracles import trilinear_term_by_term

unit = st.floats(0.0, 1.0, allow_nan=False)
points = arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=unit)


@given(arrays(np.float64, st.tuples(st.integers(1, 50), st.just(3)),
              elements=st.floats(-0.5, 1.5, allow_nan=False)))
def test_partition_of_unity_with_clamping(local):
    w = trilinear_weights(np.clip(local, 0, 1))
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)
    assert (w >= 0).all()


def test_weights_are_corner_indicators_at_corners():
    np.testing.assert_array_equal(trilinear_weights(CORNERS.astype(float)), np.eye(8))


@given(points, st.sampled_from([2, 3, 4, 8]))
def test_v2p_matches_term_by_term_oracle(pts, q):
    field = np.random.default_rng(len(pts)).normal(size=(q, q, q, 3))
    got = v2p(field, affinity_table(pts, q))
    want = np.array([trilinear_term_by_term(field, p) for p in pts])
    np.testing.assert_allclose(got, want, atol=1e-12)


@given(points, st.sampled_from([2, 4, 8]), st.floats(-2, 2))
def test_constant_field_interpolates_exactly(pts, q, c):
    field = np.full((q, q, q, 3), c)
    np.testing.assert_allclose(v2p(field, affinity_table(pts, q)), c, atol=1e-12)


def test_linear_field_reproduced_inside_centre_hull(rng):
    q = 8
    centres = (np.arange(q) + 0.5) / q
    cx, cy, cz = np.meshgrid(centres, centres, centres, indexing="ij")
    field = np.stack([2 * cx - cy, cz + 0.3, cx * 0 + 1.5 * cy], axis=-1)
    pts = rng.uniform(0.5 / q, 1 - 0.5 / q, size=(200, 3))
    want = np.stack([2 * pts[:, 0] - pts[:, 1], pts[:, 2] + 0.3, 1.5 * pts[:, 1]], axis=1)
    np.testing.assert_allclose(v2p(field, affinity_table(pts, q)), want, atol=1e-12)


@given(points, st.sampled_from([2, 4, 6]))
def test_adjoint_identity(pts, q):
    rng = np.random.default_rng(len(pts) * 7 + q)
    table = affinity_table(pts, q)
    g = rng.normal(size=(len(pts), 3))
    d = rng.normal(size=(q, q, q, 3))
    lhs = float((scatter_grad(table, g, q) * d).sum())
    rhs = float((g * v2p(d, table)).sum())
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_scatter_grad_is_batch_invariant(rng):
    pts = rng.uniform(size=(100, 3))
    g = rng.normal(size=(100, 3))
    whole = scatter_grad(affinity_table(pts, 4), g, 4)
    parts = scatter_grad(affinity_table(pts[:37], 4), g[:37], 4) + \
        scatter_grad(affinity_table(pts[37:], 4), g[37:], 4)
    np.testing.assert_allclose(whole, parts, atol=1e-13)


def test_scatter_grad_validates_shapes(rng):
    table = affinity_table(rng.uniform(size=(5, 3)), 4)
    with pytest.raises(ValueError):
        scatter_grad(table, np.zeros((4, 3)), 4)
    with pytest.raises(ValueError):
        scatter_grad(table, np.zeros((5, 3)), 8)
    with pytest.raises(ValueError):
        v2p(np.zeros((8, 8, 8, 3)), table)


def test_p2v_occupancy_and_voxel_index():
    pts = np.array([[0.0, 0.0, 0.0], [0.99, 0.5, 0.26], [1.0, 1.0, 1.0], [0.01, 0.01, 0.01]])
    occ, table = p2v(pts, 4)
    np.testing.assert_array_equal(table.voxel_index, [[0, 0, 0], [3, 2, 1], [3, 3, 3], [0, 0, 0]])
    assert occ.data.sum() == 3 and occ.data.dtype == np.uint8
    assert occ.data[3, 2, 1] == 1
    flat = occ.flat()
    assert flat[3 + 4 * 2 + 16 * 1] == 1  # x fastest


def test_out_of_cube_points_are_clamped_with_warning():
    with pytest.warns(RuntimeWarning):
        _, table = p2v(np.array([[1.2, -0.1, 0.5]]), 4)
    np.testing.assert_array_equal(table.voxel_index, [[3, 0, 2]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p2v(np.array([[1.2, -0.1, 0.5]]), 4, warn=False)


def test_nearest_lookup_reads_enclosing_voxel(rng):
    field = rng.normal(size=(4, 4, 4, 3))
    pts = np.array([[0.3, 0.6, 0.9]])
    np.testing.assert_array_equal(nearest_voxel_lookup(field, affinity_table(pts, 4))[0], field[1, 2, 3])


def test_rasterize_gt_means_per_voxel():
    t = PointSet(np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.9, 0.9, 0.9]]))
    r = PointSet(t.points + np.array([[0.1, 0, 0], [0.3, 0, 0], [0, 0, -0.2]]))
    z = rasterize_gt(CorrespondencePair.from_ids(t, r), 2)
    np.testing.assert_allclose(z.data[0, 0, 0], [0.2, 0, 0])
    np.testing.assert_allclose(z.data[1, 1, 1], [0, 0, -0.2])
    assert np.count_nonzero(np.abs(z.data).sum(-1)) == 2


def test_field_file_round_trip(tmp_path, rng):
    f = DisplacementField(4, rng.normal(size=(4, 4, 4, 3)).astype(np.float32))
    write_field(f, tmp_path / "f.vxdf")
    raw = (tmp_path / "f.vxdf").read_bytes()
    assert raw[:4] == b"VXDF" and len(raw) == 8 + 4 * 64 * 3
    # x varies fastest in the payload
    assert np.frombuffer(raw[8:20], "<f4").tolist() == f.data[0, 0, 0].tolist()
    assert np.frombuffer(raw[20:32], "<f4").tolist() == f.data[1, 0, 0].tolist()
    np.testing.assert_array_equal(read_field(tmp_path / "f.vxdf").data, f.data)


def test_field_file_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE" + b"\0" * 8)
    with pytest.raises(ValueError):
        read_field(tmp_path / "bad")
    (tmp_path / "short").write_bytes(b"VXDF" + np.uint32(4).tobytes() + b"\0" * 12)
    with pytest.raises(ValueError):
        read_field(tmp_path / "short")
