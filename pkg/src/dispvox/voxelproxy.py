"""Point set <-> voxel grid conversions.

Grids are indexed ``[x, y, z]`` and cover the unit cube; voxel ``k`` spans
``[k/q, (k+1)/q)`` along each axis. Displacements live at voxel centres
``(k + 0.5)/q``, so the eight samples used for a point are the centres of the
2x2x2 voxel block around it. Points in the outer half-voxel shell use the
boundary cell with clamped local coordinates.

Corner order for weights and neighbours is 000, 001, 010, 100, 011, 110,
101, 111 where the three bits are the x, y, z offsets.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .pointset import PointSet

CORNERS = np.array([(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0),
                    (0, 1, 1), (1, 1, 0), (1, 0, 1), (1, 1, 1)], dtype=np.int64)

FIELD_MAGIC = b"VXDF"


@dataclass(frozen=True, eq=False)
class VoxelOccupancy:
    q: int
    data: np.ndarray  # (q, q, q) uint8, indexed [x, y, z]
    transform: object = None

    def flat(self):
        """Occupancy flattened with x varying fastest."""
        return self.data.transpose(2, 1, 0).ravel()


@dataclass(frozen=True, eq=False)
class DisplacementField:
    q: int
    data: np.ndarray  # (q, q, q, 3)

    def __post_init__(self):
        if self.data.shape != (self.q, self.q, self.q, 3):
            raise ValueError(f"field data must be {(self.q,) * 3 + (3,)}, got {self.data.shape}")


@dataclass(frozen=True, eq=False)
class AffinityTable:
    q: int
    voxel_index: np.ndarray       # (m, 3)
    neighbor_indices: np.ndarray  # (m, 8, 3)
    weights: np.ndarray           # (m, 8)

    def __len__(self):
        return len(self.weights)


def _coords(points):
    return points.points if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)


def trilinear_weights(local):
    """Eight interpolation weights for local coordinates ``(..., 3)`` in [0, 1]."""
    lc = np.asarray(local, dtype=np.float64)
    lx, ly, lz = lc[..., 0], lc[..., 1], lc[..., 2]
    mx, my, mz = 1 - lx, 1 - ly, 1 - lz
    return np.stack([mx * my * mz, mx * my * lz, mx * ly * mz, lx * my * mz,
                     mx * ly * lz, lx * ly * mz, lx * my * lz, lx * ly * lz], axis=-1)


def voxel_indices(points, q, warn=True):
    p = _coords(points)
    if warn and ((p < 0).any() or (p > 1).any()):
        warnings.warn("points outside the unit cube were clamped to the grid", RuntimeWarning,
                      stacklevel=3)
    return np.clip(np.floor(p * q).astype(np.int64), 0, q - 1)


def affinity_table(points, q, warn=True):
    p = _coords(points)
    vox = voxel_indices(p, q, warn=warn)
    u = p * q - 0.5
    base = np.clip(np.floor(u).astype(np.int64), 0, max(q - 2, 0))
    local = np.clip(u - base, 0.0, 1.0)
    neighbors = np.minimum(base[:, None, :] + CORNERS[None], q - 1)
    return AffinityTable(q, vox, neighbors, trilinear_weights(local))


def p2v(points, q, transform=None, warn=True):
    """Binary occupancy grid plus the affinity table of ``points``."""
    table = affinity_table(points, q, warn=warn)
    occ = np.zeros((q, q, q), dtype=np.uint8)
    v = table.voxel_index
    occ[v[:, 0], v[:, 1], v[:, 2]] = 1
    return VoxelOccupancy(q, occ, transform), table


def _check_q(field_q, table):
    if field_q != table.q:
        raise ValueError(f"grid size mismatch: field q={field_q}, table q={table.q}")


def _field_data(field):
    return field.data if isinstance(field, DisplacementField) else np.asarray(field)


def v2p(field, table: AffinityTable):
    """Trilinearly interpolate per-point displacements from the field."""
    data = _field_data(field)
    _check_q(data.shape[0], table)
    n = table.neighbor_indices
    vals = data[n[..., 0], n[..., 1], n[..., 2]]  # (m, 8, 3)
    return np.einsum("mk,mkc->mc", table.weights, vals)


def scatter_grad(table: AffinityTable, point_grads, q):
    """Adjoint of :func:`v2p`: spread per-point gradients onto the grid.

    Accumulation runs in point order (then corner order), so the result does
    not depend on how the caller batches the points.
    """
    _check_q(q, table)
    g = np.asarray(point_grads)
    if g.shape != (len(table), 3):
        raise ValueError(f"expected point gradients of shape {(len(table), 3)}, got {g.shape}")
    n = table.neighbor_indices
    flat = ((n[..., 0] * q + n[..., 1]) * q + n[..., 2]).ravel()
    contrib = (table.weights[..., None] * g[:, None, :]).reshape(-1, 3)
    out = np.empty((q ** 3, 3), dtype=np.result_type(g.dtype, np.float64))
    for c in range(3):
        out[:, c] = np.bincount(flat, weights=contrib[:, c], minlength=q ** 3)
    return out.reshape(q, q, q, 3)


def nearest_voxel_lookup(field, table: AffinityTable):
    """Displacement of each point's enclosing voxel (no interpolation)."""
    data = _field_data(field)
    _check_q(data.shape[0], table)
    v = table.voxel_index
    return np.asarray(data[v[:, 0], v[:, 1], v[:, 2]], dtype=np.float64)


def rasterize_gt(pair, q):
    """Voxelised ground-truth displacement field of a normalized pair.

    Each voxel holding mapped template points gets the mean of their
    displacements to the mapped reference points; every other voxel is zero.
    """
    if pair.gt_map is None or len(pair.gt_map) == 0:
        raise ValueError("rasterize_gt needs ground-truth correspondences")
    t, r = pair.gt_map[:, 0], pair.gt_map[:, 1]
    y = pair.template.points[t]
    disp = pair.reference.points[r] - y
    vox = voxel_indices(y, q)
    flat = (vox[:, 0] * q + vox[:, 1]) * q + vox[:, 2]
    counts = np.bincount(flat, minlength=q ** 3)
    z = np.zeros((q ** 3, 3))
    for c in range(3):
        z[:, c] = np.bincount(flat, weights=disp[:, c], minlength=q ** 3)
    nz = counts > 0
    z[nz] /= counts[nz, None]
    return DisplacementField(q, z.reshape(q, q, q, 3))


def write_field(field: DisplacementField, path):
    """``VXDF``, u32 q, then q^3 x 3 float32 with x varying fastest."""
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC + struct.pack("<I", field.q))
        fh.write(np.ascontiguousarray(field.data.transpose(2, 1, 0, 3)).astype("<f4").tobytes())


def read_field(path) -> DisplacementField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a displacement field file")
    (q,) = struct.unpack_from("<I", raw, 4)
    body = np.frombuffer(raw[8:], dtype="<f4")
    if body.size != q ** 3 * 3:
        raise ValueError(f"{path}: expected {q ** 3 * 3} values, got {body.size}")
    data = body.reshape(q, q, q, 3).transpose(2, 1, 0, 3).astype(np.float32)
    return DisplacementField(q, np.ascontiguousarray(data))
