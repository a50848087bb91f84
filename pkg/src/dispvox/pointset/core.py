from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._validation import check_points

REAL = 0
NOISE = 1


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointSet:
    """Ordered 3D points with per-point labels and source ids.

    ``labels`` marks each point real (0) or noise (1); noise points never
    take part in supervision or evaluation. ``ids`` records where each point
    came from so correspondences survive subsampling; noise points carry -1.
    """

    points: np.ndarray
    labels: np.ndarray = None
    ids: np.ndarray = None

    def __post_init__(self):
        pts = check_points(self.points)
        n = len(pts)
        labels = np.zeros(n, np.uint8) if self.labels is None else np.asarray(self.labels)
        if labels.shape != (n,):
            raise ValueError(f"labels: expected {n} entries, got shape {labels.shape}")
        if labels.size and not np.isin(labels, (REAL, NOISE)).all():
            raise ValueError("labels must be 0 (real) or 1 (noise)")
        ids = np.where(labels == REAL, np.arange(n), -1) if self.ids is None else np.asarray(self.ids)
        if ids.shape != (n,):
            raise ValueError(f"ids: expected {n} entries, got shape {ids.shape}")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))
        object.__setattr__(self, "ids", _frozen(ids.astype(np.int64)))

    def __len__(self):
        return len(self.points)

    @property
    def real_mask(self):
        return self.labels == REAL

    @property
    def n_real(self):
        return int(self.real_mask.sum())

    @property
    def has_noise(self):
        return bool((self.labels == NOISE).any())

    def with_points(self, points):
        """Same labels and ids, new coordinates."""
        return PointSet(points, self.labels, self.ids)

    def subset(self, index):
        index = np.asarray(index)
        return PointSet(self.points[index], self.labels[index], self.ids[index])

    def bbox(self):
        return self.points.min(axis=0), self.points.max(axis=0)


def _check_map(gt_map, template, reference):
    m = np.asarray(gt_map, dtype=np.int64).reshape(-1, 2)
    if len(m) == 0:
        return m
    t, r = m[:, 0], m[:, 1]
    if t.min() < 0 or t.max() >= len(template) or r.min() < 0 or r.max() >= len(reference):
        raise ValueError("gt_map index out of range")
    if not (template.real_mask[t].all() and reference.real_mask[r].all()):
        raise ValueError("gt_map may only link points labelled real")
    if len(np.unique(t)) != len(t) or len(np.unique(r)) != len(r):
        raise ValueError("gt_map must be injective")
    return m


@dataclass(frozen=True, eq=False)
class CorrespondencePair:
    """Template (to be deformed) and reference, with optional ground truth.

    ``gt_map`` is a ``(K, 2)`` array of ``(template index, reference index)``.
    """

    template: PointSet
    reference: PointSet
    gt_map: np.ndarray = None

    def __post_init__(self):
        if self.gt_map is not None:
            object.__setattr__(self, "gt_map", _frozen(_check_map(self.gt_map, self.template, self.reference)))

    @classmethod
    def from_ids(cls, template, reference):
        """Link real points that share a source id (consistent-topology data)."""
        t_idx = np.flatnonzero(template.real_mask)
        r_idx = np.flatnonzero(reference.real_mask)
        common, ti, ri = np.intersect1d(template.ids[t_idx], reference.ids[r_idx],
                                        assume_unique=True, return_indices=True)
        return cls(template, reference, np.stack([t_idx[ti], r_idx[ri]], axis=1))

    def replace(self, template=None, reference=None):
        """Swap in perturbed sets and carry the ground truth over via source ids.

        Pairs whose template or reference point was removed are dropped.
        """
        template = self.template if template is None else template
        reference = self.reference if reference is None else reference
        if self.gt_map is None:
            return CorrespondencePair(template, reference)
        old_t = self.template.ids[self.gt_map[:, 0]]
        old_r = self.reference.ids[self.gt_map[:, 1]]
        lookup = dict(zip(old_t.tolist(), old_r.tolist()))
        r_pos = {i: k for k, i in enumerate(reference.ids.tolist()) if i >= 0}
        pairs = []
        for k, i in enumerate(template.ids.tolist()):
            if i < 0 or i not in lookup:
                continue
            j = r_pos.get(lookup[i])
            if j is not None:
                pairs.append((k, j))
        return CorrespondencePair(template, reference, np.array(pairs, dtype=np.int64).reshape(-1, 2))

    def with_template_points(self, points):
        return CorrespondencePair(self.template.with_points(points), self.reference, self.gt_map)


@dataclass(frozen=True)
class NormalizationTransform:
    """Similarity map ``p -> p * scale + offset`` into the unit cube."""

    scale: float
    offset: tuple
    margin: float = 0.05

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(self.offset)

    def invert(self, points):
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.offset)) / self.scale

    def apply_set(self, ps: PointSet):
        return ps.with_points(self.apply(ps.points))

    def invert_set(self, ps: PointSet):
        return ps.with_points(self.invert(ps.points))


def fit_normalization(*point_arrays, margin=0.05) -> NormalizationTransform:
    """Shared transform placing the joint bounding box centred in the inset cube."""
    if not 0 <= margin < 0.5:
        raise ValueError(f"margin must lie in [0, 0.5), got {margin}")
    pts = np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1, 3) for p in point_arrays])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    if not extent > 0:
        raise ValueError("degenerate bounding box: all points coincide")
    scale = (1.0 - 2.0 * margin) / extent
    offset = 0.5 - 0.5 * (lo + hi) * scale
    return NormalizationTransform(scale, tuple(float(o) for o in offset), margin)


def normalize_pair(pair: CorrespondencePair, margin=0.05):
    transform = fit_normalization(pair.template.points, pair.reference.points, margin=margin)
    normed = CorrespondencePair(transform.apply_set(pair.template),
                                transform.apply_set(pair.reference), pair.gt_map)
    return normed, transform
