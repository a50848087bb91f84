"""Seeded perturbation generators: uniform noise, subsampling, outlier
spheres and chunk removal. Each returns a new PointSet; inputs are never
modified and existing coordinates are kept bit-for-bit."""
from __future__ import annotations

import math

import numpy as np

from .._validation import check_ratio
from .core import NOISE, PointSet

MIN_POINTS = 8


def _append_noise(ps: PointSet, extra):
    n = len(extra)
    return PointSet(np.concatenate([ps.points, extra]),
                    np.concatenate([ps.labels, np.full(n, NOISE, np.uint8)]),
                    np.concatenate([ps.ids, np.full(n, -1, np.int64)]))


def add_uniform_noise(ps: PointSet, ratio, seed=None):
    """Append ``floor(ratio * n_real)`` points drawn uniformly over the bounding box."""
    ratio = check_ratio(ratio, "noise ratio")
    count = int(math.floor(ratio * ps.n_real))
    if count == 0:
        return ps
    rng = np.random.default_rng(seed)
    lo, hi = ps.bbox()
    return _append_noise(ps, rng.uniform(lo, hi, size=(count, 3)))


def remove_random(ps: PointSet, ratio, seed=None):
    """Keep a uniform random ``ceil((1 - ratio) * n)`` subset, original order preserved."""
    ratio = check_ratio(ratio, "removal ratio", high_inclusive=False)
    keep = int(math.ceil((1.0 - ratio) * len(ps) - 1e-9))
    if keep == len(ps):
        return ps
    if keep < MIN_POINTS:
        raise ValueError(f"removal would leave {keep} points (< {MIN_POINTS})")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(ps), size=keep, replace=False))
    return ps.subset(idx)


def _diag(ps):
    lo, hi = ps.bbox()
    return float(np.linalg.norm(hi - lo))


def add_sphere_outlier(ps: PointSet, center=None, radius=None, count=None, seed=None):
    """Append ``count`` points on a sphere surface, labelled noise.

    Defaults: 10% of the set size, radius 0.1 of the bounding-box diagonal,
    centre 0.3 diagonals from the centroid in a random direction.
    """
    rng = np.random.default_rng(seed)
    diag = _diag(ps)
    if count is None:
        count = max(1, int(round(0.1 * len(ps))))
    if count < 1:
        raise ValueError("sphere outlier needs count >= 1")
    if radius is None:
        radius = 0.1 * diag
    if center is None:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        center = ps.points.mean(axis=0) + 0.3 * diag * direction
    center = np.asarray(center, dtype=np.float64)
    u = rng.normal(size=(count, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return _append_noise(ps, center + radius * u)


def remove_chunk(ps: PointSet, seed=None, radius=None, fraction_range=(0.10, 0.25)):
    """Remove every point inside a ball around a random point of the set.

    Without an explicit ``radius`` the radius is sampled until the ball holds a
    fraction of the points inside ``fraction_range``. Returns
    ``(perturbed_set, removed_fraction)``.
    """
    n = len(ps)
    if n < 100:
        raise ValueError(f"chunk removal needs at least 100 points, got {n}")
    rng = np.random.default_rng(seed)
    center = ps.points[rng.integers(n)]
    dist = np.linalg.norm(ps.points - center, axis=1)
    if radius is None:
        lo_f, hi_f = fraction_range
        ordered = np.sort(dist)
        r_lo = ordered[max(int(math.ceil(lo_f * n)) - 1, 0)]
        r_hi = ordered[min(int(math.floor(hi_f * n)), n - 1)]
        for _ in range(1000):
            radius = rng.uniform(r_lo, r_hi)
            frac = float((dist <= radius).mean())
            if lo_f <= frac <= hi_f:
                break
        else:
            raise RuntimeError("could not find a chunk radius in the requested fraction range")
    removed = dist <= radius if radius > 0 else np.zeros(n, bool)
    return ps.subset(np.flatnonzero(~removed)), float(removed.mean())
