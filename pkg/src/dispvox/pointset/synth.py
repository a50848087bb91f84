"""Synthetic deformable-sheet sequences with known correspondences.

Every state is the same rectangular grid of points, bent by a handful of
smooth Gaussian bumps whose heights oscillate over the sequence, then moved
by a slowly varying rigid motion. Point order never changes, so the ground
truth correspondence between any two states is the identity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CorrespondencePair, PointSet


@dataclass(frozen=True)
class DeformParams:
    amplitude: float = 0.2
    n_bumps: int = 4
    width_range: tuple = (0.15, 0.35)
    period_range: tuple = (10.0, 30.0)
    rotation: float = 0.15  # radians
    translation: float = 0.05

    def __post_init__(self):
        if self.amplitude < 0 or self.rotation < 0 or self.translation < 0:
            raise ValueError("deformation magnitudes must be non-negative")
        if self.n_bumps < 0:
            raise ValueError("n_bumps must be non-negative")


def sheet(grid_res):
    u = np.linspace(-0.5, 0.5, grid_res)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel(), np.zeros(grid_res * grid_res)], axis=1)


def _rotation(axis, angle):
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def synth_dataset(seed=0, n_states=100, grid_res=25, deform_params=None):
    """Return ``n_states`` PointSets sampled from one deforming sheet."""
    if n_states < 2:
        raise ValueError("need at least two states")
    if grid_res < 2:
        raise ValueError("grid_res must be >= 2")
    dp = DeformParams() if deform_params is None else deform_params
    rng = np.random.default_rng(seed)
    base = sheet(grid_res)
    uv = base[:, :2]

    centers = rng.uniform(-0.4, 0.4, size=(dp.n_bumps, 2))
    widths = rng.uniform(*dp.width_range, size=dp.n_bumps)
    dirs = rng.normal(size=(dp.n_bumps, 3))
    dirs[:, 2] = 2.0 * np.abs(dirs[:, 2]) + 1.0  # mostly out of plane
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    omegas = 2 * np.pi / rng.uniform(*dp.period_range, size=dp.n_bumps)
    phases = rng.uniform(0, 2 * np.pi, size=dp.n_bumps)
    profiles = np.exp(-((uv[:, None, :] - centers[None]) ** 2).sum(-1) / (2 * widths ** 2))

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rot_omega = 2 * np.pi / rng.uniform(*dp.period_range)
    rot_phase = rng.uniform(0, 2 * np.pi)
    tr_omega = 2 * np.pi / rng.uniform(*dp.period_range, size=3)
    tr_phase = rng.uniform(0, 2 * np.pi, size=3)

    states = []
    for t in range(n_states):
        heights = dp.amplitude * np.sin(omegas * t + phases)
        pts = base + (profiles * heights) @ dirs
        rot = _rotation(axis, dp.rotation * np.sin(rot_omega * t + rot_phase))
        shift = dp.translation * np.sin(tr_omega * t + tr_phase)
        states.append(PointSet(pts @ rot.T + shift))
    return states


def split_indices(n_states, block=100, train_per_block=80):
    """Per block of ``block`` states the first 80% train, the rest test.

    A trailing block shorter than ``block`` is split proportionally.
    """
    if n_states < 2:
        raise ValueError("need at least two states to split")
    train, test = [], []
    for start in range(0, n_states, block):
        size = min(block, n_states - start)
        n_train = train_per_block if size == block else int(round(size * train_per_block / block))
        n_train = min(max(n_train, 1), size - 1) if size >= 2 else size
        train.extend(range(start, start + n_train))
        test.extend(range(start + n_train, start + size))
    return np.array(train, dtype=np.int64), np.array(test, dtype=np.int64)


def draw_pairs(states, pool, n_pairs, seed=0):
    """Random ordered (template, reference) pairs of distinct states from ``pool``."""
    pool = np.asarray(pool)
    if len(pool) < 2:
        raise ValueError("a pool needs at least two states to form pairs")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        i, j = rng.choice(pool, size=2, replace=False)
        pairs.append(CorrespondencePair.from_ids(states[i], states[j]))
    return pairs


def split_dataset(states, n_train_pairs=None, n_test_pairs=None, seed=0):
    """Split a sequence into training and test pairs drawn within each pool.

    With ``n_*_pairs`` left as None every ordered pair of distinct states in
    the pool is returned.
    """
    train_idx, test_idx = split_indices(len(states))

    def pairs_for(pool, n, s):
        if n is None:
            return [CorrespondencePair.from_ids(states[i], states[j])
                    for i in pool for j in pool if i != j]
        return draw_pairs(states, pool, n, seed=s)

    return pairs_for(train_idx, n_train_pairs, seed), pairs_for(test_idx, n_test_pairs, seed + 1)
