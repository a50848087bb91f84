from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PointSet


def _coords(p):
    return p.points if isinstance(p, PointSet) else np.asarray(p, dtype=np.float64)


def rmse(aligned_template, reference, gt_map) -> float:
    """Mean correspondence residual norm divided by sqrt(3).

    Only mapped pairs enter the average; noise points are never mapped.
    """
    m = np.asarray(gt_map, dtype=np.int64).reshape(-1, 2)
    if len(m) == 0:
        raise ValueError("rmse needs at least one correspondence")
    y = _coords(aligned_template)[m[:, 0]]
    x = _coords(reference)[m[:, 1]]
    return float(np.linalg.norm(y - x, axis=1).mean() / np.sqrt(3.0))


@dataclass(frozen=True)
class ErrorStats:
    e: float
    sigma: float
    per_pair: tuple

    @classmethod
    def from_values(cls, values):
        v = np.asarray(list(values), dtype=np.float64)
        if v.size == 0:
            return cls(float("nan"), float("nan"), ())
        return cls(float(v.mean()), float(v.std()), tuple(float(x) for x in v))

    @property
    def n(self):
        return len(self.per_pair)
