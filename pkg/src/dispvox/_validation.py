import numpy as np
from sklearn.utils import check_array


def check_points(points, name="points", dtype=np.float64):
    """Validate an ``(n, 3)`` finite coordinate array and return it as ``dtype``."""
    arr = check_array(points, dtype=dtype, ensure_all_finite=True, input_name=name)
    if arr.shape[1] != 3:
        raise ValueError(f"{name}: expected 3D points, got dimensionality {arr.shape[1]}")
    return arr


def check_ratio(value, name, low=0.0, high=1.0, high_inclusive=True):
    value = float(value)
    ok = low <= value <= high if high_inclusive else low <= value < high
    if not ok:
        bracket = "]" if high_inclusive else ")"
        raise ValueError(f"{name} must lie in [{low}, {high}{bracket}, got {value}")
    return value
