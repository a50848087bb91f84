from .core import (NOISE, REAL, CorrespondencePair, NormalizationTransform, PointSet,
                   fit_normalization, normalize_pair)
from .io import (ParseError, load_pair, load_sequence, read_correspondences, read_points,
                 write_correspondences, write_points)
from .metrics import ErrorStats, rmse
from .perturb import add_sphere_outlier, add_uniform_noise, remove_chunk, remove_random
from .synth import DeformParams, draw_pairs, split_dataset, split_indices, synth_dataset

__all__ = [
    "NOISE", "REAL", "CorrespondencePair", "NormalizationTransform", "PointSet",
    "fit_normalization", "normalize_pair", "ParseError", "load_pair", "load_sequence",
    "read_correspondences", "read_points", "write_correspondences", "write_points",
    "ErrorStats", "rmse", "add_sphere_outlier", "add_uniform_noise", "remove_chunk",
    "remove_random", "DeformParams", "draw_pairs", "split_dataset", "split_indices",
    "synth_dataset",
]
