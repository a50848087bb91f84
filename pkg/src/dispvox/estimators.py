"""Scikit-learn style registration estimators.

Every estimator exposes ``fit(pairs)``, ``register(template, reference)`` and
``transform(pairs)`` (the deformed templates), plus ``score(pairs)`` as the
negative mean RMSE so that higher is better. Inputs may be PointSets or
``(n, 3)`` arrays; outputs keep the template's labels and ids.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .baselines.cpd import CpdParams, cpd_register
from .baselines.nricp import NricpParams, nricp_register
from .checkpoint import load_pipeline, save_pipeline
from .pipeline import MODES, PipelineState, register
from .pointset import CorrespondencePair, PointSet, fit_normalization, normalize_pair, rmse
from .training import TrainConfig, train_de, train_refine


def as_pointset(points):
    return points if isinstance(points, PointSet) else PointSet(points)


def _pairs(pairs):
    if isinstance(pairs, CorrespondencePair):
        return [pairs]
    return list(pairs)


class RegistrationMixin:
    """Shared ``transform``/``score`` on top of ``register``."""

    def transform(self, pairs):
        return [self.register(p.template, p.reference) for p in _pairs(pairs)]

    def score(self, pairs):
        """Negative mean RMSE, measured in each pair's normalized frame."""
        errors = []
        for p in _pairs(pairs):
            deformed = self.register(p.template, p.reference)
            tf = fit_normalization(p.template.points, p.reference.points)
            errors.append(rmse(tf.apply(deformed.points), tf.apply(p.reference.points), p.gt_map))
        return -float(np.mean(errors))


class _NormalizedBaseline(RegistrationMixin, BaseEstimator):
    margin = 0.05

    def fit(self, pairs=None, y=None):
        return self

    def _run(self, y, x):
        raise NotImplementedError

    def register(self, template, reference):
        template, reference = as_pointset(template), as_pointset(reference)
        pair, tf = normalize_pair(CorrespondencePair(template, reference), margin=self.margin)
        deformed, self.trace_ = self._run(pair.template.points, pair.reference.points)
        return template.with_points(tf.invert(deformed))


class IdentityRegistration(_NormalizedBaseline):
    """Returns the template unchanged; the null method of the benchmarks."""

    def register(self, template, reference):
        self.trace_ = []
        return as_pointset(template)


class CoherentPointDrift(_NormalizedBaseline):
    def __init__(self, beta=2.0, lambda_=3.0, w_outlier=0.1, max_iters=150, tolerance=1e-10):
        self.beta = beta
        self.lambda_ = lambda_
        self.w_outlier = w_outlier
        self.max_iters = max_iters
        self.tolerance = tolerance

    def _run(self, y, x):
        params = CpdParams(self.beta, self.lambda_, self.w_outlier, self.max_iters, self.tolerance)
        return cpd_register(y, x, params)


class NonRigidICP(_NormalizedBaseline):
    def __init__(self, max_iters=40, smoothing=50.0, anneal=0.8, k=6, tolerance=1e-7):
        self.max_iters = max_iters
        self.smoothing = smoothing
        self.anneal = anneal
        self.k = k
        self.tolerance = tolerance

    def _run(self, y, x):
        params = NricpParams(self.max_iters, self.smoothing, self.anneal, self.k, self.tolerance)
        return nricp_register(y, x, params)


class DispVoxNetRegistration(RegistrationMixin, BaseEstimator):
    """Two-stage voxel displacement network.

    ``fit`` runs both training phases on pairs with ground truth; a trained
    pipeline can also be loaded with :meth:`from_checkpoint`.
    """

    def __init__(self, q=16, mode="de_plus_refine_trilinear", lr=3e-4, de_iterations=1500,
                 refine_iterations=800, removal_range=(0.0, 0.3), noise_range=(0.0, 1.0),
                 seed=0, margin=0.05, plateau_window=200, plateau_tol=1e-4,
                 checkpoint_interval=0, checkpoint_dir=None):
        self.q = q
        self.mode = mode
        self.lr = lr
        self.de_iterations = de_iterations
        self.refine_iterations = refine_iterations
        self.removal_range = removal_range
        self.noise_range = noise_range
        self.seed = seed
        self.margin = margin
        self.plateau_window = plateau_window
        self.plateau_tol = plateau_tol
        self.checkpoint_interval = checkpoint_interval
        self.checkpoint_dir = checkpoint_dir

    def train_config(self):
        return TrainConfig(q=self.q, lr=self.lr, de_iterations=self.de_iterations,
                           refine_iterations=self.refine_iterations,
                           removal_range=tuple(self.removal_range), noise_range=tuple(self.noise_range),
                           seed=self.seed, margin=self.margin,
                           checkpoint_interval=self.checkpoint_interval,
                           plateau_window=self.plateau_window, plateau_tol=self.plateau_tol)

    def fit(self, pairs, y=None):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        pairs = _pairs(pairs)
        config = self.train_config()
        de, self.de_log_, _ = train_de(pairs, config, checkpoint_dir=self.checkpoint_dir)
        refine = None
        self.refine_log_ = None
        if config.refine_iterations > 0:
            refine, self.refine_log_, _ = train_refine(pairs, de, config,
                                                       checkpoint_dir=self.checkpoint_dir)
        self.pipeline_ = PipelineState(de, refine, self.margin)
        return self

    @classmethod
    def from_checkpoint(cls, path, mode="de_plus_refine_trilinear"):
        state = load_pipeline(path)
        est = cls(q=state.q, mode=mode, margin=state.margin)
        est.pipeline_ = state
        return est

    def save(self, path):
        self._check_fitted()
        save_pipeline(path, self.pipeline_, self.train_config().to_text())

    def _check_fitted(self):
        if getattr(self, "pipeline_", None) is None:
            raise NotFittedError("DispVoxNetRegistration is not fitted; call fit or from_checkpoint")

    def register(self, template, reference, gt_map=None):
        self._check_fitted()
        deformed, self.diagnostics_ = register(as_pointset(template), as_pointset(reference),
                                               self.pipeline_, self.mode, gt_map=gt_map)
        return deformed
