"""Two-phase training: supervised displacement estimation, then the
refinement network on the point-projection loss with the first stage frozen."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .checkpoint import save_network
from .nn.network import DispVoxNet
from .nn.optim import AdamState, adam_step
from .pipeline import loss_disp, refinement_step_gradients
from .pointset import add_uniform_noise, normalize_pair, remove_random
from .voxelproxy import p2v, rasterize_gt

log = logging.getLogger(__name__)

PHASE_DE, PHASE_REFINE = 1, 2


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    q: int = 16
    lr: float = 3e-4
    batch_size: int = 1
    de_iterations: int = 1500
    refine_iterations: int = 800
    removal_range: tuple = (0.0, 0.3)
    noise_range: tuple = (0.0, 1.0)
    seed: int = 0
    margin: float = 0.05
    checkpoint_interval: int = 0
    plateau_window: int = 200
    plateau_tol: float = 1e-4

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("batch size is fixed at 1")
        lo, hi = self.removal_range
        if not 0 <= lo <= hi <= 0.3:
            raise ValueError(f"removal range must lie within [0, 0.3], got {self.removal_range}")
        lo, hi = self.noise_range
        if not 0 <= lo <= hi <= 1.0:
            raise ValueError(f"noise range must lie within [0, 1], got {self.noise_range}")

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        types = {f.name: f.default for f in dataclasses.fields(cls)}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                continue
            default = types[key]
            if isinstance(default, tuple):
                kwargs[key] = tuple(float(x) for x in value.split(","))
            elif isinstance(default, bool):
                kwargs[key] = value.lower() in ("1", "true", "yes")
            else:
                kwargs[key] = type(default)(float(value) if isinstance(default, int) else value)
        return cls(**kwargs)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # (iteration, phase, loss, seconds)

    def append(self, iteration, phase, loss, seconds):
        self.records.append((int(iteration), int(phase), float(loss), float(seconds)))

    def losses(self, phase=None):
        return np.array([r[2] for r in self.records if phase is None or r[1] == phase])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "phase", "loss", "seconds"])
            for it, phase, loss, sec in self.records:
                w.writerow([it, phase, repr(loss), f"{sec:.6f}"])


def _iteration_rng(seed, phase, iteration):
    # stateless per-iteration stream so a resumed run replays the same samples
    return np.random.default_rng([seed, phase, iteration])


def augment_pair(pair, rng, removal_range=(0.0, 0.3), noise_range=(0.0, 1.0)):
    """Random point removal then uniform noise, independently on both sets."""
    sets = []
    for ps in (pair.template, pair.reference):
        r = rng.uniform(*removal_range)
        p = rng.uniform(*noise_range)
        ps = remove_random(ps, r, seed=rng.integers(2 ** 32))
        ps = add_uniform_noise(ps, p, seed=rng.integers(2 ** 32))
        sets.append(ps)
    return pair.replace(*sets)


def _sample(pairs, config, phase, iteration):
    rng = _iteration_rng(config.seed, phase, iteration)
    k = int(rng.integers(len(pairs)))
    pair = augment_pair(pairs[k], rng, config.removal_range, config.noise_range)
    normed, _ = normalize_pair(pair, margin=config.margin)
    return k, normed


def _plateaued(losses, window, tol):
    if window <= 0 or len(losses) < 2 * window:
        return False
    prev = float(np.mean(losses[-2 * window:-window]))
    cur = float(np.mean(losses[-window:]))
    return prev > 0 and (prev - cur) / prev < tol


def _checkpoint(config, model, adam, iteration, phase, directory):
    if not directory or not config.checkpoint_interval:
        return
    if (iteration + 1) % config.checkpoint_interval:
        return
    header = config.to_text() + f"phase={phase}\niteration={iteration + 1}\n"
    path = Path(directory) / f"phase{phase}_{iteration + 1:07d}.vxnw"
    save_network(path, model, header, adam)


def train_de(pairs, config: TrainConfig, model=None, adam=None, start=0, train_log=None,
             checkpoint_dir=None):
    """Train the displacement-estimation network on the displacement loss.

    Resuming from a checkpoint means passing its model and Adam state with
    ``start`` set to the saved iteration count.
    """
    if not pairs:
        raise ValueError("no training pairs")
    for i, p in enumerate(pairs):
        if p.gt_map is None or len(p.gt_map) == 0:
            raise ValueError(f"training pair {i} has no ground-truth correspondences")
    model = DispVoxNet(config.q, seed=config.seed) if model is None else model
    adam = AdamState(lr=config.lr) if adam is None else adam
    train_log = TrainLog() if train_log is None else train_log
    losses = []
    for it in range(start, config.de_iterations):
        t0 = time.perf_counter()
        k, normed = _sample(pairs, config, PHASE_DE, it)
        occ_y, _ = p2v(normed.template, config.q)
        occ_x, _ = p2v(normed.reference, config.q)
        z = rasterize_gt(normed, config.q)
        loss, grads = loss_disp(z, occ_y, occ_x, model)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite DE loss at iteration {it} (pair {k}, seed {config.seed})")
        adam_step(model.params, grads, adam)
        train_log.append(it, PHASE_DE, loss, time.perf_counter() - t0)
        losses.append(loss)
        _checkpoint(config, model, adam, it, PHASE_DE, checkpoint_dir)
        if it % 100 == 0:
            log.info("DE iteration %d loss %.6g", it, loss)
        if _plateaued(losses, config.plateau_window, config.plateau_tol):
            log.info("DE loss plateaued at iteration %d", it)
            break
    return model, train_log, adam


def train_refine(pairs, de_model, config: TrainConfig, model=None, adam=None, start=0,
                 train_log=None, checkpoint_dir=None):
    """Train the refinement network on the point-projection loss.

    The refinement network starts as a copy of ``de_model``; ``de_model``
    itself is only ever read.
    """
    if not pairs:
        raise ValueError("no training pairs")
    model = de_model.copy() if model is None else model
    adam = AdamState(lr=config.lr) if adam is None else adam
    train_log = TrainLog() if train_log is None else train_log
    losses = []
    for it in range(start, config.refine_iterations):
        t0 = time.perf_counter()
        k, normed = _sample(pairs, config, PHASE_REFINE, it)
        ref = normed.reference
        tree = cKDTree(ref.points[ref.real_mask])
        loss, grads, _ = refinement_step_gradients(
            normed.template.points, ref, de_model, model,
            template_mask=normed.template.real_mask, tree=tree)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite PP loss at iteration {it} (pair {k}, seed {config.seed})")
        adam_step(model.params, grads, adam)
        train_log.append(it, PHASE_REFINE, loss, time.perf_counter() - t0)
        losses.append(loss)
        _checkpoint(config, model, adam, it, PHASE_REFINE, checkpoint_dir)
        if it % 50 == 0:
            log.info("refinement iteration %d loss %.6g", it, loss)
        if _plateaued(losses, config.plateau_window, config.plateau_tol):
            log.info("PP loss plateaued at iteration %d", it)
            break
    return model, train_log, adam
