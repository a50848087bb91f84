"""Two-stage DispVoxNet registration: displacement estimation followed by
refinement, plus the displacement and point-projection losses."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .nn.network import DispVoxNet
from .pointset import CorrespondencePair, PointSet, fit_normalization, rmse
from .voxelproxy import (DisplacementField, affinity_table, nearest_voxel_lookup, p2v,
                         scatter_grad, v2p)

MODES = ("de_only", "de_plus_refine_nearest", "de_plus_refine_trilinear")


def network_input(occ_template, occ_reference, dtype=np.float32):
    """Stack template and reference occupancy as channels 0 and 1."""
    if occ_template.q != occ_reference.q:
        raise ValueError("occupancy grids differ in size")
    return np.stack([occ_template.data, occ_reference.data], axis=-1).astype(dtype)


def forward_de(occ_template, occ_reference, model: DispVoxNet) -> DisplacementField:
    if occ_template.q != model.q:
        raise ValueError(f"grid size {occ_template.q} does not match model q={model.q}")
    out = model(network_input(occ_template, occ_reference, model.dtype))
    return DisplacementField(model.q, out)


def disp_loss(pred, target):
    """Squared error summed over the grid, divided by the voxel count.

    Returns ``(loss, d loss / d pred)``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    n_vox = pred.shape[0] * pred.shape[1] * pred.shape[2]
    diff = pred.astype(np.float64) - target
    return float((diff * diff).sum() / n_vox), (2.0 / n_vox) * diff


def loss_disp(z, occ_template, occ_reference, model: DispVoxNet):
    """Displacement loss and its parameter gradients for one pair."""
    x = network_input(occ_template, occ_reference, model.dtype)
    out, cache = model.forward(x, keep_cache=True)
    target = z.data if isinstance(z, DisplacementField) else z
    loss, grad = disp_loss(out, target)
    return loss, model.backward(cache, grad.astype(model.dtype))


def loss_pp(deformed, reference, template_mask=None, tree=None):
    """Mean distance from each deformed point to its nearest reference point.

    ``reference`` may be a PointSet (noise points are dropped from the target
    set) or an array. ``template_mask`` selects which deformed points enter the
    mean; the rest get zero gradient. Returns ``(loss, per-point gradient)``.
    """
    y = np.asarray(deformed.points if isinstance(deformed, PointSet) else deformed, dtype=np.float64)
    if isinstance(reference, PointSet):
        targets = reference.points[reference.real_mask]
    else:
        targets = np.asarray(reference, dtype=np.float64)
    if len(targets) == 0:
        raise ValueError("point-projection loss has no reference points to project onto")
    mask = np.ones(len(y), bool) if template_mask is None else np.asarray(template_mask, bool)
    m = int(mask.sum())
    if m == 0:
        raise ValueError("point-projection loss has no template points")
    tree = cKDTree(targets) if tree is None else tree
    dist, idx = tree.query(y[mask])
    grad = np.zeros_like(y)
    diff = y[mask] - targets[idx]
    safe = dist > 0
    g = np.zeros_like(diff)
    g[safe] = diff[safe] / dist[safe, None]
    grad[mask] = g / m
    return float(dist.sum() / m), grad


@dataclass
class StageOutput:
    """Intermediate values of one pipeline pass in normalized coordinates."""
    occ_template: object
    occ_reference: object
    de_field: np.ndarray
    after_de: np.ndarray
    refine_table: object = None
    refine_input: np.ndarray = None
    refine_field: np.ndarray = None
    after_refine_trilinear: np.ndarray = None
    after_refine_nearest: np.ndarray = None


def run_stages(template_pts, reference_pts, de_model, refine_model=None, refine_cache=False):
    """Run the pipeline on normalized point arrays.

    The refinement network sees the re-voxelised DE output and its
    displacements are applied through a fresh affinity table of those points.
    With ``refine_cache`` the refinement forward cache is returned for
    backpropagation as a second value.
    """
    q = de_model.q
    occ_y, table_y = p2v(template_pts, q)
    occ_x, _ = p2v(reference_pts, q)
    de_out = de_model(network_input(occ_y, occ_x, de_model.dtype))
    after_de = template_pts + v2p(de_out, table_y)
    out = StageOutput(occ_y, occ_x, de_out, after_de)
    cache = None
    if refine_model is not None:
        if refine_model.q != q:
            raise ValueError("refinement model grid size differs from the DE model")
        occ_star, table_star = p2v(after_de, q, warn=False)
        x = network_input(occ_star, occ_x, refine_model.dtype)
        ref_out, cache = refine_model.forward(x, keep_cache=refine_cache)
        out.refine_table = table_star
        out.refine_input = x
        out.refine_field = ref_out
        out.after_refine_trilinear = after_de + v2p(ref_out, table_star)
        out.after_refine_nearest = after_de + nearest_voxel_lookup(ref_out, table_star)
    return (out, cache) if refine_cache else out


def refinement_step_gradients(template_pts, reference, de_model, refine_model,
                              template_mask=None, tree=None):
    """PP loss after refinement and its gradient w.r.t. refinement parameters.

    Gradients reach the refinement network only through the trilinear
    application of its displacements; the nearest-neighbour assignment and
    the re-voxelisation are held fixed.
    """
    out, cache = run_stages(template_pts, reference.points if isinstance(reference, PointSet) else reference,
                            de_model, refine_model, refine_cache=True)
    loss, point_grad = loss_pp(out.after_refine_trilinear, reference, template_mask, tree)
    field_grad = scatter_grad(out.refine_table, point_grad, refine_model.q)
    grads = refine_model.backward(cache, field_grad.astype(refine_model.dtype))
    return loss, grads, out


@dataclass
class PipelineState:
    de_model: DispVoxNet
    refine_model: DispVoxNet = None
    margin: float = 0.05

    @property
    def q(self):
        return self.de_model.q


def register(template: PointSet, reference: PointSet, state: PipelineState,
             mode="de_plus_refine_trilinear", gt_map=None):
    """Deform ``template`` towards ``reference``; returns ``(deformed, diagnostics)``."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode != "de_only" and state.refine_model is None:
        raise ValueError(f"mode {mode!r} needs a refinement model")
    t0 = time.perf_counter()
    transform = fit_normalization(template.points, reference.points, margin=state.margin)
    y = transform.apply(template.points)
    x = transform.apply(reference.points)
    out = run_stages(y, x, state.de_model, None if mode == "de_only" else state.refine_model)
    final = {"de_only": out.after_de,
             "de_plus_refine_nearest": out.after_refine_nearest,
             "de_plus_refine_trilinear": out.after_refine_trilinear}[mode]
    deformed = template.with_points(transform.invert(final))
    diag = {"mode": mode, "seconds": time.perf_counter() - t0, "transform": transform}
    if gt_map is not None and len(gt_map):
        diag["rmse_input"] = rmse(y, x, gt_map)
        diag["rmse_de"] = rmse(out.after_de, x, gt_map)
        if mode != "de_only":
            diag["rmse_refined"] = rmse(final, x, gt_map)
    return deformed, diag
