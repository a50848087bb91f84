from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class NricpParams:
    max_iters: int = 40
    smoothing: float = 50.0
    anneal: float = 0.8
    k: int = 6
    tolerance: float = 1e-7

    def __post_init__(self):
        if self.smoothing < 0:
            raise ValueError("smoothing weight must be non-negative")
        if not 0 < self.anneal <= 1:
            raise ValueError(f"annealing factor must lie in (0, 1], got {self.anneal}")


def knn_laplacian(points, k=6):
    """Unweighted graph Laplacian of the symmetrised k-NN graph.

    Disconnected components are joined by their closest point pair.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = len(pts)
    k = min(k, m - 1)
    if k < 1:
        return sparse.csr_matrix((m, m))
    _, nbr = cKDTree(pts).query(pts, k=k + 1)
    rows = np.repeat(np.arange(m), k)
    cols = nbr[:, 1:].ravel()
    adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m)).tocsr()
    adj = ((adj + adj.T) > 0).astype(np.float64)
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        warnings.warn(f"k-NN graph has {n_comp} components; adding bridge edges", RuntimeWarning,
                      stacklevel=2)
        adj = adj.tolil()
        while n_comp > 1:
            inside = np.flatnonzero(labels == labels[0])
            outside = np.flatnonzero(labels != labels[0])
            dist, j = cKDTree(pts[outside]).query(pts[inside])
            a = inside[np.argmin(dist)]
            b = outside[j[np.argmin(dist)]]
            adj[a, b] = adj[b, a] = 1.0
            n_comp, labels = connected_components(adj.tocsr(), directed=False)
        adj = adj.tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sparse.diags(deg) - adj).tocsc()


def nricp_register(template, reference, params: NricpParams = None):
    """Non-rigid ICP on normalized inputs.

    Each iteration pairs every deformed template point with its nearest
    reference point and solves ``(I + alpha L) U = C - Y`` for the total
    displacement ``U``; ``alpha`` shrinks by the annealing factor per
    iteration. Returns ``(deformed, trace)`` with the mean nearest-neighbour
    distance per iteration.
    """
    params = NricpParams() if params is None else params
    y = np.asarray(template, dtype=np.float64)
    x = np.asarray(reference, dtype=np.float64)
    lap = knn_laplacian(y, params.k)
    eye = sparse.identity(len(y), format="csc")
    tree = cKDTree(x)
    u = np.zeros_like(y)
    alpha = params.smoothing
    trace = []
    for _ in range(params.max_iters):
        dist, idx = tree.query(y + u)
        trace.append(float(dist.mean()))
        target = x[idx] - y
        u_new = splu((eye + alpha * lap).tocsc()).solve(target)
        step = float(np.abs(u_new - u).max())
        u = u_new
        alpha *= params.anneal
        if step <= params.tolerance:
            break
    trace.append(float(tree.query(y + u)[0].mean()))
    return y + u, trace
