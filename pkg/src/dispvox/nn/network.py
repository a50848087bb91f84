"""The DispVoxNet U-Net: 2-channel occupancy in, 3-channel displacement out.

Layer ids number the rows of ARCHITECTURE below (row 1 is the input). Skip
connections concatenate (current output, skip source) for rows 13, 16, 19.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import functional as F
from .functional import ConvSpec, ShapeError

SLOPE = 0.01

# (row id, kind, spec or None, skip source row)
ARCHITECTURE = (
    (2, "conv", ConvSpec(2, 8, 7, 3, 1), None),
    (3, "lrelu", None, None),
    (4, "pool", None, None),
    (5, "conv", ConvSpec(8, 16, 5, 2, 1), None),
    (6, "lrelu", None, None),
    (7, "pool", None, None),
    (8, "conv", ConvSpec(16, 32, 3, 1, 1), None),
    (9, "lrelu", None, None),
    (10, "pool", None, None),
    (11, "conv", ConvSpec(32, 64, 3, 1, 1), None),
    (12, "lrelu", None, None),
    (13, "deconv", ConvSpec(96, 64, 2, 0, 2), 10),
    (14, "deconv", ConvSpec(64, 64, 3, 1, 1), None),
    (15, "lrelu", None, None),
    (16, "deconv", ConvSpec(80, 32, 2, 0, 2), 7),
    (17, "deconv", ConvSpec(32, 32, 5, 2, 1), None),
    (18, "lrelu", None, None),
    (19, "deconv", ConvSpec(40, 16, 2, 0, 2), 4),
    (20, "deconv", ConvSpec(16, 16, 7, 3, 1), None),
    (21, "lrelu", None, None),
    (22, "deconv", ConvSpec(16, 3, 3, 1, 1), None),
)

LAYER_NAMES = tuple(f"{kind}{row}" for row, kind, spec, _ in ARCHITECTURE if spec is not None)


def output_sizes(q: int) -> dict:
    """Expected ``(d, d, d, c)`` output size per row id for grid size ``q``."""
    sizes = {1: (q, q, q, 2)}
    prev = sizes[1]
    for row, kind, spec, skip in ARCHITECTURE:
        d, c = prev[0], prev[3]
        if skip is not None:
            c += sizes[skip][3]
        if kind == "conv":
            d, c = spec.conv_out(d), spec.out_ch
        elif kind == "deconv":
            if c != spec.in_ch:
                raise ShapeError(f"row {row}: {c} input channels, spec wants {spec.in_ch}")
            d, c = spec.deconv_out(d), spec.out_ch
        elif kind == "pool":
            if d % 2:
                raise ShapeError(f"row {row}: cannot pool odd size {d}")
            d //= 2
        prev = sizes[row] = (d, d, d, c)
    return sizes


class DispVoxNet:
    """Parameter container plus forward/backward for one U-Net instance.

    ``params`` maps ``"<kind><row>.w"`` / ``"<kind><row>.b"`` to arrays in
    network order; that order is also the Adam update and checkpoint order.
    """

    def __init__(self, q=64, seed=0, dtype=np.float32, zero_final=False):
        if q < 8 or q % 8:
            raise ValueError(f"grid size must be a positive multiple of 8, got {q}")
        self.q = q
        self.dtype = np.dtype(dtype)
        output_sizes(q)  # validates the layer chain
        rng = np.random.default_rng(seed)
        self.params = OrderedDict()
        for row, kind, spec, _ in ARCHITECTURE:
            if spec is None:
                continue
            bound = np.sqrt(1.0 / (spec.in_ch * spec.kernel ** 3))
            w = rng.uniform(-bound, bound, size=spec.weight_shape)
            b = rng.uniform(-bound, bound, size=spec.out_ch)
            if zero_final and row == 22:
                w[...] = 0.0
                b[...] = 0.0
            self.params[f"{kind}{row}.w"] = w.astype(self.dtype)
            self.params[f"{kind}{row}.b"] = b.astype(self.dtype)

    def copy(self):
        other = object.__new__(DispVoxNet)
        other.q, other.dtype = self.q, self.dtype
        other.params = OrderedDict((k, v.copy()) for k, v in self.params.items())
        return other

    def astype(self, dtype):
        other = self.copy()
        other.dtype = np.dtype(dtype)
        for k in other.params:
            other.params[k] = other.params[k].astype(dtype)
        return other

    @property
    def n_params(self):
        return sum(p.size for p in self.params.values())

    def _check_input(self, x):
        want = (self.q, self.q, self.q, 2)
        if x.shape != want:
            raise ShapeError(f"network input must be {want}, got {x.shape}")

    def forward(self, x, keep_cache=False, shapes=None):
        """Run the network; returns ``(output, cache)`` (cache is None unless asked).

        If ``shapes`` is a dict it receives the output shape of every row.
        """
        self._check_input(x)
        x = np.asarray(x, dtype=self.dtype)
        skips = {}
        cache = []
        prev = x
        if shapes is not None:
            shapes[1] = x.shape
        for row, kind, spec, skip in ARCHITECTURE:
            inp = prev if skip is None else F.concat_channels(prev, skips.pop(skip))
            aux = None
            if kind == "conv":
                out = F.conv3d_forward(inp, self.params[f"conv{row}.w"], self.params[f"conv{row}.b"], spec)
            elif kind == "deconv":
                out = F.deconv3d_forward(inp, self.params[f"deconv{row}.w"], self.params[f"deconv{row}.b"], spec)
            elif kind == "lrelu":
                out = F.leaky_relu_forward(inp, SLOPE)
            else:
                out, aux = F.maxpool3d_forward(inp)
                skips[row] = out
            if keep_cache:
                cache.append((inp, aux))
            if shapes is not None:
                shapes[row] = out.shape
            prev = out
        return prev, (cache if keep_cache else None)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Backpropagate ``grad_out`` (dL/doutput); returns parameter gradients."""
        grads = {}
        skip_grads = {}
        g = grad_out
        for i in range(len(ARCHITECTURE) - 1, -1, -1):
            row, kind, spec, skip = ARCHITECTURE[i]
            inp, aux = cache[i]
            if row in skip_grads:
                g = g + skip_grads.pop(row)
            if kind == "conv":
                g, gw, gb = F.conv3d_backward(inp, self.params[f"conv{row}.w"], spec, g)
                grads[f"conv{row}.w"], grads[f"conv{row}.b"] = gw, gb
            elif kind == "deconv":
                g, gw, gb = F.deconv3d_backward(inp, self.params[f"deconv{row}.w"], spec, g)
                grads[f"deconv{row}.w"], grads[f"deconv{row}.b"] = gw, gb
            elif kind == "lrelu":
                g = F.leaky_relu_backward(inp, g, SLOPE)
            else:
                g = F.maxpool3d_backward(g, aux)
            if skip is not None:
                ch = inp.shape[3] - cache_channels(cache, skip)
                g, gs = F.concat_backward(g, ch)
                skip_grads[skip] = gs
        return OrderedDict((k, grads[k]) for k in self.params)


def cache_channels(cache, row):
    # channel count of the output of ``row``: the input of the next layer
    idx = [r for r, *_ in ARCHITECTURE].index(row)
    return cache[idx + 1][0].shape[3]
