"""Dense 3D layers with hand-written backward passes.

Tensors are plain ``ndarray`` objects of shape ``(d1, d2, d3, channels)``
(channels last, C order). Convolution weights are stored as
``(k, k, k, in_ch, out_ch)`` for both regular and transposed convolutions.
All kernels keep the dtype of their inputs, so the same code runs in float32
for training and float64 for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# upper bound on the im2col buffer built per chunk, in elements
_CHUNK_ELEMS = 1 << 23


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    in_ch: int
    out_ch: int
    kernel: int
    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        if min(self.in_ch, self.out_ch, self.kernel, self.stride) < 1 or self.padding < 0:
            raise ValueError(f"invalid conv spec {self}")

    @property
    def weight_shape(self):
        k = self.kernel
        return (k, k, k, self.in_ch, self.out_ch)

    def conv_out(self, n: int) -> int:
        span = n + 2 * self.padding - self.kernel
        if span < 0 or span % self.stride:
            raise ShapeError(
                f"conv: input size {n} with kernel {self.kernel}, padding {self.padding}, "
                f"stride {self.stride} does not give an integral output size")
        return span // self.stride + 1

    def deconv_out(self, n: int) -> int:
        out = (n - 1) * self.stride + self.kernel - 2 * self.padding
        if out < 1:
            raise ShapeError(f"deconv: input size {n} gives empty output for {self}")
        return out


def _check_input(x, spec: ConvSpec, op: str):
    if x.ndim != 4 or x.shape[3] != spec.in_ch:
        raise ShapeError(f"{op}: expected (d1, d2, d3, {spec.in_ch}), got {x.shape}")


def _check_weights(w, b, spec: ConvSpec, op: str):
    if w.shape != spec.weight_shape:
        raise ShapeError(f"{op}: expected weights {spec.weight_shape}, got {w.shape}")
    if b is not None and b.shape != (spec.out_ch,):
        raise ShapeError(f"{op}: expected bias ({spec.out_ch},), got {b.shape}")


def _pad(x, lo, hi=None):
    hi = lo if hi is None else hi
    if lo == 0 and hi == 0:
        return x
    return np.pad(x, ((lo, hi), (lo, hi), (lo, hi), (0, 0)))


def _dilate(x, s):
    if s == 1:
        return x
    d1, d2, d3, c = x.shape
    out = np.zeros(((d1 - 1) * s + 1, (d2 - 1) * s + 1, (d3 - 1) * s + 1, c), dtype=x.dtype)
    out[::s, ::s, ::s] = x
    return out


def _windows(xp, k, s):
    # (o1, o2, o3, cin, k, k, k)
    return sliding_window_view(xp, (k, k, k), axis=(0, 1, 2))[::s, ::s, ::s]


def _row_chunks(win):
    o1, o2, o3, cin = win.shape[:4]
    per_row = o2 * o3 * cin * win.shape[4] ** 3
    step = max(1, _CHUNK_ELEMS // max(per_row, 1))
    for r in range(0, o1, step):
        yield r, min(o1, r + step)


def _correlate(xp, w, s=1):
    """Valid cross-correlation of a padded tensor with ``w`` at stride ``s``."""
    k, cin, cout = w.shape[0], w.shape[3], w.shape[4]
    win = _windows(xp, k, s)
    o1, o2, o3 = win.shape[:3]
    wmat = np.ascontiguousarray(w.transpose(3, 0, 1, 2, 4)).reshape(cin * k ** 3, cout)
    out = np.empty((o1, o2, o3, cout), dtype=np.result_type(xp, w))
    for r0, r1 in _row_chunks(win):
        cols = win[r0:r1].reshape(-1, cin * k ** 3)
        out[r0:r1] = (cols @ wmat).reshape(r1 - r0, o2, o3, cout)
    return out


def _correlate_wgrad(xp, g, k, s=1):
    """Gradient of ``_correlate(xp, w, s)`` with respect to ``w``."""
    cin, cout = xp.shape[3], g.shape[3]
    win = _windows(xp, k, s)
    acc = np.zeros((cin * k ** 3, cout), dtype=np.result_type(xp, g))
    for r0, r1 in _row_chunks(win):
        cols = win[r0:r1].reshape(-1, cin * k ** 3)
        acc += cols.T @ g[r0:r1].reshape(-1, cout)
    return acc.reshape(cin, k, k, k, cout).transpose(1, 2, 3, 0, 4)


def _flip(w):
    return w[::-1, ::-1, ::-1]


def _is_block(spec: ConvSpec):
    return spec.kernel == spec.stride and spec.padding == 0


def conv3d_forward(x, w, b, spec: ConvSpec):
    _check_input(x, spec, "conv3d")
    _check_weights(w, b, spec, "conv3d")
    for n in x.shape[:3]:
        spec.conv_out(n)
    y = _correlate(_pad(x, spec.padding), w, spec.stride)
    if b is not None:
        y += b
    return y


def conv3d_backward(x, w, spec: ConvSpec, grad_out):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv3d_forward`."""
    expected = tuple(spec.conv_out(n) for n in x.shape[:3]) + (spec.out_ch,)
    if grad_out.shape != expected:
        raise ShapeError(f"conv3d backward: expected grad {expected}, got {grad_out.shape}")
    k, p, s = spec.kernel, spec.padding, spec.stride
    grad_b = grad_out.sum(axis=(0, 1, 2))
    grad_w = _correlate_wgrad(_pad(x, p), grad_out, k, s)
    gp = _pad(_dilate(grad_out, s), k - 1)
    grad_xp = _correlate(gp, _flip(w).swapaxes(3, 4))
    grad_x = grad_xp[p:p + x.shape[0], p:p + x.shape[1], p:p + x.shape[2]]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def deconv3d_forward(x, w, b, spec: ConvSpec):
    """Transposed convolution: ``out[s*i + a - p] += x[i] @ w[a]``."""
    _check_input(x, spec, "deconv3d")
    _check_weights(w, b, spec, "deconv3d")
    for n in x.shape[:3]:
        spec.deconv_out(n)
    k, p, s = spec.kernel, spec.padding, spec.stride
    if _is_block(spec):
        d1, d2, d3, _ = x.shape
        y = np.tensordot(x, w, axes=([3], [3]))  # (d1, d2, d3, k, k, k, cout)
        y = y.transpose(0, 3, 1, 4, 2, 5, 6).reshape(d1 * k, d2 * k, d3 * k, spec.out_ch)
    else:
        if p > k - 1:
            raise ShapeError(f"deconv3d: padding {p} exceeds kernel - 1 for {spec}")
        y = _correlate(_pad(_dilate(x, s), k - 1 - p), _flip(w))
    if b is not None:
        y += b
    return y


def deconv3d_backward(x, w, spec: ConvSpec, grad_out):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`deconv3d_forward`."""
    expected = tuple(spec.deconv_out(n) for n in x.shape[:3]) + (spec.out_ch,)
    if grad_out.shape != expected:
        raise ShapeError(f"deconv3d backward: expected grad {expected}, got {grad_out.shape}")
    k, p, s = spec.kernel, spec.padding, spec.stride
    grad_b = grad_out.sum(axis=(0, 1, 2))
    if _is_block(spec):
        d1, d2, d3, _ = x.shape
        gb = grad_out.reshape(d1, k, d2, k, d3, k, spec.out_ch)
        grad_x = np.tensordot(gb, w, axes=([1, 3, 5, 6], [0, 1, 2, 4]))
        grad_w = np.tensordot(x, gb, axes=([0, 1, 2], [0, 2, 4]))  # (cin, k, k, k, cout)
        return grad_x, grad_w.transpose(1, 2, 3, 0, 4), grad_b
    # the adjoint of a transposed convolution is a strided convolution
    grad_x = _correlate(_pad(grad_out, p), w.swapaxes(3, 4), s)
    grad_w = _flip(_correlate_wgrad(_pad(_dilate(x, s), k - 1 - p), grad_out, k))
    return grad_x, np.ascontiguousarray(grad_w), grad_b


def maxpool3d_forward(x, k=2, stride=2):
    """Non-overlapping max pooling.

    Returns the pooled tensor and the argmax position (0..k^3-1, scan order
    over the window axes) for the backward pass. Ties go to the first
    position in scan order.
    """
    if k != stride:
        raise ValueError("only non-overlapping pooling (k == stride) is supported")
    d1, d2, d3, c = x.shape
    if d1 % k or d2 % k or d3 % k:
        raise ShapeError(f"maxpool3d: spatial dims {x.shape[:3]} not divisible by {k}")
    v = x.reshape(d1 // k, k, d2 // k, k, d3 // k, k, c).transpose(0, 2, 4, 6, 1, 3, 5)
    v = v.reshape(d1 // k, d2 // k, d3 // k, c, k ** 3)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool3d_backward(grad_out, idx, k=2):
    o1, o2, o3, c = grad_out.shape
    g = np.zeros((o1, o2, o3, c, k ** 3), dtype=grad_out.dtype)
    np.put_along_axis(g, idx[..., None], grad_out[..., None], axis=-1)
    g = g.reshape(o1, o2, o3, c, k, k, k).transpose(0, 4, 1, 5, 2, 6, 3)
    return g.reshape(o1 * k, o2 * k, o3 * k, c)


def leaky_relu_forward(x, slope=0.01):
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(x, grad_out, slope=0.01):
    # x == 0 takes the negative-slope branch
    return np.where(x > 0, grad_out, grad_out * grad_out.dtype.type(slope))


def concat_channels(a, b):
    if a.shape[:3] != b.shape[:3]:
        raise ShapeError(f"concat: spatial mismatch {a.shape[:3]} vs {b.shape[:3]}")
    if a.shape[3] == 0 or b.shape[3] == 0:
        raise ShapeError("concat: zero-channel operand")
    return np.concatenate([a, b], axis=3)


def concat_backward(grad_out, ch_a):
    return grad_out[..., :ch_a], grad_out[..., ch_a:]
