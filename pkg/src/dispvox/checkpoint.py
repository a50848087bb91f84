"""Binary checkpoints for networks (``VXNW``) and pipelines (``VXPP``).

VXNW layout (little endian)::

    b"VXNW" u16 version u32 q
    u32 header_len, header (utf-8 ``key=value`` lines, the training config)
    u32 n_tensors, then per tensor:
        u16 name_len, name, u8 ndim, ndim x u32 dims, float32 payload
    u8 has_adam; if 1: f64 lr, beta1, beta2, eps, u64 step,
        then first and second moments per tensor (float32, tensor order)

VXPP is ``b"VXPP" u16 version u32 q f64 margin u8 n_blocks`` followed by
``n_blocks`` length-prefixed (u64) VXNW blocks: DE first, refinement second.
"""
from __future__ import annotations

import io
import struct
from collections import OrderedDict

import numpy as np

from .nn.network import DispVoxNet
from .nn.optim import AdamState

NET_MAGIC = b"VXNW"
PIPE_MAGIC = b"VXPP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _read_array(buf, shape):
    n = int(np.prod(shape))
    raw = buf.read(4 * n)
    if len(raw) != 4 * n:
        raise CheckpointError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def network_bytes(model: DispVoxNet, header="", adam: AdamState = None) -> bytes:
    out = io.BytesIO()
    head = header.encode()
    out.write(NET_MAGIC + struct.pack("<HI", VERSION, model.q))
    out.write(struct.pack("<I", len(head)) + head)
    out.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        nb = name.encode()
        out.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", p.ndim))
        out.write(struct.pack(f"<{p.ndim}I", *p.shape))
        out.write(p.astype("<f4").tobytes())
    if adam is None:
        out.write(b"\x00")
    else:
        out.write(b"\x01" + struct.pack("<ddddQ", adam.lr, adam.beta1, adam.beta2, adam.eps, adam.t))
        for name, p in model.params.items():
            for moments in (adam.m, adam.v):
                arr = moments.get(name)
                arr = np.zeros_like(p) if arr is None else arr
                out.write(arr.astype("<f4").tobytes())
    return out.getvalue()


def network_from_bytes(data: bytes):
    """Return ``(model, header_text, adam_state_or_None)``."""
    buf = io.BytesIO(data)
    if buf.read(4) != NET_MAGIC:
        raise CheckpointError("not a VXNW network checkpoint")
    version, q = _read(buf, "<HI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = _read(buf, "<I")
    header = buf.read(hlen).decode()
    (n,) = _read(buf, "<I")
    params = OrderedDict()
    for _ in range(n):
        (nlen,) = _read(buf, "<H")
        name = buf.read(nlen).decode()
        (ndim,) = _read(buf, "<B")
        shape = _read(buf, f"<{ndim}I")
        params[name] = _read_array(buf, shape)
    model = DispVoxNet(q, seed=0)
    if list(params) != list(model.params):
        raise CheckpointError("checkpoint layers do not match the network architecture")
    for name, p in params.items():
        if p.shape != model.params[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {p.shape}")
    model.params = params
    adam = None
    flag = buf.read(1)
    if flag == b"\x01":
        lr, b1, b2, eps, t = _read(buf, "<ddddQ")
        adam = AdamState(lr, b1, b2, eps, t)
        for name, p in params.items():
            adam.m[name] = _read_array(buf, p.shape)
            adam.v[name] = _read_array(buf, p.shape)
    return model, header, adam


def save_network(path, model, header="", adam=None):
    with open(path, "wb") as fh:
        fh.write(network_bytes(model, header, adam))


def load_network(path):
    with open(path, "rb") as fh:
        return network_from_bytes(fh.read())


def save_pipeline(path, state, header=""):
    blocks = [network_bytes(state.de_model, header)]
    if state.refine_model is not None:
        blocks.append(network_bytes(state.refine_model, header))
    with open(path, "wb") as fh:
        fh.write(PIPE_MAGIC + struct.pack("<HIdB", VERSION, state.q, state.margin, len(blocks)))
        for b in blocks:
            fh.write(struct.pack("<Q", len(b)) + b)


def load_pipeline(path):
    from .pipeline import PipelineState

    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != PIPE_MAGIC:
        raise CheckpointError(f"{path}: not a VXPP pipeline checkpoint")
    version, q, margin, n_blocks = _read(buf, "<HIdB")
    if version != VERSION or n_blocks not in (1, 2):
        raise CheckpointError(f"{path}: unsupported pipeline checkpoint")
    models = []
    for _ in range(n_blocks):
        (size,) = _read(buf, "<Q")
        model, _, _ = network_from_bytes(buf.read(size))
        if model.q != q:
            raise CheckpointError(f"{path}: block grid size {model.q} != header {q}")
        models.append(model)
    return PipelineState(models[0], models[1] if n_blocks == 2 else None, margin)
