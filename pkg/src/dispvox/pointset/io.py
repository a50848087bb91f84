"""Point-set and correspondence files.

ASCII: one point per line, ``x y z [label]``, ``#`` starts a comment,
label 0 = real (default), 1 = noise.

Binary (little endian): ``b"VXPT"``, u16 version, u64 count, ``count x 3``
float64 coordinates, then a u8 flag; if the flag is 1, ``count`` u8 labels follow.

Correspondences: ASCII, one ``template_index reference_index`` pair per line.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .core import CorrespondencePair, PointSet

MAGIC = b"VXPT"
VERSION = 1
FORMATS = ("ascii", "binary")


class ParseError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = str(path), line


def _sniff(path):
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "ascii"


def read_points(path, format=None) -> PointSet:
    fmt = format or _sniff(path)
    if fmt == "ascii":
        return _read_ascii(path)
    if fmt == "binary":
        return _read_binary(path)
    raise ValueError(f"unknown point format {fmt!r}; expected one of {FORMATS}")


def write_points(ps: PointSet, path, format="ascii"):
    if format == "ascii":
        with open(path, "w") as fh:
            with_labels = ps.has_noise
            for p, lab in zip(ps.points, ps.labels):
                line = f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}"
                fh.write(f"{line} {lab}\n" if with_labels else line + "\n")
    elif format == "binary":
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<HQ", VERSION, len(ps)))
            fh.write(ps.points.astype("<f8").tobytes())
            if ps.has_noise:
                fh.write(b"\x01" + ps.labels.astype(np.uint8).tobytes())
            else:
                fh.write(b"\x00")
    else:
        raise ValueError(f"unknown point format {format!r}; expected one of {FORMATS}")


def _read_ascii(path):
    points, labels = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) not in (3, 4):
                raise ParseError(path, lineno, f"expected 3 or 4 fields, got {len(fields)}")
            try:
                xyz = [float(v) for v in fields[:3]]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in xyz):
                raise ParseError(path, lineno, "non-finite coordinate")
            label = 0
            if len(fields) == 4:
                if fields[3] not in ("0", "1"):
                    raise ParseError(path, lineno, f"label must be 0 or 1, got {fields[3]!r}")
                label = int(fields[3])
            points.append(xyz)
            labels.append(label)
    if not points:
        raise ParseError(path, 0, "no points")
    return PointSet(np.array(points), np.array(labels, np.uint8))


def _read_binary(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ParseError(path, 0, "bad magic")
    version, count = struct.unpack_from("<HQ", data, 4)
    if version != VERSION:
        raise ParseError(path, 0, f"unsupported version {version}")
    start = 4 + struct.calcsize("<HQ")
    end = start + 24 * count
    if len(data) < end:
        raise ParseError(path, 0, "truncated coordinate block")
    pts = np.frombuffer(data[start:end], dtype="<f8").reshape(count, 3).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(pts).all(axis=1))
    if bad.size:
        raise ParseError(path, 0, f"non-finite coordinate at point {bad[0]}")
    labels = None
    if len(data) > end and data[end] == 1:
        if len(data) < end + 1 + count:
            raise ParseError(path, 0, "truncated label block")
        labels = np.frombuffer(data[end + 1:end + 1 + count], dtype=np.uint8)
    return PointSet(pts, labels)


def read_correspondences(path):
    pairs = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ParseError(path, lineno, f"expected 2 indices, got {len(fields)}")
            try:
                pairs.append((int(fields[0]), int(fields[1])))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def write_correspondences(gt_map, path):
    with open(path, "w") as fh:
        for i, j in np.asarray(gt_map).reshape(-1, 2):
            fh.write(f"{i} {j}\n")


def load_pair(template_path, reference_path, correspondence_path=None):
    template = read_points(template_path)
    reference = read_points(reference_path)
    gt = None if correspondence_path is None else read_correspondences(correspondence_path)
    return CorrespondencePair(template, reference, gt)


def load_sequence(directory):
    """Load every point file in ``directory`` (sorted by name) as one sequence.

    All states must share one point ordering; the ground truth between any two
    states is then the identity on their real points.
    """
    files = sorted(p for p in Path(directory).iterdir()
                   if p.is_file() and p.suffix in (".txt", ".xyz", ".vxpt", ".pts"))
    if not files:
        raise FileNotFoundError(f"no point files in {directory}")
    states = [read_points(f) for f in files]
    n = {len(s) for s in states}
    if len(n) != 1:
        raise ValueError(f"sequence states differ in cardinality: {sorted(n)}")
    return states
