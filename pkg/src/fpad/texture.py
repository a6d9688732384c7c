"""Multi-scale uniform LBP and color (opponent channel) LBP features.

Neighbors of a center pixel sit on a circle of radius R at angles 2*pi*p/P,
``p = 0`` on the +x axis, counterclockwise with image rows growing downward:
``(dx, dy) = (R cos t, -R sin t)``. Fractional positions are sampled
bilinearly; offsets within 1e-9 of an integer are snapped so grid-aligned
neighbors are read exactly. Only interior pixels (at least ``ceil(R)`` from
every border) contribute codes.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numba
import numpy as np

from .errors import (
    DescriptorMismatchError,
    DimensionMismatchError,
    InvalidDataError,
    InvalidSpaceError,
    OutOfBoundsError,
)
from .imaging import GRAY, HSV, RasterImage

GRAY_LBP_54 = "GRAY_LBP_54"
CLBP_486 = "CLBP_486"
FUSED_972 = "FUSED_972"
DESCRIPTOR_DIMS = {GRAY_LBP_54: 54, CLBP_486: 486, FUSED_972: 972}

STREAMS = ("COTS", "FTIR", "DIRECT", "FUSED")

# Interpolated neighbors that equal the center in exact arithmetic can land a
# few ulps below it; s(x) = 1 for x >= -TIE_EPS absorbs that round-off.
TIE_EPS = 1e-9


@dataclass(frozen=True)
class LbpScale:
    P: int
    R: float

    def __post_init__(self):
        if int(self.P) != self.P or self.P < 4:
            raise InvalidDataError(f"P must be an integer >= 4, got {self.P}")
        if not self.R >= 1:
            raise InvalidDataError(f"R must be >= 1, got {self.R}")

    @property
    def margin(self) -> int:
        return int(math.ceil(self.R))

    @property
    def bins(self) -> int:
        return self.P + 2

    def offsets(self) -> np.ndarray:
        """``(P, 2)`` array of (dx, dy) neighbor offsets."""
        t = 2.0 * np.pi * np.arange(self.P) / self.P
        off = np.column_stack([self.R * np.cos(t), -self.R * np.sin(t)])
        nearest = np.round(off)
        return np.where(np.abs(off - nearest) <= 1e-9, nearest, off)


DEFAULT_SCALES = (LbpScale(8, 1), LbpScale(16, 2), LbpScale(24, 3))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    descriptor: str
    source_stream: str
    sample_id: Optional[str] = field(default=None)

    def __post_init__(self):
        if self.descriptor not in DESCRIPTOR_DIMS:
            raise InvalidDataError(f"unknown descriptor {self.descriptor!r}")
        if self.source_stream not in STREAMS:
            raise InvalidDataError(f"unknown stream {self.source_stream!r}")
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (DESCRIPTOR_DIMS[self.descriptor],):
            raise DimensionMismatchError(
                f"{self.descriptor} needs {DESCRIPTOR_DIMS[self.descriptor]} values, "
                f"got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidDataError("feature values must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (self.descriptor == other.descriptor
                and self.source_stream == other.source_stream
                and self.sample_id == other.sample_id
                and np.array_equal(self.values, other.values))


# --------------------------------------------------------------------------
# scalar reference path


def _plane(channel) -> np.ndarray:
    if isinstance(channel, RasterImage):
        if channel.channels != 1:
            raise InvalidSpaceError("expected a single-channel image")
        channel = channel.data[:, :, 0]
    arr = np.asarray(channel)
    if arr.ndim != 2:
        raise InvalidDataError(f"expected a 2-D channel, got shape {arr.shape}")
    return arr


def sample_neighbors(channel, x: int, y: int, scale: LbpScale) -> np.ndarray:
    """The P circular neighbor samples of pixel ``(x, y)``."""
    plane = _plane(channel).astype(np.float64)
    h, w = plane.shape
    m = scale.margin
    if not (m <= x <= w - 1 - m and m <= y <= h - 1 - m):
        raise OutOfBoundsError(
            f"pixel ({x}, {y}) is closer than {m} pixels to the border of a {w}x{h} image")
    out = np.empty(scale.P)
    for p, (dx, dy) in enumerate(scale.offsets()):
        x0, y0 = math.floor(dx), math.floor(dy)
        fx, fy = dx - x0, dy - y0
        cx, cy = x + x0, y + y0
        a = plane[cy, cx]
        top = a + fx * (plane[cy, cx + 1] - a) if fx > 0 else a
        if fy > 0:
            c = plane[cy + 1, cx]
            bottom = c + fx * (plane[cy + 1, cx + 1] - c) if fx > 0 else c
            out[p] = top + fy * (bottom - top)
        else:
            out[p] = top
    return out


def lbp_code(g_c: float, neighbors: Sequence[float]) -> int:
    """Rotation-invariant uniform code in ``[0, P + 1]``."""
    bits = [1 if (g - g_c) >= -TIE_EPS else 0 for g in neighbors]
    P = len(bits)
    transitions = sum(bits[p] != bits[p - 1] for p in range(P))
    return sum(bits) if transitions <= 2 else P + 1


# --------------------------------------------------------------------------
# vectorized path


@numba.njit(cache=True)
def _interpolate_row(plane, cy, cx0, fx, fy, out):
    n = out.shape[0]
    if fx > 0 and fy > 0:
        for xx in range(n):
            a = plane[cy, cx0 + xx]
            c = plane[cy + 1, cx0 + xx]
            top = a + fx * (plane[cy, cx0 + xx + 1] - a)
            bottom = c + fx * (plane[cy + 1, cx0 + xx + 1] - c)
            out[xx] = top + fy * (bottom - top)
    elif fx > 0:
        for xx in range(n):
            a = plane[cy, cx0 + xx]
            out[xx] = a + fx * (plane[cy, cx0 + xx + 1] - a)
    elif fy > 0:
        for xx in range(n):
            a = plane[cy, cx0 + xx]
            out[xx] = a + fy * (plane[cy + 1, cx0 + xx] - a)
    else:
        for xx in range(n):
            out[xx] = plane[cy, cx0 + xx]


@numba.njit(cache=True)
def _code_histograms(centers, neighbor, offsets, margin, eps):
    """Code histograms for every center plane against one neighbor plane.

    Neighbor rows are interpolated once and streamed against all K centers.
    Returns a ``(K, P + 2)`` count matrix.
    """
    K = centers.shape[0]
    h, w = neighbor.shape
    ih = h - 2 * margin
    iw = w - 2 * margin
    P = offsets.shape[0]
    x0 = np.empty(P, dtype=np.int64)
    y0 = np.empty(P, dtype=np.int64)
    fx = np.empty(P)
    fy = np.empty(P)
    for p in range(P):
        x0[p] = int(math.floor(offsets[p, 0]))
        y0[p] = int(math.floor(offsets[p, 1]))
        fx[p] = offsets[p, 0] - x0[p]
        fy[p] = offsets[p, 1] - y0[p]

    counts = np.zeros((K, P + 2), dtype=np.int64)
    row = np.empty(iw)
    ones = np.empty((K, iw), dtype=np.int32)
    trans = np.empty((K, iw), dtype=np.int32)
    first = np.empty((K, iw), dtype=np.int32)
    prev = np.empty((K, iw), dtype=np.int32)
    for yy in range(ih):
        cy = yy + margin
        for p in range(P):
            _interpolate_row(neighbor, cy + y0[p], margin + x0[p], fx[p], fy[p], row)
            for k in range(K):
                for xx in range(iw):
                    bit = 1 if row[xx] - centers[k, cy, margin + xx] >= -eps else 0
                    if p == 0:
                        first[k, xx] = bit
                        ones[k, xx] = bit
                        trans[k, xx] = 0
                    else:
                        ones[k, xx] += bit
                        trans[k, xx] += bit ^ prev[k, xx]
                    prev[k, xx] = bit
        for k in range(K):
            for xx in range(iw):
                t = trans[k, xx] + (prev[k, xx] ^ first[k, xx])
                if t <= 2:
                    counts[k, ones[k, xx]] += 1
                else:
                    counts[k, P + 1] += 1
    return counts


def _check_size(shape, scale: LbpScale):
    m = scale.margin
    if shape[0] < 2 * m + 1 or shape[1] < 2 * m + 1:
        raise InvalidDataError(
            f"a {shape[1]}x{shape[0]} image has no interior pixels at radius {scale.R}")


def _histograms(centers: np.ndarray, neighbor: np.ndarray, scale: LbpScale) -> np.ndarray:
    counts = _code_histograms(centers, neighbor, scale.offsets(), scale.margin, TIE_EPS)
    return counts / counts.sum(axis=1, keepdims=True)


def uniform_lbp_histogram(center_ch, neighbor_ch, scale: LbpScale) -> np.ndarray:
    """L1-normalized ``P + 2`` bin histogram of uniform codes.

    Centers are read from ``center_ch`` and circular neighbors from
    ``neighbor_ch``; passing the same channel twice gives plain LBP.
    """
    center = _plane(center_ch).astype(np.float64)
    neigh = _plane(neighbor_ch).astype(np.float64)
    if center.shape != neigh.shape:
        raise DimensionMismatchError(
            f"center channel {center.shape} and neighbor channel {neigh.shape} differ")
    _check_size(center.shape, scale)
    return _histograms(center[None], neigh, scale)[0]


def multiscale_histogram(center_ch, neighbor_ch, scales=DEFAULT_SCALES) -> np.ndarray:
    return np.concatenate([uniform_lbp_histogram(center_ch, neighbor_ch, s) for s in scales])


def grayscale_lbp_feature(img: RasterImage, stream: str = "COTS",
                          sample_id: Optional[str] = None) -> FeatureVector:
    """54-dim H(8,1) || H(16,2) || H(24,3) of a grayscale image."""
    if img.space != GRAY:
        raise InvalidSpaceError(f"grayscale_lbp_feature expects GRAY, got {img.space}")
    plane = img.data[:, :, 0]
    return FeatureVector(multiscale_histogram(plane, plane), GRAY_LBP_54, stream, sample_id)


def clbp_feature(img: RasterImage, stream: str = "FTIR",
                 sample_id: Optional[str] = None) -> FeatureVector:
    """486-dim color LBP over all 9 ordered (center, neighbor) channel pairs.

    Loop order is center channel outer, neighbor channel inner, scales
    innermost, diagonal pairs included.
    """
    if img.space != HSV:
        raise InvalidSpaceError(f"clbp_feature expects HSV, got {img.space}")
    channels = np.ascontiguousarray(np.moveaxis(img.data, 2, 0), dtype=np.float64)
    for scale in DEFAULT_SCALES:
        _check_size(channels.shape[1:], scale)
    # hists[j, s] holds the rows for every center channel i
    hists = {(j, s): _histograms(channels, channels[j], s)
             for j in range(3) for s in DEFAULT_SCALES}
    blocks = [hists[j, s][i] for i in range(3) for j in range(3) for s in DEFAULT_SCALES]
    return FeatureVector(np.concatenate(blocks), CLBP_486, stream, sample_id)


def fuse_features(ftir: FeatureVector, direct: FeatureVector,
                  sample_id: Optional[str] = None) -> FeatureVector:
    """972-dim concatenation, FTIR block first."""
    for fv, stream in ((ftir, "FTIR"), (direct, "DIRECT")):
        if fv.descriptor != CLBP_486:
            raise DescriptorMismatchError(f"fusion needs CLBP_486 inputs, got {fv.descriptor}")
        if fv.source_stream != stream:
            raise DescriptorMismatchError(
                f"expected a {stream} feature in this position, got {fv.source_stream}")
    sid = sample_id if sample_id is not None else ftir.sample_id
    return FeatureVector(np.concatenate([ftir.values, direct.values]), FUSED_972, "FUSED", sid)


# --------------------------------------------------------------------------
# persistence

_TEXT_DECIMALS = 12
_BIN_MAGIC = b"FPADFEAT"
_BIN_VERSION = 1
_DESC_CODES = {GRAY_LBP_54: 1, CLBP_486: 2, FUSED_972: 3}
_STREAM_CODES = {s: i for i, s in enumerate(STREAMS)}


def format_feature_line(fv: FeatureVector) -> str:
    sid = fv.sample_id or ""
    if "," in sid or "\n" in sid:
        raise InvalidDataError(f"sample id {sid!r} cannot contain commas or newlines")
    values = ",".join(f"{v:.{_TEXT_DECIMALS}f}" for v in fv.values)
    return f"{fv.descriptor},{fv.source_stream},{sid},{values}"


def parse_feature_line(line: str) -> FeatureVector:
    descriptor, stream, sid, *values = line.rstrip("\n").split(",")
    return FeatureVector(np.array(values, dtype=np.float64), descriptor, stream, sid or None)


def write_features_text(path, features: Iterable[FeatureVector]) -> None:
    with open(path, "w", newline="\n") as fh:
        for fv in features:
            fh.write(format_feature_line(fv) + "\n")


def read_features_text(path) -> List[FeatureVector]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse_feature_line(line))
            except (ValueError, TypeError) as exc:
                raise InvalidDataError(f"{path}:{lineno}: {exc}") from None
    return out


def write_features_binary(path, features: Sequence[FeatureVector]) -> None:
    """Versioned little-endian container for bulk feature sets.

    Header: magic, u16 version, u16 descriptor code, u32 dim, u64 count. Each
    record: u16 stream code, u16 id length, utf-8 id, ``dim`` float64 values.
    """
    features = list(features)
    descriptors = {fv.descriptor for fv in features}
    if len(descriptors) > 1:
        raise DescriptorMismatchError(f"mixed descriptors in one container: {sorted(descriptors)}")
    descriptor = descriptors.pop() if descriptors else GRAY_LBP_54
    dim = DESCRIPTOR_DIMS[descriptor]
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<HHIQ", _BIN_VERSION, _DESC_CODES[descriptor], dim, len(features)))
        for fv in features:
            sid = (fv.sample_id or "").encode("utf-8")
            fh.write(struct.pack("<HH", _STREAM_CODES[fv.source_stream], len(sid)))
            fh.write(sid)
            fh.write(fv.values.astype("<f8").tobytes())


def read_features_binary(path) -> List[FeatureVector]:
    data = Path(path).read_bytes()
    if data[:8] != _BIN_MAGIC:
        raise InvalidDataError(f"{path}: not a feature container")
    version, dcode, dim, count = struct.unpack_from("<HHIQ", data, 8)
    if version != _BIN_VERSION:
        raise InvalidDataError(f"{path}: unsupported container version {version}")
    descriptor = {v: k for k, v in _DESC_CODES.items()}[dcode]
    streams = {v: k for k, v in _STREAM_CODES.items()}
    pos = 8 + struct.calcsize("<HHIQ")
    out = []
    for _ in range(count):
        scode, n = struct.unpack_from("<HH", data, pos)
        pos += 4
        sid = data[pos:pos + n].decode("utf-8") or None
        pos += n
        values = np.frombuffer(data, dtype="<f8", count=dim, offset=pos)
        pos += 8 * dim
        out.append(FeatureVector(values, descriptor, streams[scode], sid))
    return out


def write_features(path, features) -> None:
    if Path(path).suffix.lower() in (".fvb", ".bin"):
        write_features_binary(path, features)
    else:
        write_features_text(path, features)


def read_features(path) -> List[FeatureVector]:
    if Path(path).suffix.lower() in (".fvb", ".bin"):
        return read_features_binary(path)
    return read_features_text(path)
