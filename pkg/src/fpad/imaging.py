"""Raw image enhancement, color conversion and perspective calibration.

Images are carried as :class:`RasterImage`, a thin immutable wrapper around a
``(height, width, channels)`` uint8 array tagged with its color space and
(optionally) its resolution in pixels per inch.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import (
    DegenerateConfigurationError,
    InsufficientDataError,
    InvalidDataError,
    InvalidSpaceError,
    MissingMetadataError,
    UnsupportedOperationError,
)

GRAY = "GRAY"
RGB = "RGB"
HSV = "HSV"
SPACES = (GRAY, RGB, HSV)

PROFILE_VERSION = "fpad.calibration/1"
DEFAULT_TARGET_PPI = 500.0

# luma weights, R G B
_LUMA = np.array([0.299, 0.587, 0.114])
_SNAP = 1e-9


def round_half_up(values) -> np.ndarray:
    """Round non-negative intensities half-up and saturate to uint8."""
    v = np.floor(np.asarray(values, dtype=np.float64) + 0.5 + _SNAP)
    return np.clip(v, 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class RasterImage:
    data: np.ndarray
    space: str
    ppi: Optional[float] = None

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise InvalidDataError(f"expected a 2-D or 3-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer) or arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
                raise InvalidDataError("samples must be 8-bit unsigned integers")
            arr = arr.astype(np.uint8)
        if self.space not in SPACES:
            raise InvalidSpaceError(f"unknown color space {self.space!r}")
        expected = 1 if self.space == GRAY else 3
        if arr.shape[2] != expected:
            raise InvalidSpaceError(
                f"{self.space} image needs {expected} channel(s), got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidDataError("image must be at least 1x1")
        if self.ppi is not None and not (self.ppi > 0 and math.isfinite(self.ppi)):
            raise InvalidDataError(f"ppi must be a positive finite number, got {self.ppi}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def samples(self) -> bytes:
        """Row-major, channel-interleaved sample bytes."""
        return self.data.tobytes()

    def channel(self, index: int) -> np.ndarray:
        return self.data[:, :, index]

    def with_data(self, data, space: Optional[str] = None, ppi="keep") -> "RasterImage":
        return RasterImage(data, space or self.space, self.ppi if ppi == "keep" else ppi)

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return (self.space == other.space and self.ppi == other.ppi
                and np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"RasterImage({self.width}x{self.height}, {self.space}, ppi={self.ppi})"


def gray_image(array, ppi=None) -> RasterImage:
    return RasterImage(np.asarray(array), GRAY, ppi)


def rgb_image(array, ppi=None) -> RasterImage:
    return RasterImage(np.asarray(array), RGB, ppi)


def _require(img: RasterImage, space: str, op: str):
    if img.space != space:
        raise InvalidSpaceError(f"{op} expects a {space} image, got {img.space}")


def to_grayscale(img: RasterImage) -> RasterImage:
    _require(img, RGB, "to_grayscale")
    gray = img.data.astype(np.float64) @ _LUMA
    return img.with_data(round_half_up(gray), GRAY)


def equalize_histogram(img: RasterImage) -> RasterImage:
    """Global histogram equalization.

    ``h(v) = round((cdf(v) - cdf_min) / (N - cdf_min) * 255)``; a single-valued
    image is returned unchanged since the mapping is undefined there.
    """
    _require(img, GRAY, "equalize_histogram")
    plane = img.data[:, :, 0]
    n = plane.size
    cdf = np.cumsum(np.bincount(plane.ravel(), minlength=256))
    cdf_min = cdf[cdf > 0][0]
    if n == cdf_min:
        return img
    lut = round_half_up((cdf - cdf_min) / (n - cdf_min) * 255.0)
    return img.with_data(lut[plane])


def negate(img: RasterImage) -> RasterImage:
    _require(img, GRAY, "negate")
    return img.with_data(255 - img.data)


def rgb_to_hsv(img: RasterImage) -> RasterImage:
    """Hexcone RGB to HSV with every channel scaled to 0..255.

    Hue of achromatic pixels is 0. When several channels tie for the maximum,
    red takes precedence over green over blue.
    """
    _require(img, RGB, "rgb_to_hsv")
    rgb = img.data.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    vmax = rgb.max(axis=2)
    vmin = rgb.min(axis=2)
    delta = vmax - vmin
    chroma = delta > 0
    safe = np.where(chroma, delta, 1.0)

    hue = np.zeros_like(vmax)
    is_r = chroma & (vmax == r)
    is_g = chroma & ~is_r & (vmax == g)
    is_b = chroma & ~is_r & ~is_g
    hue[is_r] = np.mod((g - b)[is_r] / safe[is_r], 6.0)
    hue[is_g] = (b - r)[is_g] / safe[is_g] + 2.0
    hue[is_b] = (r - g)[is_b] / safe[is_b] + 4.0
    hue_deg = 60.0 * hue

    sat = np.where(vmax > 0, delta / np.where(vmax > 0, vmax, 1.0), 0.0)
    hsv = np.stack([hue_deg * 255.0 / 360.0, sat * 255.0, vmax], axis=2)
    return img.with_data(round_half_up(hsv), HSV)


# --------------------------------------------------------------------------
# perspective calibration


@dataclass(frozen=True)
class PointCorrespondence:
    src: Tuple[float, float]
    dst: Tuple[float, float]

    def __post_init__(self):
        coords = (*self.src, *self.dst)
        if len(coords) != 4 or not all(math.isfinite(float(c)) for c in coords):
            raise InvalidDataError(f"correspondence coordinates must be finite: {self}")
        object.__setattr__(self, "src", (float(self.src[0]), float(self.src[1])))
        object.__setattr__(self, "dst", (float(self.dst[0]), float(self.dst[1])))


@dataclass(frozen=True)
class CalibrationProfile:
    """Eight perspective parameters ``(a, b, c, d, e, f, g, h)``.

    A source point maps through ``[[a, b, c], [d, e, f], [g, h, 1]]`` and is
    divided by the scale ``g*x + h*y + 1``.
    """

    params: Tuple[float, ...]
    native_ppi: float
    target_ppi: float = DEFAULT_TARGET_PPI
    version: str = field(default=PROFILE_VERSION)

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        if len(params) != 8 or not all(math.isfinite(p) for p in params):
            raise InvalidDataError("a calibration profile needs 8 finite parameters")
        object.__setattr__(self, "params", params)
        for name in ("native_ppi", "target_ppi"):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise InvalidDataError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        if abs(np.linalg.det(self.matrix())) <= 1e-12:
            raise DegenerateConfigurationError("perspective matrix is not invertible")

    @classmethod
    def identity(cls, native_ppi: float = DEFAULT_TARGET_PPI,
                 target_ppi: float = DEFAULT_TARGET_PPI) -> "CalibrationProfile":
        return cls((1, 0, 0, 0, 1, 0, 0, 0), native_ppi, target_ppi)

    @classmethod
    def from_matrix(cls, m, native_ppi, target_ppi=DEFAULT_TARGET_PPI) -> "CalibrationProfile":
        m = np.asarray(m, dtype=np.float64)
        if abs(m[2, 2]) < 1e-15:
            raise DegenerateConfigurationError("matrix cannot be normalized to h33 = 1")
        m = m / m[2, 2]
        return cls(tuple(m.ravel()[:8]), native_ppi, target_ppi)

    def matrix(self) -> np.ndarray:
        a, b, c, d, e, f, g, h = self.params
        return np.array([[a, b, c], [d, e, f], [g, h, 1.0]])

    def inverse(self) -> "CalibrationProfile":
        return CalibrationProfile.from_matrix(
            np.linalg.inv(self.matrix()), self.native_ppi, self.target_ppi)

    def apply(self, points) -> np.ndarray:
        """Forward-map an ``(n, 2)`` array of source points."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        hom = np.column_stack([pts, np.ones(len(pts))]) @ self.matrix().T
        return hom[:, :2] / hom[:, 2:3]

    def to_dict(self) -> dict:
        return {"version": self.version, "params": list(self.params),
                "native_ppi": self.native_ppi, "target_ppi": self.target_ppi}

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibrationProfile":
        if doc.get("version") != PROFILE_VERSION:
            raise InvalidDataError(f"unsupported calibration profile version {doc.get('version')!r}")
        return cls(tuple(doc["params"]), doc["native_ppi"],
                   doc.get("target_ppi", DEFAULT_TARGET_PPI))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationProfile":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidDataError(f"{path}: not a JSON document ({exc})") from None
        return cls.from_dict(doc)


def _as_pairs(pairs) -> list:
    out = []
    for p in pairs:
        if isinstance(p, PointCorrespondence):
            out.append(p)
        else:
            src, dst = p
            out.append(PointCorrespondence(tuple(src), tuple(dst)))
    return out


def _has_collinear_triple(points: np.ndarray) -> bool:
    scale = max(1.0, float(np.abs(points).max()))
    n = len(points)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                u = points[j] - points[i]
                v = points[k] - points[i]
                if abs(u[0] * v[1] - u[1] * v[0]) <= 1e-9 * scale * scale:
                    return True
    return False


def perspective_system(pairs: Sequence[PointCorrespondence]):
    """Linear system ``A @ params = rhs`` with two rows per correspondence."""
    rows, rhs = [], []
    for p in pairs:
        (x, y), (u, v) = p.src, p.dst
        rows.append([x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u])
        rhs.append(u)
        rows.append([0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v])
        rhs.append(v)
    return np.array(rows), np.array(rhs)


def estimate_perspective(pairs: Iterable, native_ppi: float,
                         target_ppi: float = DEFAULT_TARGET_PPI) -> CalibrationProfile:
    """Least-squares estimate of the perspective parameters.

    Exactly four non-degenerate pairs give an exact solution; more pairs give
    the least-squares fit of the linearized equations.
    """
    pairs = _as_pairs(pairs)
    if len(pairs) < 4:
        raise InsufficientDataError(f"need at least 4 correspondences, got {len(pairs)}")
    if len(pairs) == 4:
        src = np.array([p.src for p in pairs])
        dst = np.array([p.dst for p in pairs])
        if _has_collinear_triple(src) or _has_collinear_triple(dst):
            raise DegenerateConfigurationError("three of the four points are collinear")
    a, rhs = perspective_system(pairs)
    if np.linalg.matrix_rank(a) < 8:
        raise DegenerateConfigurationError("correspondences do not determine a perspective map")
    params, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return CalibrationProfile(tuple(params), native_ppi, target_ppi)


def reprojection_residuals(profile: CalibrationProfile, pairs) -> np.ndarray:
    pairs = _as_pairs(pairs)
    src = np.array([p.src for p in pairs])
    dst = np.array([p.dst for p in pairs])
    return np.linalg.norm(profile.apply(src) - dst, axis=1)


def _snap(coords: np.ndarray) -> np.ndarray:
    nearest = np.round(coords)
    return np.where(np.abs(coords - nearest) <= _SNAP, nearest, coords)


def warp_perspective(img: RasterImage, profile: CalibrationProfile,
                     out_size: Tuple[int, int]) -> RasterImage:
    """Inverse-mapped perspective warp with bilinear sampling.

    Output pixels whose source falls outside the input are filled with 255.
    """
    out_w, out_h = int(out_size[0]), int(out_size[1])
    if out_w < 1 or out_h < 1:
        raise InvalidDataError(f"output size must be positive, got {out_size}")
    m = profile.matrix()
    if abs(np.linalg.det(m)) <= 1e-12:
        raise DegenerateConfigurationError("perspective matrix is not invertible")
    inv = np.linalg.inv(m)

    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    u = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    v = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    w = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    ok = w > 0
    w = np.where(ok, w, 1.0)
    sx = _snap(u / w)
    sy = _snap(v / w)

    h, wd = img.height, img.width
    ok &= (sx >= 0) & (sx <= wd - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.where(ok, sx, 0.0)
    sy = np.where(ok, sy, 0.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    x1 = np.minimum(x0 + 1, wd - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    src = img.data.astype(np.float64)
    a, b = src[y0, x0], src[y0, x1]
    c, d = src[y1, x0], src[y1, x1]
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    out = top + fy * (bottom - top)
    out[~ok] = 255.0
    return img.with_data(round_half_up(out))


def _box_weights(n_in: int, n_out: int, factor: float) -> np.ndarray:
    edges = np.arange(n_out + 1) * factor
    lo = np.maximum(edges[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(1, n_in + 1)[None, :])
    return np.clip(hi - lo, 0.0, None) / factor


def resample_to_ppi(img: RasterImage, target_ppi: float) -> RasterImage:
    """Area-average downsampling from ``img.ppi`` to ``target_ppi``."""
    if img.ppi is None:
        raise MissingMetadataError("image has no ppi tag; cannot resample")
    if target_ppi <= 0:
        raise InvalidDataError(f"target ppi must be positive, got {target_ppi}")
    if target_ppi > img.ppi:
        raise UnsupportedOperationError(
            f"upsampling from {img.ppi} to {target_ppi} ppi is not supported")
    if target_ppi == img.ppi:
        return img
    ratio = target_ppi / img.ppi
    out_w = int(math.floor(img.width * ratio + _SNAP))
    out_h = int(math.floor(img.height * ratio + _SNAP))
    if out_w < 1 or out_h < 1:
        raise UnsupportedOperationError("image too small for the requested resolution")
    factor = img.ppi / target_ppi
    wx = _box_weights(img.width, out_w, factor)
    wy = _box_weights(img.height, out_h, factor)
    src = img.data.astype(np.float64)
    out = np.einsum("ij,jkc,lk->ilc", wy, src, wx)
    return img.with_data(round_half_up(out), ppi=float(target_ppi))


def process_ftir(raw: RasterImage, profile: CalibrationProfile) -> RasterImage:
    """Turn a raw RGB FTIR capture into a matcher-ready grayscale image.

    grayscale -> equalize -> negate -> perspective warp -> resample. The warp
    keeps the raw frame size; the raw image inherits the profile's native
    resolution when it carries none.
    """
    _require(raw, RGB, "process_ftir")
    if raw.ppi is None:
        raw = raw.with_data(raw.data, ppi=profile.native_ppi)
    img = negate(equalize_histogram(to_grayscale(raw)))
    img = warp_perspective(img, profile, (raw.width, raw.height))
    return resample_to_ppi(img, profile.target_ppi)


# --------------------------------------------------------------------------
# file I/O

_WRITE_FORMATS = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM"}


def read_image(path, ppi: Optional[float] = None) -> RasterImage:
    """Read an 8-bit PNG or binary PGM/PPM as GRAY or RGB."""
    with Image.open(path) as im:
        im.load()
        if ppi is None and "dpi" in im.info:
            dpi = float(im.info["dpi"][0])
            ppi = round(dpi, 2) if dpi > 0 else None
        if im.mode in ("L", "1"):
            return RasterImage(np.array(im.convert("L")), GRAY, ppi)
        if im.mode in ("RGB", "RGBA", "P", "LA"):
            return RasterImage(np.array(im.convert("RGB")), RGB, ppi)
        raise InvalidDataError(f"{path}: unsupported pixel mode {im.mode}")


def write_image(img: RasterImage, path) -> None:
    """Write PNG or binary PGM/PPM. HSV data is stored as plain 3-channel bytes."""
    path = Path(path)
    fmt = _WRITE_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise UnsupportedOperationError(f"unsupported image extension {path.suffix!r}")
    if img.channels == 1:
        if path.suffix.lower() == ".ppm":
            raise UnsupportedOperationError("single-channel images are written as .pgm or .png")
        im = Image.fromarray(img.data[:, :, 0])
    else:
        if path.suffix.lower() == ".pgm":
            raise UnsupportedOperationError("3-channel images are written as .ppm or .png")
        im = Image.fromarray(img.data)
    kwargs = {}
    if fmt == "PNG" and img.ppi is not None:
        kwargs["dpi"] = (img.ppi, img.ppi)
    im.save(path, format=fmt, **kwargs)
