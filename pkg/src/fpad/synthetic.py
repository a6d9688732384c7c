"""Deterministic synthetic live/spoof corpus standing in for a private database.

Every acquisition is a ridge-like sinusoidal grating whose period and
orientation belong to the finger (or spoof instance). Each acquisition is
rendered as a high-contrast FTIR-like view and a low-contrast, tinted
direct view; an optional grayscale COTS-like view is rendered too.

Live fingers carry a skin tint and specular highlights in the direct view.
Each spoof material shifts hue and saturation in exactly one of the two color
streams (alternating by material) and looks like skin, highlights included,
in the other. Each stream alone therefore sees only part of the spoof
classes while the pair sees all of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb

from .errors import InvalidDataError
from .evaluation import LIVE, SPOOF, SampleRecord, write_manifest
from .imaging import GRAY, RGB, RasterImage, rgb_to_hsv, write_image

DEFAULT_MATERIALS = ("ecoflex", "wood_glue", "gelatin", "body_paint")
LIVE_HUE = 18.0  # degrees


@dataclass(frozen=True)
class SyntheticSpec:
    n_subjects: int = 10
    fingers_per_subject: int = 4
    impressions_per_finger: int = 5
    materials: Tuple[str, ...] = DEFAULT_MATERIALS
    spoofs_per_material: int = 5
    impressions_per_spoof: int = 10
    image_size: int = 96
    hue_separation: float = 30.0
    noise: float = 6.0
    streams: Tuple[str, ...] = ("FTIR", "DIRECT", "COTS")
    ppi: float = 500.0

    def __post_init__(self):
        counts = (self.n_subjects, self.fingers_per_subject, self.impressions_per_finger,
                  self.spoofs_per_material, self.impressions_per_spoof)
        if any(int(c) != c or c < 0 for c in counts):
            raise InvalidDataError("synthetic counts must be non-negative integers")
        if self.image_size < 16:
            raise InvalidDataError("image_size must be at least 16")
        if self.hue_separation < 0 or self.noise < 0:
            raise InvalidDataError("hue_separation and noise must be non-negative")
        if not self.streams or any(s not in ("FTIR", "DIRECT", "COTS") for s in self.streams):
            raise InvalidDataError(f"streams must be drawn from FTIR, DIRECT, COTS: {self.streams}")
        if len(set(self.materials)) != len(self.materials) or any(
                not m or "," in m for m in self.materials):
            raise InvalidDataError("material names must be unique, non-empty, comma-free")

    @property
    def n_live(self) -> int:
        return self.n_subjects * self.fingers_per_subject * self.impressions_per_finger

    @property
    def n_spoof(self) -> int:
        return len(self.materials) * self.spoofs_per_material * self.impressions_per_spoof


@dataclass(frozen=True)
class _Acquisition:
    key: str
    label: str
    finger_index: int
    impression: int
    subject_id: Optional[str]
    finger_id: Optional[str]
    material_index: int = -1
    spoof_instance_id: Optional[str] = None


def _acquisitions(spec: SyntheticSpec) -> List[_Acquisition]:
    out = []
    finger = 0
    for s in range(spec.n_subjects):
        for f in range(spec.fingers_per_subject):
            for i in range(spec.impressions_per_finger):
                out.append(_Acquisition(f"live_s{s:02d}_f{f}_i{i}", LIVE, finger, i,
                                        f"s{s:02d}", f"s{s:02d}_f{f}"))
            finger += 1
    for m, material in enumerate(spec.materials):
        for k in range(spec.spoofs_per_material):
            instance = f"{material}_k{k}"
            for i in range(spec.impressions_per_spoof):
                out.append(_Acquisition(f"spoof_{instance}_i{i:02d}", SPOOF, finger, i,
                                        None, None, m, instance))
            finger += 1
    return out


def plan_corpus(spec: SyntheticSpec) -> List[SampleRecord]:
    """Manifest records the generator would emit, without rendering."""
    records = []
    for acq in _acquisitions(spec):
        for stream in spec.streams:
            records.append(SampleRecord(
                id=f"{acq.key}_{stream.lower()}",
                image_path=f"images/{stream.lower()}/{acq.key}.png",
                stream=stream,
                label=acq.label,
                material=spec.materials[acq.material_index] if acq.label == SPOOF else None,
                subject_id=acq.subject_id,
                spoof_instance_id=acq.spoof_instance_id,
                finger_id=acq.finger_id,
                impression_index=acq.impression,
            ))
    return records


def material_stream(material_index: int) -> str:
    """Color stream in which a material departs from live skin."""
    return "FTIR" if material_index % 2 == 0 else "DIRECT"


def material_hue(spec: SyntheticSpec, material_index: int) -> float:
    step = spec.hue_separation * (1.0 + 0.5 * (material_index // 2))
    return (LIVE_HUE + step) % 360.0


def _ridges(rng_finger, rng_imp, size) -> np.ndarray:
    period = rng_finger.uniform(6.0, 10.0)
    theta = rng_finger.uniform(0, math.pi) + rng_imp.normal(0, 0.15)
    curve = rng_finger.uniform(-1.5, 1.5)
    shift = rng_imp.uniform(0, 2 * math.pi)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / size - 0.5
    u = xs * math.cos(theta) + ys * math.sin(theta)
    v = -xs * math.sin(theta) + ys * math.cos(theta)
    phase = 2 * math.pi * size / period * (u + curve * 0.15 * v * v) + shift
    return 0.5 + 0.5 * np.sin(phase)


def _to_rgb(h_deg, s, v, noise, rng) -> np.ndarray:
    hsv = np.stack([np.broadcast_to(h_deg / 360.0, v.shape),
                    np.broadcast_to(np.clip(s, 0, 1), v.shape), np.clip(v, 0, 1)], axis=2)
    rgb = hsv_to_rgb(hsv) * 255.0 + rng.normal(0, noise, v.shape + (3,))
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def render_acquisition(spec: SyntheticSpec, acq: _Acquisition, seed: int) -> dict:
    """Images of one acquisition, keyed by stream."""
    size = spec.image_size
    rng_finger = np.random.default_rng([seed, 1, acq.finger_index])
    rng_imp = np.random.default_rng([seed, 2, acq.finger_index, acq.impression])
    ridge = _ridges(rng_finger, rng_imp, size)
    live = acq.label == LIVE
    m = acq.material_index

    def tint(stream, base_sat):
        if live or material_stream(m) != stream:
            return LIVE_HUE + rng_imp.normal(0, 2.0), base_sat
        return material_hue(spec, m), base_sat + (0.25 if m % 4 < 2 else -0.25)

    out = {}
    if "FTIR" in spec.streams:
        hue, sat = tint("FTIR", 0.45)
        val = 0.25 + 0.65 * ridge
        out["FTIR"] = RasterImage(_to_rgb(hue, sat * (0.8 + 0.4 * ridge), val, spec.noise, rng_imp),
                                  RGB, spec.ppi)
    if "DIRECT" in spec.streams:
        hue, sat = tint("DIRECT", 0.5)
        val = 0.55 + 0.2 * ridge
        if live or material_stream(m) != "DIRECT":
            ys, xs = np.mgrid[0:size, 0:size]
            for _ in range(int(rng_imp.integers(2, 5))):
                cx, cy = rng_imp.uniform(0, size, 2)
                r = rng_imp.uniform(2.0, 4.0)
                spot = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * r * r))
                val = val + 0.4 * spot
                sat = sat * (1 - 0.6 * spot)
        out["DIRECT"] = RasterImage(_to_rgb(hue, sat, val, spec.noise, rng_imp), RGB, spec.ppi)
    if "COTS" in spec.streams:
        contrast = 170.0 if live else 160.0
        gray = 235.0 - contrast * ridge + rng_imp.normal(0, spec.noise * (1.0 if live else 1.1),
                                                         ridge.shape)
        out["COTS"] = RasterImage(np.clip(np.floor(gray + 0.5), 0, 255).astype(np.uint8),
                                  GRAY, spec.ppi)
    return out


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int, out_dir) -> Tuple[List[SampleRecord], Path]:
    """Render the corpus to ``out_dir/images`` and write ``out_dir/manifest.csv``."""
    out_dir = Path(out_dir)
    for stream in spec.streams:
        (out_dir / "images" / stream.lower()).mkdir(parents=True, exist_ok=True)
    records = plan_corpus(spec)
    for acq in _acquisitions(spec):
        for stream, img in render_acquisition(spec, acq, seed).items():
            write_image(img, out_dir / "images" / stream.lower() / f"{acq.key}.png")
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, records)
    return records, manifest


def mean_hue_degrees(images: Sequence[RasterImage]) -> float:
    """Circular mean hue (degrees) over all chromatic pixels of RGB images."""
    angles = []
    for img in images:
        hsv = rgb_to_hsv(img).data.astype(np.float64)
        chroma = hsv[..., 1] > 0
        angles.append(hsv[..., 0][chroma] * 2 * math.pi / 255.0)
    a = np.concatenate(angles)
    return math.degrees(math.atan2(np.sin(a).mean(), np.cos(a).mean())) % 360.0
