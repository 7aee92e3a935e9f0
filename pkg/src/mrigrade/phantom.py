"""Deterministic synthetic three-channel volumes with graded lesions.

Each volume holds an ellipsoidal gland inside a textured background. Grades
1-5 add one laterally offset ellipsoidal lesion whose radius and contrast
grow with the grade; the lesion is bright in DWI and dark in T2W and ADC,
mirroring the signal conventions the feature extractor expects. All
randomness flows from per-(seed, grade, index) substreams, so identical
configs regenerate identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import STREAM_PHANTOM, substream
from .volume_store import (
    DatasetManifest,
    ManifestEntry,
    MpMriVolume,
    save_manifest,
    write_volume,
)

# per-channel background levels and lesion polarity
_BASE_LEVEL = {"T2W": 120.0, "ADC": 140.0, "DWI": 60.0}
_LESION_SIGN = {"T2W": -0.9, "ADC": -1.0, "DWI": 1.0}
_TEXTURE_GAIN = {"T2W": 1.0, "ADC": 0.8, "DWI": 0.6}


@dataclass(frozen=True)
class PhantomConfig:
    counts: tuple[int, int, int, int, int, int] = (0, 0, 70, 71, 27, 28)
    shape: tuple[int, int, int] = (16, 64, 64)
    radius_base: float = 4.0
    radius_step: float = 0.8
    radius_jitter: float = 0.5
    contrast_low: float = 20.0
    contrast_high: float = 120.0
    contrast_jitter: float = 10.0
    asymmetric: bool = True
    noise_sigma: float = 6.0
    texture_scale: float = 6.0
    level_jitter: float = 8.0
    seed: int = 0

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "shape", shape)
        if len(counts) != 6 or any(c < 0 for c in counts):
            raise ValueError("counts must be six non-negative ints (grades 0..5)")
        if len(shape) != 3 or any(s < 8 for s in shape):
            raise ValueError("shape must be (Z, Y, X) with every axis >= 8")
        if self.radius_base <= 0 or self.radius_step < 0:
            raise ValueError("radius_base must be positive and radius_step >= 0")
        if not 0 <= self.contrast_low <= self.contrast_high:
            raise ValueError("need 0 <= contrast_low <= contrast_high")
        if self.noise_sigma < 0 or self.texture_scale < 0 or self.level_jitter < 0:
            raise ValueError("noise_sigma, texture_scale and level_jitter must be >= 0")

    def lesion_radius(self, grade: int) -> float:
        if grade == 1:
            return 0.7 * self.radius_base
        return self.radius_base + self.radius_step * (grade - 1)

    def lesion_contrast(self, grade: int) -> float:
        span = self.contrast_high - self.contrast_low
        return self.contrast_low + span * (grade - 1) / 4.0


def _smooth_axis(a: np.ndarray, axis: int, radius: int) -> np.ndarray:
    kernel = np.ones(2 * radius + 1) / (2 * radius + 1)
    pad = [(0, 0)] * a.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(a, pad, mode="edge")
    return np.apply_along_axis(lambda v: np.convolve(v, kernel, mode="valid"), axis, padded)


def _texture_field(shape: tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    """Smooth low-frequency field with roughly unit amplitude."""
    coarse_shape = tuple(max(2, s // 8) for s in shape)
    coarse = rng.standard_normal(coarse_shape)
    field = coarse
    for axis, (c, s) in enumerate(zip(coarse_shape, shape)):
        field = np.repeat(field, -(-s // c), axis=axis)
        field = np.take(field, range(s), axis=axis)
    for axis in range(3):
        field = _smooth_axis(field, axis, 2)
    return field


def _ellipsoid_dist2(shape, center, semi_axes) -> np.ndarray:
    """Squared normalized ellipsoid distance (1.0 on the surface)."""
    grids = np.ogrid[: shape[0], : shape[1], : shape[2]]
    d2 = np.zeros(shape, dtype=np.float64)
    for g, c, a in zip(grids, center, semi_axes):
        d2 = d2 + ((g - c) / a) ** 2
    return d2


def generate_volume(cfg: PhantomConfig, grade: int, index: int) -> MpMriVolume:
    """One labeled volume, bit-reproducible from (cfg.seed, grade, index)."""
    if not 0 <= grade <= 5:
        raise ValueError("grade must lie in 0..5")
    geom = substream(cfg.seed, STREAM_PHANTOM, grade, index, 0)
    texture_rng = substream(cfg.seed, STREAM_PHANTOM, grade, index, 1)
    noise_rng = substream(cfg.seed, STREAM_PHANTOM, grade, index, 2)
    shape = cfg.shape

    center = np.array(shape) / 2.0 + geom.uniform(-1.5, 1.5, size=3)
    semi = np.array([shape[0] * 0.30, shape[1] * 0.33, shape[2] * 0.36])
    semi = semi * geom.uniform(0.95, 1.05, size=3)
    gland_d2 = _ellipsoid_dist2(shape, center, semi)
    mask = gland_d2 <= 1.0

    levels = {name: base + geom.uniform(-cfg.level_jitter, cfg.level_jitter)
              for name, base in _BASE_LEVEL.items()}

    lesion_weight = np.zeros(shape, dtype=np.float64)
    contrast = 0.0
    if grade >= 1:
        contrast = cfg.lesion_contrast(grade)
        contrast += geom.uniform(-cfg.contrast_jitter, cfg.contrast_jitter)
        contrast = max(contrast, 2.0)
        radius = cfg.lesion_radius(grade) + geom.uniform(-cfg.radius_jitter, cfg.radius_jitter)
        radius = max(radius, 1.0)
        side = geom.choice((-1.0, 1.0))
        for attempt in range(6):
            if attempt == 5:
                raise RuntimeError(
                    f"could not fit a grade-{grade} lesion inside the gland"
                )
            lateral = side * geom.uniform(0.25, 0.45) * semi[2] if cfg.asymmetric else 0.0
            offset = np.array([
                geom.uniform(-0.2, 0.2) * semi[0],
                geom.uniform(-0.3, 0.3) * semi[1],
                lateral,
            ])
            lesion_center = center + offset
            lesion_semi = np.array([max(1.5, radius * 0.6), radius, radius])
            # conservative containment: offset plus radius within each semi-axis
            if np.all(np.abs(offset) + lesion_semi <= semi * 0.98):
                break
            radius *= 0.8
        lesion_d2 = _ellipsoid_dist2(shape, lesion_center, lesion_semi)
        lesion_weight = np.clip(1.5 * (1.0 - lesion_d2), 0.0, 1.0)

    texture = _texture_field(shape, texture_rng) * cfg.texture_scale
    noise = noise_rng.standard_normal((3, *shape)) * cfg.noise_sigma

    data = np.empty((3, *shape), dtype=np.float64)
    for ci, name in enumerate(("T2W", "ADC", "DWI")):
        channel = np.where(mask, levels[name], 0.6 * levels[name])
        channel = channel + _TEXTURE_GAIN[name] * texture
        channel = channel + _LESION_SIGN[name] * contrast * lesion_weight
        data[ci] = channel + noise[ci]
    data = np.clip(np.rint(data), 0, 255).astype(np.uint8)

    return MpMriVolume(
        channels=("T2W", "ADC", "DWI"),
        data=data,
        mask=mask,
        spacing=(3.0, 0.5, 0.5),
        label=grade,
    )


def volume_name(grade: int, index: int) -> str:
    return f"g{grade}_{index:03d}"


def generate_dataset(cfg: PhantomConfig, out_dir: str | Path) -> DatasetManifest:
    """Write every configured volume plus manifest.csv; returns the manifest.

    All samples carry the split tag "train" until a splitter assigns real
    tags; class counts match the config exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(seed=cfg.seed)
    for grade, count in enumerate(cfg.counts):
        for index in range(count):
            vol = generate_volume(cfg, grade, index)
            name = volume_name(grade, index)
            write_volume(vol, out / name)
            manifest.entries.append(ManifestEntry(path=name, label=grade, split="train"))
    save_manifest(manifest, out / "manifest.csv")
    return manifest


def generate_volumes(cfg: PhantomConfig) -> list[MpMriVolume]:
    """In-memory variant of generate_dataset (same volumes, same order)."""
    volumes = []
    for grade, count in enumerate(cfg.counts):
        for index in range(count):
            volumes.append(generate_volume(cfg, grade, index))
    return volumes
