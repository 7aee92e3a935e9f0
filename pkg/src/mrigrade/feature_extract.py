"""Symmetry-based feature extraction and fusion into an extra input channel.

Two per-slice operators feed a column-wise Gaussian blend: the symmetric
difference map highlights left-right intensity asymmetry, the symmetric
weighting map highlights high signal near the vertical midline. Blended maps
from T2W, ADC and DWI are combined 1:2:2 and rescaled to the 0-255 intensity
scale of the base channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .volume_store import MpMriVolume


@dataclass(frozen=True)
class FeConfig:
    phi: float = 30.0           # symmetric-difference threshold
    sd_floor: float = 0.1       # value assigned when the difference is <= phi
    mu: float | None = None     # Gaussian center, column units; None -> width/2
    sigma: float | None = None  # Gaussian width, column units; None -> width/6
    channel_weights: tuple[float, float, float] = (1.0, 2.0, 2.0)  # T2W, ADC, DWI
    sine_coeff: float = 0.55

    def __post_init__(self):
        if not 0 <= self.phi <= 255:
            raise ValueError("phi must lie in [0, 255]")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        w = self.channel_weights
        if len(w) != 3 or any(x < 0 for x in w) or sum(w) == 0:
            raise ValueError("channel_weights must be three non-negative values, not all zero")

    def resolved_mu(self, width: int) -> float:
        return self.mu if self.mu is not None else width / 2.0

    def resolved_sigma(self, width: int) -> float:
        return self.sigma if self.sigma is not None else width / 6.0


@dataclass(frozen=True)
class FeatureMap:
    """Fused single-channel map plus the provenance that produced it."""

    data: np.ndarray  # (k, j, i) float32
    source_channels: tuple[str, ...]
    config: FeConfig = field(default_factory=FeConfig)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError("feature map must be 3-D [k, j, i]")
        if not np.isfinite(data).all():
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "data", data)


def _as_float_volume(channel: np.ndarray) -> np.ndarray:
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 3:
        raise ValueError("channel must be 3-D [k, j, i]")
    return channel


def symmetric_difference(channel: np.ndarray, cfg: FeConfig) -> np.ndarray:
    """Difference against the horizontally mirrored position, floored below phi.

    out[k,j,i] = D[k,j,i] - D[k,j,w-1-i] when that difference exceeds phi,
    else sd_floor.
    """
    d = _as_float_volume(channel)
    if d.shape[2] < 2:
        raise ValueError("symmetric difference needs width >= 2")
    eps = d - d[:, :, ::-1]
    return np.where(eps > cfg.phi, eps, cfg.sd_floor)


def row_weight_profile(x_m: int, cfg: FeConfig) -> np.ndarray:
    """Sine-dip weights w(x) = 1 - c*sin(pi*x/x_m) for x = 0..x_m-1."""
    if x_m < 1:
        raise ValueError("x_m must be >= 1")
    x = np.arange(x_m, dtype=np.float64)
    return 1.0 - cfg.sine_coeff * np.sin(math.pi * x / x_m)


def symmetrically_weighted(channel: np.ndarray, cfg: FeConfig) -> np.ndarray:
    """Each pixel divided by its row's weighted sum; zero-sum rows give zeros."""
    d = _as_float_volume(channel)
    w = row_weight_profile(d.shape[2], cfg)
    denom = d @ w  # (k, j)
    out = np.zeros_like(d)
    nonzero = denom != 0
    np.divide(d, denom[:, :, None], out=out, where=nonzero[:, :, None])
    return out


def gaussian_row_weight(x_m: int, cfg: FeConfig) -> np.ndarray:
    """Column weights from a Gaussian density, normalized so the peak is 1."""
    if x_m < 1:
        raise ValueError("x_m must be >= 1")
    mu = cfg.resolved_mu(x_m)
    sigma = cfg.resolved_sigma(x_m)
    x = np.arange(x_m, dtype=np.float64)
    p = np.exp(-((x - mu) ** 2) / (2.0 * sigma * sigma)) / math.sqrt(2.0 * math.pi * sigma * sigma)
    return p / p.max()


def mix(channel: np.ndarray, cfg: FeConfig) -> np.ndarray:
    """Column-wise convex blend of the weighted and difference maps."""
    d = _as_float_volume(channel)
    w = gaussian_row_weight(d.shape[2], cfg)
    sw = symmetrically_weighted(d, cfg)
    sd = symmetric_difference(d, cfg)
    return w * sw + (1.0 - w) * sd


def fuse_channels(
    t2_map: np.ndarray, adc_map: np.ndarray, dwi_map: np.ndarray, cfg: FeConfig
) -> FeatureMap:
    """Weighted sum of the three per-channel maps, rescaled to [0, 255]."""
    maps = [_as_float_volume(m) for m in (t2_map, adc_map, dwi_map)]
    if not (maps[0].shape == maps[1].shape == maps[2].shape):
        raise ValueError("channel maps must share a shape")
    w = cfg.channel_weights
    raw = w[0] * maps[0] + w[1] * maps[1] + w[2] * maps[2]
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        scaled = np.zeros_like(raw)
    else:
        scaled = (raw - lo) * (255.0 / (hi - lo))
    return FeatureMap(data=scaled, source_channels=("T2W", "ADC", "DWI"), config=cfg)


def extract_features(vol: MpMriVolume, cfg: FeConfig) -> MpMriVolume:
    """Append the fused map as channel "FE"; source channels stay untouched."""
    for name in ("T2W", "ADC", "DWI"):
        if name not in vol.channels:
            raise ValueError(f"feature extraction requires channel {name!r}")
    fe = fuse_channels(
        mix(vol.channel("T2W"), cfg),
        mix(vol.channel("ADC"), cfg),
        mix(vol.channel("DWI"), cfg),
        cfg,
    )
    data = np.concatenate(
        [vol.data.astype(np.dtype("<f4")), fe.data[None].astype(np.dtype("<f4"))], axis=0
    )
    return vol.replace(channels=vol.channels + ("FE",), data=data)


def intermediate_maps(vol: MpMriVolume, cfg: FeConfig, channel: str) -> dict[str, np.ndarray]:
    """SD / SW / Mix maps for one channel, for inspection dumps."""
    d = vol.channel(channel)
    return {
        "sd": symmetric_difference(d, cfg),
        "sw": symmetrically_weighted(d, cfg),
        "mix": mix(d, cfg),
    }
