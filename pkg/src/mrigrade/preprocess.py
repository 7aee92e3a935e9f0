"""Gland-focused preprocessing: crop, resize/normalize, signal flip, ADC cleanup.

The pipeline order is crop -> resize_normalize -> flip_signal ->
suppress_ineffective_adc; the suppression thresholds are defined on the
normalized 0-255 scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume_store import MpMriVolume


@dataclass
class PreprocessConfig:
    target_width: int = 224
    target_height: int = 224
    k_max: float = 200.0   # ADC block-mean threshold (suppress when above)
    k_min: float = 50.0    # DWI block-mean threshold (suppress when below)
    block: int = 2

    def __post_init__(self):
        if self.target_width <= 0 or self.target_height <= 0:
            raise ValueError("target dimensions must be positive")
        if self.block < 1:
            raise ValueError("block edge length must be >= 1")
        for name in ("k_max", "k_min"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ValueError(f"{name} must lie in [0, 255]")


def crop_to_gland(vol: MpMriVolume) -> MpMriVolume:
    """Crop all channels to the axis-aligned bounding cuboid of the gland mask."""
    if vol.mask is None or not vol.mask.any():
        raise ValueError("no gland mask: volume has an absent or all-zero mask")
    ks, js, iis = np.nonzero(vol.mask)
    sl = (
        slice(ks.min(), ks.max() + 1),
        slice(js.min(), js.max() + 1),
        slice(iis.min(), iis.max() + 1),
    )
    return vol.replace(
        data=vol.data[(slice(None),) + sl].copy(),
        mask=vol.mask[sl].copy(),
    )


def resize_slice_bilinear(sl: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize one 2-D slice with half-pixel-center bilinear interpolation.

    Source coordinate for destination pixel d is (d + 0.5) * src/dst - 0.5,
    clamped at the borders; equal sizes reproduce the input exactly.
    """
    src_h, src_w = sl.shape
    sl = sl.astype(np.float64, copy=False)

    def axis_coords(dst: int, src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        pos = np.clip(pos, 0.0, src - 1.0)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, src - 1)
        frac = pos - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(height, src_h)
    x0, x1, fx = axis_coords(width, src_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = sl[y0][:, x0] * (1 - fx) + sl[y0][:, x1] * fx
    bottom = sl[y1][:, x0] * (1 - fx) + sl[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def _minmax_rescale(channel: np.ndarray) -> np.ndarray:
    """Map a float array to [0, 255]; constant input maps to all zeros."""
    lo = channel.min()
    hi = channel.max()
    if hi == lo:
        return np.zeros_like(channel)
    return (channel - lo) * (255.0 / (hi - lo))


def _cast_like(data: np.ndarray, dtype: np.dtype) -> np.ndarray:
    if dtype == np.uint8:
        return np.clip(np.rint(data), 0, 255).astype(np.uint8)
    return data.astype(np.dtype("<f4"))


def resize_normalize(vol: MpMriVolume, cfg: PreprocessConfig) -> MpMriVolume:
    """Resize every slice in-plane and min-max rescale each channel to [0, 255]."""
    if vol.data.size == 0:
        raise ValueError("empty volume")
    n_ch, n_k = vol.data.shape[:2]
    out = np.empty((n_ch, n_k, cfg.target_height, cfg.target_width), dtype=np.float64)
    for c in range(n_ch):
        for k in range(n_k):
            out[c, k] = resize_slice_bilinear(vol.data[c, k], cfg.target_height, cfg.target_width)
        out[c] = _minmax_rescale(out[c])
    mask = None
    if vol.mask is not None:
        mask = np.empty((n_k, cfg.target_height, cfg.target_width), dtype=bool)
        for k in range(n_k):
            resized = resize_slice_bilinear(
                vol.mask[k].astype(np.float64), cfg.target_height, cfg.target_width
            )
            mask[k] = resized >= 0.5
    return vol.replace(data=_cast_like(out, vol.data.dtype), mask=mask)


def flip_signal(vol: MpMriVolume, channels: tuple[str, ...] = ("ADC", "T2W")) -> MpMriVolume:
    """Invert named channels slice by slice: p -> slice_max - p."""
    for name in channels:
        if name not in vol.channels:
            raise ValueError(f"cannot flip missing channel {name!r}")
    data = vol.data.astype(np.float64)
    for name in channels:
        idx = vol.channels.index(name)
        slice_max = data[idx].max(axis=(1, 2), keepdims=True)
        data[idx] = slice_max - data[idx]
    return vol.replace(data=_cast_like(data, vol.data.dtype))


def _block_means(sl: np.ndarray, block: int) -> np.ndarray:
    """Mean per non-overlapping block, ragged edges reflect-padded."""
    h, w = sl.shape
    pad_h = (-h) % block
    pad_w = (-w) % block
    padded = np.pad(sl.astype(np.float64), ((0, pad_h), (0, pad_w)), mode="reflect")
    ph, pw = padded.shape
    return padded.reshape(ph // block, block, pw // block, block).mean(axis=(1, 3))


def suppress_ineffective_adc(vol: MpMriVolume, cfg: PreprocessConfig) -> MpMriVolume:
    """Invert ADC pixels inside blocks with high ADC mean but low DWI mean.

    Per slice k, a block qualifies when mean(ADC block) > k_max and
    mean(DWI block) < k_min; its ADC pixels become slice_max - pixel. Only
    real pixels are written; reflection padding affects means only.
    """
    for name in ("ADC", "DWI"):
        if name not in vol.channels:
            raise ValueError(f"suppression requires channel {name!r}")
    adc_idx = vol.channels.index("ADC")
    data = vol.data.astype(np.float64)
    adc = data[adc_idx]
    dwi = data[vol.channels.index("DWI")]
    b = cfg.block
    for k in range(adc.shape[0]):
        cond = (_block_means(adc[k], b) > cfg.k_max) & (_block_means(dwi[k], b) < cfg.k_min)
        if not cond.any():
            continue
        h, w = adc[k].shape
        pixel_cond = np.repeat(np.repeat(cond, b, axis=0), b, axis=1)[:h, :w]
        slice_max = adc[k].max()
        adc[k] = np.where(pixel_cond, slice_max - adc[k], adc[k])
    data[adc_idx] = adc
    return vol.replace(data=_cast_like(data, vol.data.dtype))


def preprocess_volume(vol: MpMriVolume, cfg: PreprocessConfig) -> MpMriVolume:
    """Full pipeline: crop, resize/normalize, flip ADC+T2W, suppress ADC blocks."""
    out = crop_to_gland(vol)
    out = resize_normalize(out, cfg)
    flip = tuple(name for name in ("ADC", "T2W") if name in out.channels)
    if flip:
        out = flip_signal(out, flip)
    if "ADC" in out.channels and "DWI" in out.channels:
        out = suppress_ineffective_adc(out, cfg)
    return out
