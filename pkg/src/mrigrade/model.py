"""Small differentiable classifier over pooled volume features.

A volume is average-pooled onto a fixed per-channel grid, flattened, scaled
to [0, 1], and pushed through one tanh hidden layer into a softmax head.
Forward passes cache activations so the analytic backward pass can produce
exact parameter gradients; no autodiff framework is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import ProbPair, softmax, softmax_backward
from .volume_store import MpMriVolume

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class ModelConfig:
    pooled_grid: tuple[int, int, int] = (4, 8, 8)
    hidden_width: int = 64
    activation: str = "tanh"
    init_seed: int = 0

    def __post_init__(self):
        grid = tuple(int(g) for g in self.pooled_grid)
        if len(grid) != 3 or any(g < 1 for g in grid):
            raise ValueError("pooled_grid must be three positive ints")
        object.__setattr__(self, "pooled_grid", grid)
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.activation != "tanh":
            raise ValueError("only the tanh activation is supported")


def _bin_bounds(size: int, bins: int) -> tuple[np.ndarray, np.ndarray]:
    # adaptive bins: start floor(b*size/bins), end ceil((b+1)*size/bins);
    # every bin is nonempty even when bins > size
    b = np.arange(bins)
    starts = (b * size) // bins
    ends = -((-(b + 1) * size) // bins)
    return starts, ends


def pool_volume(data: np.ndarray, grid: tuple[int, int, int]) -> np.ndarray:
    """Average-pool (C, Z, Y, X) onto (C, gz, gy, gx), flatten, scale to [0, 1]."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 4:
        raise ValueError("expected 4-D volume data [channel, k, j, i]")
    bounds = [_bin_bounds(s, g) for s, g in zip(data.shape[1:], grid)]
    out = np.empty((data.shape[0], *grid), dtype=np.float64)
    for bz, (z0, z1) in enumerate(zip(*bounds[0])):
        for by, (y0, y1) in enumerate(zip(*bounds[1])):
            for bx, (x0, x1) in enumerate(zip(*bounds[2])):
                out[:, bz, by, bx] = data[:, z0:z1, y0:y1, x0:x1].mean(axis=(1, 2, 3))
    return out.reshape(-1) / 255.0


class PooledClassifier:
    """pool -> linear -> tanh -> linear -> softmax, with exact gradients."""

    def __init__(self, cfg: ModelConfig, n_channels: int, n_classes: int = 2):
        if n_channels < 1 or n_classes < 2:
            raise ValueError("need n_channels >= 1 and n_classes >= 2")
        self.cfg = cfg
        self.n_channels = n_channels
        self.n_classes = n_classes
        gz, gy, gx = cfg.pooled_grid
        self.in_dim = n_channels * gz * gy * gx
        rng = np.random.default_rng(cfg.init_seed)
        lim1 = np.sqrt(6.0 / (self.in_dim + cfg.hidden_width))
        lim2 = np.sqrt(6.0 / (cfg.hidden_width + n_classes))
        self.params = {
            "w1": rng.uniform(-lim1, lim1, size=(self.in_dim, cfg.hidden_width)),
            "b1": np.zeros(cfg.hidden_width),
            "w2": rng.uniform(-lim2, lim2, size=(cfg.hidden_width, n_classes)),
            "b2": np.zeros(n_classes),
        }

    def pool(self, vol: MpMriVolume) -> np.ndarray:
        if vol.data.shape[0] != self.n_channels:
            raise ValueError(
                f"volume has {vol.data.shape[0]} channels, model expects {self.n_channels}"
            )
        return pool_volume(vol.data, self.cfg.pooled_grid)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """Class probabilities (n, n_classes) plus the activation cache."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"feature dim {x.shape[1]} != model input dim {self.in_dim}")
        hidden = np.tanh(x @ self.params["w1"] + self.params["b1"])
        logits = hidden @ self.params["w2"] + self.params["b2"]
        probs = softmax(logits)
        return probs, {"x": x, "hidden": hidden, "probs": probs}

    def forward_volume(self, vol: MpMriVolume) -> tuple[ProbPair, dict]:
        probs, cache = self.forward(self.pool(vol)[None, :])
        if self.n_classes != 2:
            raise ValueError("probability pairs are defined for two-class models")
        return ProbPair(float(probs[0, 0]), float(probs[0, 1])), cache

    def backward(self, cache: dict, grad_probs: np.ndarray) -> dict:
        """Parameter gradients given the loss gradient w.r.t. the probabilities."""
        x, hidden, probs = cache["x"], cache["hidden"], cache["probs"]
        grad_probs = np.asarray(grad_probs, dtype=np.float64)
        if grad_probs.shape != probs.shape:
            raise ValueError("loss gradient shape does not match cached probabilities")
        g_logits = softmax_backward(probs, grad_probs)
        g_hidden = g_logits @ self.params["w2"].T
        g_pre = g_hidden * (1.0 - hidden * hidden)
        return {
            "w1": x.T @ g_pre,
            "b1": g_pre.sum(axis=0),
            "w2": hidden.T @ g_logits,
            "b2": g_logits.sum(axis=0),
        }

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict):
        for name in PARAM_NAMES:
            if params[name].shape != self.params[name].shape:
                raise ValueError(f"shape mismatch for parameter {name!r}")
            self.params[name] = np.asarray(params[name], dtype=np.float64).copy()

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())
