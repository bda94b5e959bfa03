"""Wavelet soft-threshold denoising of elution-profile estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pywt

log = logging.getLogger(__name__)

MAD_SCALE = 0.6745


@dataclass(frozen=True)
class DenoiseConfig:
    """Settings for the in-loop smoother.

    ``scope`` selects what one transform sees: ``"segment"`` denoises every
    second-dimension scan run (length K) of the concatenated profile on its
    own, ``"vector"`` treats the whole profile as one signal.
    """

    wavelet: str = "db4"
    levels: int = 3
    threshold: str = "universal-soft"
    enabled: bool = True
    scope: str = "segment"
    boundary: str = "symmetric"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.threshold != "universal-soft":
            raise ValueError(f"unsupported threshold rule {self.threshold!r}")
        if self.scope not in ("segment", "vector"):
            raise ValueError(f"unknown scope {self.scope!r}")
        pywt.Wavelet(self.wavelet)  # raises on unknown family


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def _effective_levels(n: int, cfg: DenoiseConfig) -> int:
    filt = pywt.Wavelet(cfg.wavelet).dec_len
    return min(cfg.levels, int(np.floor(np.log2(n))), pywt.dwt_max_level(n, filt))


def denoise(y, cfg: DenoiseConfig = DenoiseConfig(), axis: int = -1, return_info: bool = False):
    """Universal soft-threshold wavelet denoising along ``axis``.

    Each 1-D signal along ``axis`` gets its own threshold
    ``sigma * sqrt(2 ln n)`` with ``sigma = median(|finest detail|) / 0.6745``.
    Signals shorter than the filter support pass through unchanged.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite input to denoise")
    n = y.shape[axis]
    if n < 2:
        raise ValueError("denoise needs at least 2 samples")
    info = {"passthrough": False, "levels": 0}
    if not cfg.enabled:
        return (y.copy(), info) if return_info else y.copy()
    levels = _effective_levels(n, cfg)
    if levels < 1:
        log.debug("signal length %d below filter support of %s", n, cfg.wavelet)
        info["passthrough"] = True
        return (y.copy(), info) if return_info else y.copy()
    info["levels"] = levels

    coeffs = pywt.wavedec(y, cfg.wavelet, mode=cfg.boundary, level=levels, axis=axis)
    finest = np.moveaxis(coeffs[-1], axis, -1)
    sigma = np.median(np.abs(finest), axis=-1) / MAD_SCALE
    lam = np.expand_dims(sigma * np.sqrt(2.0 * np.log(n)), axis=axis)
    coeffs = [coeffs[0]] + [soft_threshold(d, lam) for d in coeffs[1:]]
    out = pywt.waverec(coeffs, cfg.wavelet, mode=cfg.boundary, axis=axis)
    out = np.take(out, np.arange(n), axis=axis)
    return (out, info) if return_info else out


def denoise_profile(vector, dims, cfg: DenoiseConfig = DenoiseConfig()):
    """Denoise a concatenated ``(IKL,)`` profile according to ``cfg.scope``."""
    I, K, L = dims
    vector = np.asarray(vector, dtype=np.float64)
    if cfg.scope == "vector":
        return denoise(vector, cfg)
    cube = vector.reshape(I, K, L, order="F")
    return denoise(cube, cfg, axis=1).reshape(-1, order="F")
