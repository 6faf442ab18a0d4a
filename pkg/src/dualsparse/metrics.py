"""Image quality metrics and noise simulators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from dualsparse.errors import ContractError, DimensionError
from dualsparse.image import as_array


@dataclass
class MetricConfig:
    """SSIM constants. Unset ``c1``/``c2`` follow ``(0.01 R)^2`` and ``(0.03 R)^2``."""

    dynamic_range: float = 255.0
    c1: float | None = None
    c2: float | None = None
    windowed: bool = False

    def __post_init__(self):
        if self.c1 is None:
            self.c1 = (0.01 * self.dynamic_range) ** 2
        if self.c2 is None:
            self.c2 = (0.03 * self.dynamic_range) ** 2
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM constants must be positive")


@dataclass
class NoiseModel:
    kind: str = "awgn"
    sigma: float = 35.0
    looks: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("awgn", "speckle"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.looks < 1:
            raise ValueError("looks must be >= 1")

    def apply(self, img) -> np.ndarray:
        if self.kind == "awgn":
            return add_awgn(img, self.sigma, self.seed)
        return add_speckle(img, self.looks, self.seed)


def _pair(reference, test) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_array(reference), as_array(test)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(reference, test) -> float:
    a, b = _pair(reference, test)
    return float(np.mean((a - b) ** 2))


def psnr(reference, test, peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB.

    The peak defaults to the maximum of ``reference``. Identical images
    return ``math.inf``.
    """
    a, b = _pair(reference, test)
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return math.inf
    top = float(a.max()) if peak is None else float(peak)
    return 20 * math.log10(top) - 10 * math.log10(err)


def _global_ssim(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    ua, ub = a.mean(), b.mean()
    va, vb = a.var(), b.var()
    cov = np.mean((a - ua) * (b - ub))
    num = (2 * ua * ub + c1) * (2 * cov + c2)
    den = (ua * ua + ub * ub + c1) * (va + vb + c2)
    return float(num / den)


def _windowed_ssim(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    # 11x11 Gaussian window, sigma 1.5
    blur = lambda z: gaussian_filter(z, sigma=1.5, truncate=3.5, mode="reflect")
    ua, ub = blur(a), blur(b)
    va = blur(a * a) - ua * ua
    vb = blur(b * b) - ub * ub
    cov = blur(a * b) - ua * ub
    smap = ((2 * ua * ub + c1) * (2 * cov + c2)) / ((ua * ua + ub * ub + c1) * (va + vb + c2))
    return float(smap.mean())


def ssim(reference, test, cfg: MetricConfig | None = None) -> float:
    """Structural similarity from whole-image statistics.

    Set ``cfg.windowed`` for the usual mean SSIM over local Gaussian windows.
    """
    cfg = cfg or MetricConfig()
    a, b = _pair(reference, test)
    if np.array_equal(a, b):
        return 1.0
    if cfg.windowed:
        return _windowed_ssim(a, b, cfg.c1, cfg.c2)
    return _global_ssim(a, b, cfg.c1, cfg.c2)


def add_awgn(img, sigma: float, seed: int = 0) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise; values are not clipped."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    x = as_array(img)
    if sigma == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    return x + rng.normal(0.0, sigma, size=x.shape)


def speckle_field(shape, looks: float = 1.0, seed: int = 0) -> np.ndarray:
    """Unit-mean Gamma(L, 1/L) multipliers."""
    if looks < 1:
        raise ValueError("looks must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.gamma(shape=looks, scale=1.0 / looks, size=shape)


def add_speckle(img, looks: float = 1.0, seed: int = 0) -> np.ndarray:
    """Multiply every pixel by an independent unit-mean speckle variate."""
    x = as_array(img)
    if np.any(x <= 0):
        raise ContractError("speckle simulation needs strictly positive intensities")
    return x * speckle_field(x.shape, looks, seed)
