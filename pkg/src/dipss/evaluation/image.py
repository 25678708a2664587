"""Image-change metrics between an original and a harmonized volume."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..exceptions import EmptyMask, ShapeIncompatible
from ..volume import Volume

DATA_RANGE = 255.0
PSNR_CAP = 100.0
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
K1, K2 = 0.01, 0.03


def _pair(orig, converted):
    a = orig.voxels if isinstance(orig, Volume) else np.asarray(orig)
    b = converted.voxels if isinstance(converted, Volume) else np.asarray(converted)
    if a.shape != b.shape:
        raise ShapeIncompatible(f"dims {a.shape} and {b.shape} differ")
    return a.astype(np.float64), b.astype(np.float64)


def psnr_from_rmse(rmse: float, data_range: float = DATA_RANGE) -> float:
    if rmse < data_range * 1e-5:
        return PSNR_CAP
    return float(20.0 * np.log10(data_range / rmse))


def ssim_map_2d(a: np.ndarray, b: np.ndarray, data_range: float = DATA_RANGE) -> np.ndarray:
    """Per-pixel SSIM index with an 11x11 Gaussian window (sigma 1.5),
    population statistics, reflective borders."""
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    trunc = SSIM_RADIUS / SSIM_SIGMA

    def blur(x):
        return gaussian_filter(x, SSIM_SIGMA, mode="reflect", truncate=trunc)

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def masked_ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray, axis: int = 2,
                data_range: float = DATA_RANGE) -> float:
    """Mean SSIM over windows centred on mask voxels, slice-wise along ``axis``."""
    total, count = 0.0, 0
    for i in range(a.shape[axis]):
        m = np.take(mask, i, axis=axis)
        if not m.any():
            continue
        s = ssim_map_2d(np.take(a, i, axis=axis), np.take(b, i, axis=axis), data_range)
        total += s[m].sum()
        count += int(m.sum())
    return total / count


@dataclass(frozen=True)
class ImageMetrics:
    psnr: float
    rmse: float
    ssim: float


def masked_image_metrics(orig, converted, mask=None, axis: str = "coronal") -> ImageMetrics:
    """PSNR (dB), RMSE and SSIM restricted to the brain region.

    The region is ``mask`` if given, else the original's brain mask.
    """
    a, b = _pair(orig, converted)
    if mask is None:
        mask = orig.brain_mask() if isinstance(orig, Volume) else a > 0
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeIncompatible(f"mask dims {mask.shape} != {a.shape}")
    if not mask.any():
        raise EmptyMask("brain mask is empty")
    rmse = float(np.sqrt(np.mean((a[mask] - b[mask]) ** 2)))
    ax = orig.axis_index(axis) if isinstance(orig, Volume) else 2
    return ImageMetrics(psnr_from_rmse(rmse), rmse, float(masked_ssim(a, b, mask, ax)))


@dataclass(frozen=True)
class CdfTable:
    thresholds: np.ndarray
    fractions: np.ndarray

    def at(self, t: float) -> float:
        i = np.searchsorted(self.thresholds, t, side="right") - 1
        return float(self.fractions[i]) if i >= 0 else 0.0

    def to_dict(self):
        return {"thresholds": self.thresholds.tolist(), "fractions": self.fractions.tolist()}


def intensity_change_cdf(orig, converted, bins: int = 255, max_change: float = DATA_RANGE) -> CdfTable:
    """Fraction of all voxels (background included) with |change| <= t for
    ``bins + 1`` evenly spaced thresholds t in [0, max_change]."""
    a, b = _pair(orig, converted)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    change = np.sort(np.abs(a - b).ravel())
    t = np.linspace(0.0, max_change, bins + 1)
    frac = np.searchsorted(change, t, side="right") / change.size
    return CdfTable(t, frac)


def mean_cdf(tables) -> CdfTable:
    tables = list(tables)
    return CdfTable(tables[0].thresholds, np.mean([t.fractions for t in tables], axis=0))


@dataclass
class HarmonizationReport:
    """Per-category mean/SD of the image metrics and averaged change CDFs."""

    metrics: dict = field(default_factory=dict)  # category -> {psnr: (mean, sd), rmse: ..., ssim: ...}
    cdf: dict = field(default_factory=dict)  # category -> CdfTable

    @classmethod
    def from_pairs(cls, pairs, bins: int = 255) -> "HarmonizationReport":
        """``pairs``: iterable of (category, original Volume, converted Volume)."""
        return cls.from_measurements(
            (cat, masked_image_metrics(o, c), intensity_change_cdf(o, c, bins)) for cat, o, c in pairs)

    @classmethod
    def from_measurements(cls, items) -> "HarmonizationReport":
        """``items``: iterable of (category, ImageMetrics, CdfTable)."""
        per_cat, cdfs = {}, {}
        for cat, m, cdf in items:
            per_cat.setdefault(cat, []).append(m)
            cdfs.setdefault(cat, []).append(cdf)
        rep = cls()
        for cat, ms in sorted(per_cat.items()):
            rep.metrics[cat] = {
                name: (float(np.mean([getattr(m, name) for m in ms])), float(np.std([getattr(m, name) for m in ms])))
                for name in ("psnr", "rmse", "ssim")
            }
            rep.cdf[cat] = mean_cdf(cdfs[cat])
        return rep

    def to_dict(self):
        return {"metrics": {c: {k: list(v) for k, v in m.items()} for c, m in self.metrics.items()},
                "cdf": {c: t.to_dict() for c, t in self.cdf.items()}}
