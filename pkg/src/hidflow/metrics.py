"""Cube quality metrics: PSNR, SSIM, spectral angle.

Conventions (none are imposed by the metric definitions themselves, so they
are fixed here): PSNR uses the MSE over the whole cube; SSIM is computed
per band with an 11x11 Gaussian window (sigma 1.5) and averaged over bands;
the spectral angle is reported in radians, averaged over pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SAM_NORM_FLOOR = 1e-8


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    sam: float
    sam_skipped: int = 0

    def row(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "sam": self.sam,
                "sam_skipped": self.sam_skipped}


def _check_pair(a: np.ndarray, b: np.ndarray, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: cube shapes {a.shape} and {b.shape} do not match")


def psnr(restored: np.ndarray, reference: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical cubes yield +inf."""
    restored = np.asarray(restored, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    _check_pair(restored, reference, "psnr")
    mse = np.mean((restored - reference) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_kernel(win: int, sigma: float) -> np.ndarray:
    radius = (win - 1) // 2
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode separable correlation with a 1-D kernel (both axes)."""
    win = kernel.size
    rows = sliding_window_view(img, win, axis=0)
    rows = rows @ kernel
    cols = sliding_window_view(rows, win, axis=1)
    return cols @ kernel


def ssim_band(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Single-band SSIM, Gaussian-weighted statistics, interior pixels only."""
    if a.shape[0] < SSIM_WIN or a.shape[1] < SSIM_WIN:
        raise DataError(f"ssim: image extent {a.shape} smaller than the "
                        f"{SSIM_WIN}x{SSIM_WIN} window")
    kernel = _gaussian_kernel(SSIM_WIN, SSIM_SIGMA)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    ua = _windowed_mean(a, kernel)
    ub = _windowed_mean(b, kernel)
    uaa = _windowed_mean(a * a, kernel) - ua * ua
    ubb = _windowed_mean(b * b, kernel) - ub * ub
    uab = _windowed_mean(a * b, kernel) - ua * ub
    s = ((2 * ua * ub + c1) * (2 * uab + c2)) / ((ua * ua + ub * ub + c1) * (uaa + ubb + c2))
    return float(s.mean())


def ssim(restored: np.ndarray, reference: np.ndarray, peak: float = 1.0) -> float:
    restored = np.asarray(restored, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    _check_pair(restored, reference, "ssim")
    if restored.ndim == 2:
        return ssim_band(restored, reference, peak)
    return float(np.mean([ssim_band(restored[:, :, b], reference[:, :, b], peak)
                          for b in range(restored.shape[2])]))


def sam(restored: np.ndarray, reference: np.ndarray) -> float:
    value, _ = sam_with_count(restored, reference)
    return value


def sam_with_count(restored: np.ndarray, reference: np.ndarray) -> tuple[float, int]:
    """Mean spectral angle in radians; pixels with a near-zero spectrum in
    either cube are skipped and counted."""
    restored = np.asarray(restored, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    _check_pair(restored, reference, "sam")
    a = restored.reshape(-1, restored.shape[-1])
    b = reference.reshape(-1, reference.shape[-1])
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    valid = (na >= SAM_NORM_FLOOR) & (nb >= SAM_NORM_FLOOR)
    skipped = int((~valid).sum())
    if not valid.any():
        raise DataError("sam: every pixel has a degenerate spectrum")
    cosine = np.einsum("ij,ij->i", a[valid], b[valid]) / (na[valid] * nb[valid])
    angles = np.arccos(np.clip(cosine, -1.0, 1.0))
    return float(angles.mean()), skipped


def report(restored: np.ndarray, reference: np.ndarray, peak: float = 1.0) -> MetricReport:
    sam_value, skipped = sam_with_count(restored, reference)
    return MetricReport(psnr=psnr(restored, reference, peak),
                        ssim=ssim(restored, reference, peak),
                        sam=sam_value, sam_skipped=skipped)
