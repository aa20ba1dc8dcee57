"""Synthetic degradations for clean hyperspectral cubes.

Two protocols: i.i.d. Gaussian noise at a fixed sigma (0-255 convention,
divided by 255 for [0,1] data), and a mixture protocol where every band
first receives non-i.i.d. Gaussian noise and the bands are then partitioned
into three near-equal parts receiving impulse, stripe, and deadline noise
respectively.  Noisy values are intentionally not clamped to [0,1].

Every call is deterministic in (x, spec, seed) and returns a provenance log
describing each random draw, sufficient to re-create the degradation
without the generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .rng import STREAM_NOISE, stream


@dataclass
class NoiseSpec:
    kind: str = "gaussian"               # "gaussian" | "mixture"
    sigma: float = 50.0                  # gaussian: std on the 0-255 scale
    band_sigma_range: tuple = (10.0, 70.0)   # mixture: per-band std range (0-255)
    impulse_ratio_range: tuple = (0.1, 0.5)
    stripe_fraction_range: tuple = (0.05, 0.15)
    stripe_offset_range: tuple = (-0.25, 0.25)
    deadline_fraction_range: tuple = (0.05, 0.15)
    deadline_width_range: tuple = (1, 3)

    def validate(self):
        if self.kind not in ("gaussian", "mixture"):
            raise DataError(f"noise kind must be gaussian or mixture, got {self.kind!r}")
        for name in ("band_sigma_range", "impulse_ratio_range", "stripe_fraction_range",
                     "deadline_fraction_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise DataError(f"noise: empty range for {name}: ({lo}, {hi})")
        for name in ("impulse_ratio_range", "stripe_fraction_range",
                     "deadline_fraction_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo and hi < 1.0):
                raise DataError(f"noise: {name} must lie inside (0, 1)")


def add_gaussian(x: np.ndarray, sigma_255: float, seed: int) -> np.ndarray:
    """y = x + eps with eps ~ N(0, (sigma/255)^2) i.i.d.; output not clamped."""
    x = np.asarray(x)
    rng = stream(seed, STREAM_NOISE, 0)
    eps = rng.normal(0.0, sigma_255 / 255.0, size=x.shape)
    return (x + eps.astype(x.dtype)).astype(x.dtype)


def partition_bands(num_bands: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random partition of band indices into three near-equal parts."""
    order = rng.permutation(num_bands)
    base, extra = divmod(num_bands, 3)
    sizes = [base + (1 if i < extra else 0) for i in range(3)]
    parts, at = [], 0
    for size in sizes:
        parts.append(np.sort(order[at:at + size]))
        at += size
    return parts


def add_mixture(x: np.ndarray, spec: NoiseSpec, seed: int):
    """Mixture degradation; returns (noisy cube, provenance dict)."""
    spec.validate()
    x = np.asarray(x)
    if x.ndim != 3:
        raise DataError(f"mixture noise: expected a rank-3 cube, got shape {x.shape}")
    h, w, bands = x.shape
    if bands < 3:
        raise DataError(f"mixture noise: need at least 3 bands, got {bands}")
    rng = stream(seed, STREAM_NOISE, 1)
    y = x.astype(np.float64).copy()
    prov: dict = {"kind": "mixture", "seed": _seed_key(seed)}

    # step 1: non-i.i.d. Gaussian on every band
    lo, hi = spec.band_sigma_range
    band_sigma = rng.uniform(lo, hi, size=bands) / 255.0
    for b in range(bands):
        y[:, :, b] += rng.normal(0.0, band_sigma[b], size=(h, w))
    prov["band_sigma"] = band_sigma.tolist()

    # step 2: partition bands; impulse / stripes / deadlines per part
    impulse, stripes, deadlines = partition_bands(bands, rng)
    prov["impulse_bands"] = impulse.tolist()
    prov["stripe_bands"] = stripes.tolist()
    prov["deadline_bands"] = deadlines.tolist()

    prov["impulse_ratio"] = {}
    for b in impulse:
        ratio = rng.uniform(*spec.impulse_ratio_range)
        mask = rng.random((h, w)) < ratio
        values = np.where(rng.random((h, w)) < 0.5, 0.0, 1.0)
        y[:, :, b] = np.where(mask, values, y[:, :, b])
        prov["impulse_ratio"][int(b)] = float(ratio)

    prov["stripe_columns"] = {}
    for b in stripes:
        frac = rng.uniform(*spec.stripe_fraction_range)
        ncols = max(1, round(frac * w))
        cols = np.sort(rng.choice(w, size=ncols, replace=False))
        offsets = rng.uniform(*spec.stripe_offset_range, size=ncols)
        for c, off in zip(cols, offsets):
            y[:, c, b] += off
        prov["stripe_columns"][int(b)] = [
            {"column": int(c), "offset": float(o)} for c, o in zip(cols, offsets)]

    prov["deadline_columns"] = {}
    for b in deadlines:
        frac = rng.uniform(*spec.deadline_fraction_range)
        ncols = max(1, round(frac * w))
        events = []
        covered = 0
        while covered < ncols:
            start = int(rng.integers(0, w))
            width = int(rng.integers(spec.deadline_width_range[0],
                                     spec.deadline_width_range[1] + 1))
            stop = min(start + width, w)
            y[:, start:stop, b] = 0.0
            events.append({"start": start, "width": stop - start})
            covered += stop - start
        prov["deadline_columns"][int(b)] = events

    return y.astype(x.dtype), prov


def _seed_key(seed):
    return list(int(s) for s in seed) if isinstance(seed, (tuple, list)) else int(seed)


def degrade(x: np.ndarray, spec: NoiseSpec, seed):
    """Apply the degradation described by spec; returns (noisy, provenance)."""
    spec.validate()
    if spec.kind == "gaussian":
        y = add_gaussian(x, spec.sigma, seed)
        return y, {"kind": "gaussian", "sigma": float(spec.sigma),
                   "seed": _seed_key(seed)}
    return add_mixture(x, spec, seed)
