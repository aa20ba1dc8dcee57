"""Synthetic clean cubes: sums of smooth 2-D Gaussian bumps whose
amplitudes are correlated across bands.  Used by the toy end-to-end runs
and handy for demos without a real dataset."""

from __future__ import annotations

import numpy as np

from .rng import STREAM_DATA, stream


def bump_cube(height: int, width: int, bands: int, rng: np.random.Generator,
              num_bumps: tuple = (3, 6)) -> np.ndarray:
    """One clean cube in [0,1] built from random smooth bumps."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cube = np.zeros((height, width, bands))
    n = int(rng.integers(num_bumps[0], num_bumps[1] + 1))
    band_axis = np.arange(bands) / max(bands - 1, 1)
    for _ in range(n):
        cy = rng.uniform(0, height)
        cx = rng.uniform(0, width)
        sig = rng.uniform(0.12, 0.35) * min(height, width)
        footprint = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig * sig))
        # smooth spectral profile: each bump glows across correlated bands
        center = rng.uniform(0, 1)
        spread = rng.uniform(0.2, 0.6)
        amp = rng.uniform(0.4, 1.0)
        spectrum = amp * np.exp(-0.5 * ((band_axis - center) / spread) ** 2)
        cube += footprint[:, :, None] * spectrum[None, None, :]
    top = cube.max()
    if top > 0:
        cube = cube / top
    return 0.05 + 0.9 * cube  # keep away from the exact 0/1 edges


def bump_dataset(count: int, height: int, width: int, bands: int, seed: int) -> list:
    """Deterministic list of clean cubes keyed by (seed, index)."""
    return [bump_cube(height, width, bands, stream(seed, STREAM_DATA, i))
            for i in range(count)]
