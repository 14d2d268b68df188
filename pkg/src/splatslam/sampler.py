"""Patch-center selection: random bootstrap and render-guided sampling.

Render-guided sampling partitions the image into a grid, computes a
per-pixel L1 error between the current map render and the real image, and
greedily picks the worst pixel per cell while suppressing its neighbourhood,
so new patches land where the map is weakest without clustering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .geometry import Pixel


@dataclass(frozen=True)
class SamplerConfig:
    patches_per_frame: int = 96
    grid_rows: int = 4
    grid_cols: int = 6
    suppression_radius: int = 7
    border: int = 1  # keep centers at least this far from image edges

    def __post_init__(self):
        if self.patches_per_frame <= 0:
            raise ValueError("patches_per_frame must be positive")
        if self.suppression_radius < 1:
            raise ValueError("suppression_radius must be >= 1")


def random_sample(image: np.ndarray, config: SamplerConfig, rng_seed: int) -> list[Pixel]:
    """Uniform random in-bounds patch centers, deterministic per seed."""
    h, w = image.shape[:2]
    rng = np.random.default_rng(rng_seed)
    b = config.border
    us = rng.integers(b, w - b, size=config.patches_per_frame)
    vs = rng.integers(b, h - b, size=config.patches_per_frame)
    return [Pixel(float(u), float(v)) for u, v in zip(us, vs)]


def _grid_ranges(n: int, parts: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(parts)]


def render_guided_sample(
    image: np.ndarray, rendered: np.ndarray, config: SamplerConfig
) -> list[Pixel]:
    """Pick patch centers at the highest per-pixel L1 error, per grid cell.

    Each cell gets floor(n / cells) picks; leftover picks go to the cells
    with the largest total error. Within a cell the max-error pixel is taken
    and the error inside suppression_radius is zeroed, repeatedly. Ties break
    to the smallest row-major index.
    """
    if image.shape != rendered.shape:
        raise DimensionMismatch(f"{image.shape} vs {rendered.shape}")
    h, w = image.shape[:2]
    err = np.abs(np.asarray(image, dtype=np.float64) - np.asarray(rendered, dtype=np.float64))
    if err.ndim == 3:
        err = err.sum(axis=2)
    # exclude the border so no selected center is out of patch bounds
    b = config.border
    if b > 0:
        inner = err[b : h - b, b : w - b].copy()
        err = np.full_like(err, -1.0)
        err[b : h - b, b : w - b] = inner

    rows = _grid_ranges(h, config.grid_rows)
    cols = _grid_ranges(w, config.grid_cols)
    cells = [(r0, r1, c0, c1) for r0, r1 in rows for c0, c1 in cols]

    n = config.patches_per_frame
    base = n // len(cells)
    quotas = [base] * len(cells)
    leftovers = n - base * len(cells)
    if leftovers:
        totals = [np.clip(err[r0:r1, c0:c1], 0, None).sum() for r0, r1, c0, c1 in cells]
        for idx in sorted(range(len(cells)), key=lambda i: (-totals[i], i))[:leftovers]:
            quotas[idx] += 1

    rad = config.suppression_radius
    centers: list[Pixel] = []

    def suppress(rr: int, cc: int) -> None:
        err[max(0, rr - rad) : rr + rad + 1, max(0, cc - rad) : cc + rad + 1] = -1.0

    for (r0, r1, c0, c1), quota in zip(cells, quotas):
        for _ in range(quota):
            cell = err[r0:r1, c0:c1]
            if cell.max() < 0:  # cell fully suppressed; its quota spills below
                break
            flat = int(np.argmax(cell))  # first max: row-major tie-break
            rr, cc = divmod(flat, cell.shape[1])
            centers.append(Pixel(float(c0 + cc), float(r0 + rr)))
            suppress(r0 + rr, c0 + cc)

    # spill: fill up to the exact count from the best unsuppressed pixels anywhere
    while len(centers) < n and err.max() >= 0:
        flat = int(np.argmax(err))
        rr, cc = divmod(flat, err.shape[1])
        centers.append(Pixel(float(cc), float(rr)))
        suppress(rr, cc)
    # degenerate fallback: everything suppressed, size guarantee wins
    i = 0
    while len(centers) < n:
        rr, cc = divmod(i, w)
        centers.append(Pixel(float(cc), float(rr)))
        i += 1
    return centers[:n]
