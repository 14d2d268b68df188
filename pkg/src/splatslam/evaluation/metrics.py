"""Trajectory and image quality metrics: ATE RMSE, PSNR, SSIM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from ..errors import DimensionMismatch, NoAssociations
from ..geometry import Pose, align_trajectories

# timestamp association window, TUM convention
ASSOCIATION_WINDOW_S = 0.02


@dataclass
class MetricsReport:
    ate_rmse: float | None = None
    psnr_per_keyframe: list[float] = field(default_factory=list)
    ssim_per_keyframe: list[float] = field(default_factory=list)

    @property
    def psnr_mean(self) -> float | None:
        return float(np.mean(self.psnr_per_keyframe)) if self.psnr_per_keyframe else None

    @property
    def ssim_mean(self) -> float | None:
        return float(np.mean(self.ssim_per_keyframe)) if self.ssim_per_keyframe else None

    def format(self) -> str:
        lines = []
        if self.ate_rmse is not None:
            lines.append(f"ate_rmse {self.ate_rmse:.9g}")
        if self.psnr_per_keyframe:
            lines.append(f"psnr_mean {self.psnr_mean:.6g}")
            lines.append(f"ssim_mean {self.ssim_mean:.6g}")
            for i, (p, s) in enumerate(zip(self.psnr_per_keyframe, self.ssim_per_keyframe)):
                lines.append(f"keyframe {i} psnr {p:.6g} ssim {s:.6g}")
        return "\n".join(lines) + "\n"


def associate(times_a, times_b, window: float = ASSOCIATION_WINDOW_S):
    """Greedy nearest-timestamp association within `window` seconds."""
    times_a = np.asarray(times_a, dtype=np.float64)
    times_b = np.asarray(times_b, dtype=np.float64)
    pairs = []
    used = set()
    order = np.argsort(times_b)
    sorted_b = times_b[order]
    for i, ta in enumerate(times_a):
        k = np.searchsorted(sorted_b, ta)
        best, best_dt = None, window
        for j in (k - 1, k):
            if 0 <= j < len(sorted_b):
                dt = abs(sorted_b[j] - ta)
                jj = int(order[j])
                if dt <= best_dt and jj not in used:
                    best, best_dt = jj, dt
        if best is not None:
            used.add(best)
            pairs.append((i, best))
    return pairs


def ate_rmse(
    estimated: list[Pose],
    reference: list[Pose],
    mode: str = "similarity",
    estimated_times=None,
    reference_times=None,
) -> float:
    """RMSE of translational residuals after trajectory alignment.

    When timestamps are given, poses are associated by nearest timestamp
    within 20 ms; otherwise association is by index.
    """
    if estimated_times is not None and reference_times is not None:
        pairs = associate(estimated_times, reference_times)
        if len(pairs) < 3:
            raise NoAssociations(f"only {len(pairs)} timestamp associations")
        estimated = [estimated[i] for i, _ in pairs]
        reference = [reference[j] for _, j in pairs]
    elif len(estimated) != len(reference):
        raise NoAssociations("trajectory lengths differ and no timestamps given")
    _, _, aligned = align_trajectories(estimated, reference, mode=mode)
    err = np.array([a.t - r.t for a, r in zip(aligned, reference)])
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def psnr(rendered: np.ndarray, reference: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Returns +inf for identical images.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if rendered.shape != reference.shape:
        raise DimensionMismatch(f"{rendered.shape} vs {reference.shape}")
    mse = np.mean((rendered - reference) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter2(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # mirror boundary handling (edge sample not repeated)
    out = convolve1d(img, kernel, axis=0, mode="mirror")
    return convolve1d(out, kernel, axis=1, mode="mirror")


def ssim(
    rendered: np.ndarray,
    reference: np.ndarray,
    window_size: int = 11,
    sigma: float = 1.5,
) -> float:
    """Mean structural similarity with an 11x11 Gaussian window.

    Multi-channel images are averaged per channel. Values assumed in [0, 1].
    """
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]

    c1 = 0.01**2
    c2 = 0.03**2
    kernel = _gaussian_kernel(window_size, sigma)

    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = _filter2(x, kernel)
        mu_y = _filter2(y, kernel)
        var_x = _filter2(x * x, kernel) - mu_x**2
        var_y = _filter2(y * y, kernel) - mu_y**2
        cov = _filter2(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))
