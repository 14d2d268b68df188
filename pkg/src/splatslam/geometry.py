"""Camera models, rigid transforms, projection and trajectory alignment.

Conventions:
    - Poses are camera-to-world transforms (R, t): X_world = R @ X_cam + t.
    - Quaternions are stored scalar-last [x, y, z, w] and renormalized
      after every update.
    - Pixel coordinates are continuous, origin at the top-left corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateConfiguration,
    NonPositiveDepth,
    NonPositiveInverseDepth,
)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics (no distortion)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def _normalized(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    q = q / n
    # fix the double-cover sign for reproducible storage
    if q[3] < 0:
        q = -q
    return q


@dataclass
class Pose:
    """Rigid camera-to-world transform: rotation (unit quaternion, scalar-last)
    plus translation."""

    q: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = _normalized(self.q)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()
        self._R = None  # lazily cached; q is never mutated after construction

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        q = Rotation.from_matrix(T[:3, :3]).as_quat()
        return Pose(q, T[:3, 3])

    @staticmethod
    def from_rt(R: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(Rotation.from_matrix(R).as_quat(), t)

    @property
    def R(self) -> np.ndarray:
        if self._R is None:
            self._R = Rotation.from_quat(self.q).as_matrix()
        return self._R

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`."""
        r_a = Rotation.from_quat(self.q)
        r_b = Rotation.from_quat(other.q)
        return Pose((r_a * r_b).as_quat(), r_a.apply(other.t) + self.t)

    def inverse(self) -> "Pose":
        r_inv = Rotation.from_quat(self.q).inv()
        return Pose(r_inv.as_quat(), -r_inv.apply(self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points (..., 3) from camera frame to world frame."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Transform points (..., 3) from world frame to camera frame."""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.t) @ self.R

    def retract(self, xi: np.ndarray) -> "Pose":
        """Right-multiplicative update: T <- T * Exp([dt, dw]).

        `xi` is a 6-vector, translation first, rotation (so3) last.
        """
        xi = np.asarray(xi, dtype=np.float64)
        dr = Rotation.from_rotvec(xi[3:6])
        r = Rotation.from_quat(self.q)
        return Pose((r * dr).as_quat(), self.t + r.apply(xi[:3]))

    def copy(self) -> "Pose":
        return Pose(self.q.copy(), self.t.copy())

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        dq = min(np.linalg.norm(self.q - other.q), np.linalg.norm(self.q + other.q))
        return dq < tol and np.linalg.norm(self.t - other.t) < tol


@dataclass(frozen=True)
class Pixel:
    u: float
    v: float

    def __post_init__(self):
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise ValueError("pixel coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])


def project(point: np.ndarray, pose: Pose, K: Intrinsics) -> Pixel:
    """Project a world point into a camera with the given pose."""
    p_cam = pose.apply_inverse(np.asarray(point, dtype=np.float64))
    if p_cam[2] <= 0:
        raise NonPositiveDepth(f"camera-frame depth {p_cam[2]:.6g} <= 0")
    u = K.fx * p_cam[0] / p_cam[2] + K.cx
    v = K.fy * p_cam[1] / p_cam[2] + K.cy
    return Pixel(u, v)


def backproject(pixel: Pixel, inv_depth: float, pose: Pose, K: Intrinsics) -> np.ndarray:
    """Back-project a pixel with inverse depth into a world point.

    Returns R @ [(u-cx)/(d*fx), (v-cy)/(d*fy), 1/d] + t.
    """
    if inv_depth <= 0:
        raise NonPositiveInverseDepth(f"inverse depth {inv_depth:.6g} <= 0")
    x = (pixel.u - K.cx) / (inv_depth * K.fx)
    y = (pixel.v - K.cy) / (inv_depth * K.fy)
    z = 1.0 / inv_depth
    return pose.apply(np.array([x, y, z]))


def umeyama(
    src: np.ndarray, dst: np.ndarray, with_scale: bool
) -> tuple[np.ndarray, np.ndarray, float]:
    """Closed-form least-squares similarity/rigid fit dst ≈ s * R @ src + t.

    Points are (N, 3). Returns (R, t, s).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[0] < 3:
        raise DegenerateConfiguration("need matching point sets with >= 3 points")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    x = src - mu_src
    y = dst - mu_dst

    cov = y.T @ x / src.shape[0]
    U, D, Vt = np.linalg.svd(cov)
    rank = np.sum(D > max(D.max(), 1e-300) * 1e-12)
    if rank < 2:
        raise DegenerateConfiguration("point configuration is rank-deficient")

    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt

    if with_scale:
        var_src = np.mean(np.sum(x * x, axis=1))
        if var_src <= 0:
            raise DegenerateConfiguration("zero variance in source points")
        s = np.trace(np.diag(D) @ S) / var_src
    else:
        s = 1.0
    t = mu_dst - s * R @ mu_src
    return R, t, s


def align_trajectories(
    estimated: list[Pose], reference: list[Pose], mode: str = "similarity"
) -> tuple[Pose, float, list[Pose]]:
    """Align an estimated trajectory to a reference one.

    mode 'similarity' additionally estimates a global scale (required for
    monocular trajectories); 'rigid' fixes scale at 1. Returns the correcting
    transform, the scale, and the aligned poses
    (aligned_i = s * R @ t_est_i + t with rotations composed).
    """
    if len(estimated) != len(reference):
        raise DegenerateConfiguration("trajectory lengths differ")
    if mode not in ("rigid", "similarity"):
        raise ValueError(f"unknown alignment mode {mode!r}")
    src = np.array([p.t for p in estimated])
    dst = np.array([p.t for p in reference])
    R, t, s = umeyama(src, dst, with_scale=(mode == "similarity"))
    correction = Pose.from_rt(R, t)
    rot = Rotation.from_matrix(R)
    aligned = [
        Pose((rot * Rotation.from_quat(p.q)).as_quat(), s * rot.apply(p.t) + t)
        for p in estimated
    ]
    return correction, s, aligned


def write_trajectory(path, timestamps, poses: list[Pose]) -> None:
    """Write a trajectory in TUM format: 'timestamp tx ty tz qx qy qz qw'."""
    with open(path, "w") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for ts, p in zip(timestamps, poses):
            f.write(
                f"{ts:.6f} {p.t[0]:.9f} {p.t[1]:.9f} {p.t[2]:.9f} "
                f"{p.q[0]:.9f} {p.q[1]:.9f} {p.q[2]:.9f} {p.q[3]:.9f}\n"
            )


def read_trajectory(path) -> tuple[list[float], list[Pose]]:
    """Read a TUM-format trajectory file. '#' comment lines are skipped."""
    timestamps, poses = [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise ValueError(f"expected 8 columns, got {len(vals)}: {line!r}")
            timestamps.append(vals[0])
            poses.append(Pose(np.array(vals[4:8]), np.array(vals[1:4])))
    return timestamps, poses
