"""Synthetic verification scenes with exact ground truth.

A scene is a set of textured rectangles (the walls of a square room) viewed
by a camera that travels a closed loop inside it. Images come from a direct
ray-cast of the rectangles, which is independent of the Gaussian rasterizer,
so map optimization is never validated against itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import InvalidSpec
from ..geometry import Intrinsics, Pose, project

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class SceneSpec:
    width: int = 128
    height: int = 128
    n_frames: int = 60
    overlap_frames: int = 6  # frames past a full turn, revisiting the start
    radius: float = 2.0  # camera circle radius
    room_half_size: float = 4.0
    wall_half_height: float = 10.0
    texture_size: int = 64
    focal: float | None = None  # defaults to image width
    fps: float = 10.0

    def __post_init__(self):
        if self.n_frames <= 0 or self.radius <= 0 or self.room_half_size <= self.radius:
            raise InvalidSpec("need n_frames > 0 and 0 < radius < room_half_size")
        if self.texture_size < 2:
            raise InvalidSpec("texture_size must be >= 2")


@dataclass
class _Rect:
    """Finite textured rectangle: p(u, v) = origin + u * eu + v * ev, u,v in [0,1]."""

    origin: np.ndarray
    eu: np.ndarray
    ev: np.ndarray
    texture: np.ndarray  # (T, T, 3) in [0, 1]

    def sample(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Bilinear texture lookup at normalized (u, v)."""
        t = self.texture
        n = t.shape[0]
        x = np.clip(u, 0.0, 1.0) * (n - 1)
        y = np.clip(v, 0.0, 1.0) * (n - 1)
        x0 = np.floor(x).astype(int)
        y0 = np.floor(y).astype(int)
        x1 = np.minimum(x0 + 1, n - 1)
        y1 = np.minimum(y0 + 1, n - 1)
        wx = (x - x0)[..., None]
        wy = (y - y0)[..., None]
        top = t[y0, x0] * (1 - wx) + t[y0, x1] * wx
        bot = t[y1, x0] * (1 - wx) + t[y1, x1] * wx
        return top * (1 - wy) + bot * wy


@dataclass
class SyntheticScene:
    spec: SceneSpec
    intrinsics: Intrinsics
    timestamps: list[float]
    poses: list[Pose]  # ground truth, camera-to-world
    images: list[np.ndarray]  # (H, W, 3) in [0, 1]
    depths: list[np.ndarray]  # (H, W) camera-frame z, +inf where no geometry
    rects: list[_Rect] = field(repr=False, default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    def depth_at(self, frame_idx: int, u: float, v: float) -> float:
        """Ground-truth depth at a (possibly fractional) pixel, nearest lookup."""
        d = self.depths[frame_idx]
        r = min(max(int(round(v)), 0), d.shape[0] - 1)
        c = min(max(int(round(u)), 0), d.shape[1] - 1)
        return float(d[r, c])

    def is_visible(self, point: np.ndarray, frame_idx: int, tol: float = 1e-3) -> bool:
        """True if a world point projects in-bounds and is not occluded."""
        pose = self.poses[frame_idx]
        p_cam = pose.apply_inverse(point)
        if p_cam[2] <= 0:
            return False
        px = project(point, pose, self.intrinsics)
        if not (0 <= px.u <= self.intrinsics.width - 1 and 0 <= px.v <= self.intrinsics.height - 1):
            return False
        surf = self.depth_at(frame_idx, px.u, px.v)
        return p_cam[2] <= surf * (1.0 + tol) + tol


def _camera_pose(theta: float, radius: float) -> Pose:
    """Camera on a circle in the world x-z plane, looking radially outward.

    World y points down (matching image v); camera axes: x right, y down,
    z forward.
    """
    right = np.array([np.cos(theta), 0.0, -np.sin(theta)])
    down = np.array([0.0, 1.0, 0.0])
    forward = np.array([np.sin(theta), 0.0, np.cos(theta)])
    R = np.stack([right, down, forward], axis=1)
    t = radius * forward
    return Pose.from_rt(R, t)


def _make_rects(spec: SceneSpec, rng: np.random.Generator) -> list[_Rect]:
    L = spec.room_half_size
    H = spec.wall_half_height
    n = spec.texture_size
    rects = []
    # four vertical walls of the room: x = ±L and z = ±L
    corners = [
        (np.array([L, -H, -L]), np.array([0.0, 0.0, 2 * L])),
        (np.array([-L, -H, -L]), np.array([0.0, 0.0, 2 * L])),
        (np.array([-L, -H, L]), np.array([2 * L, 0.0, 0.0])),
        (np.array([-L, -H, -L]), np.array([2 * L, 0.0, 0.0])),
    ]
    for origin, eu in corners:
        ev = np.array([0.0, 2 * H, 0.0])
        # band-limited texture: white noise would alias across views and is
        # not representable by a finite set of smooth primitives
        noise = rng.uniform(size=(n, n, 3))
        texture = gaussian_filter(noise, sigma=(2.0, 2.0, 0.0), mode="wrap")
        lo, hi = texture.min(), texture.max()
        texture = 0.05 + 0.9 * (texture - lo) / max(hi - lo, 1e-12)
        rects.append(_Rect(origin=origin, eu=eu, ev=ev, texture=texture))
    return rects


def _raycast(rects: list[_Rect], pose: Pose, K: Intrinsics):
    """Render one frame; returns (image, depth)."""
    H, W = K.height, K.width
    u, v = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    dirs_cam = np.stack(
        [(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1
    )
    R = pose.R
    dirs = dirs_cam @ R.T  # world-frame ray directions, z_cam-normalized
    origin = pose.t

    depth = np.full((H, W), np.inf)
    image = np.zeros((H, W, 3))
    for rect in rects:
        normal = np.cross(rect.eu, rect.ev)
        denom = dirs @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((rect.origin - origin) @ normal) / denom
            pts = origin + dirs * t[..., None]
            rel = pts - rect.origin
            uu = rel @ rect.eu / (rect.eu @ rect.eu)
            vv = rel @ rect.ev / (rect.ev @ rect.ev)
        hit = (
            (np.abs(denom) > _RAY_EPS)
            & (t > _RAY_EPS)
            & (uu >= 0) & (uu <= 1) & (vv >= 0) & (vv <= 1)
            & (t < depth)
        )
        if not hit.any():
            continue
        colors = rect.sample(uu[hit], vv[hit])
        image[hit] = colors
        depth[hit] = t[hit]  # t is camera-frame z since dirs are z-normalized
    return image, depth


def generate_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    """Deterministically build a scene, its trajectory, images and depths."""
    rng = np.random.default_rng(seed)
    rects = _make_rects(spec, rng)
    K = Intrinsics(
        fx=spec.focal or float(spec.width),
        fy=spec.focal or float(spec.width),
        cx=spec.width / 2.0,
        cy=spec.height / 2.0,
        width=spec.width,
        height=spec.height,
    )

    loop_frames = spec.n_frames - spec.overlap_frames
    if loop_frames < 2:
        raise InvalidSpec("n_frames must exceed overlap_frames by at least 2")
    thetas = [2 * np.pi * i / loop_frames for i in range(spec.n_frames)]
    poses = [_camera_pose(th, spec.radius) for th in thetas]
    timestamps = [i / spec.fps for i in range(spec.n_frames)]

    images, depths = [], []
    for pose in poses:
        img, dep = _raycast(rects, pose, K)
        images.append(img)
        depths.append(dep)

    return SyntheticScene(
        spec=spec,
        intrinsics=K,
        timestamps=timestamps,
        poses=poses,
        images=images,
        depths=depths,
        rects=rects,
    )
