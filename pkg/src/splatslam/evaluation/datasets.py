"""Dataset loaders: TUM RGB(-D) index files and plain image directories.

Depth channels are ignored throughout; the system is monocular.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

from ..errors import MalformedIndex, MissingImage
from ..geometry import Pose, read_trajectory

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class FrameStream:
    timestamps: list[float]
    image_paths: list[str]
    resolution: tuple[int, int]  # (width, height)
    gt_timestamps: list[float] | None = None
    gt_poses: list[Pose] | None = None

    def __len__(self) -> int:
        return len(self.timestamps)

    def load_image(self, idx: int) -> np.ndarray:
        """Load frame `idx` as float RGB in [0, 1] at the configured resolution."""
        path = self.image_paths[idx]
        img = cv2.imread(path, cv2.IMREAD_COLOR)
        if img is None:
            raise MissingImage(path)
        w, h = self.resolution
        if (img.shape[1], img.shape[0]) != (w, h):
            img = cv2.resize(img, (w, h), interpolation=cv2.INTER_AREA)
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0

    def __iter__(self):
        for i in range(len(self)):
            yield self.timestamps[i], self.load_image(i)


def _read_tum_index(path: str) -> list[tuple[float, str]]:
    entries = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise MalformedIndex(f"bad line in {path}: {line!r}")
            entries.append((float(parts[0]), parts[1]))
    entries.sort(key=lambda e: e[0])
    return entries


def load_dataset(
    path: str, fmt: str = "tum_rgb", resolution: tuple[int, int] = (640, 480), fps: float = 30.0
) -> FrameStream:
    """Open a dataset directory as an ordered (timestamp, image) stream.

    fmt 'tum_rgb' expects rgb.txt ('timestamp path') and, optionally,
    groundtruth.txt in TUM trajectory format. fmt 'image_dir' takes
    lexicographically sorted image files with timestamps index / fps.
    """
    if not os.path.isdir(path):
        raise MalformedIndex(f"not a directory: {path}")

    if fmt == "tum_rgb":
        index = os.path.join(path, "rgb.txt")
        if not os.path.isfile(index):
            raise MalformedIndex(f"missing rgb.txt in {path}")
        entries = _read_tum_index(index)
        timestamps = [t for t, _ in entries]
        image_paths = [os.path.join(path, rel) for _, rel in entries]
    elif fmt == "image_dir":
        names = sorted(
            n for n in os.listdir(path) if n.lower().endswith(IMAGE_EXTENSIONS)
        )
        if not names:
            raise MalformedIndex(f"no images in {path}")
        timestamps = [i / fps for i in range(len(names))]
        image_paths = [os.path.join(path, n) for n in names]
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")

    for p in image_paths:
        if not os.path.isfile(p):
            raise MissingImage(p)

    gt_times, gt_poses = None, None
    gt_file = os.path.join(path, "groundtruth.txt")
    if os.path.isfile(gt_file):
        gt_times, gt_poses = read_trajectory(gt_file)

    return FrameStream(
        timestamps=timestamps,
        image_paths=image_paths,
        resolution=resolution,
        gt_timestamps=gt_times,
        gt_poses=gt_poses,
    )
