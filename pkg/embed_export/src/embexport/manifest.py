"""Export manifest: which images (by keyframe index) and prompts to encode."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import yaml

from .errors import InvalidManifest


@dataclass
class ExportManifest:
    images: list[tuple[int, str]] = field(default_factory=list)  # (keyframe index, path)
    prompts: list[str] = field(default_factory=list)
    output: str | None = None

    def validate(self) -> None:
        indices = [i for i, _ in self.images]
        if len(indices) != len(set(indices)):
            raise InvalidManifest("duplicate keyframe indices")
        for i, path in self.images:
            if i < 0:
                raise InvalidManifest(f"negative keyframe index {i}")
            if not os.path.isfile(path):
                raise InvalidManifest(f"image not found: {path}")


def load_manifest(path: str) -> ExportManifest:
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise InvalidManifest(str(e)) from e
    if not isinstance(data, dict):
        raise InvalidManifest("manifest root must be a mapping")
    base = os.path.dirname(os.path.abspath(path))
    images = []
    for entry in data.get("images", []) or []:
        if not isinstance(entry, dict) or "index" not in entry or "path" not in entry:
            raise InvalidManifest(f"image entry needs index and path: {entry!r}")
        p = entry["path"]
        if not os.path.isabs(p):
            p = os.path.join(base, p)
        images.append((int(entry["index"]), p))
    prompts = [str(p) for p in data.get("prompts", []) or []]
    m = ExportManifest(images=images, prompts=prompts, output=data.get("output"))
    m.validate()
    return m
