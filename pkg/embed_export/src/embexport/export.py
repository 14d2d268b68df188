"""Batch export of image and text embeddings to EMB1 files."""

from __future__ import annotations

import cv2
import numpy as np

from .emb1 import write_embeddings
from .errors import InvalidManifest, IoError
from .manifest import ExportManifest


def _load_rgb(path: str) -> np.ndarray:
    bgr = cv2.imread(path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise IoError(f"cannot read image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def export_images(manifest: ExportManifest, encoder, out_path: str) -> int:
    """Encode every manifest image; returns the number of records written."""
    manifest.validate()
    records = []
    for idx, path in manifest.images:
        vec = encoder.encode_image(_load_rgb(path))
        records.append((idx, vec))
    write_embeddings(out_path, records)
    return len(records)


def export_text(prompts: list[str], encoder, out_path: str) -> int:
    """Encode prompts in order; record index is the prompt ordinal."""
    records = [(i, encoder.encode_text(p)) for i, p in enumerate(prompts)]
    write_embeddings(out_path, records)
    return len(records)
