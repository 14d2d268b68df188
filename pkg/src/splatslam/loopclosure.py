"""Embedding-based place recognition over keyframes and text-to-trajectory query.

Keyframe descriptors are unit-norm vectors from a vision-language encoder
(delivered via the EMB1 sidecar file) or, as a built-in lower-quality
fallback, a whitened downsampled grayscale thumbnail. Loop candidates pass a
cosine-similarity threshold and an optical-flow veto; retrieval is an exact
linear scan (sufficient at this scale).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyStore,
    IoError,
    UnknownKeyframe,
    ZeroVector,
)

EMB_MAGIC = b"EMB1"
FALLBACK_DIM = 256  # 16 x 16 whitened grayscale thumbnail


@dataclass(frozen=True)
class LoopCandidate:
    query_id: int
    match_id: int
    similarity: float
    flow_magnitude: float


@dataclass(frozen=True)
class LoopConfig:
    tau_sim: float = 0.85
    tau_flow: float = 40.0
    r_recent: int = 20


class EmbeddingStore:
    """Append-only store of unit-normalized keyframe embeddings."""

    def __init__(self, dim: int | None = None):
        self.dim = dim
        self._ids: list[int] = []
        self._vectors: list[np.ndarray] = []
        self._index: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._ids)

    def ids(self) -> list[int]:
        return list(self._ids)

    def ingest(self, keyframe_id: int, raw_vector: np.ndarray) -> None:
        v = np.asarray(raw_vector, dtype=np.float64).ravel()
        if self.dim is None:
            self.dim = v.size
        if v.size != self.dim:
            raise DimensionMismatch(f"vector dim {v.size}, store dim {self.dim}")
        n = np.linalg.norm(v)
        if n == 0:
            raise ZeroVector(f"keyframe {keyframe_id}")
        if keyframe_id in self._index:
            raise DuplicateId(f"keyframe {keyframe_id} already ingested")
        self._index[keyframe_id] = len(self._ids)
        self._ids.append(keyframe_id)
        self._vectors.append(v / n)

    def vector(self, keyframe_id: int) -> np.ndarray:
        if keyframe_id not in self._index:
            raise UnknownKeyframe(str(keyframe_id))
        return self._vectors[self._index[keyframe_id]]

    def matrix(self) -> np.ndarray:
        return np.stack(self._vectors) if self._vectors else np.zeros((0, self.dim or 0))

    def detect_loops(
        self,
        query_id: int,
        config: LoopConfig,
        flow_estimator,
    ) -> list[LoopCandidate]:
        """Loop candidates for a query keyframe.

        Keeps history keyframes with id < query - r_recent whose cosine
        similarity reaches tau_sim and whose flow magnitude (from
        `flow_estimator(query_id, match_id)`) stays within tau_flow; sorted
        by similarity descending.
        """
        q = self.vector(query_id)
        out = []
        for kid in self._ids:
            if kid >= query_id - config.r_recent:
                continue
            sim = float(q @ self.vector(kid))
            if sim < config.tau_sim:
                continue
            flow = float(flow_estimator(query_id, kid))
            if flow > config.tau_flow:
                continue
            out.append(LoopCandidate(query_id, kid, sim, flow))
        out.sort(key=lambda c: (-c.similarity, c.match_id))
        return out

    def text_query(self, prompt_embedding: np.ndarray, top_k: int) -> list[tuple[int, float]]:
        """Top-k keyframes by cosine similarity to a prompt vector.

        Ties break toward the smaller keyframe id; the prompt is normalized,
        so the ranking is scale-invariant.
        """
        if not self._ids:
            raise EmptyStore("no embeddings ingested")
        p = np.asarray(prompt_embedding, dtype=np.float64).ravel()
        if p.size != self.dim:
            raise DimensionMismatch(f"prompt dim {p.size}, store dim {self.dim}")
        n = np.linalg.norm(p)
        if n == 0:
            raise ZeroVector("prompt")
        p = p / n
        scores = self.matrix() @ p
        ranked = sorted(zip(self._ids, scores), key=lambda t: (-t[1], t[0]))
        return [(int(i), float(s)) for i, s in ranked[:top_k]]


# -- flow veto ----------------------------------------------------------------


def flow_magnitude(
    image_a: np.ndarray,
    image_b: np.ndarray,
    grid: int = 8,
    template_radius: int = 4,
    search_radius: int = 6,
    min_match_fraction: float = 0.25,
    min_score: float = 0.5,
) -> float:
    """Mean sparse patch displacement between two frames.

    A global shift estimate (phase correlation) seeds per-patch NCC searches
    on a regular grid. Returns +inf when fewer than `min_match_fraction` of
    the patches find a confident match.
    """
    a = image_a.mean(axis=2).astype(np.float32) if image_a.ndim == 3 else image_a.astype(np.float32)
    b = image_b.mean(axis=2).astype(np.float32) if image_b.ndim == 3 else image_b.astype(np.float32)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    h, w = a.shape
    if a.std() < 1e-6 or b.std() < 1e-6:
        return float("inf")

    (shift_u, shift_v), _ = cv2.phaseCorrelate(a.astype(np.float64), b.astype(np.float64))

    tr, sr = template_radius, search_radius
    margin = tr + 1
    us = np.linspace(margin, w - 1 - margin, grid).round().astype(int)
    vs = np.linspace(margin, h - 1 - margin, grid).round().astype(int)
    total, matched, disp_sum = 0, 0, 0.0
    for v0 in vs:
        for u0 in us:
            total += 1
            template = a[v0 - tr : v0 + tr + 1, u0 - tr : u0 + tr + 1]
            if template.std() < 1e-6:
                continue
            gu = int(round(u0 + shift_u))
            gv = int(round(v0 + shift_v))
            wu0, wu1 = gu - sr - tr, gu + sr + tr + 1
            wv0, wv1 = gv - sr - tr, gv + sr + tr + 1
            if wu0 < 0 or wv0 < 0 or wu1 > w or wv1 > h:
                continue
            window = b[wv0:wv1, wu0:wu1]
            if window.std() < 1e-6:
                continue
            score = cv2.matchTemplate(window, template, cv2.TM_CCOEFF_NORMED)
            _, best, _, (bx, by) = cv2.minMaxLoc(score)
            if best < min_score:
                continue
            du = wu0 + tr + bx - u0
            dv = wv0 + tr + by - v0
            matched += 1
            disp_sum += float(np.hypot(du, dv))
    if total == 0 or matched / total < min_match_fraction:
        return float("inf")
    return disp_sum / matched


# -- fallback embedding -------------------------------------------------------


def perceptual_embedding(image: np.ndarray) -> np.ndarray:
    """Built-in low-fidelity image descriptor: 16x16 whitened grayscale.

    A stand-in that keeps the pipeline runnable without an external encoder;
    noticeably weaker than a learned embedding.
    """
    gray = image.mean(axis=2) if image.ndim == 3 else image
    small = cv2.resize(gray.astype(np.float32), (16, 16), interpolation=cv2.INTER_AREA)
    v = small.ravel().astype(np.float64)
    v -= v.mean()
    std = v.std()
    if std < 1e-12:
        # constant image: deterministic non-zero vector
        v = np.ones(FALLBACK_DIM)
    else:
        v /= std
    return v / np.linalg.norm(v)


# -- EMB1 sidecar file --------------------------------------------------------


def write_embeddings(path, records: list[tuple[int, np.ndarray]]) -> None:
    """Binary format: 'EMB1', u32 count, u32 dim, then (u32 index, dim f32)."""
    if records:
        dim = np.asarray(records[0][1]).size
    else:
        dim = 0
    try:
        with open(path, "wb") as f:
            f.write(EMB_MAGIC)
            f.write(struct.pack("<II", len(records), dim))
            for idx, vec in records:
                v = np.asarray(vec, dtype="<f4").ravel()
                if v.size != dim:
                    raise DimensionMismatch(f"record dim {v.size} vs header {dim}")
                f.write(struct.pack("<I", idx))
                f.write(v.tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def read_embeddings(path) -> list[tuple[int, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoError(str(e)) from e
    if data[:4] != EMB_MAGIC:
        raise IoError("bad magic, not an EMB1 file")
    count, dim = struct.unpack_from("<II", data, 4)
    rec_size = 4 + 4 * dim
    if len(data) != 12 + count * rec_size:
        raise IoError("truncated embedding file")
    out = []
    off = 12
    for _ in range(count):
        (idx,) = struct.unpack_from("<I", data, off)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off + 4).astype(np.float64)
        out.append((int(idx), vec))
        off += rec_size
    return out
