"""Persistent back-end graph: loop edges, subgraph partition, global DBA.

The back-end mirrors the front-end's frames and patches (shared objects) but
keeps every edge between surviving keyframes regardless of age, and is the
only place loop edges live. For optimization its edges are partitioned by
the source frame of each edge's patch; a deterministic provider is evaluated
per partition batch and the results spliced into one joint solve, which is
exactly equivalent to the unbatched evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RecencyViolation
from .frontend import (
    DbaResult,
    Frame,
    FrontEndGraph,
    GraphEdge,
    GraphListener,
    Patch,
    solve_dba,
)
from .geometry import Intrinsics


@dataclass
class BackendConfig:
    edge_budget: int = 4096
    global_iters: int = 4
    r_recent: int = 20


@dataclass
class Subgraph:
    source_frame: int
    edges: list[GraphEdge]

    @property
    def frame_ids(self) -> set[int]:
        return {e.target_frame_id for e in self.edges} | {self.source_frame}

    @property
    def patch_ids(self) -> set[int]:
        return {e.patch_id for e in self.edges}


class BackEndGraph(GraphListener):
    """Mirror of the front-end graph without window-based edge removal."""

    def __init__(self, K: Intrinsics, config: BackendConfig | None = None):
        self.K = K
        self.config = config or BackendConfig()
        self.frames: dict[int, Frame] = {}
        self.patches: dict[int, Patch] = {}
        self.edges: dict[tuple[int, int], GraphEdge] = {}

    def attach(self, frontend: FrontEndGraph) -> None:
        frontend.listener = self

    def reproject(self, patch: Patch, target: Frame):
        return FrontEndGraph.reproject(self, patch, target)

    # -- mirrored events ------------------------------------------------------

    def on_frame_added(self, graph, frame, patches, edges) -> None:
        self.frames[frame.id] = frame
        for p in patches:
            self.patches[p.patch_id] = p
        for e in edges:
            self.edges[(e.patch_id, e.target_frame_id)] = e

    def on_nonkeyframe_deleted(self, graph, frame_id: int) -> None:
        dead = {p.patch_id for p in self.patches.values() if p.source_frame == frame_id}
        for key in list(self.edges):
            pid, target = key
            if pid in dead or target == frame_id:
                del self.edges[key]
        for pid in dead:
            del self.patches[pid]
        self.frames.pop(frame_id, None)

    def on_keyframe_flag(self, graph, frame_id, is_keyframe) -> None:
        pass  # shared Frame objects already carry the flag

    # -- loop edges -----------------------------------------------------------

    def add_loop_edges(self, query_keyframe: int, loop_frames: list[int]) -> int:
        """Bidirectional patch-frame edges between a keyframe and its loop
        matches; idempotent. Returns the number of edges actually added."""
        added = 0
        for j in loop_frames:
            if j >= query_keyframe - self.config.r_recent:
                raise RecencyViolation(
                    f"loop frame {j} within r_recent of {query_keyframe}"
                )
            for src, dst in ((query_keyframe, j), (j, query_keyframe)):
                for p in self.patches.values():
                    if p.source_frame != src:
                        continue
                    key = (p.patch_id, dst)
                    if key in self.edges:
                        continue
                    self.edges[key] = GraphEdge(
                        p.patch_id, dst, created_at=query_keyframe
                    )
                    added += 1
        return added

    # -- partition and global solve ------------------------------------------

    def partition(self, edge_budget: int | None = None) -> list[Subgraph]:
        """Edge-disjoint, jointly exhaustive grouping by patch source frame,
        ascending, with oversized groups split to the edge budget."""
        budget = edge_budget if edge_budget is not None else self.config.edge_budget
        groups: dict[int, list[GraphEdge]] = {}
        for (pid, _), e in sorted(self.edges.items()):
            src = self.patches[pid].source_frame
            groups.setdefault(src, []).append(e)
        out = []
        for src in sorted(groups):
            edges = groups[src]
            if budget is None or budget <= 0 or not np.isfinite(budget):
                out.append(Subgraph(src, edges))
                continue
            for i in range(0, len(edges), int(budget)):
                out.append(Subgraph(src, edges[i : i + int(budget)]))
        return out

    def global_optimize(
        self,
        provider,
        iterations: int | None = None,
        edge_budget: int | None = None,
    ) -> DbaResult:
        """Provider evaluation per partition batch, spliced into one joint DBA
        solve over all keyframe poses (first pose anchored) and patch depths."""
        if len(self.frames) < 2:
            return DbaResult()
        for part in self.partition(edge_budget):
            provider.populate(self, part.edges)
        ids = sorted(self.frames)
        free_poses = ids[1:]  # anchor the earliest keyframe
        free_patches = sorted(self.patches)
        return solve_dba(
            self,
            free_poses,
            free_patches,
            iterations=iterations if iterations is not None else self.config.global_iters,
        )
