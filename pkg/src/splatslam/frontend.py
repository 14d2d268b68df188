"""Windowed patch-graph odometry: bipartite patch-frame graph and the DBA solver.

The graph connects patches (pixel center + one inverse depth) to frames.
A pluggable correspondence provider fills per-edge residuals and confidence
weights; solve_dba then runs damped Gauss-Newton on the weighted reprojection
objective, eliminating patch depths with a Schur complement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import BehindCamera, DimensionMismatch
from .geometry import Intrinsics, Pixel, Pose, backproject, project
from .sampler import SamplerConfig, random_sample

INV_DEPTH_MIN = 1e-4
INV_DEPTH_MAX = 1e3
PATCH_EXTENT = 3


@dataclass
class FrontendConfig:
    patches_per_frame: int = 96
    optimization_window: int = 10
    removal_window: int = 22
    keyframe_flow_px: float = 16.0
    seed: int = 0


@dataclass
class Frame:
    id: int
    image: np.ndarray
    pose: Pose
    timestamp: float
    is_keyframe: bool = True
    fixed: bool = False


@dataclass
class Patch:
    patch_id: int
    source_frame: int
    center: Pixel
    inv_depth: float
    extent: int = PATCH_EXTENT


@dataclass
class GraphEdge:
    patch_id: int
    target_frame_id: int
    residual: np.ndarray = field(default_factory=lambda: np.zeros(2))
    weight: np.ndarray = field(default_factory=lambda: np.zeros(2))
    created_at: int = 0


class GraphListener:
    """Mirror hook for the back-end; all callbacks optional."""

    def on_frame_added(self, graph, frame, patches, edges):  # pragma: no cover
        pass

    def on_nonkeyframe_deleted(self, graph, frame_id):  # pragma: no cover
        pass

    def on_keyframe_flag(self, graph, frame_id, is_keyframe):  # pragma: no cover
        pass


class FrontEndGraph:
    """Single-writer bipartite patch-frame graph with a sliding window."""

    def __init__(self, K: Intrinsics, config: FrontendConfig | None = None):
        self.K = K
        self.config = config or FrontendConfig()
        self.frames: dict[int, Frame] = {}
        self.patches: dict[int, Patch] = {}
        self.edges: dict[tuple[int, int], GraphEdge] = {}
        self.listener: GraphListener | None = None
        self._next_frame_id = 0
        self._next_patch_id = 0

    # -- structure ------------------------------------------------------------

    def frame_ids(self) -> list[int]:
        return sorted(self.frames)

    def window_ids(self) -> list[int]:
        return self.frame_ids()[-self.config.optimization_window :]

    def patches_of(self, frame_id: int) -> list[Patch]:
        return [p for p in self.patches.values() if p.source_frame == frame_id]

    def edges_of_patch(self, patch_id: int) -> list[GraphEdge]:
        return [e for (pid, _), e in self.edges.items() if pid == patch_id]

    def add_frame(
        self,
        image: np.ndarray,
        timestamp: float,
        initial_pose_guess: Pose | None = None,
        centers: list[Pixel] | None = None,
    ) -> int:
        """Append a frame, sample its patches, and wire window edges.

        Pose initialization is constant-motion extrapolation from the two
        previous frames (identity for the first two) unless a guess is given.
        """
        if image.shape[0] != self.K.height or image.shape[1] != self.K.width:
            raise DimensionMismatch(
                f"image {image.shape[:2]} vs configured {(self.K.height, self.K.width)}"
            )
        fid = self._next_frame_id
        self._next_frame_id += 1

        if initial_pose_guess is not None:
            pose = initial_pose_guess.copy()
        else:
            ids = self.frame_ids()
            if len(ids) >= 2:
                p_prev, p_last = self.frames[ids[-2]].pose, self.frames[ids[-1]].pose
                pose = p_last.compose(p_prev.inverse().compose(p_last))
            elif ids:
                pose = self.frames[ids[-1]].pose.copy()
            else:
                pose = Pose.identity()

        window = self.window_ids()  # window before insertion: frames to connect to
        frame = Frame(id=fid, image=image, pose=pose, timestamp=timestamp)
        self.frames[fid] = frame

        if centers is None:
            scfg = SamplerConfig(
                patches_per_frame=self.config.patches_per_frame,
                border=PATCH_EXTENT // 2 + 1,
            )
            centers = random_sample(image, scfg, rng_seed=self.config.seed + fid)

        prev_depths = [
            p.inv_depth for p in self.patches.values()
            if window and p.source_frame == window[-1]
        ]
        init_d = float(np.median(prev_depths)) if prev_depths else 1.0

        new_patches = []
        for c in centers:
            patch = Patch(
                patch_id=self._next_patch_id, source_frame=fid, center=c, inv_depth=init_d
            )
            self._next_patch_id += 1
            self.patches[patch.patch_id] = patch
            new_patches.append(patch)

        new_edges = []
        for target in window:
            for patch in new_patches:
                e = GraphEdge(patch.patch_id, target, created_at=fid)
                self.edges[(patch.patch_id, target)] = e
                new_edges.append(e)
            for patch in self.patches_of(target):
                e = GraphEdge(patch.patch_id, fid, created_at=fid)
                self.edges[(patch.patch_id, fid)] = e
                new_edges.append(e)

        if self.listener is not None:
            self.listener.on_frame_added(self, frame, new_patches, new_edges)
        return fid

    def mark_keyframe(self, frame_id: int, is_keyframe: bool) -> None:
        self.frames[frame_id].is_keyframe = is_keyframe
        if self.listener is not None:
            self.listener.on_keyframe_flag(self, frame_id, is_keyframe)

    def reproject(self, patch: Patch, target: Frame) -> Pixel:
        """Patch-center reprojection into a target frame."""
        src = self.frames[patch.source_frame]
        point = backproject(patch.center, patch.inv_depth, src.pose, self.K)
        p_cam = target.pose.apply_inverse(point)
        if p_cam[2] <= 0:
            raise BehindCamera(
                f"patch {patch.patch_id} behind frame {target.id} (z={p_cam[2]:.4g})"
            )
        return project(point, target.pose, self.K)

    def retire_frames(self) -> None:
        """Freeze poses outside the window, drop non-keyframes, age out edges."""
        ids = self.frame_ids()
        if not ids:
            return
        window = set(self.window_ids())
        latest = ids[-1]

        for fid in ids:
            if fid not in window:
                self.frames[fid].fixed = True

        for fid in list(self.frames):
            if fid in window or self.frames[fid].is_keyframe:
                continue
            self._delete_frame(fid)
            if self.listener is not None:
                self.listener.on_nonkeyframe_deleted(self, fid)

        for key, e in list(self.edges.items()):
            if latest - e.created_at > self.config.removal_window:
                del self.edges[key]

    def _delete_frame(self, fid: int) -> None:
        dead_patches = {p.patch_id for p in self.patches_of(fid)}
        for key in list(self.edges):
            pid, target = key
            if pid in dead_patches or target == fid:
                del self.edges[key]
        for pid in dead_patches:
            del self.patches[pid]
        del self.frames[fid]


# -- correspondence providers -------------------------------------------------


class CorrespondenceProvider:
    """Behavioral contract: deterministic per-edge (residual, weight)."""

    def predict(self, graph: FrontEndGraph, edges: list[GraphEdge]):
        raise NotImplementedError

    def populate(self, graph: FrontEndGraph, edges: list[GraphEdge] | None = None) -> None:
        edges = list(graph.edges.values()) if edges is None else edges
        residuals, weights = self.predict(graph, edges)
        for e, r, w in zip(edges, residuals, weights):
            e.residual = np.asarray(r, dtype=np.float64)
            e.weight = np.asarray(w, dtype=np.float64)


def _current_reprojection(graph: FrontEndGraph, edge: GraphEdge):
    patch = graph.patches[edge.patch_id]
    target = graph.frames[edge.target_frame_id]
    try:
        return graph.reproject(patch, target)
    except BehindCamera:
        return None


class OracleProvider(CorrespondenceProvider):
    """Ground-truth correspondences from a synthetic scene.

    Residual = true reprojection - current reprojection; weight is (1,1) for
    patches visible in both frames and (0,0) otherwise. Optionally injects a
    deterministic per-target-frame pixel bias on short-range sliding-window
    edges to emulate odometric drift; long-range (loop) edges and refinement
    passes over a persistent graph stay exact.
    """

    def __init__(self, scene, drift_px: float = 0.0, drift_range: int | None = None):
        self.scene = scene
        self.drift_px = drift_px
        self.drift_range = drift_range
        self._points: dict[int, np.ndarray | None] = {}

    def _gt_point(self, graph: FrontEndGraph, patch: Patch):
        if patch.patch_id not in self._points:
            depth = self.scene.depth_at(patch.source_frame, patch.center.u, patch.center.v)
            if not np.isfinite(depth) or depth <= 0:
                self._points[patch.patch_id] = None
            else:
                self._points[patch.patch_id] = backproject(
                    patch.center, 1.0 / depth,
                    self.scene.poses[patch.source_frame], self.scene.intrinsics,
                )
        return self._points[patch.patch_id]

    def predict(self, graph: FrontEndGraph, edges: list[GraphEdge]):
        n = len(edges)
        residuals = np.zeros((n, 2))
        weights = np.zeros((n, 2))
        if n == 0:
            return residuals, weights
        K = self.scene.intrinsics

        points = np.zeros((n, 3))
        have_point = np.zeros(n, dtype=bool)
        src = np.zeros(n, dtype=int)
        tgt = np.zeros(n, dtype=int)
        for i, e in enumerate(edges):
            patch = graph.patches[e.patch_id]
            src[i], tgt[i] = patch.source_frame, e.target_frame_id
            p = self._gt_point(graph, patch)
            if p is not None:
                points[i] = p
                have_point[i] = True

        # current reprojection under the estimated state
        ea = _EdgeArrays(graph, edges)
        frame_ids = sorted({int(f) for f in np.concatenate([ea.src, ea.tgt])})
        patch_ids = sorted({int(p) for p in ea.pid})
        R, t, d = _gather_state(graph, frame_ids, patch_ids)
        cur, *_, cur_front, _, _ = _reproject_all(ea, R, t, d, K)

        # ground-truth projection into the target frame
        R_gt = np.stack([self.scene.poses[j].R for j in tgt])
        t_gt = np.stack([self.scene.poses[j].t for j in tgt])
        Y = np.einsum("eji,ej->ei", R_gt, points - t_gt)
        z = Y[:, 2]
        gt_front = z > 1e-6
        zs = np.where(gt_front, z, 1.0)
        gu = K.fx * Y[:, 0] / zs + K.cx
        gv = K.fy * Y[:, 1] / zs + K.cy
        in_bounds = (gu >= 0) & (gu <= K.width - 1) & (gv >= 0) & (gv <= K.height - 1)

        ok = have_point & cur_front & gt_front & in_bounds
        # occlusion: compare against the target frame's ground-truth depth
        rows = np.clip(np.round(gv).astype(int), 0, K.height - 1)
        cols = np.clip(np.round(gu).astype(int), 0, K.width - 1)
        for j in np.unique(tgt[ok]):
            m = ok & (tgt == j)
            surf = self.scene.depths[j][rows[m], cols[m]]
            ok[np.flatnonzero(m)[~(z[m] <= surf * 1.001 + 1e-3)]] = False

        residuals[ok, 0] = gu[ok] - cur[ok, 0]
        residuals[ok, 1] = gv[ok] - cur[ok, 1]
        # drift emulates odometric error in the tracking front end; refinement
        # passes over a persistent (back-end) graph get exact correspondences,
        # which is what lets loop-driven global optimization undo the drift
        if self.drift_px != 0.0 and hasattr(graph, "window_ids"):
            biased = ok.copy()
            if self.drift_range is not None:
                biased &= np.abs(tgt - src) <= self.drift_range
            phi = 2 * np.pi * ((tgt * 0.6180339887498949) % 1.0)
            residuals[biased, 0] += self.drift_px * np.cos(phi[biased])
            residuals[biased, 1] += self.drift_px * np.sin(phi[biased])
        weights[ok] = 1.0
        return residuals, weights


class MatcherProvider(CorrespondenceProvider):
    """Classical NCC patch matcher around the predicted reprojection."""

    def __init__(self, template_radius: int = 3, search_radius: int = 8,
                 min_score: float = 0.3):
        self.template_radius = template_radius
        self.search_radius = search_radius
        self.min_score = min_score

    @staticmethod
    def _gray(image: np.ndarray) -> np.ndarray:
        if image.ndim == 3:
            return image.mean(axis=2).astype(np.float32)
        return image.astype(np.float32)

    def _match(self, src_img, tgt_img, center: Pixel, guess: Pixel):
        tr, sr = self.template_radius, self.search_radius
        h, w = src_img.shape
        cu, cv_ = int(round(center.u)), int(round(center.v))
        if not (tr <= cu < w - tr and tr <= cv_ < h - tr):
            return None
        template = src_img[cv_ - tr : cv_ + tr + 1, cu - tr : cu + tr + 1]
        if template.std() < 1e-6:
            return None
        gu, gv = int(round(guess.u)), int(round(guess.v))
        u0, u1 = gu - sr - tr, gu + sr + tr + 1
        v0, v1 = gv - sr - tr, gv + sr + tr + 1
        if u0 < 0 or v0 < 0 or u1 > w or v1 > h:
            return None
        window = tgt_img[v0:v1, u0:u1]
        if window.std() < 1e-6:
            return None
        score = cv2.matchTemplate(window, template, cv2.TM_CCOEFF_NORMED)
        _, best, _, loc = cv2.minMaxLoc(score)
        bx, by = loc
        # subpixel refinement: parabola fit on the score surface
        du = dv = 0.0
        if 0 < bx < score.shape[1] - 1:
            l, c, r = score[by, bx - 1], score[by, bx], score[by, bx + 1]
            den = l - 2 * c + r
            if den < -1e-12:
                du = float(np.clip(0.5 * (l - r) / den, -0.5, 0.5))
        if 0 < by < score.shape[0] - 1:
            l, c, r = score[by - 1, bx], score[by, bx], score[by + 1, bx]
            den = l - 2 * c + r
            if den < -1e-12:
                dv = float(np.clip(0.5 * (l - r) / den, -0.5, 0.5))
        matched = Pixel(u0 + tr + bx + du, v0 + tr + by + dv)
        return matched, float(best)

    def score_to_weight(self, score: float) -> float:
        return float(np.clip((score - self.min_score) / (1.0 - self.min_score), 0.0, 1.0))

    def predict(self, graph: FrontEndGraph, edges: list[GraphEdge]):
        residuals = np.zeros((len(edges), 2))
        weights = np.zeros((len(edges), 2))
        grays: dict[int, np.ndarray] = {}
        for i, e in enumerate(edges):
            patch = graph.patches[e.patch_id]
            cur = _current_reprojection(graph, e)
            if cur is None:
                continue
            for fid in (patch.source_frame, e.target_frame_id):
                if fid not in grays:
                    grays[fid] = self._gray(graph.frames[fid].image)
            result = self._match(
                grays[patch.source_frame], grays[e.target_frame_id], patch.center, cur
            )
            if result is None:
                continue
            matched, score = result
            w = self.score_to_weight(score)
            if w <= 0:
                continue
            residuals[i] = [matched.u - cur.u, matched.v - cur.v]
            weights[i] = [w, w]
        return residuals, weights


# -- solver -------------------------------------------------------------------


@dataclass
class DbaResult:
    iterations: int = 0
    initial_objective: float = 0.0
    final_objective: float = 0.0
    singular: bool = False
    message: str = ""


def _hat(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


class _EdgeArrays:
    """Flat per-edge views used by the vectorized solver."""

    def __init__(self, graph: FrontEndGraph, edges: list[GraphEdge]):
        self.edges = edges
        self.src = np.array([graph.patches[e.patch_id].source_frame for e in edges], dtype=int)
        self.tgt = np.array([e.target_frame_id for e in edges], dtype=int)
        self.pid = np.array([e.patch_id for e in edges], dtype=int)
        self.center = np.array(
            [[graph.patches[e.patch_id].center.u, graph.patches[e.patch_id].center.v] for e in edges]
        )
        self.weight = np.array([e.weight for e in edges], dtype=np.float64)
        self.residual = np.array([e.residual for e in edges], dtype=np.float64)


def _gather_state(graph: FrontEndGraph, frame_ids, patch_ids):
    R = {f: graph.frames[f].pose.R for f in frame_ids}
    t = {f: graph.frames[f].pose.t for f in frame_ids}
    d = {p: graph.patches[p].inv_depth for p in patch_ids}
    return R, t, d


def _reproject_all(ea: _EdgeArrays, R, t, d, K: Intrinsics):
    """Vectorized reprojection; returns (pred (E,2), x_c, X, Y, z, in_front)."""
    depths = np.array([d[p] for p in ea.pid])
    xc = np.stack(
        [
            (ea.center[:, 0] - K.cx) / (depths * K.fx),
            (ea.center[:, 1] - K.cy) / (depths * K.fy),
            1.0 / depths,
        ],
        axis=-1,
    )
    Ri = np.stack([R[f] for f in ea.src])
    ti = np.stack([t[f] for f in ea.src])
    Rj = np.stack([R[f] for f in ea.tgt])
    tj = np.stack([t[f] for f in ea.tgt])
    X = np.einsum("eij,ej->ei", Ri, xc) + ti
    Y = np.einsum("eji,ej->ei", Rj, X - tj)  # R_j^T (X - t_j)
    z = Y[:, 2]
    in_front = z > 1e-6
    zs = np.where(in_front, z, 1.0)
    pred = np.stack(
        [K.fx * Y[:, 0] / zs + K.cx, K.fy * Y[:, 1] / zs + K.cy], axis=-1
    )
    return pred, xc, X, Y, z, in_front, Ri, Rj


def solve_dba(
    graph: FrontEndGraph,
    free_pose_ids: list[int],
    free_patch_ids: list[int],
    iterations: int = 4,
    lm_lambda: float = 1e-4,
) -> DbaResult:
    """Damped Gauss-Newton on the weighted reprojection objective.

    Targets are frozen at call entry as (current reprojection + provided
    residual). Patch inverse depths are eliminated by a Schur complement;
    pose updates happen on the local tangent space, depths are clamped to
    [1e-4, 1e3]. Poses outside `free_pose_ids` are the gauge anchor and are
    never touched.
    """
    edges = [e for e in graph.edges.values() if np.any(e.weight > 0)]
    result = DbaResult()
    if not edges or iterations <= 0:
        return result

    K = graph.K
    ea = _EdgeArrays(graph, edges)
    frame_ids = sorted(set(ea.src) | set(ea.tgt))
    patch_ids = sorted(set(ea.pid))
    # a free variable with no weighted edge has zero gradient; drop it so the
    # normal equations stay well sized
    free_poses = [f for f in free_pose_ids if f in graph.frames and f in set(frame_ids)]
    free_patches = [p for p in free_patch_ids if p in graph.patches and p in set(patch_ids)]
    pose_slot = {f: i for i, f in enumerate(free_poses)}
    depth_slot = {p: i for i, p in enumerate(free_patches)}
    n_p, n_d = len(free_poses), len(free_patches)
    if n_p == 0 and n_d == 0:
        return result

    R, t, d = _gather_state(graph, frame_ids, patch_ids)
    pred0, *_ , in_front0, _, _ = _reproject_all(ea, R, t, d, K)
    w = np.where(in_front0[:, None], ea.weight, 0.0)
    target = pred0 + ea.residual

    si = np.array([pose_slot.get(f, -1) for f in ea.src])
    sj = np.array([pose_slot.get(f, -1) for f in ea.tgt])
    sd = np.array([depth_slot.get(p, -1) for p in ea.pid])

    def objective(R, t, d):
        pred, *_, in_front, _, _ = _reproject_all(ea, R, t, d, K)
        e = pred - target
        wv = np.where(in_front[:, None], w, 0.0)
        return float(np.sum(wv * e * e))

    obj = objective(R, t, d)
    result.initial_objective = obj
    lam = lm_lambda

    for it in range(iterations):
        pred, xc, X, Y, z, in_front, Ri, Rj = _reproject_all(ea, R, t, d, K)
        e_vec = pred - target
        wv = np.where(in_front[:, None], w, 0.0)
        zs = np.where(in_front, z, 1.0)

        zero = np.zeros_like(zs)
        dpi_dY = np.stack(
            [
                np.stack([K.fx / zs, zero, -K.fx * Y[:, 0] / zs**2], axis=-1),
                np.stack([zero, K.fy / zs, -K.fy * Y[:, 1] / zs**2], axis=-1),
            ],
            axis=1,
        )  # (E, 2, 3)

        RjT = np.transpose(Rj, (0, 2, 1))
        A = dpi_dY @ RjT  # d pixel / d X, (E, 2, 3)

        # source pose: X = T_i Exp(xi) . x_c  ->  dX/dxi = R_i [I | -hat(x_c)]
        Ji = np.concatenate([A @ Ri, -(A @ Ri) @ _hat(xc)], axis=2)  # (E, 2, 6)
        # target pose: Y = Exp(-xi) T_j^-1 X  ->  dY/dxi = [-I | hat(Y)]
        Jj = np.concatenate([-dpi_dY, dpi_dY @ _hat(Y)], axis=2)
        # inverse depth: dx_c/dd = -x_c / d
        depths = np.array([d[p] for p in ea.pid])
        Jd = np.einsum("eij,ej->ei", A @ Ri, -xc / depths[:, None])[:, :, None]

        # assemble the weighted normal equations
        Np6 = n_p * 6
        Hpp = np.zeros((Np6, Np6))
        Hpd = np.zeros((Np6, max(n_d, 1)))
        Hdd = np.zeros(max(n_d, 1))
        bp = np.zeros(Np6)
        bd = np.zeros(max(n_d, 1))

        def add_pose_pose(Ja, sa, Jb, sb):
            m = (sa >= 0) & (sb >= 0)
            if not m.any():
                return
            blocks = np.einsum("eri,er,erj->eij", Ja[m], wv[m], Jb[m])
            rows = (sa[m, None] * 6 + np.arange(6)[None, :])  # (E, 6)
            cols = (sb[m, None] * 6 + np.arange(6)[None, :])
            flat = (rows[:, :, None] * Np6 + cols[:, None, :]).ravel()
            np.add.at(Hpp.reshape(-1), flat, blocks.ravel())

        def add_pose_depth(Ja, sa):
            m = (sa >= 0) & (sd >= 0)
            if not m.any():
                return
            blocks = np.einsum("eri,er,erj->eij", Ja[m], wv[m], Jd[m]).reshape(-1, 6)
            rows = sa[m, None] * 6 + np.arange(6)[None, :]
            cols = sd[m]
            flat = (rows * max(n_d, 1) + cols[:, None]).ravel()
            np.add.at(Hpd.reshape(-1), flat, blocks.ravel())

        def add_pose_b(Ja, sa):
            m = sa >= 0
            if not m.any():
                return
            vals = np.einsum("eri,er->ei", Ja[m], wv[m] * e_vec[m])
            rows = (sa[m, None] * 6 + np.arange(6)[None, :]).ravel()
            np.add.at(bp, rows, vals.ravel())

        add_pose_pose(Ji, si, Ji, si)
        add_pose_pose(Ji, si, Jj, sj)
        add_pose_pose(Jj, sj, Ji, si)
        add_pose_pose(Jj, sj, Jj, sj)
        add_pose_depth(Ji, si)
        add_pose_depth(Jj, sj)
        add_pose_b(Ji, si)
        add_pose_b(Jj, sj)

        md = sd >= 0
        if md.any():
            np.add.at(
                Hdd, sd[md],
                np.einsum("eri,er,erj->e", Jd[md], wv[md], Jd[md]),
            )
            np.add.at(
                bd, sd[md], np.einsum("eri,er->e", Jd[md], wv[md] * e_vec[md])
            )

        stepped = False
        for _ in range(10):
            Hpp_d = Hpp + lam * np.diag(np.diag(Hpp)) + 1e-10 * np.eye(Np6)
            Hdd_d = Hdd * (1.0 + lam) + 1e-10
            try:
                if n_d > 0:
                    Hpd_scaled = Hpd / Hdd_d[None, :]
                    S = Hpp_d - Hpd_scaled @ Hpd.T
                    rhs = -bp + Hpd_scaled @ bd
                    dx_p = np.linalg.solve(S, rhs) if n_p else np.zeros(0)
                    dx_d = (-bd - (Hpd.T @ dx_p if n_p else 0.0)) / Hdd_d
                else:
                    dx_p = np.linalg.solve(Hpp_d, -bp) if n_p else np.zeros(0)
                    dx_d = np.zeros(0)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not (np.all(np.isfinite(dx_p)) and np.all(np.isfinite(dx_d))):
                lam *= 10.0
                continue

            R_new, t_new, d_new = dict(R), dict(t), dict(d)
            for f, slot in pose_slot.items():
                p_new = Pose.from_rt(R[f], t[f]).retract(dx_p[slot * 6 : slot * 6 + 6])
                R_new[f], t_new[f] = p_new.R, p_new.t
            for p, slot in depth_slot.items():
                d_new[p] = float(np.clip(d[p] + dx_d[slot], INV_DEPTH_MIN, INV_DEPTH_MAX))

            new_obj = objective(R_new, t_new, d_new)
            if new_obj <= obj + 1e-15:
                R, t, d = R_new, t_new, d_new
                obj = new_obj
                lam = max(lam * 0.3, 1e-10)
                stepped = True
                break
            lam *= 10.0
        if not stepped:
            result.singular = True
            result.message = f"no acceptable step at iteration {it}"
            break
        result.iterations = it + 1

    # commit
    for f in free_poses:
        graph.frames[f].pose = Pose.from_rt(R[f], t[f])
    for p in free_patches:
        graph.patches[p].inv_depth = d[p]
    result.final_objective = obj
    return result


def mean_flow(graph: FrontEndGraph, source_frame: int, target_frame: int) -> float:
    """Mean predicted correspondence displacement of source-frame patches into
    the target frame (reprojection + provider residual, relative to the patch
    center). Returns +inf when no weighted edge connects the two frames."""
    disps = []
    for (pid, tfid), e in graph.edges.items():
        if tfid != target_frame or not np.any(e.weight > 0):
            continue
        patch = graph.patches[pid]
        if patch.source_frame != source_frame:
            continue
        cur = _current_reprojection(graph, e)
        if cur is None:
            continue
        corr = cur.as_array() + e.residual
        disps.append(np.linalg.norm(corr - patch.center.as_array()))
    return float(np.mean(disps)) if disps else float("inf")
