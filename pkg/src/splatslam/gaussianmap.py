"""3D Gaussian scene map: initialization, rasterization, photometric optimization.

Primitives carry position, rotation, anisotropic scale, opacity and a direct
RGB color (no spherical harmonics). The rasterizer is a CPU tile-based
splatter in float64: exact per-pixel front-to-back alpha compositing with a
hard 3-sigma screen-space cutoff, so the output is deterministic and
independent of the tiling. Gradients come from torch autograd on the same
forward graph, and are checked against finite differences in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DimensionMismatch, IoError, NonPositiveDepth
from .geometry import Intrinsics, Pose, backproject

DTYPE = torch.float64
Z_NEAR = 0.01
COV_FLOOR = 0.3  # added to the 2D covariance diagonal: minimum splat footprint, px^2
CUTOFF_MAHA_SQ = 9.0  # 3 sigma
_CUTOFF_G = float(np.exp(-0.5 * CUTOFF_MAHA_SQ))
ALPHA_MAX = 0.999
TILE = 16

MAP_MAGIC = "SPLATMAP"
MAP_FIELDS = (
    "mu_x mu_y mu_z q_x q_y q_z q_w s_x s_y s_z opacity c_r c_g c_b"
)


@dataclass
class MapConfig:
    window_length: int = 7  # keyframes per sliding window (n adjacent + current)
    map_iters_per_keyframe: int = 60
    prune_opacity: float = 0.005
    tau_s: float | None = None  # None: set per scene from the median initialized scale
    # hinge threshold = factor x median initialized scale; tight factors block
    # the scale growth needed to close gaps between sparsely seeded primitives
    tau_s_median_factor: float = 10.0
    lambda_ssim: float = 0.2
    lambda_reg: float = 1.0
    lr_position: float = 1e-4  # multiplied by scene extent
    lr_rotation: float = 1e-3
    lr_scale: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    optimizer: str = "adam"  # or "gd" (backtracking gradient descent, monotone)
    # adaptive-state restart period: long uninterrupted adaptive runs build up
    # oscillation on deeply stacked primitives and tip into divergence
    opt_restart_interval: int = 50


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)


class GaussianMap:
    """Growable collection of Gaussian primitives.

    Internal parametrization: log-scales, logit-opacities, unnormalized
    quaternions (scalar-last) that are renormalized after optimizer steps.
    """

    def __init__(self):
        self.positions = torch.zeros((0, 3), dtype=DTYPE)
        self.quats = torch.zeros((0, 4), dtype=DTYPE)
        self.log_scales = torch.zeros((0, 3), dtype=DTYPE)
        self.opacity_logits = torch.zeros((0,), dtype=DTYPE)
        self.colors = torch.zeros((0, 3), dtype=DTYPE)
        self.creation_frame = torch.zeros((0,), dtype=torch.long)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def scales(self) -> np.ndarray:
        return torch.exp(self.log_scales).numpy()

    @property
    def opacities(self) -> np.ndarray:
        return torch.sigmoid(self.opacity_logits).numpy()

    def add(self, positions, quats, scales, opacities, colors, creation_frame: int):
        """Append primitives; scales and opacities given in linear space."""
        positions = torch.as_tensor(np.asarray(positions, dtype=np.float64))
        scales = torch.as_tensor(np.asarray(scales, dtype=np.float64))
        opacities = torch.as_tensor(np.asarray(opacities, dtype=np.float64))
        n = positions.shape[0]
        self.positions = torch.cat([self.positions, positions.reshape(n, 3)])
        self.quats = torch.cat(
            [self.quats, torch.as_tensor(np.asarray(quats, dtype=np.float64)).reshape(n, 4)]
        )
        self.log_scales = torch.cat([self.log_scales, torch.log(scales.reshape(n, 3))])
        self.opacity_logits = torch.cat(
            [self.opacity_logits, torch.logit(opacities.reshape(n))]
        )
        self.colors = torch.cat(
            [self.colors, torch.as_tensor(np.asarray(colors, dtype=np.float64)).reshape(n, 3)]
        )
        self.creation_frame = torch.cat(
            [self.creation_frame, torch.full((n,), creation_frame, dtype=torch.long)]
        )

    def keep(self, mask: torch.Tensor) -> None:
        for name in ("positions", "quats", "log_scales", "opacity_logits", "colors", "creation_frame"):
            setattr(self, name, getattr(self, name)[mask].contiguous())

    def prune(self, min_opacity: float) -> int:
        """Remove primitives with opacity below threshold; returns removed count."""
        mask = torch.sigmoid(self.opacity_logits) >= min_opacity
        removed = int((~mask).sum())
        if removed:
            self.keep(mask)
        return removed

    def scene_extent(self) -> float:
        if len(self) == 0:
            return 1.0
        span = self.positions.max(dim=0).values - self.positions.min(dim=0).values
        return max(float(torch.linalg.norm(span)), 1e-6)

    def parameters(self) -> dict[str, torch.Tensor]:
        return {
            "positions": self.positions,
            "quats": self.quats,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "colors": self.colors,
        }


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    """Batched unit rotation matrices from (possibly unnormalized) xyzw quats."""
    q = q / torch.linalg.norm(q, dim=-1, keepdim=True)
    x, y, z, w = q.unbind(-1)
    return torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    ).reshape(q.shape[:-1] + (3, 3))


def _tile_ranges(n: int, tile: int = TILE) -> list[tuple[int, int]]:
    return [(i, min(i + tile, n)) for i in range(0, n, tile)]


def _render_torch(
    params: dict[str, torch.Tensor], pose: Pose, K: Intrinsics
) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable forward splat. Returns (color (H,W,3), alpha (H,W))."""
    H, W = K.height, K.width
    color_out = torch.zeros((H, W, 3), dtype=DTYPE)
    alpha_out = torch.zeros((H, W), dtype=DTYPE)
    n = params["positions"].shape[0]
    if n == 0:
        return color_out, alpha_out

    R = torch.as_tensor(pose.R, dtype=DTYPE)
    t = torch.as_tensor(pose.t, dtype=DTYPE)

    cam = (params["positions"] - t) @ R  # world -> camera
    z = cam[:, 2]
    front = z > Z_NEAR
    if not bool(front.any()):
        return color_out, alpha_out

    idx0 = torch.nonzero(front).squeeze(1)
    # stable depth order: ties broken by insertion index
    order = idx0[torch.argsort(z[idx0], stable=True)]

    cam = cam[order]
    z = cam[:, 2]
    x, y = cam[:, 0], cam[:, 1]
    u = K.fx * x / z + K.cx
    v = K.fy * y / z + K.cy
    mean2d = torch.stack([u, v], dim=-1)

    Rq = quat_to_rotmat(params["quats"][order])
    s = torch.exp(params["log_scales"][order])
    M = Rq * s[:, None, :]
    cov3 = M @ M.transpose(1, 2)

    W_mat = R.T  # world -> camera rotation
    cov_cam = W_mat @ cov3 @ W_mat.T

    zero = torch.zeros_like(z)
    J = torch.stack(
        [
            torch.stack([K.fx / z, zero, -K.fx * x / z**2], dim=-1),
            torch.stack([zero, K.fy / z, -K.fy * y / z**2], dim=-1),
        ],
        dim=1,
    )  # (n, 2, 3)
    cov2 = J @ cov_cam @ J.transpose(1, 2)
    a = cov2[:, 0, 0] + COV_FLOOR
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + COV_FLOOR
    det = a * c - b * b
    inv_a, inv_b, inv_c = c / det, -b / det, a / det

    opacity = torch.sigmoid(params["opacity_logits"][order])
    colors = params["colors"][order]

    # conservative screen-space bounding radius at the 3-sigma cutoff
    with torch.no_grad():
        half_tr = 0.5 * (a + c)
        lam_max = half_tr + torch.sqrt(torch.clamp(half_tr**2 - det, min=0.0))
        radius = 3.0 * torch.sqrt(lam_max) + 1.0
        u0 = torch.floor(mean2d[:, 0] - radius).long()
        u1 = torch.ceil(mean2d[:, 0] + radius).long()
        v0 = torch.floor(mean2d[:, 1] - radius).long()
        v1 = torch.ceil(mean2d[:, 1] + radius).long()

    row_tiles = _tile_ranges(H)
    col_tiles = _tile_ranges(W)
    for r0, r1 in row_tiles:
        hit_rows = (v1 >= r0) & (v0 < r1)
        for c0, c1 in col_tiles:
            sel = torch.nonzero(hit_rows & (u1 >= c0) & (u0 < c1)).squeeze(1)
            if sel.numel() == 0:
                continue
            gy, gx = torch.meshgrid(
                torch.arange(r0, r1, dtype=DTYPE),
                torch.arange(c0, c1, dtype=DTYPE),
                indexing="ij",
            )
            px = torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=-1)  # (P, 2)
            d = px[None, :, :] - mean2d[sel][:, None, :]  # (n_s, P, 2)
            dx, dy = d[..., 0], d[..., 1]
            maha = (
                inv_a[sel][:, None] * dx * dx
                + 2.0 * inv_b[sel][:, None] * dx * dy
                + inv_c[sel][:, None] * dy * dy
            )
            # truncated-and-rescaled footprint: continuous at the 3-sigma
            # boundary and exactly zero beyond it (keeps finite-difference
            # checks well-posed and the output independent of the tiling)
            g = (torch.exp(-0.5 * maha) - _CUTOFF_G) / (1.0 - _CUTOFF_G)
            alpha = torch.clamp(opacity[sel][:, None] * torch.clamp(g, min=0.0), max=ALPHA_MAX)
            trans = torch.cumprod(1.0 - alpha, dim=0)
            t_exc = torch.cat([torch.ones_like(trans[:1]), trans[:-1]], dim=0)
            weight = alpha * t_exc  # (n_s, P)
            tile_color = weight.T @ colors[sel]  # (P, 3)
            tile_alpha = 1.0 - trans[-1]
            color_out[r0:r1, c0:c1] = tile_color.reshape(r1 - r0, c1 - c0, 3)
            alpha_out[r0:r1, c0:c1] = tile_alpha.reshape(r1 - r0, c1 - c0)
    return color_out, alpha_out


def render(gmap: GaussianMap, pose: Pose, K: Intrinsics) -> RenderOutput:
    """Rasterize the map from a camera pose. Empty map renders background."""
    with torch.no_grad():
        color, alpha = _render_torch(gmap.parameters(), pose, K)
    return RenderOutput(color=color.numpy(), alpha=alpha.numpy())


def _grad_params(gmap: GaussianMap) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone().requires_grad_(True) for k, v in gmap.parameters().items()}


def render_backward(
    gmap: GaussianMap, pose: Pose, K: Intrinsics, loss_gradient_image: np.ndarray
) -> dict[str, np.ndarray]:
    """Per-primitive parameter gradients for a given image-space loss gradient.

    `loss_gradient_image` is dL/d(rendered color), shape (H, W, 3).
    """
    grad_img = torch.as_tensor(np.asarray(loss_gradient_image, dtype=np.float64))
    if grad_img.shape != (K.height, K.width, 3):
        raise DimensionMismatch(f"loss gradient shape {tuple(grad_img.shape)}")
    params = _grad_params(gmap)
    color, _ = _render_torch(params, pose, K)
    (color * grad_img).sum().backward()
    return {
        k: (p.grad if p.grad is not None else torch.zeros_like(p)).numpy()
        for k, p in params.items()
    }


# -- losses -------------------------------------------------------------------

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _gaussian_kernel_t(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=DTYPE) - (size - 1) / 2.0
    g = torch.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter2_t(img: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    # img: (C, H, W); separable convolution with mirror padding
    c, h, w = img.shape
    k = kernel.numel()
    pad = k // 2
    x = img[None]
    x = torch.nn.functional.pad(x, (0, 0, pad, pad), mode="reflect")
    x = torch.nn.functional.conv2d(x, kernel.reshape(1, 1, k, 1).expand(c, 1, k, 1), groups=c)
    x = torch.nn.functional.pad(x, (pad, pad, 0, 0), mode="reflect")
    x = torch.nn.functional.conv2d(x, kernel.reshape(1, 1, 1, k).expand(c, 1, 1, k), groups=c)
    return x[0]


def ssim_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Differentiable mean SSIM, 11x11 Gaussian window; inputs (H, W, C)."""
    kernel = _gaussian_kernel_t()
    x = a.permute(2, 0, 1)
    y = b.permute(2, 0, 1)
    mu_x = _filter2_t(x, kernel)
    mu_y = _filter2_t(y, kernel)
    var_x = _filter2_t(x * x, kernel) - mu_x**2
    var_y = _filter2_t(y * y, kernel) - mu_y**2
    cov = _filter2_t(x * y, kernel) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_x**2 + mu_y**2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return (num / den).mean()


def color_loss_torch(
    rendered: torch.Tensor, reference: torch.Tensor, lambda_ssim: float = 0.2
) -> torch.Tensor:
    l1 = torch.mean(torch.abs(rendered - reference))
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim_torch(rendered, reference))


def color_loss(
    rendered: np.ndarray, reference: np.ndarray, lambda_ssim: float = 0.2
) -> tuple[float, np.ndarray]:
    """Weighted L1 + SSIM photometric loss; returns (value, d loss / d rendered)."""
    if rendered.shape != reference.shape:
        raise DimensionMismatch(f"{rendered.shape} vs {reference.shape}")
    r = torch.as_tensor(np.asarray(rendered, dtype=np.float64)).requires_grad_(True)
    ref = torch.as_tensor(np.asarray(reference, dtype=np.float64))
    loss = color_loss_torch(r, ref, lambda_ssim)
    loss.backward()
    return float(loss.detach()), r.grad.numpy()


def scale_reg_torch(log_scales: torch.Tensor, tau_s: float) -> torch.Tensor:
    s = torch.exp(log_scales)
    return torch.sum(torch.clamp(s - tau_s, min=0.0) ** 2)


def scale_reg_loss(gmap: GaussianMap, tau_s: float) -> tuple[float, np.ndarray]:
    """Hinged L2 penalty on scales above tau_s; returns (value, d/d log_scales)."""
    if tau_s <= 0:
        raise ValueError("tau_s must be positive")
    ls = gmap.log_scales.detach().clone().requires_grad_(True)
    loss = scale_reg_torch(ls, tau_s)
    loss.backward()
    return float(loss.detach()), ls.grad.numpy()


# -- initialization -----------------------------------------------------------


def init_from_patches(gmap: GaussianMap, patches, frame, K: Intrinsics) -> int:
    """Create one primitive per patch: back-projected center, pixel-sized scale,
    opacity 0.5, color taken at the patch center. Returns the number added."""
    positions, scales, colors = [], [], []
    image = np.asarray(frame.image)
    for p in patches:
        if p.inv_depth <= 0:
            raise NonPositiveDepth(f"patch {p.patch_id} inverse depth {p.inv_depth}")
        mu = backproject(p.center, p.inv_depth, frame.pose, K)
        depth = 1.0 / p.inv_depth
        positions.append(mu)
        scales.append([depth / K.fx, depth / K.fy, 2.0 * depth / (K.fx + K.fy)])
        r = min(max(int(round(p.center.v)), 0), image.shape[0] - 1)
        c = min(max(int(round(p.center.u)), 0), image.shape[1] - 1)
        colors.append(image[r, c, :3])
    n = len(positions)
    if n:
        quats = np.tile([0.0, 0.0, 0.0, 1.0], (n, 1))
        gmap.add(positions, quats, scales, np.full(n, 0.5), colors, frame.id)
    return n


def default_tau_s(gmap: GaussianMap, factor: float = 2.0) -> float:
    """Scene-relative scale threshold: factor times the median current scale."""
    if len(gmap) == 0:
        return 1.0
    return factor * float(np.median(gmap.scales))


# -- optimization -------------------------------------------------------------


def _window_loss(
    params: dict[str, torch.Tensor],
    keyframes: list[tuple[Pose, torch.Tensor]],
    K: Intrinsics,
    tau_s: float,
    cfg: MapConfig,
) -> torch.Tensor:
    loss = torch.zeros((), dtype=DTYPE)
    for pose, ref in keyframes:
        rendered, _ = _render_torch(params, pose, K)
        loss = loss + color_loss_torch(rendered, ref, cfg.lambda_ssim)
    return loss + cfg.lambda_reg * scale_reg_torch(params["log_scales"], tau_s)


def _renormalize_quats(gmap: GaussianMap) -> None:
    with torch.no_grad():
        norms = torch.linalg.norm(gmap.quats, dim=-1, keepdim=True)
        gmap.quats /= torch.clamp(norms, min=1e-30)


def _optimize(
    gmap: GaussianMap,
    schedule,  # iterable of lists of (Pose, reference image tensor)
    K: Intrinsics,
    cfg: MapConfig,
) -> None:
    """Shared optimization loop; each schedule entry is one step's supervision."""
    schedule = list(schedule)
    if not schedule or len(gmap) == 0:
        return
    tau_s = cfg.tau_s if cfg.tau_s is not None else default_tau_s(gmap, cfg.tau_s_median_factor)
    params = _grad_params(gmap)
    lrs = {
        "positions": cfg.lr_position * gmap.scene_extent(),
        "quats": cfg.lr_rotation,
        "log_scales": cfg.lr_scale,
        "opacity_logits": cfg.lr_opacity,
        "colors": cfg.lr_color,
    }

    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(
            [{"params": [params[k]], "lr": lrs[k]} for k in params]
        )
        for step, batch in enumerate(schedule):
            if step and cfg.opt_restart_interval and step % cfg.opt_restart_interval == 0:
                opt = torch.optim.Adam(
                    [{"params": [params[k]], "lr": lrs[k]} for k in params]
                )
            opt.zero_grad()
            loss = _window_loss(params, batch, K, tau_s, cfg)
            loss.backward()
            opt.step()
            with torch.no_grad():
                q = params["quats"]
                q /= torch.clamp(torch.linalg.norm(q, dim=-1, keepdim=True), min=1e-30)
    elif cfg.optimizer == "gd":
        # plain gradient descent with step halving: loss never increases
        for batch in schedule:
            for p in params.values():
                p.grad = None
            loss = _window_loss(params, batch, K, tau_s, cfg)
            loss.backward()
            base = float(loss)
            scale = 1.0
            for _ in range(16):
                with torch.no_grad():
                    trial = {
                        k: (p - scale * lrs[k] * p.grad).detach()
                        for k, p in params.items()
                    }
                    new = float(_window_loss(trial, batch, K, tau_s, cfg))
                if new <= base:
                    for k in params:
                        with torch.no_grad():
                            params[k].copy_(trial[k])
                    break
                scale *= 0.5
            with torch.no_grad():
                q = params["quats"]
                q /= torch.clamp(torch.linalg.norm(q, dim=-1, keepdim=True), min=1e-30)
    else:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")

    with torch.no_grad():
        gmap.positions = params["positions"].detach().clone()
        gmap.quats = params["quats"].detach().clone()
        gmap.log_scales = params["log_scales"].detach().clone()
        gmap.opacity_logits = params["opacity_logits"].detach().clone()
        gmap.colors = params["colors"].detach().clone()


def _as_keyframe_batch(keyframes, K: Intrinsics):
    batch = []
    for kf in keyframes:
        pose, image = (kf.pose, kf.image) if hasattr(kf, "pose") else kf
        ref = torch.as_tensor(np.asarray(image, dtype=np.float64))
        if ref.shape != (K.height, K.width, 3):
            raise DimensionMismatch(f"keyframe image shape {tuple(ref.shape)}")
        batch.append((pose.copy() if hasattr(pose, "copy") else pose, ref))
    return batch


def optimize_window(
    gmap: GaussianMap, keyframes, K: Intrinsics, iterations: int, cfg: MapConfig | None = None
) -> None:
    """Photometric optimization against a sliding window of keyframes.

    Each iteration steps on one window keyframe, cycling round-robin with the
    newest keyframe first, so per-keyframe cost stays flat in the window
    length; after the pass, primitives with opacity below the prune threshold
    are removed. No densification is ever performed.
    """
    cfg = cfg or MapConfig()
    if iterations <= 0 or len(gmap) == 0:
        return
    batch = _as_keyframe_batch(keyframes, K)
    schedule = [[batch[-1 - (i % len(batch))]] for i in range(iterations)]
    _optimize(gmap, schedule, K, cfg)
    gmap.prune(cfg.prune_opacity)


def final_refinement(
    gmap: GaussianMap,
    all_keyframes,
    K: Intrinsics,
    iterations: int,
    cfg: MapConfig | None = None,
    seed: int = 0,
) -> None:
    """Post-tracking refinement sampling supervision uniformly over all keyframes.

    Each step optimizes against a single keyframe, cycling through a seeded
    shuffle of the full set so coverage is uniform.
    """
    cfg = cfg or MapConfig()
    if iterations <= 0 or len(gmap) == 0:
        return
    batch = _as_keyframe_batch(all_keyframes, K)
    rng = np.random.default_rng(seed)
    order: list[int] = []
    while len(order) < iterations:
        order.extend(rng.permutation(len(batch)).tolist())
    schedule = [[batch[i]] for i in order[:iterations]]
    _optimize(gmap, schedule, K, cfg)
    gmap.prune(cfg.prune_opacity)


# -- serialization ------------------------------------------------------------


def export_map(gmap: GaussianMap, path) -> None:
    """Write primitives as an ASCII header plus little-endian f32 records."""
    n = len(gmap)
    try:
        with open(path, "wb") as f:
            header = f"{MAP_MAGIC}\ncount {n}\nfields {MAP_FIELDS}\nend_header\n"
            f.write(header.encode("ascii"))
            if n:
                rec = np.concatenate(
                    [
                        gmap.positions.numpy(),
                        gmap.quats.numpy(),
                        np.exp(gmap.log_scales.numpy()),
                        torch.sigmoid(gmap.opacity_logits).numpy()[:, None],
                        gmap.colors.numpy(),
                    ],
                    axis=1,
                ).astype("<f4")
                f.write(rec.tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def import_map(path) -> GaussianMap:
    """Read a map written by export_map."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoError(str(e)) from e
    marker = b"end_header\n"
    pos = data.find(marker)
    if pos < 0 or not data.startswith(MAP_MAGIC.encode("ascii")):
        raise IoError("not a map file")
    header = data[:pos].decode("ascii").splitlines()
    count = None
    for line in header:
        if line.startswith("count "):
            count = int(line.split()[1])
    if count is None:
        raise IoError("missing count in header")
    body = data[pos + len(marker):]
    if len(body) != count * 14 * 4:
        raise IoError(f"expected {count * 14 * 4} record bytes, got {len(body)}")
    gmap = GaussianMap()
    if count:
        rec = np.frombuffer(body, dtype="<f4").reshape(count, 14).astype(np.float64)
        gmap.positions = torch.as_tensor(rec[:, 0:3]).clone()
        gmap.quats = torch.as_tensor(rec[:, 3:7]).clone()
        gmap.log_scales = torch.log(torch.as_tensor(rec[:, 7:10]).clone())
        gmap.opacity_logits = torch.logit(torch.as_tensor(rec[:, 10]).clone())
        gmap.colors = torch.as_tensor(rec[:, 11:14]).clone()
        gmap.creation_frame = torch.zeros(count, dtype=torch.long)
    return gmap
