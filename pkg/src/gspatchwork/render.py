"""Forward splatting of Gaussian scenes and the matching gradient pass.

Splats are composited front to back: sort by camera depth (ties broken by
primitive id so results do not depend on storage order), then per pixel

    w_k = alpha_k * G_k(p) * prod_{j<k} (1 - alpha_j * G_j(p))

with G_k the 2D Gaussian footprint, support cut at the 3-sigma ellipse and
compositing truncated once transmittance drops below 1e-4. The 2D footprint
covariance is J R S S^T R^T J^T (projection Jacobian at the mean) plus
0.05 px^2 on the diagonal.

`render_reference` is a deliberately naive per-pixel implementation of the
same contract, kept free of the entry-list machinery so it can serve as an
independent oracle in tests.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractViolationError
from .geometry import quat_to_matrix
from .scene import Camera, Scene

NEAR_PLANE = 0.05
COV_REGULARIZATION = 0.05  # px^2 added to the 2D covariance diagonal
TRANSMITTANCE_EPS = _kernels.TRANSMITTANCE_EPS

ALL_CHANNELS = frozenset({"rgb", "alpha", "depth", "feature"})


def configure_threads() -> int:
    """Apply the GSPW_THREADS cap (if set) to the render thread pool."""
    raw = os.environ.get("GSPW_THREADS", "")
    if raw.strip():
        try:
            return _kernels.set_thread_count(int(raw))
        except ValueError:
            pass
    return _kernels.set_thread_count(_kernels.numba.config.NUMBA_NUM_THREADS)


@dataclass
class Splat2D:
    """Projected footprint of one primitive in one view."""

    primitive_id: int
    mean2d: np.ndarray  # (2,) pixels
    cov2d: np.ndarray  # (2, 2) pixels^2, regularized
    depth: float  # camera-frame z, meters


@dataclass
class SplatWeights:
    """Per-pixel ordered compositing entries from a forward pass (CSR layout)."""

    ptr: np.ndarray  # (H*W + 1,) int64
    entry_splat: np.ndarray  # (E,) int32, row index into the rendered subset
    entry_g: np.ndarray  # (E,) float64 footprint values
    entry_w: np.ndarray  # (E,) float64 compositing weights
    rows: np.ndarray  # (S,) int64, subset row -> scene row
    ids: np.ndarray  # (S,) primitive ids for the rendered subset
    height: int
    width: int
    scene_token: int

    def pixel_weights(self, x: int, y: int) -> list[tuple[int, float]]:
        """Ordered (primitive_id, weight) pairs composited at pixel (x, y)."""
        p = y * self.width + x
        out = []
        for e in range(self.ptr[p], self.ptr[p + 1]):
            out.append((int(self.ids[self.entry_splat[e]]), float(self.entry_w[e])))
        return out


@dataclass
class RenderOutput:
    rgb: np.ndarray | None
    alpha: np.ndarray
    depth: np.ndarray | None
    feature: np.ndarray | None
    weights: SplatWeights | None
    camera: Camera


@dataclass
class Gradients:
    """Per-primitive gradients, aligned with scene storage rows."""

    value: np.ndarray | None  # (N, C) for the requested channel
    opacity: np.ndarray | None  # (N,)


def project_points(positions: np.ndarray, camera: Camera):
    """Pinhole projection of world points.

    Returns (pixels (N, 2), depths (N,), visible (N,) bool). A point is
    visible iff its camera depth exceeds the 0.05 m near plane and its
    pixel falls inside the image. Invisible points keep their computed
    coordinates so callers can inspect them.
    """
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    cam_pts = camera.world_to_camera(pts)
    z = cam_pts[:, 2]
    safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    px = camera.fx * cam_pts[:, 0] / safe_z + camera.cx
    py = camera.fy * cam_pts[:, 1] / safe_z + camera.cy
    pixels = np.stack([px, py], axis=1)
    visible = (
        (z > NEAR_PLANE)
        & (px >= 0.0)
        & (px < camera.width)
        & (py >= 0.0)
        & (py < camera.height)
    )
    return pixels, z, visible


def _subset_rows(scene: Scene, subset) -> np.ndarray:
    if subset is None:
        return np.arange(scene.num_primitives, dtype=np.int64)
    subset = np.asarray(subset)
    if subset.dtype == bool:
        return np.nonzero(subset)[0].astype(np.int64)
    return subset.astype(np.int64)


def _prepare_splats(scene: Scene, camera: Camera, rows: np.ndarray):
    """Project a subset of primitives; returns per-splat raster parameters.

    Splats behind the near plane are dropped. The returned `order` sorts
    kept splats by (depth, primitive id).
    """
    pos = scene.positions[rows]
    r = camera.rotation_matrix()
    cam_pts = pos @ r.T + np.asarray(camera.translation, dtype=np.float64)
    z = cam_pts[:, 2]
    keep = z > NEAR_PLANE
    rows = rows[keep]
    cam_pts = cam_pts[keep]
    z = z[keep]

    fx, fy = camera.fx, camera.fy
    mx = fx * cam_pts[:, 0] / z + camera.cx
    my = fy * cam_pts[:, 1] / z + camera.cy

    rq = quat_to_matrix(scene.rotations[rows])
    m = rq * scene.scales[rows][:, None, :]
    cov3 = m @ m.transpose(0, 2, 1)
    cov_cam = np.einsum("ab,nbc,dc->nad", r, cov3, r)

    # clamp the Jacobian evaluation point to 1.3x the frustum cone so
    # splats far outside the view do not blow up the linearization
    lim_x = 1.3 * max(camera.cx, camera.width - camera.cx) / fx
    lim_y = 1.3 * max(camera.cy, camera.height - camera.cy) / fy
    x = np.clip(cam_pts[:, 0] / z, -lim_x, lim_x) * z
    y = np.clip(cam_pts[:, 1] / z, -lim_y, lim_y) * z
    jac = np.zeros((rows.shape[0], 2, 3))
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * x / (z * z)
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * y / (z * z)
    cov2 = np.einsum("nab,nbc,ndc->nad", jac, cov_cam, jac)
    cov2[:, 0, 0] += COV_REGULARIZATION
    cov2[:, 1, 1] += COV_REGULARIZATION

    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
    ca = cov2[:, 1, 1] / det
    cb = -cov2[:, 0, 1] / det
    cc = cov2[:, 0, 0] / det

    rx = 3.0 * np.sqrt(cov2[:, 0, 0])
    ry = 3.0 * np.sqrt(cov2[:, 1, 1])
    x0 = np.ceil(mx - rx).astype(np.int64)
    x1 = np.floor(mx + rx).astype(np.int64)
    y0 = np.ceil(my - ry).astype(np.int64)
    y1 = np.floor(my + ry).astype(np.int64)
    np.clip(x0, 0, camera.width - 1, out=x0)
    np.clip(x1, -1, camera.width - 1, out=x1)
    np.clip(y0, 0, camera.height - 1, out=y0)
    np.clip(y1, -1, camera.height - 1, out=y1)
    on_screen = (x0 <= x1) & (y0 <= y1) & (mx > -1e8) & (mx < 1e8)

    order = np.lexsort((scene.ids[rows], z))
    order = order[on_screen[order]].astype(np.int64)
    return {
        "rows": rows,
        "mx": mx,
        "my": my,
        "z": z,
        "ca": ca,
        "cb": cb,
        "cc": cc,
        "cov2": cov2,
        "x0": x0,
        "x1": x1,
        "y0": y0,
        "y1": y1,
        "order": order,
    }


def splat_projections(scene: Scene, camera: Camera, subset=None) -> list[Splat2D]:
    """Per-view splat footprints (near-plane culled), for inspection and tests."""
    pre = _prepare_splats(scene, camera, _subset_rows(scene, subset))
    out = []
    for i in range(pre["rows"].shape[0]):
        out.append(
            Splat2D(
                primitive_id=int(scene.ids[pre["rows"][i]]),
                mean2d=np.array([pre["mx"][i], pre["my"][i]]),
                cov2d=pre["cov2"][i].copy(),
                depth=float(pre["z"][i]),
            )
        )
    return out


def render(
    scene: Scene,
    camera: Camera,
    channels: frozenset = frozenset({"rgb", "alpha", "depth"}),
    subset=None,
    want_weights: bool = False,
) -> RenderOutput:
    """Forward-splat a scene (or subset of primitive rows) into images."""
    bad = set(channels) - ALL_CHANNELS
    if bad:
        raise ValueError(f"unknown channels {sorted(bad)}")
    configure_threads()

    h, w = camera.height, camera.width
    pre = _prepare_splats(scene, camera, _subset_rows(scene, subset))
    rows = pre["rows"]

    want_rgb = "rgb" in channels
    want_depth = "depth" in channels
    want_feature = "feature" in channels

    counts = np.zeros(h * w, dtype=np.int64)
    _kernels._count_pass(
        pre["order"], pre["mx"], pre["my"], pre["ca"], pre["cb"], pre["cc"],
        pre["x0"], pre["x1"], pre["y0"], pre["y1"], counts, w,
    )
    ptr = np.zeros(h * w + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    n_entries = int(ptr[-1])
    entry_splat = np.zeros(n_entries, dtype=np.int32)
    entry_g = np.zeros(n_entries, dtype=np.float64)
    entry_w = np.zeros(n_entries, dtype=np.float64)
    cursor = np.zeros(h * w, dtype=np.int64)
    _kernels._fill_pass(
        pre["order"], pre["mx"], pre["my"], pre["ca"], pre["cb"], pre["cc"],
        pre["x0"], pre["x1"], pre["y0"], pre["y1"], ptr, cursor, entry_splat, entry_g, w,
    )

    alphas = scene.opacities[rows]
    depths = pre["z"]
    colors = scene.colors[rows]
    feats = scene.features[rows] if want_feature else np.zeros((rows.shape[0], 0))

    rgb = np.zeros((h, w, 3), dtype=np.float64)
    alpha_img = np.zeros((h, w), dtype=np.float64)
    depth_img = np.zeros((h, w), dtype=np.float64)
    feat_img = np.zeros((h, w, feats.shape[1]), dtype=np.float64)
    _kernels._composite_pass(
        ptr, entry_splat, entry_g, entry_w, alphas, depths, colors, feats,
        want_rgb, want_depth, want_feature, rgb, alpha_img, depth_img, feat_img, h, w,
    )
    if want_depth:
        nz = alpha_img > 0.0
        depth_img[nz] /= alpha_img[nz]
        depth_img[~nz] = 0.0

    weights = None
    if want_weights:
        weights = SplatWeights(
            ptr=ptr,
            entry_splat=entry_splat,
            entry_g=entry_g,
            entry_w=entry_w,
            rows=rows,
            ids=scene.ids[rows].copy(),
            height=h,
            width=w,
            scene_token=scene.mutation_token,
        )
    return RenderOutput(
        rgb=rgb if want_rgb else None,
        alpha=alpha_img,
        depth=depth_img if want_depth else None,
        feature=feat_img if want_feature else None,
        weights=weights,
        camera=camera,
    )


def render_gradients(
    scene: Scene,
    camera: Camera,
    residual: np.ndarray,
    channel: str = "rgb",
    also_opacity: bool = False,
    forward: RenderOutput | None = None,
) -> Gradients:
    """Backpropagate a per-pixel residual (dLoss/dPixel) to primitive parameters.

    `channel` selects what the residual multiplies: "rgb" and "feature"
    yield d(loss)/d(value) = sum_p w_k(p) * residual(p) per primitive plus,
    when `also_opacity`, the analytic gradient through the transmittance
    product. "depth" feeds the alpha-normalized depth chain and only
    produces opacity gradients. Requires the weights of a forward pass on
    the same (unmutated) scene.
    """
    if forward is None or forward.weights is None:
        raise ContractViolationError("render_gradients needs a forward pass with want_weights=True")
    wts = forward.weights
    if wts.scene_token != scene.mutation_token:
        raise ContractViolationError("stale weights: scene was mutated since the forward pass")
    if channel not in ("rgb", "feature", "depth"):
        raise ValueError(f"unsupported gradient channel {channel!r}")

    h, w = wts.height, wts.width
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape[:2] != (h, w):
        raise ContractViolationError(
            f"residual shape {residual.shape} does not match render {h}x{w}"
        )
    if residual.ndim == 2:
        residual = residual[:, :, None]

    rows = wts.rows
    depth_mode = channel == "depth"
    if channel == "rgb":
        values = scene.colors[rows]
    elif channel == "feature":
        values = scene.features[rows]
    else:
        if forward.depth is None:
            raise ContractViolationError("depth gradients need a forward pass with the depth channel")
        # camera-frame depths of the rendered subset, recomputed to match forward
        values = camera.world_to_camera(scene.positions[rows])[:, 2:3].copy()
    if residual.shape[2] != (1 if depth_mode else values.shape[1]):
        raise ContractViolationError(
            f"residual has {residual.shape[2]} channels, expected "
            f"{1 if depth_mode else values.shape[1]}"
        )

    n_sub = rows.shape[0]
    value_grad = np.zeros((n_sub, values.shape[1]), dtype=np.float64)
    opacity_grad = np.zeros(n_sub, dtype=np.float64)
    max_count = int(np.max(np.diff(wts.ptr))) if wts.ptr.shape[0] > 1 else 0
    scratch = np.zeros(max(max_count, 1), dtype=np.float64)
    depth_img = forward.depth if forward.depth is not None else np.zeros((h, w))
    _kernels._backward_pass(
        wts.ptr, wts.entry_splat, wts.entry_g, wts.entry_w,
        scene.opacities[rows], values, residual,
        depth_mode, depth_img, forward.alpha,
        not depth_mode, also_opacity or depth_mode,
        value_grad, opacity_grad, scratch, h, w,
    )

    full_value = None
    if not depth_mode:
        full_value = np.zeros((scene.num_primitives, values.shape[1]), dtype=np.float64)
        full_value[rows] = value_grad
    full_opacity = None
    if also_opacity or depth_mode:
        full_opacity = np.zeros(scene.num_primitives, dtype=np.float64)
        full_opacity[rows] = opacity_grad
    return Gradients(value=full_value, opacity=full_opacity)


def render_reference(scene: Scene, camera: Camera, subset=None) -> RenderOutput:
    """Literal per-pixel compositing oracle (no entry lists, no numba).

    Walks every pixel, evaluates every splat's footprint at that pixel in
    depth order, and composites with the same truncation rule as `render`.
    Only used for validation; quadratic cost.
    """
    h, w = camera.height, camera.width
    pre = _prepare_splats(scene, camera, _subset_rows(scene, subset))
    order = np.lexsort((scene.ids[pre["rows"]], pre["z"]))
    mx, my = pre["mx"][order], pre["my"][order]
    ca, cb, cc = pre["ca"][order], pre["cb"][order], pre["cc"][order]
    alph = scene.opacities[pre["rows"]][order]
    cols = scene.colors[pre["rows"]][order]
    feats = scene.features[pre["rows"]][order]
    zs = pre["z"][order]

    rgb = np.zeros((h, w, 3))
    alpha_img = np.zeros((h, w))
    depth_img = np.zeros((h, w))
    feat_img = np.zeros((h, w, scene.feature_dim))
    for iy in range(h):
        for ix in range(w):
            dx = ix - mx
            dy = iy - my
            q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
            g = np.where(q <= 9.0, np.exp(-0.5 * q), 0.0)
            ag = np.minimum(alph * g, 1.0)
            t_before = np.concatenate(([1.0], np.cumprod(1.0 - ag)[:-1]))
            weight = ag * t_before
            weight[t_before < TRANSMITTANCE_EPS] = 0.0
            alpha_img[iy, ix] = weight.sum()
            rgb[iy, ix] = weight @ cols
            feat_img[iy, ix] = weight @ feats
            dsum = weight @ zs
            depth_img[iy, ix] = dsum / alpha_img[iy, ix] if alpha_img[iy, ix] > 0 else 0.0
    return RenderOutput(
        rgb=rgb, alpha=alpha_img, depth=depth_img, feature=feat_img, weights=None, camera=camera
    )
