"""Procedural desk-scale road scenes with ground truth for oracle tests.

Each seed yields a clean/corrupted scene pair on a straight (optionally
hilly) road whose ground texture and anchor features repeat exactly every
`texture_period` meters, so a true repeat is always available to the
search. Billboard occluders stand on the road for a window of frames;
anchors under their ground footprint are degraded (low opacity, scrambled
color/feature, mimicking unconverged training) and a core region is deleted
outright to create genuinely missing geometry. The manifest records which
anchors were touched so locator/search results can be scored against ground
truth.

A small aperiodic color component (never fed into the features beyond the
documented local-color term) keeps distant repeats from being pixel-exact,
which is what makes oversized voxel patches measurably worse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import GspwError
from .geometry import quat_from_matrix
from .io import save_feature_map, save_image, save_mask, save_scene, save_depth
from .render import render
from .scene import Camera, FeatureMap, FrameMask, Scene

logger = logging.getLogger(__name__)

REFERENCE_VOXEL_SIZE = 2.5  # for GenSpec sanity warnings only


@dataclass
class Occluder:
    center_u: float
    center_v: float = 0.0
    width: float = 4.0  # lateral extent of the billboard, meters
    height: float = 2.2  # vertical extent, meters
    ground_du: float = 2.0  # half-extent of the degraded ground patch along u
    ground_dv: float = 1.5  # half-extent along v
    hole_du: float = 1.0  # half-extent of the deleted core
    hole_dv: float = 1.0


@dataclass
class GenSpec:
    seed: int = 0
    road_length: float = 100.0
    road_width: float = 8.0
    anchor_spacing: float = 0.5
    texture_period: float = 10.0
    feature_dim: int = 16
    occluders: list[Occluder] | None = None  # None -> one seeded occluder mid-road
    camera_count: int = 30
    camera_height: float = 1.6
    image_width: int = 128
    image_height: int = 64
    hill_amplitude: float = 0.0
    hill_wavelength: float = 40.0
    aperiodic_color: float = 0.05
    feature_map_downsample: int = 4
    render_gt: bool = True  # False skips image/feature-map generation (fast fixtures)


@dataclass
class GenManifest:
    seed: int
    primitive_count_clean: int
    primitive_count_corrupt: int
    texture_period: float
    planted_offsets: list[float]  # |du| values at which true repeats exist
    degraded_ids: list[int]  # present in the corrupted scene, expect "incomplete"
    removed_ids: list[int]  # deleted from the corrupted scene (missing region)
    occluded_frames: list[list[int]]  # per occluder
    corruption_rects: list[list[float]]  # per occluder: [x0, x1, y0, y1] on the ground
    feature_dim: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "primitive_count_clean": self.primitive_count_clean,
            "primitive_count_corrupt": self.primitive_count_corrupt,
            "texture_period": self.texture_period,
            "planted_offsets": self.planted_offsets,
            "degraded_ids": self.degraded_ids,
            "removed_ids": self.removed_ids,
            "occluded_frames": self.occluded_frames,
            "corruption_rects": self.corruption_rects,
            "feature_dim": self.feature_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "GenManifest":
        return GenManifest(**d)


@dataclass
class GenResult:
    spec: GenSpec
    clean: Scene
    corrupt: Scene
    masks: list[FrameMask]
    train_images: list[np.ndarray]  # what a camera would record (billboards in view)
    clean_images: list[np.ndarray]  # renders of the clean scene only
    depths: list[np.ndarray]
    feature_maps: list[FeatureMap]
    manifest: GenManifest


@dataclass
class _TextureParams:
    period: float
    road_width: float
    stripe_phase: np.ndarray  # (3,) per-channel phases
    stripe_amp: np.ndarray  # (3,)
    aperiodic_amp: float
    aperiodic_freq: np.ndarray  # (2,) non-commensurate frequencies
    feat_v_freq: np.ndarray
    feat_v_phase: np.ndarray
    color_weight: float = 0.6


def _texture_params(spec: GenSpec, rng: np.random.Generator) -> _TextureParams:
    d = spec.feature_dim
    return _TextureParams(
        period=spec.texture_period,
        road_width=spec.road_width,
        stripe_phase=rng.uniform(0, 2 * np.pi, 3),
        stripe_amp=rng.uniform(0.05, 0.14, 3),
        aperiodic_amp=spec.aperiodic_color,
        aperiodic_freq=np.array([0.137, 0.291]) * (1.0 + 0.2 * rng.uniform(-1, 1, 2)),
        feat_v_freq=rng.integers(1, 4, size=d).astype(np.float64),
        feat_v_phase=rng.uniform(0, 2 * np.pi, d),
    )


def ground_height_fn(spec: GenSpec):
    amp, wl = spec.hill_amplitude, spec.hill_wavelength

    def h(x):
        return amp * np.sin(2.0 * np.pi * np.asarray(x, dtype=np.float64) / wl)

    return h


def texture_color(x, y, tex: _TextureParams) -> np.ndarray:
    """Ground albedo at world (x, y); exactly periodic in x except for a
    small aperiodic shading term."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xp = np.mod(x, tex.period) / tex.period
    base = np.full(x.shape + (3,), 0.45)
    for c in range(3):
        base[..., c] += tex.stripe_amp[c] * np.sin(2 * np.pi * (c + 1) * xp + tex.stripe_phase[c])
        base[..., c] += 0.06 * np.sin(2 * np.pi * 5 * xp + 1.3 * c)
    # lane edge lines and a dashed center line (dash period divides the texture period)
    edge = np.abs(np.abs(y) - (tex.road_width / 2 - 0.4)) < 0.15
    base[edge] = 0.85
    dash = (np.abs(y) < 0.12) & (np.mod(x, 2.0) < 1.0)
    base[dash] = np.array([0.8, 0.7, 0.2])
    shade = tex.aperiodic_amp * (
        np.sin(2 * np.pi * tex.aperiodic_freq[0] * x + 0.7)
        * np.cos(2 * np.pi * tex.aperiodic_freq[1] * y + 0.3)
    )
    base += shade[..., None]
    return np.clip(base, 0.02, 0.98)


def synthetic_features(u, v, color, tex: _TextureParams) -> np.ndarray:
    """Unit-norm D-vector feature at BEV position (u, v) with local color.

    Periodic in u with the texture period: octave positional encodings of
    the phase make non-aligned offsets decorrelate quickly, while the small
    color term keeps period-separated points just short of identical.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    d = tex.feat_v_freq.shape[0]
    xp = np.mod(u, tex.period) / tex.period
    feats = np.zeros(u.shape + (d,))
    for k in range(4):  # octaves over the phase
        feats[..., 2 * k] = np.sin(2 * np.pi * (2**k) * xp)
        feats[..., 2 * k + 1] = np.cos(2 * np.pi * (2**k) * xp)
    vn = v / max(tex.road_width, 1e-6)
    feats[..., 8] = np.sin(2 * np.pi * vn)
    feats[..., 9] = np.cos(2 * np.pi * vn)
    if d > 10:
        feats[..., 10] = np.sin(2 * np.pi * (2 * vn + 3 * xp))
    if d > 11:
        feats[..., 11] = np.cos(2 * np.pi * (vn + 5 * xp))
    ncol = min(3, d - 12) if d > 12 else 0
    for c in range(ncol):
        feats[..., 12 + c] = tex.color_weight * (color[..., c] - 0.5) * 2.0
    for j in range(12 + ncol, d):
        feats[..., j] = np.sin(2 * np.pi * tex.feat_v_freq[j] * (xp + vn) + tex.feat_v_phase[j])
    norm = np.linalg.norm(feats, axis=-1, keepdims=True)
    return feats / np.maximum(norm, 1e-12)


def _forward_camera(x: float, z: float, spec: GenSpec, frame_index: int) -> Camera:
    # camera axes: right = -world y, down = -world z, forward = +world x
    r = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    q = quat_from_matrix(r)
    center = np.array([x, 0.0, z])
    t = -r @ center
    w, h = spec.image_width, spec.image_height
    f = 0.6 * w
    return Camera(
        frame_index=frame_index, width=w, height=h,
        fx=f, fy=f, cx=w / 2.0, cy=h / 2.0,
        rotation=q, translation=t,
    )


def _quantize32(arr: np.ndarray) -> np.ndarray:
    """Round-trip through float32 so scenes serialize losslessly."""
    return arr.astype(np.float32).astype(np.float64)


def intersect_ground(origins: np.ndarray, dirs: np.ndarray, height_fn, iters: int = 6):
    """Ray/ground intersection p = o + t*d with p_z = h(p_x); Newton from the
    flat-plane solution. Returns (points (N,3), hit (N,) bool)."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    dz = d[:, 2]
    going_down = dz < -1e-9
    t = np.where(going_down, (height_fn(o[:, 0]) - o[:, 2]) / np.where(going_down, dz, -1.0), np.nan)
    for _ in range(iters):
        p = o + t[:, None] * d
        f = p[:, 2] - height_fn(p[:, 0])
        t = t - f / np.where(np.abs(dz) > 1e-9, dz, -1e-9)
    p = o + t[:, None] * d
    hit = going_down & np.isfinite(t) & (t > 0) & (np.abs(p[:, 2] - height_fn(p[:, 0])) < 1e-3)
    return p, hit


def _pixel_rays(camera: Camera, xs: np.ndarray, ys: np.ndarray):
    """World-space origins/directions for pixel coordinates (vectorized)."""
    r = camera.rotation_matrix()
    center = camera.center()
    dirs_cam = np.stack(
        [(xs - camera.cx) / camera.fx, (ys - camera.cy) / camera.fy, np.ones_like(xs)], axis=-1
    )
    dirs = dirs_cam @ r  # R^T applied row-wise
    origins = np.broadcast_to(center, dirs.shape)
    return origins, dirs


def _billboard_quad(occ: Occluder, height_fn) -> dict:
    x = occ.center_u
    zb = float(height_fn(x))
    return {
        "x": x,
        "y0": occ.center_v - occ.width / 2,
        "y1": occ.center_v + occ.width / 2,
        "z0": zb,
        "z1": zb + occ.height,
    }


def _billboard_mask_and_color(camera: Camera, quad: dict, depth_img: np.ndarray, alpha_img):
    """Rasterize a vertical billboard at plane x = quad['x'] against a depth image."""
    h, w = depth_img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    origins, dirs = _pixel_rays(camera, xs, ys)
    dx = dirs[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (quad["x"] - origins[..., 0]) / dx
    p = origins + t[..., None] * dirs
    hit = (
        (dx > 1e-9) & (t > 0)
        & (p[..., 1] >= quad["y0"]) & (p[..., 1] <= quad["y1"])
        & (p[..., 2] >= quad["z0"]) & (p[..., 2] <= quad["z1"])
    )
    cam_depth = camera.world_to_camera(p.reshape(-1, 3))[:, 2].reshape(h, w)
    in_front = (alpha_img < 0.5) | (cam_depth < depth_img) | (depth_img <= 0)
    mask = hit & in_front
    # flat paint with a horizontal band so the object is clearly artificial
    color = np.zeros((h, w, 3))
    color[..., 0] = 0.55
    color[..., 1] = 0.1
    color[..., 2] = 0.12
    band = mask & (np.abs(p[..., 2] - (quad["z0"] + quad["z1"]) / 2) < 0.25)
    color[band] = np.array([0.75, 0.7, 0.65])
    return mask, color, cam_depth


def ground_rect_mask(camera: Camera, rect, height_fn, oversample: int = 1) -> np.ndarray:
    """Pixels whose ground intersection falls inside rect = (x0, x1, y0, y1)."""
    h, w = camera.height, camera.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    origins, dirs = _pixel_rays(camera, xs, ys)
    pts, hit = intersect_ground(origins.reshape(-1, 3), dirs.reshape(-1, 3), height_fn)
    x0, x1, y0, y1 = rect
    inside = hit & (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
    return inside.reshape(h, w)


def generate_road_scene(spec: GenSpec) -> GenResult:
    """Build the clean/corrupted scene pair plus GT data; deterministic per seed."""
    if spec.feature_dim < 10:
        raise GspwError("synthetic scenes need feature_dim >= 10")
    if spec.anchor_spacing >= REFERENCE_VOXEL_SIZE:
        logger.warning(
            "anchor spacing %.2f m is not below the reference voxel size %.2f m",
            spec.anchor_spacing, REFERENCE_VOXEL_SIZE,
        )
    if spec.texture_period < 2 * REFERENCE_VOXEL_SIZE:
        logger.warning(
            "texture period %.2f m is below twice the reference voxel size; "
            "repeats may alias with voxel cells", spec.texture_period,
        )

    rng = np.random.default_rng(spec.seed)
    tex = _texture_params(spec, rng)
    height = ground_height_fn(spec)

    # jittered anchor grid on the road surface
    gx = np.arange(spec.anchor_spacing / 2, spec.road_length, spec.anchor_spacing)
    gy = np.arange(
        -spec.road_width / 2 + spec.anchor_spacing / 2, spec.road_width / 2, spec.anchor_spacing
    )
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    xx = xx.ravel() + rng.uniform(-0.2, 0.2, xx.size) * spec.anchor_spacing
    yy = yy.ravel() + rng.uniform(-0.2, 0.2, yy.size) * spec.anchor_spacing
    zz = height(xx)
    n = xx.size

    colors = texture_color(xx, yy, tex).reshape(n, 3)
    feats = synthetic_features(xx, yy, colors, tex).reshape(n, spec.feature_dim)
    base_scale = 0.42 * spec.anchor_spacing
    scales = np.stack(
        [
            rng.uniform(0.85, 1.15, n) * base_scale,
            rng.uniform(0.85, 1.15, n) * base_scale,
            np.full(n, 0.02),
        ],
        axis=1,
    )
    opacities = rng.uniform(0.92, 1.0, n)
    rotations = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))

    occluders = spec.occluders
    if occluders is None:
        occluders = [
            Occluder(
                center_u=float(rng.uniform(0.42, 0.58) * spec.road_length),
                center_v=float(rng.uniform(-1.2, 1.2)),
            )
        ]

    cam_x = np.linspace(1.0, max(spec.road_length - 28.0, 2.0), spec.camera_count)
    cameras = [
        _forward_camera(float(x), float(height(x) + spec.camera_height), spec, i)
        for i, x in enumerate(cam_x)
    ]
    trajectory = np.stack([cam_x, np.zeros_like(cam_x), height(cam_x)], axis=1)

    clean = Scene(
        feature_dim=spec.feature_dim,
        ids=np.arange(n, dtype=np.int64),
        positions=_quantize32(np.stack([xx, yy, zz], axis=1)),
        scales=_quantize32(scales),
        rotations=rotations.copy(),
        opacities=_quantize32(opacities),
        colors=_quantize32(colors),
        features=_quantize32(feats),
        cameras=cameras,
        trajectory=_quantize32(trajectory),
        manifold={"kind": "road", "hill_amplitude": spec.hill_amplitude,
                  "hill_wavelength": spec.hill_wavelength},
    )

    # corruption: degrade a ground rectangle per occluder, delete its core
    degraded: list[int] = []
    removed: list[int] = []
    rects = []
    corrupt = clean.copy()
    for occ in occluders:
        if abs(occ.center_v) + occ.ground_dv > spec.road_width / 2:
            raise GspwError(f"occluder at v={occ.center_v} extends off the road")
        in_rect = (np.abs(xx - occ.center_u) <= occ.ground_du) & (
            np.abs(yy - occ.center_v) <= occ.ground_dv
        )
        in_core = (np.abs(xx - occ.center_u) <= occ.hole_du) & (
            np.abs(yy - occ.center_v) <= occ.hole_dv
        )
        rects.append(
            [occ.center_u - occ.ground_du, occ.center_u + occ.ground_du,
             occ.center_v - occ.ground_dv, occ.center_v + occ.ground_dv]
        )
        removed.extend(int(i) for i in np.nonzero(in_core)[0])
        degraded.extend(int(i) for i in np.nonzero(in_rect & ~in_core)[0])
    removed = sorted(set(removed))
    degraded = sorted(set(degraded) - set(removed))

    if degraded:
        rows = np.array(degraded, dtype=np.int64)
        corrupt.opacities[rows] = _quantize32(rng.uniform(0.15, 0.6, rows.size))
        corrupt.colors[rows] = _quantize32(rng.uniform(0.0, 1.0, (rows.size, 3)))
        rf = rng.normal(size=(rows.size, spec.feature_dim))
        rf /= np.linalg.norm(rf, axis=1, keepdims=True)
        corrupt.features[rows] = _quantize32(rf)
    if removed:
        keep = np.ones(n, dtype=bool)
        keep[np.array(removed, dtype=np.int64)] = False
        corrupt = Scene(
            feature_dim=corrupt.feature_dim,
            ids=corrupt.ids[keep],
            positions=corrupt.positions[keep],
            scales=corrupt.scales[keep],
            rotations=corrupt.rotations[keep],
            opacities=corrupt.opacities[keep],
            colors=corrupt.colors[keep],
            features=corrupt.features[keep],
            cameras=corrupt.cameras,
            trajectory=corrupt.trajectory,
            manifold=corrupt.manifold,
        )

    # per-occluder frame windows: cameras 4..25 m behind the billboard see it
    occluded_frames = []
    for occ in occluders:
        frames = [i for i, x in enumerate(cam_x) if 4.0 <= occ.center_u - x <= 25.0]
        occluded_frames.append(frames)

    masks: list[FrameMask] = []
    train_images: list[np.ndarray] = []
    clean_images: list[np.ndarray] = []
    depths: list[np.ndarray] = []
    feature_maps: list[FeatureMap] = []
    if spec.render_gt:
        ds = spec.feature_map_downsample
        if spec.image_width % ds or spec.image_height % ds:
            raise GspwError("feature_map_downsample must divide the image dimensions")
        for i, cam in enumerate(cameras):
            out = render(clean, cam, frozenset({"rgb", "alpha", "depth"}))
            img = out.rgb.copy()
            mask = np.zeros((cam.height, cam.width), dtype=bool)
            for occ, frames in zip(occluders, occluded_frames):
                if i in frames:
                    quad = _billboard_quad(occ, height)
                    bmask, bcolor, _ = _billboard_mask_and_color(cam, quad, out.depth, out.alpha)
                    img[bmask] = bcolor[bmask]
                    mask |= bmask
            masks.append(FrameMask(frame_index=i, bitmap=mask))
            train_images.append(img)
            clean_images.append(out.rgb)
            depths.append(out.depth)

            # analytic feature map at reduced resolution
            fh, fw = cam.height // ds, cam.width // ds
            ys, xs = np.mgrid[0:fh, 0:fw].astype(np.float64)
            ys = ys * ds + (ds - 1) / 2.0
            xs = xs * ds + (ds - 1) / 2.0
            origins, dirs = _pixel_rays(cam, xs, ys)
            pts, hit = intersect_ground(origins.reshape(-1, 3), dirs.reshape(-1, 3), height)
            fcolors = texture_color(pts[:, 0], pts[:, 1], tex)
            fvals = synthetic_features(pts[:, 0], pts[:, 1], fcolors, tex)
            fvals[~hit] = 0.0
            feature_maps.append(
                FeatureMap(frame_index=i, data=_quantize32(fvals.reshape(fh, fw, spec.feature_dim)))
            )
    else:
        for i, cam in enumerate(cameras):
            masks.append(
                FrameMask(frame_index=i, bitmap=np.zeros((cam.height, cam.width), dtype=bool))
            )

    n_periods = int(spec.road_length // spec.texture_period)
    manifest = GenManifest(
        seed=spec.seed,
        primitive_count_clean=clean.num_primitives,
        primitive_count_corrupt=corrupt.num_primitives,
        texture_period=spec.texture_period,
        planted_offsets=[spec.texture_period * k for k in range(1, max(n_periods, 2))],
        degraded_ids=degraded,
        removed_ids=removed,
        occluded_frames=occluded_frames,
        corruption_rects=rects,
        feature_dim=spec.feature_dim,
    )
    return GenResult(
        spec=spec, clean=clean, corrupt=corrupt, masks=masks,
        train_images=train_images, clean_images=clean_images, depths=depths,
        feature_maps=feature_maps, manifest=manifest,
    )


def write_suite_dir(result: GenResult, out_dir) -> None:
    """Write the on-disk layout consumed by the CLI pipeline."""
    import json
    from pathlib import Path

    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "features").mkdir(exist_ok=True)
    (out / "gt" / "train").mkdir(parents=True, exist_ok=True)
    (out / "gt" / "clean").mkdir(parents=True, exist_ok=True)
    (out / "gt" / "depth").mkdir(parents=True, exist_ok=True)
    save_scene(result.clean, out / "scene_clean.gsp")
    save_scene(result.corrupt, out / "scene_corrupt.gsp")
    for m in result.masks:
        save_mask(m.bitmap, out / "masks" / f"mask_{m.frame_index:04d}.pgm")
    for i, img in enumerate(result.train_images):
        save_image(img, out / "gt" / "train" / f"frame_{i:04d}.ppm")
    for i, img in enumerate(result.clean_images):
        save_image(img, out / "gt" / "clean" / f"frame_{i:04d}.ppm")
    for i, dep in enumerate(result.depths):
        save_depth(dep, out / "gt" / "depth" / f"depth_{i:04d}.pgm")
    for fm in result.feature_maps:
        save_feature_map(fm, out / "features" / f"feat_{fm.frame_index:04d}.fmap")
    (out / "manifest.json").write_text(
        json.dumps(result.manifest.to_dict(), indent=1, sort_keys=True)
    )
