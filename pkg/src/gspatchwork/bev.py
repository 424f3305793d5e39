"""Ground-manifold bird's-eye-view parameterization of the road surface.

The driving trajectory is dropped onto the local ground height (estimated
from nearby anchors), resampled at 1 m arc length, and equipped with
orthonormal tangent/lateral frames. Points near the road then get smooth
(u, v) coordinates: u is arc length along the centerline, v the signed
lateral offset (positive to the left of the driving direction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GspwError, OutOfCorridorError
from .scene import Scene

RESAMPLE_M = 1.0
CORRIDOR_HALF_WIDTH = 50.0
GROUND_RADIUS = 3.0  # xy radius for ground-height lookup around trajectory points


@dataclass
class GroundManifold:
    s: np.ndarray  # (M,) arc length, strictly increasing
    points: np.ndarray  # (M, 3) centerline samples on the ground surface
    tangents: np.ndarray  # (M, 3) unit, along driving direction
    laterals: np.ndarray  # (M, 3) unit, horizontal, left of driving direction

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def heights(self) -> np.ndarray:
        return self.points[:, 2]


def _ground_height(xy: np.ndarray, anchor_xy: np.ndarray, anchor_z: np.ndarray, fallback: float) -> float:
    d2 = ((anchor_xy - xy) ** 2).sum(axis=1)
    near = d2 <= GROUND_RADIUS**2
    if not near.any():
        k = min(16, anchor_z.shape[0])
        if k == 0:
            return fallback
        near = np.argpartition(d2, k - 1)[:k]
    return float(np.median(anchor_z[near]))


def fit_ground_manifold(scene: Scene) -> GroundManifold:
    traj = np.asarray(scene.trajectory, dtype=np.float64)
    if traj.shape[0] < 2:
        raise GspwError("ground manifold needs a trajectory of length >= 2")

    anchor_xy = scene.positions[:, :2]
    anchor_z = scene.positions[:, 2]
    grounded = traj.copy()
    for i in range(traj.shape[0]):
        grounded[i, 2] = _ground_height(traj[i, :2], anchor_xy, anchor_z, traj[i, 2])

    seg = np.linalg.norm(np.diff(grounded, axis=0), axis=1)
    if seg.sum() < 1e-9:
        raise GspwError("degenerate trajectory: zero total length")
    keep = np.concatenate(([True], seg > 1e-12))
    grounded = grounded[keep]
    seg = np.linalg.norm(np.diff(grounded, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))

    n_samples = max(int(np.floor(cum[-1] / RESAMPLE_M)) + 1, 2)
    s = np.minimum(np.arange(n_samples) * RESAMPLE_M, cum[-1])
    if cum[-1] - s[-1] > 1e-9:
        s = np.append(s, cum[-1])
    points = np.stack([np.interp(s, cum, grounded[:, k]) for k in range(3)], axis=1)

    tangents = np.gradient(points, s, axis=0)
    norms = np.linalg.norm(tangents, axis=1, keepdims=True)
    tangents = tangents / np.where(norms < 1e-12, 1.0, norms)
    up = np.array([0.0, 0.0, 1.0])
    laterals = np.cross(np.broadcast_to(up, tangents.shape), tangents)
    lnorms = np.linalg.norm(laterals, axis=1, keepdims=True)
    # lateral = z x tangent is horizontal and orthogonal to the tangent by
    # construction, which is all the frame invariant requires
    laterals = laterals / np.where(lnorms < 1e-12, 1.0, lnorms)
    return GroundManifold(s=s, points=points, tangents=tangents, laterals=laterals)


def to_bev(position: np.ndarray, manifold: GroundManifold):
    """(u, v) coordinates of a world point; raises beyond the 50 m corridor."""
    p = np.asarray(position, dtype=np.float64)
    a = manifold.points[:-1]
    b = manifold.points[1:]
    ab = b - a
    ab2 = (ab**2).sum(axis=1)
    t = ((p - a) * ab).sum(axis=1) / np.where(ab2 < 1e-18, 1.0, ab2)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d2 = ((p - proj) ** 2).sum(axis=1)
    i = int(np.argmin(d2))
    u = manifold.s[i] + t[i] * (manifold.s[i + 1] - manifold.s[i])
    rel = p - proj[i]
    # blend the frame of the two segment endpoints for continuity
    lat = (1 - t[i]) * manifold.laterals[i] + t[i] * manifold.laterals[i + 1]
    lat /= max(np.linalg.norm(lat), 1e-12)
    v = float(rel @ lat)
    if np.sqrt(d2[i]) > CORRIDOR_HALF_WIDTH:
        raise OutOfCorridorError(
            f"point {p} is {np.sqrt(d2[i]):.1f} m from the centerline (limit {CORRIDOR_HALF_WIDTH})"
        )
    return float(u), v


def to_bev_batch(positions: np.ndarray, manifold: GroundManifold) -> np.ndarray:
    """(N, 2) BEV coordinates; no corridor check (caller filters)."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    a = manifold.points[:-1]
    ab = manifold.points[1:] - a
    ab2 = (ab**2).sum(axis=1)
    rel = pts[:, None, :] - a[None, :, :]
    t = (rel * ab[None, :, :]).sum(axis=2) / np.where(ab2 < 1e-18, 1.0, ab2)[None, :]
    t = np.clip(t, 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d2 = ((pts[:, None, :] - proj) ** 2).sum(axis=2)
    seg = np.argmin(d2, axis=1)
    rows = np.arange(pts.shape[0])
    tt = t[rows, seg]
    u = manifold.s[seg] + tt * (manifold.s[seg + 1] - manifold.s[seg])
    lat = (1 - tt)[:, None] * manifold.laterals[seg] + tt[:, None] * manifold.laterals[seg + 1]
    lat /= np.maximum(np.linalg.norm(lat, axis=1, keepdims=True), 1e-12)
    v = ((pts - proj[rows, seg]) * lat).sum(axis=1)
    return np.stack([u, v], axis=1)


def _interp_frame(manifold: GroundManifold, u: float):
    s = manifold.s
    u = float(np.clip(u, s[0], s[-1]))
    i = int(np.clip(np.searchsorted(s, u, side="right") - 1, 0, s.shape[0] - 2))
    t = (u - s[i]) / max(s[i + 1] - s[i], 1e-12)
    point = (1 - t) * manifold.points[i] + t * manifold.points[i + 1]
    tangent = (1 - t) * manifold.tangents[i] + t * manifold.tangents[i + 1]
    tangent /= max(np.linalg.norm(tangent), 1e-12)
    lateral = (1 - t) * manifold.laterals[i] + t * manifold.laterals[i + 1]
    lateral /= max(np.linalg.norm(lateral), 1e-12)
    return point, tangent, lateral


def from_bev(u: float, v: float, manifold: GroundManifold) -> np.ndarray:
    """Ground-surface world point for BEV coordinates (u, v)."""
    point, _, lateral = _interp_frame(manifold, u)
    return point + v * lateral


def heading_at(manifold: GroundManifold, u: float) -> float:
    """Driving direction at arc length u, radians about world z."""
    _, tangent, _ = _interp_frame(manifold, u)
    return float(np.arctan2(tangent[1], tangent[0]))
