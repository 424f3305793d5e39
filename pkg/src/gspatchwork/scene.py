"""Scene data model: Gaussian primitives, cameras, trajectory, validation.

A scene stores one Gaussian primitive per anchor. Primitive attributes live
in packed numpy arrays (one row per primitive) so rendering and training can
operate on them directly; the `Primitive` dataclass is a row view used for
construction and tests.

Conventions (documented here and in the file format):
  * world frame is z-up, all lengths in meters
  * quaternions are scalar-first (w, x, y, z)
  * cameras look along +Z in their own frame, image x right, y down
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import quat_to_matrix

FORMAT_VERSION = 1

QUAT_NORM_TOL = 1e-6
SCALE_MIN = 1e-4
SCALE_MAX = 1e3


@dataclass
class Primitive:
    """One 3D Gaussian: position, shape, appearance, and a D-dim visual feature."""

    id: int
    position: np.ndarray  # (3,) meters
    scale: np.ndarray  # (3,) standard deviations, meters
    rotation: np.ndarray  # (4,) unit quaternion (w, x, y, z)
    opacity: float
    color: np.ndarray  # (3,) in [0, 1]
    feature: np.ndarray  # (D,)


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform."""

    frame_index: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (4,) quaternion (w, x, y, z), world -> camera
    translation: np.ndarray  # (3,) meters, world -> camera

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(np.asarray(self.rotation, dtype=np.float64))

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points (N, 3) into the camera frame."""
        r = self.rotation_matrix()
        return np.asarray(points, dtype=np.float64) @ r.T + np.asarray(
            self.translation, dtype=np.float64
        )

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        r = self.rotation_matrix()
        return -r.T @ np.asarray(self.translation, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "frame_index": int(self.frame_index),
            "width": int(self.width),
            "height": int(self.height),
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "rotation": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            frame_index=int(d["frame_index"]),
            width=int(d["width"]),
            height=int(d["height"]),
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            rotation=np.array(d["rotation"], dtype=np.float64),
            translation=np.array(d["translation"], dtype=np.float64),
        )


@dataclass
class FrameMask:
    """Binary per-pixel mask for one frame (True = target object)."""

    frame_index: int
    bitmap: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]


@dataclass
class FeatureMap:
    """Dense D-channel feature image, typically lower resolution than RGB."""

    frame_index: int
    data: np.ndarray  # (H', W', D) float

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass
class Scene:
    """Primitive set + cameras + driving trajectory.

    Treated as immutable on all read paths. Training and editing operations
    work on a private copy (`scene.copy()`) and bump `mutation_token` after
    each in-place parameter update so cached render weights can detect
    staleness.
    """

    feature_dim: int
    ids: np.ndarray  # (N,) int64, unique
    positions: np.ndarray  # (N, 3) float64
    scales: np.ndarray  # (N, 3) float64
    rotations: np.ndarray  # (N, 4) float64
    opacities: np.ndarray  # (N,) float64
    colors: np.ndarray  # (N, 3) float64
    features: np.ndarray  # (N, D) float64
    cameras: list[Camera] = field(default_factory=list)
    trajectory: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    manifold: dict | None = None
    version: int = FORMAT_VERSION
    mutation_token: int = 0

    @property
    def num_primitives(self) -> int:
        return int(self.ids.shape[0])

    def primitive(self, row: int) -> Primitive:
        return Primitive(
            id=int(self.ids[row]),
            position=self.positions[row].copy(),
            scale=self.scales[row].copy(),
            rotation=self.rotations[row].copy(),
            opacity=float(self.opacities[row]),
            color=self.colors[row].copy(),
            feature=self.features[row].copy(),
        )

    def row_of(self, primitive_id: int) -> int:
        rows = np.nonzero(self.ids == primitive_id)[0]
        if rows.size == 0:
            raise KeyError(f"no primitive with id {primitive_id}")
        return int(rows[0])

    def rows_of(self, primitive_ids) -> np.ndarray:
        """Rows for a set of primitive ids, in scene storage order."""
        wanted = set(int(i) for i in primitive_ids)
        return np.nonzero([int(i) in wanted for i in self.ids])[0]

    def camera_by_frame(self, frame_index: int) -> Camera:
        for cam in self.cameras:
            if cam.frame_index == frame_index:
                return cam
        raise KeyError(f"no camera for frame {frame_index}")

    def copy(self) -> "Scene":
        return replace(
            self,
            ids=self.ids.copy(),
            positions=self.positions.copy(),
            scales=self.scales.copy(),
            rotations=self.rotations.copy(),
            opacities=self.opacities.copy(),
            colors=self.colors.copy(),
            features=self.features.copy(),
            cameras=list(self.cameras),
            trajectory=self.trajectory.copy(),
            manifold=dict(self.manifold) if self.manifold is not None else None,
        )

    def bump(self) -> None:
        """Mark in-place parameter mutation; invalidates cached render weights."""
        self.mutation_token += 1

    @staticmethod
    def from_primitives(
        primitives: list[Primitive],
        feature_dim: int,
        cameras: list[Camera] | None = None,
        trajectory: np.ndarray | None = None,
        manifold: dict | None = None,
    ) -> "Scene":
        n = len(primitives)
        scene = Scene(
            feature_dim=feature_dim,
            ids=np.array([p.id for p in primitives], dtype=np.int64),
            positions=np.array([p.position for p in primitives], dtype=np.float64).reshape(n, 3),
            scales=np.array([p.scale for p in primitives], dtype=np.float64).reshape(n, 3),
            rotations=np.array([p.rotation for p in primitives], dtype=np.float64).reshape(n, 4),
            opacities=np.array([p.opacity for p in primitives], dtype=np.float64),
            colors=np.array([p.color for p in primitives], dtype=np.float64).reshape(n, 3),
            features=np.array([p.feature for p in primitives], dtype=np.float64).reshape(
                n, feature_dim
            ),
            cameras=list(cameras or []),
            trajectory=(
                np.asarray(trajectory, dtype=np.float64).reshape(-1, 3)
                if trajectory is not None
                else np.zeros((0, 3))
            ),
            manifold=manifold,
        )
        return scene


def validate_scene(scene: Scene) -> list[str]:
    """Check every documented invariant; returns one message per violation.

    Violations are data, not errors: an empty list means the scene is valid.
    """
    out: list[str] = []
    n = scene.num_primitives

    if scene.feature_dim < 1:
        out.append(f"feature_dim {scene.feature_dim} must be >= 1")
    if scene.features.shape != (n, scene.feature_dim):
        out.append(
            f"feature array shape {scene.features.shape} does not match "
            f"(count {n}, feature_dim {scene.feature_dim})"
        )

    ids = scene.ids
    if np.unique(ids).size != n:
        dupes = sorted(set(int(i) for i in ids[np.isin(ids, ids[np.diff(np.sort(ids)) == 0])]))
        out.append(f"primitive ids not unique (duplicates include {dupes[:5]})")

    for name, arr in (
        ("position", scene.positions),
        ("scale", scene.scales),
        ("rotation", scene.rotations),
        ("opacity", scene.opacities),
        ("color", scene.colors),
        ("feature", scene.features),
    ):
        bad = ~np.isfinite(arr).reshape(n, -1).all(axis=1) if n else np.zeros(0, bool)
        for row in np.nonzero(bad)[0]:
            out.append(f"primitive {int(ids[row])}: non-finite {name}")

    if n:
        norms = np.linalg.norm(scene.rotations, axis=1)
        for row in np.nonzero(np.abs(norms - 1.0) > QUAT_NORM_TOL)[0]:
            out.append(
                f"primitive {int(ids[row])}: quaternion norm {norms[row]:.8f} "
                f"not within {QUAT_NORM_TOL} of 1"
            )
        with np.errstate(invalid="ignore"):
            bad_scale = ((scene.scales < SCALE_MIN) | (scene.scales > SCALE_MAX)).any(axis=1)
            for row in np.nonzero(bad_scale)[0]:
                out.append(
                    f"primitive {int(ids[row])}: scale outside [{SCALE_MIN}, {SCALE_MAX}] m"
                )
            bad_op = (scene.opacities < 0.0) | (scene.opacities > 1.0)
            for row in np.nonzero(bad_op)[0]:
                out.append(
                    f"primitive {int(ids[row])}: opacity {scene.opacities[row]} outside [0, 1]"
                )
            bad_col = ((scene.colors < 0.0) | (scene.colors > 1.0)).any(axis=1)
            for row in np.nonzero(bad_col)[0]:
                out.append(f"primitive {int(ids[row])}: color outside [0, 1]")

    frames = [c.frame_index for c in scene.cameras]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        out.append("camera frame indices not strictly increasing")
    for cam in scene.cameras:
        if cam.fx <= 0 or cam.fy <= 0:
            out.append(f"camera frame {cam.frame_index}: fx/fy must be > 0")
        if not (0 <= cam.cx < cam.width) or not (0 <= cam.cy < cam.height):
            out.append(f"camera frame {cam.frame_index}: principal point outside image")
        if abs(np.linalg.norm(np.asarray(cam.rotation, dtype=np.float64)) - 1.0) > QUAT_NORM_TOL:
            out.append(f"camera frame {cam.frame_index}: quaternion not unit-norm")

    if scene.trajectory.size and scene.trajectory.shape[1] != 3:
        out.append("trajectory must be an (M, 3) array")

    return out
