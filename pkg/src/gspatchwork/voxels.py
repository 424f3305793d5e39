"""Voxel-grid spatial index with bidirectional anchor <-> voxel maps.

Cells are half-open boxes [k*size, (k+1)*size) per axis so they partition
space; every anchor lands in exactly one cell. The default grid origin is
the scene's AABB minimum snapped down to the cell size, so source and
target patches share the same cell phase. Anchor lists are kept sorted by
id for deterministic rebuilds. The index is immutable after build; any
transplant that moves anchors requires a rebuild.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .scene import Scene

VoxelKey = tuple[int, int, int]


@dataclass
class VoxelIndex:
    origin: np.ndarray  # (3,) meters
    size: float  # cell edge length, meters
    voxel_to_anchors: dict[VoxelKey, np.ndarray]  # sorted anchor ids per cell
    anchor_to_voxel: dict[int, VoxelKey]

    def occupied(self, key: VoxelKey) -> bool:
        return key in self.voxel_to_anchors

    def anchors_in(self, key: VoxelKey) -> np.ndarray:
        return self.voxel_to_anchors.get(key, np.zeros(0, dtype=np.int64))

    def voxel_center(self, key: VoxelKey) -> np.ndarray:
        return self.origin + (np.asarray(key, dtype=np.float64) + 0.5) * self.size


@dataclass
class Patch:
    """A set of voxels plus the anchors they contain.

    `labels` maps anchor id -> "missing" | "incomplete" | "intact" once the
    locator has classified the patch; absent until then.
    """

    voxels: frozenset[VoxelKey]
    anchor_ids: np.ndarray  # sorted union of member anchors
    labels: dict[int, str] | None = field(default=None)

    def ids_with_label(self, label: str) -> np.ndarray:
        if self.labels is None:
            return np.zeros(0, dtype=np.int64)
        return np.array(
            sorted(a for a in self.anchor_ids if self.labels.get(int(a)) == label),
            dtype=np.int64,
        )


def voxel_keys_for(positions: np.ndarray, origin: np.ndarray, size: float) -> np.ndarray:
    """Integer cell coordinates, floor((p - origin) / size) per axis."""
    rel = (np.asarray(positions, dtype=np.float64) - origin) / size
    return np.floor(rel).astype(np.int64)


def voxel_of(position: np.ndarray, index: VoxelIndex) -> VoxelKey:
    key = voxel_keys_for(np.asarray(position).reshape(1, 3), index.origin, index.size)[0]
    return (int(key[0]), int(key[1]), int(key[2]))


def default_origin(scene: Scene, size: float) -> np.ndarray:
    if scene.num_primitives == 0:
        return np.zeros(3)
    lo = scene.positions.min(axis=0)
    return np.floor(lo / size) * size


def build_index(scene: Scene, size: float, origin: np.ndarray | None = None) -> VoxelIndex:
    if size <= 0:
        raise ValidationError(f"voxel size must be > 0, got {size}")
    bad = ~np.isfinite(scene.positions).all(axis=1)
    if bad.any():
        first = int(scene.ids[np.nonzero(bad)[0][0]])
        raise ValidationError(f"primitive {first} has a non-finite position")
    if origin is None:
        origin = default_origin(scene, size)
    origin = np.asarray(origin, dtype=np.float64)

    keys = voxel_keys_for(scene.positions, origin, size)
    voxel_to_anchors: dict[VoxelKey, np.ndarray] = {}
    anchor_to_voxel: dict[int, VoxelKey] = {}
    if scene.num_primitives:
        ids = scene.ids
        sort = np.lexsort((ids, keys[:, 2], keys[:, 1], keys[:, 0]))
        skeys = keys[sort]
        sids = ids[sort]
        boundaries = np.nonzero((np.diff(skeys, axis=0) != 0).any(axis=1))[0] + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [skeys.shape[0]]))
        for s, e in zip(starts, ends):
            key = (int(skeys[s, 0]), int(skeys[s, 1]), int(skeys[s, 2]))
            members = sids[s:e].copy()
            voxel_to_anchors[key] = members
            for a in members:
                anchor_to_voxel[int(a)] = key
    return VoxelIndex(
        origin=origin, size=float(size),
        voxel_to_anchors=voxel_to_anchors, anchor_to_voxel=anchor_to_voxel,
    )


def extract_patch(index: VoxelIndex, voxels) -> Patch:
    voxels = frozenset(tuple(int(c) for c in v) for v in voxels)
    members: list[np.ndarray] = [index.anchors_in(v) for v in sorted(voxels)]
    if members:
        anchor_ids = np.unique(np.concatenate(members))
    else:
        anchor_ids = np.zeros(0, dtype=np.int64)
    return Patch(voxels=voxels, anchor_ids=anchor_ids)


def patch_of_anchors(index: VoxelIndex, anchor_ids, extra_voxels=()) -> Patch:
    """Patch covering the voxels of the given anchors plus any extra voxels."""
    voxels = {index.anchor_to_voxel[int(a)] for a in anchor_ids if int(a) in index.anchor_to_voxel}
    voxels.update(tuple(int(c) for c in v) for v in extra_voxels)
    return extract_patch(index, voxels)
