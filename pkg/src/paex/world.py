"""Tri-state voxel map, feature map, camera model and the simulated depth
sensor that reveals the world.

The belief grid holds UNKNOWN / FREE / OCCUPIED states; the ground-truth
world is a fully known grid plus the set of visual features living on
obstacle and wall surfaces.  Unknown space is transparent to feature
visibility raycasts but opaque occupied voxels always block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import FREE, OCCUPIED, UNKNOWN


def wrap_angle(a: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass
class Viewpoint:
    """Candidate pose: 3D position plus yaw (normalized into (-pi, pi])."""

    position: np.ndarray
    yaw: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.yaw = wrap_angle(float(self.yaw))


@dataclass
class CameraModel:
    horizontal_fov: float = 1.2  # rad
    vertical_fov: float = 0.9  # rad
    max_range: float = 4.0  # m
    image_width: int = 640
    image_height: int = 480
    frame_rate: float = 10.0  # Hz
    focal_px: float = field(default=0.0)

    def __post_init__(self):
        if not 0.0 < self.horizontal_fov < math.pi or not 0.0 < self.vertical_fov < math.pi:
            raise ValueError("FOVs must lie in (0, pi)")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")
        nominal = self.image_width / (2.0 * math.tan(0.5 * self.horizontal_fov))
        if self.focal_px == 0.0:
            self.focal_px = nominal
        elif abs(self.focal_px - nominal) > 1e-6 * nominal:
            raise ValueError("focal_px inconsistent with image width and horizontal FOV")

    @property
    def vertical_focal_px(self) -> float:
        return self.image_height / (2.0 * math.tan(0.5 * self.vertical_fov))


class FeatureMap:
    """Set of 3D feature points with strictly positive quality scores."""

    def __init__(self, positions=None, scores=None, ids=None):
        if positions is None:
            self.positions = np.zeros((0, 3))
            self.scores = np.zeros(0)
            self.ids = np.zeros(0, dtype=np.int64)
        else:
            self.positions = np.atleast_2d(np.asarray(positions, dtype=float))
            self.scores = np.atleast_1d(np.asarray(scores, dtype=float))
            self.ids = (
                np.arange(len(self.scores), dtype=np.int64)
                if ids is None
                else np.atleast_1d(np.asarray(ids, dtype=np.int64))
            )
        if np.any(self.scores <= 0.0):
            raise ValueError("feature scores must be strictly positive")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("feature ids must be unique")

    def __len__(self):
        return len(self.ids)

    def add(self, positions, scores, ids):
        mask = ~np.isin(ids, self.ids)
        if not np.any(mask):
            return
        self.positions = np.vstack([self.positions, np.atleast_2d(positions)[mask]])
        self.scores = np.concatenate([self.scores, np.atleast_1d(scores)[mask]])
        self.ids = np.concatenate([self.ids, np.atleast_1d(ids)[mask]])

    def subset(self, ids):
        idx = np.flatnonzero(np.isin(self.ids, np.asarray(list(ids), dtype=np.int64)))
        return FeatureMap(self.positions[idx], self.scores[idx], self.ids[idx])

    def score_of(self, ids) -> float:
        if len(ids) == 0:
            return 0.0
        return float(np.sum(self.scores[np.isin(self.ids, np.asarray(list(ids), dtype=np.int64))]))

    def position_of(self, fid: int) -> np.ndarray:
        idx = np.flatnonzero(self.ids == fid)
        if idx.size == 0:
            raise KeyError(f"unknown feature id {fid}")
        return self.positions[idx[0]]


class VoxelGrid:
    """Dense tri-state occupancy lattice."""

    def __init__(self, origin, resolution: float, dims, cells: np.ndarray | None = None):
        self.origin = np.asarray(origin, dtype=float)
        if resolution <= 0.0:
            raise ValueError("resolution must be positive")
        self.resolution = float(resolution)
        self.dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in self.dims):
            raise ValueError("dims must be >= 1 componentwise")
        if cells is None:
            self.cells = np.full(self.dims, UNKNOWN, dtype=np.int8)
        else:
            cells = np.asarray(cells, dtype=np.int8)
            if cells.shape != self.dims:
                raise ValueError("cells shape does not match dims")
            self.cells = np.ascontiguousarray(cells)

    def same_geometry(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and abs(self.resolution - other.resolution) < 1e-12
            and np.allclose(self.origin, other.origin)
        )

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.origin, self.resolution, self.dims, self.cells.copy())

    @property
    def max_corner(self) -> np.ndarray:
        return self.origin + np.array(self.dims) * self.resolution

    def contains_point(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.origin) and np.all(p <= self.max_corner))

    def world_to_index(self, p):
        p = np.asarray(p, dtype=float)
        if not self.contains_point(p):
            raise ValueError(f"point {p} outside grid bounds")
        idx = np.floor((p - self.origin) / self.resolution).astype(int)
        return tuple(np.minimum(idx, np.array(self.dims) - 1))

    def index_to_world(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def state_at(self, p) -> int:
        return int(self.cells[self.world_to_index(p)])


@dataclass
class RaycastResult:
    clear: bool
    blocked_index: tuple | None = None


def raycast(grid: VoxelGrid, a, b, skip_last: bool = False) -> RaycastResult:
    """Traverse voxels on the segment a->b; Blocked at the first Occupied
    voxel, Clear otherwise.  Unknown voxels are transparent."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for p in (a, b):
        if not grid.contains_point(p):
            raise ValueError(f"raycast endpoint {p} outside grid")
    hit = _kernels.raycast_blocked(
        grid.cells, grid.origin[0], grid.origin[1], grid.origin[2], grid.resolution,
        a[0], a[1], a[2], b[0], b[1], b[2], skip_last,
    )
    if hit < 0:
        return RaycastResult(True)
    ny, nz = grid.dims[1], grid.dims[2]
    return RaycastResult(False, (hit // (ny * nz), (hit // nz) % ny, hit % nz))


def in_fov(cam: CameraModel, vp: Viewpoint, targets: np.ndarray) -> np.ndarray:
    """Boolean mask: targets within range and both angular FOVs of a camera
    at vp with zero pitch/roll."""
    d = np.atleast_2d(targets) - vp.position
    r2 = np.einsum("ij,ij->i", d, d)
    ok = r2 <= cam.max_range**2
    az = np.arctan2(d[:, 1], d[:, 0]) - vp.yaw
    az = (az + np.pi) % (2.0 * np.pi) - np.pi
    ok &= np.abs(az) <= 0.5 * cam.horizontal_fov
    el = np.arctan2(d[:, 2], np.hypot(d[:, 0], d[:, 1]))
    ok &= np.abs(el) <= 0.5 * cam.vertical_fov
    return ok


def visible_features(fm: FeatureMap, grid: VoxelGrid, vp: Viewpoint, cam: CameraModel) -> set:
    """Ids of features within range, inside the FOV, and with a clear line
    of sight (the feature's own voxel never blocks)."""
    if not grid.contains_point(vp.position):
        raise ValueError("viewpoint outside grid")
    if len(fm) == 0:
        return set()
    mask = in_fov(cam, vp, fm.positions)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return set()
    targets = np.ascontiguousarray(fm.positions[idx])
    # clamp features sitting exactly on the boundary into the grid
    eps = 1e-9
    targets = np.clip(targets, grid.origin + eps, grid.max_corner - eps)
    out = np.zeros(len(idx), dtype=np.bool_)
    _kernels.visibility_mask(
        grid.cells, grid.origin[0], grid.origin[1], grid.origin[2], grid.resolution,
        vp.position[0], vp.position[1], vp.position[2], targets, out,
    )
    return set(int(i) for i in fm.ids[idx[out]])


@dataclass
class Box:
    """Axis-aligned box, min/max corners in meters."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.hi < self.lo):
            raise ValueError("box max corner must dominate min corner")

    def contains(self, p, margin: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo - margin) and np.all(p <= self.hi + margin))


class GroundTruthWorld:
    """Voxelized arena with box obstacles and surface features."""

    def __init__(self, origin, size, resolution, boxes, features: FeatureMap):
        self.origin = np.asarray(origin, dtype=float)
        self.size = np.asarray(size, dtype=float)
        self.boxes = list(boxes)
        self.features = features
        dims = np.maximum(np.round(self.size / resolution).astype(int), 1)
        grid = VoxelGrid(self.origin, resolution, dims)
        grid.cells[:] = FREE
        centers = [
            self.origin[k] + (np.arange(dims[k]) + 0.5) * resolution for k in range(3)
        ]
        for box in self.boxes:
            sl = []
            for k in range(3):
                inside = np.flatnonzero((centers[k] > box.lo[k]) & (centers[k] < box.hi[k]))
                if inside.size == 0:
                    sl = None
                    break
                sl.append(slice(inside[0], inside[-1] + 1))
            if sl is not None:
                grid.cells[sl[0], sl[1], sl[2]] = OCCUPIED
        self.grid = grid

    @property
    def free_voxel_count(self) -> int:
        return int(np.count_nonzero(self.grid.cells == FREE))


def observe(grid: VoxelGrid, fm_revealed: FeatureMap, world: GroundTruthWorld,
            vp: Viewpoint, cam: CameraModel) -> None:
    """Simulated stereo depth sweep: reveal free/occupied voxels along FOV
    rays and copy any ground-truth feature that passes the visibility test
    into the revealed feature map.  Idempotent for a static pose."""
    if not grid.contains_point(vp.position):
        raise ValueError("viewpoint outside grid")
    _kernels.observe_sweep(
        grid.cells, world.grid.cells,
        grid.origin[0], grid.origin[1], grid.origin[2], grid.resolution,
        vp.position[0], vp.position[1], vp.position[2], vp.yaw,
        cam.horizontal_fov, cam.vertical_fov, cam.max_range,
    )
    seen = visible_features(world.features, world.grid, vp, cam)
    if seen:
        sub = world.features.subset(seen)
        fm_revealed.add(sub.positions, sub.scores, sub.ids)


def exploration_rate(grid: VoxelGrid, world: GroundTruthWorld) -> float:
    """Ratio of voxels known Free in the belief to total ground-truth free."""
    if not grid.same_geometry(world.grid):
        raise ValueError("belief grid and ground truth differ in geometry")
    total = world.free_voxel_count
    if total == 0:
        return 1.0
    known = int(np.count_nonzero((grid.cells == FREE) & (world.grid.cells == FREE)))
    return known / total
