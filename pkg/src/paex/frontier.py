"""Frontier detection, viewpoint sampling and perception-weighted scoring.

A frontier voxel is a known-Free voxel with at least one Unknown 6-neighbor;
clusters are 26-connected components.  Candidate viewpoints sit on rings
around each cluster centroid, facing it, and are scored by distance,
expected newly-observed volume and a saturating visual-feature utility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels
from ._kernels import FREE, UNKNOWN
from .world import CameraModel, FeatureMap, Viewpoint, VoxelGrid, visible_features

MODES = ("full", "no_pa_frontier", "no_yaw_opt", "greedy")


@dataclass
class PlannerParams:
    """Exploration planner weights, thresholds and kinematic limits.

    The default distance/coverage/feature weights put the three score terms
    on comparable magnitude for the default desk-scale arena; w_c is per
    voxel, so 0.01 corresponds to one score unit per 100 voxels.
    """

    w_d: float = 0.5
    w_c: float = 0.01
    w_v: float = 2.0
    q_hat_v: float = 3.0
    tau_cov: float = 0.5
    delta_psi: float = 0.3
    lambda_psi: float = 0.1
    v_max: float = 1.5
    a_max: float = 2.0
    psi_dot_max: float = 1.5
    psi_ddot_max: float = 3.0
    mode: str = "full"
    min_cluster_size: int = 5
    max_candidates: int = 36
    clearance: float = 0.2
    ring_radii: tuple = (0.8, 1.2, 1.6)
    ring_angles: int = 12
    position_order: int = 7
    yaw_order: int = 4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("q_hat_v", "tau_cov", "delta_psi", "v_max", "a_max",
                     "psi_dot_max", "psi_ddot_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("w_d", "w_c", "w_v", "lambda_psi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def perception_in_frontier(self) -> bool:
        return self.mode in ("full", "no_yaw_opt")

    @property
    def continuous_yaw(self) -> bool:
        return self.mode in ("full", "no_pa_frontier")


@dataclass
class FrontierCluster:
    voxel_indices: np.ndarray  # (k, 3) int
    centroid: np.ndarray
    candidates: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.voxel_indices.shape[0]


def frontier_mask(grid: VoxelGrid) -> np.ndarray:
    """Free voxels with at least one Unknown 6-neighbor."""
    c = grid.cells
    free = c == FREE
    unknown_nb = np.zeros_like(free)
    for axis in range(3):
        for shift in (1, -1):
            rolled = np.roll(c == UNKNOWN, shift, axis=axis)
            # voxels on the rolled-over boundary have no neighbor there
            sl = [slice(None)] * 3
            sl[axis] = 0 if shift == 1 else -1
            rolled[tuple(sl)] = False
            unknown_nb |= rolled
    return free & unknown_nb


def detect_frontiers(grid: VoxelGrid, min_cluster_size: int = 5) -> list:
    """Cluster frontier voxels into 26-connected components."""
    mask = frontier_mask(grid)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3, 3), dtype=bool))
    clusters = []
    for lab in range(1, n + 1):
        idx = np.argwhere(labels == lab)
        if idx.shape[0] < min_cluster_size:
            continue
        centroid = grid.origin + (idx.mean(axis=0) + 0.5) * grid.resolution
        clusters.append(FrontierCluster(idx, centroid))
    return clusters


def _position_clear(grid: VoxelGrid, p: np.ndarray, clearance: float) -> bool:
    """Known-Free voxel with a Free ball of the given radius around it."""
    if not grid.contains_point(p):
        return False
    res = grid.resolution
    r_vox = int(clearance / res)
    cx, cy, cz = grid.world_to_index(p)
    nx, ny, nz = grid.dims
    lo = (max(cx - r_vox, 0), max(cy - r_vox, 0), max(cz - r_vox, 0))
    hi = (min(cx + r_vox, nx - 1), min(cy + r_vox, ny - 1), min(cz + r_vox, nz - 1))
    block = grid.cells[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
    return bool(np.all(block == FREE))


def sample_viewpoints(cluster: FrontierCluster, grid: VoxelGrid, cam: CameraModel,
                      params: PlannerParams) -> list:
    """Ring-sampled candidate viewpoints around the cluster centroid, kept
    only in known-Free space with clearance, yaw facing the centroid."""
    if cluster.size == 0:
        raise ValueError("cluster must be non-empty")
    out = []
    zmin = grid.origin[2] + 2 * grid.resolution
    zmax = grid.origin[2] + grid.dims[2] * grid.resolution - 2 * grid.resolution
    z = float(np.clip(cluster.centroid[2], zmin, zmax))
    for r in params.ring_radii:
        for i in range(params.ring_angles):
            ang = 2.0 * math.pi * i / params.ring_angles
            p = np.array([
                cluster.centroid[0] + r * math.cos(ang),
                cluster.centroid[1] + r * math.sin(ang),
                z,
            ])
            if not _position_clear(grid, p, params.clearance):
                continue
            yaw = math.atan2(cluster.centroid[1] - p[1], cluster.centroid[0] - p[0])
            out.append(Viewpoint(p, yaw))
            if len(out) >= params.max_candidates:
                return out
    return out


def coverage_utility(vp: Viewpoint, grid: VoxelGrid, cam: CameraModel) -> int:
    """Count of Unknown voxels that would become observed from vp."""
    if not grid.contains_point(vp.position):
        raise ValueError("viewpoint outside grid")
    return int(_kernels.coverage_count(
        grid.cells, grid.origin[0], grid.origin[1], grid.origin[2], grid.resolution,
        vp.position[0], vp.position[1], vp.position[2], vp.yaw,
        cam.horizontal_fov, cam.vertical_fov, cam.max_range,
    ))


def feature_utility(vp: Viewpoint, fm: FeatureMap, grid: VoxelGrid, cam: CameraModel) -> float:
    """Sum of quality scores over features visible from vp."""
    return fm.score_of(visible_features(fm, grid, vp, cam))


def score_viewpoint(vp: Viewpoint, current: Viewpoint, q_c: float, q_v: float,
                    params: PlannerParams) -> float:
    """Composite frontier score: negative travel distance, coverage gain,
    and a tanh-saturated feature term (dropped outside perception-aware
    modes)."""
    dist = float(np.linalg.norm(current.position - vp.position))
    score = -params.w_d * dist + params.w_c * q_c
    if params.perception_in_frontier:
        score += params.w_v * math.tanh(q_v - params.q_hat_v)
    return score


@dataclass
class ScoredCandidate:
    viewpoint: Viewpoint
    score: float
    distance: float
    index: int


def select_subgoal(candidates: list) -> Viewpoint | None:
    """Highest-scoring candidate; ties broken by smaller distance to the
    current position, then by lower candidate index."""
    best = None
    for c in candidates:
        if best is None:
            best = c
            continue
        if c.score > best.score + 1e-12:
            best = c
        elif abs(c.score - best.score) <= 1e-12:
            if c.distance < best.distance - 1e-12:
                best = c
            elif abs(c.distance - best.distance) <= 1e-12 and c.index < best.index:
                best = c
    return None if best is None else best.viewpoint


def score_all_candidates(clusters: list, current: Viewpoint, grid: VoxelGrid,
                         fm: FeatureMap, cam: CameraModel, params: PlannerParams) -> list:
    """Sample and score viewpoints for every cluster."""
    scored = []
    idx = 0
    for cluster in clusters:
        cluster.candidates = sample_viewpoints(cluster, grid, cam, params)
        for vp in cluster.candidates:
            q_c = coverage_utility(vp, grid, cam)
            q_v = feature_utility(vp, fm, grid, cam) if params.perception_in_frontier else 0.0
            scored.append(ScoredCandidate(
                vp,
                score_viewpoint(vp, current, q_c, q_v, params),
                float(np.linalg.norm(current.position - vp.position)),
                idx,
            ))
            idx += 1
    return scored
