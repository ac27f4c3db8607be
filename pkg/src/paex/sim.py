"""Deterministic episode engine: procedural worlds, a perfectly tracking
vehicle, a synthetic feature tracker with motion-blur dropout, and a
random-walk odometry-drift model whose step size grows as tracked feature
quality falls.

Planning runs on the true pose; drift is accounted in a parallel ledger and
never corrupts the map, so every metric is deterministic and attributable
to the planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import FREE, UNKNOWN
from .frontier import (FrontierCluster, PlannerParams, detect_frontiers,
                       score_all_candidates, select_subgoal)
from .position import BoundaryState, PlanningError, plan_position_trajectory
from .world import (CameraModel, FeatureMap, GroundTruthWorld, Viewpoint,
                    VoxelGrid, exploration_rate, observe, visible_features,
                    wrap_angle)
from .worldgen import START_POSITION, generate_world
from .yaw import YawPlanInput, desired_yaw_rate, optimize_yaw

FRAME_DT = 0.1  # s, camera frame period
REPLAN_PERIOD = 2.0  # s
STALL_CYCLES = 3  # consecutive subgoal-less planning cycles before giving up
MAX_PLAN_FAILURES = 5  # consecutive planner failures before giving up
CANDIDATE_TRIES = 5  # subgoal candidates attempted per planning cycle
NEAR_CLUSTERS = 10  # clusters scored per cycle before widening the search


@dataclass
class UAVState:
    """Vehicle pose and rates; yaw normalized into (-pi, pi]."""

    position: np.ndarray
    velocity: np.ndarray
    yaw: float
    yaw_rate: float
    time: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.yaw = wrap_angle(float(self.yaw))

    def viewpoint(self) -> Viewpoint:
        return Viewpoint(self.position, self.yaw)


@dataclass
class VioState:
    """Accumulated synthetic odometry drift driven by a seeded random walk.

    Each update adds sigma(q) * sqrt(dt) * eta with eta a unit-variance 3D
    normal sample and sigma(q) = sigma_min + sigma_gain * max(0, 1 - q/q_ref):
    poor tracked quality means faster drift.
    """

    drift: np.ndarray
    rng: np.random.Generator
    sigma_min: float = 0.002  # m/sqrt(s)
    sigma_gain: float = 0.05  # m/sqrt(s)
    q_ref: float = 3.0

    def __post_init__(self):
        self.drift = np.asarray(self.drift, dtype=float)


def vio_update(vio: VioState, tracked_quality: float, dt: float) -> VioState:
    """Advance the drift random walk by one frame; mutates and returns vio."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if tracked_quality < 0.0:
        raise ValueError("tracked quality must be nonnegative")
    sigma = vio.sigma_min + vio.sigma_gain * max(0.0, 1.0 - tracked_quality / vio.q_ref)
    vio.drift = vio.drift + sigma * math.sqrt(dt) * vio.rng.standard_normal(3)
    return vio


@dataclass
class EpisodeConfig:
    texture_level: str = "low"
    seed: int = 0
    params: PlannerParams = field(default_factory=PlannerParams)
    camera: CameraModel = field(default_factory=CameraModel)
    resolution: float = 0.1
    thresholds: tuple = (1.0, 2.0, 3.0)
    time_cap: float = 300.0
    target_rate: float = 0.95
    omega_blur: float = 0.8  # rad/s residual-rate dropout
    sigma_min: float = 0.002
    sigma_gain: float = 0.05
    q_ref: float | None = None  # drift-law quality scale; None -> planner q_hat_v

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        if any(t <= 0 for t in th) or any(a >= b for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be positive and ascending")
        self.thresholds = th


@dataclass
class FrameRecord:
    time: float
    position: np.ndarray
    yaw: float
    tracked: dict  # feature id -> quality score
    drift_norm: float
    exploration_rate: float

    @property
    def tracked_count(self) -> int:
        return len(self.tracked)

    @property
    def tracked_quality(self) -> float:
        return float(sum(self.tracked.values()))


@dataclass
class EpisodeMetrics:
    frames: list
    feature_positions: dict  # feature id -> 3D position, for reprojection
    final_rate: float
    sim_time: float
    max_drift: float
    coverage_at_threshold: dict  # threshold -> rate when drift first exceeded it
    success: dict  # threshold -> bool
    stalled: bool
    mode: str
    texture_level: str
    seed: int
    target_rate: float = 0.95

    def exploration_curve(self) -> np.ndarray:
        return np.array([[f.time, f.exploration_rate] for f in self.frames])


def success_under_threshold(metrics: EpisodeMetrics, threshold: float) -> bool:
    """Explored enough while drift stayed strictly below the threshold."""
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    return metrics.final_rate >= metrics.target_rate and metrics.max_drift < threshold


def step_vehicle(state: UAVState, pos_traj, yaw_traj, dt: float):
    """Sample both trajectories at time + dt (perfect tracking).

    Returns (new_state, complete); past either trajectory's span the sample
    clamps to that endpoint, and complete is True once both are exhausted.
    """
    if dt < 0.0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        return state, False
    t = state.time + dt
    tp = min(t, pos_traj.curve.end_time)
    ty = min(t, yaw_traj.curve.end_time)
    new = UAVState(
        pos_traj.position(tp),
        pos_traj.velocity(tp) if t <= pos_traj.curve.end_time else np.zeros(3),
        yaw_traj.yaw(ty),
        yaw_traj.yaw_rate(ty) if t <= yaw_traj.curve.end_time else 0.0,
        t,
    )
    complete = t >= pos_traj.curve.end_time - 1e-9 and t >= yaw_traj.curve.end_time - 1e-9
    return new, complete


def tracked_features(prev_vp: Viewpoint, cur_vp: Viewpoint, velocity, yaw_rate: float,
                     fm: FeatureMap, grid: VoxelGrid, cam: CameraModel,
                     omega_blur: float = 0.8) -> dict:
    """Features tracked across a frame pair: visible from both poses and not
    blur-dropped, i.e. the residual angular rate |psi_hat_i - yaw_rate|
    between the rate that would hold the feature's bearing and the actual
    yaw rate stays within omega_blur.  Returns {feature id: score}.
    """
    ids = visible_features(fm, grid, prev_vp, cam) & visible_features(fm, grid, cur_vp, cam)
    out = {}
    for fid in ids:
        f = fm.position_of(fid)
        try:
            psi_hat = desired_yaw_rate(cur_vp.position, velocity, f)
        except ValueError:
            psi_hat = 0.0  # degenerate bearing: no translational sweep
        if abs(psi_hat - yaw_rate) <= omega_blur:
            out[fid] = float(fm.scores[np.flatnonzero(fm.ids == fid)[0]])
    return out


def _clear_start_bubble(grid: VoxelGrid, world: GroundTruthWorld, p, radius: float):
    """Mark truly free voxels near the start Free so the planner can take
    off; never reveals anything the ground truth does not confirm free."""
    res = grid.resolution
    r = int(math.ceil(radius / res))
    cx, cy, cz = grid.world_to_index(p)
    nx, ny, nz = grid.dims
    for i in range(max(cx - r, 0), min(cx + r + 1, nx)):
        for j in range(max(cy - r, 0), min(cy + r + 1, ny)):
            for k in range(max(cz - r, 0), min(cz + r + 1, nz)):
                d = np.linalg.norm((np.array([i, j, k]) - [cx, cy, cz]) * res)
                if d <= radius and world.grid.cells[i, j, k] == FREE:
                    grid.cells[i, j, k] = FREE


def _split_clusters(clusters: list, grid: VoxelGrid, block: float = 1.6,
                    min_size: int = 5) -> list:
    """Partition sprawling frontier clusters into spatial blocks so every
    chunk gets its own centroid and viewpoint ring; a single centroid of a
    map-spanning frontier often sits nowhere useful."""
    block_vox = max(int(round(block / grid.resolution)), 1)
    out = []
    for cl in clusters:
        if cl.size <= 4 * min_size:
            out.append(cl)
            continue
        keys = cl.voxel_indices // block_vox
        for key in np.unique(keys, axis=0):
            idx = cl.voxel_indices[np.all(keys == key, axis=1)]
            if idx.shape[0] < min_size:
                continue
            centroid = grid.origin + (idx.mean(axis=0) + 0.5) * grid.resolution
            out.append(FrontierCluster(idx, centroid))
    return out


def _plan_to_subgoal(grid, state: UAVState, subgoal: Viewpoint, fm: FeatureMap,
                     cam: CameraModel, params: PlannerParams):
    start = BoundaryState(state.position.copy(), state.velocity.copy(), np.zeros(3))
    pos_traj = plan_position_trajectory(grid, start, subgoal.position, params,
                                        start_time=state.time)
    yaw_traj = optimize_yaw(YawPlanInput(pos_traj, state.yaw, subgoal.yaw,
                                         fm, grid, cam, params))
    return pos_traj, yaw_traj


def run_episode(config: EpisodeConfig) -> EpisodeMetrics:
    params = config.params
    cam = config.camera
    world = generate_world(config.texture_level, config.seed, config.resolution)
    grid = VoxelGrid(world.grid.origin, world.grid.resolution, world.grid.dims)
    fm_revealed = FeatureMap()
    state = UAVState(START_POSITION.copy(), np.zeros(3), 0.0, 0.0, 0.0)
    vio = VioState(np.zeros(3), np.random.default_rng([config.seed, 101]),
                   config.sigma_min, config.sigma_gain,
                   params.q_hat_v if config.q_ref is None else config.q_ref)

    _clear_start_bubble(grid, world, state.position, 2.5 * params.clearance)
    observe(grid, fm_revealed, world, state.viewpoint(), cam)

    frames = []
    coverage_at = {}
    crossed = set()
    max_drift = 0.0
    rate = exploration_rate(grid, world)
    stall_count = 0
    fail_count = 0
    stalled = False

    def record(tracked: dict):
        nonlocal max_drift, rate
        rate = exploration_rate(grid, world)
        dn = float(np.linalg.norm(vio.drift))
        max_drift = max(max_drift, dn)
        for th in config.thresholds:
            if th not in crossed and dn >= th:
                crossed.add(th)
                coverage_at[th] = rate
        frames.append(FrameRecord(state.time, state.position.copy(), state.yaw,
                                  tracked, dn, rate))

    record(tracked_features(state.viewpoint(), state.viewpoint(), state.velocity,
                            state.yaw_rate, world.features, world.grid, cam,
                            config.omega_blur))

    # viewpoints already reached without revealing anything new; the
    # optimistic coverage count keeps scoring them, so drop them explicitly
    exhausted = []

    def is_exhausted(vp: Viewpoint) -> bool:
        return any(np.linalg.norm(vp.position - p) < 0.3
                   and abs(wrap_angle(vp.yaw - y)) < 0.3 for p, y in exhausted)

    # the plan currently being flown: (pos_traj, yaw_traj, subgoal) or None
    current = None

    while rate < config.target_rate and state.time <= config.time_cap:
        clusters = _split_clusters(detect_frontiers(grid, params.min_cluster_size),
                                   grid, min_size=params.min_cluster_size)
        attempted = False
        plan = None
        if clusters:
            # score the nearest clusters first; the distance term dominates
            # far candidates anyway, and scoring every split cluster is the
            # main per-cycle cost
            near = sorted(clusters,
                          key=lambda cl: float(np.linalg.norm(cl.centroid - state.position)))
            scored = []
            for subset in (near[:NEAR_CLUSTERS], near[NEAR_CLUSTERS:]):
                if not subset:
                    continue
                scored = sorted(score_all_candidates(subset, state.viewpoint(), grid,
                                                     fm_revealed, cam, params),
                                key=lambda c: (-c.score, c.distance, c.index))
                scored = [c for c in scored if not is_exhausted(c.viewpoint)]
                if scored:
                    break
            for cand in scored[:CANDIDATE_TRIES]:
                attempted = True
                try:
                    pt, yt = _plan_to_subgoal(grid, state, cand.viewpoint,
                                              fm_revealed, cam, params)
                    plan = (pt, yt, cand.viewpoint)
                    break
                except PlanningError:
                    continue
        if plan is not None:
            current = plan
            stall_count = 0
            fail_count = 0
        elif current is None:
            # grounded with nothing to fly: count failures/stalls, then
            # hover briefly so no-progress cycles still consume sim time
            if attempted:
                fail_count += 1
                if fail_count >= MAX_PLAN_FAILURES:
                    stalled = True
                    break
            stall_count += 1
            if stall_count >= STALL_CYCLES:
                stalled = True
                break
            for _ in range(5):
                if state.time > config.time_cap:
                    break
                state.time += FRAME_DT
                observe(grid, fm_revealed, world, state.viewpoint(), cam)
                tr = tracked_features(state.viewpoint(), state.viewpoint(),
                                      state.velocity, state.yaw_rate,
                                      world.features, world.grid, cam,
                                      config.omega_blur)
                vio_update(vio, sum(tr.values()), FRAME_DT)
                record(tr)
            continue
        # else: a mid-flight replan failed; the old trajectory is still
        # collision-free (the belief only gains information), keep flying it
        pos_traj, yaw_traj, subgoal = current
        replan_at = state.time + REPLAN_PERIOD
        rate_before = rate
        complete = False
        while state.time <= config.time_cap and rate < config.target_rate:
            prev_vp = state.viewpoint()
            state, complete = step_vehicle(state, pos_traj, yaw_traj, FRAME_DT)
            # corridor boxes may touch the arena boundary; keep the sampled
            # pose inside the grid against solver-tolerance overshoot
            state.position = np.clip(state.position, grid.origin + 1e-9,
                                     grid.max_corner - 1e-9)
            observe(grid, fm_revealed, world, state.viewpoint(), cam)
            tr = tracked_features(prev_vp, state.viewpoint(), state.velocity,
                                  state.yaw_rate, world.features, world.grid,
                                  cam, config.omega_blur)
            vio_update(vio, sum(tr.values()), FRAME_DT)
            record(tr)
            if complete or state.time >= replan_at:
                break
        if complete:
            if rate - rate_before < 1e-4:
                exhausted.append((subgoal.position.copy(), subgoal.yaw))
            current = None

    feature_positions = {int(fid): world.features.position_of(int(fid))
                         for fid in world.features.ids}
    success = {th: rate >= config.target_rate and max_drift < th
               for th in config.thresholds}
    return EpisodeMetrics(frames, feature_positions, rate, state.time, max_drift,
                          coverage_at, success, stalled, params.mode,
                          config.texture_level, config.seed, config.target_rate)


def _project(cam: CameraModel, position, yaw: float, f) -> tuple | None:
    """Pinhole pixel coordinates of a point for a zero pitch/roll camera, or
    None when the point is behind the camera or outside the image."""
    d = np.asarray(f, float) - np.asarray(position, float)
    forward = d[0] * math.cos(yaw) + d[1] * math.sin(yaw)
    if forward <= 1e-9:
        return None
    right = d[0] * math.sin(yaw) - d[1] * math.cos(yaw)
    u = 0.5 * cam.image_width + cam.focal_px * right / forward
    v = 0.5 * cam.image_height - cam.vertical_focal_px * d[2] / forward
    if not (0.0 <= u < cam.image_width and 0.0 <= v < cam.image_height):
        return None
    return u, v


def _accumulate_heatmap(metrics: EpisodeMetrics, cam: CameraModel, bins=(32, 32)) -> np.ndarray:
    """Raw per-bin counts of tracked-feature reprojections over all frames;
    the total equals the number of (frame, in-image tracked feature) pairs."""
    hist = np.zeros(bins)
    for fr in metrics.frames:
        for fid in fr.tracked:
            uv = _project(cam, fr.position, fr.yaw, metrics.feature_positions[fid])
            if uv is None:
                continue
            bu = min(int(uv[0] / cam.image_width * bins[0]), bins[0] - 1)
            bv = min(int(uv[1] / cam.image_height * bins[1]), bins[1] - 1)
            hist[bv, bu] += 1.0
    return hist


def feature_heatmap(metrics: EpisodeMetrics, cam: CameraModel, bins=(32, 32)) -> np.ndarray:
    """Frame-averaged 2D histogram of tracked feature image locations,
    normalized so the peak bin is 1 (all-zero when nothing was tracked)."""
    if not metrics.frames:
        raise ValueError("episode log is empty")
    hist = _accumulate_heatmap(metrics, cam, bins) / len(metrics.frames)
    peak = hist.max()
    return hist / peak if peak > 0 else hist
