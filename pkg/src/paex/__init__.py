"""Perception-aware frontier exploration: planning library plus a
deterministic desk-scale simulator and batch experiment harness."""

from .bezier import (BezierSegment, PiecewiseBezier, bernstein, bernstein_row,
                     derivative_cost_matrix, snap_cost_matrix)
from .config import ConfigError, config_from_dict, config_to_dict, parse_config
from .frontier import (FrontierCluster, PlannerParams, ScoredCandidate,
                       coverage_utility, detect_frontiers, feature_utility,
                       sample_viewpoints, score_all_candidates, score_viewpoint,
                       select_subgoal)
from .position import (BoundaryState, Corridor, PlanningError,
                       PositionTrajectory, allocate_times, build_corridor,
                       optimize_position, plan_path, plan_position_trajectory)
from .qp import QPResult, QuadraticProgram, solve_qp
from .sim import (EpisodeConfig, EpisodeMetrics, FrameRecord, UAVState,
                  VioState, feature_heatmap, run_episode, step_vehicle,
                  success_under_threshold, tracked_features, vio_update)
from .world import (Box, CameraModel, FeatureMap, GroundTruthWorld,
                    RaycastResult, Viewpoint, VoxelGrid, exploration_rate,
                    in_fov, observe, raycast, visible_features, wrap_angle)
from .worldgen import TEXTURE_LEVELS, generate_world
from .yaw import (YawPlanInput, YawTrajectory, covisibility_sampling,
                  desired_yaw_rate, optimize_yaw, perceptual_cost,
                  perceptual_gradient, smoothness_cost)

__version__ = "0.1.0"
