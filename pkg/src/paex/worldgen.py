"""Procedural desk-scale arenas with controlled visual texture.

A fixed seed pins the obstacle layout; the texture level only changes how
densely features are sprinkled on surfaces and how good they are, so
texture comparisons run on identical geometry.
"""

from __future__ import annotations

import numpy as np

from ._kernels import FREE
from .world import Box, FeatureMap, GroundTruthWorld

TEXTURE_LEVELS = ("low", "medium", "high")
# features per m^2 of surface and the score distribution per level
_TEXTURE = {
    "low": (0.5, 0.05, 0.3),
    "medium": (2.0, 0.2, 0.7),
    "high": (6.0, 0.5, 1.0),
}

ARENA_SIZE = np.array([10.0, 10.0, 2.0])
START_POSITION = np.array([1.0, 1.0, 1.0])
_START_CLEARANCE = 1.2  # obstacle-free radius around the start, m
_SURFACE_OFFSET = 0.01  # features nudged off surfaces into free space, m


def _sample_boxes(rng: np.random.Generator) -> list:
    n_boxes = int(rng.integers(6, 11))
    boxes = []
    attempts = 0
    while len(boxes) < n_boxes and attempts < 200:
        attempts += 1
        footprint = rng.uniform(0.4, 1.4, size=2)
        height = float(rng.uniform(0.8, 2.0))
        lo_xy = rng.uniform([0.5, 0.5], ARENA_SIZE[:2] - 0.5 - footprint)
        lo = np.array([lo_xy[0], lo_xy[1], 0.0])
        hi = np.array([lo_xy[0] + footprint[0], lo_xy[1] + footprint[1],
                       min(height, ARENA_SIZE[2])])
        center_xy = 0.5 * (lo[:2] + hi[:2])
        half_diag = 0.5 * np.linalg.norm(hi[:2] - lo[:2])
        if np.linalg.norm(center_xy - START_POSITION[:2]) < _START_CLEARANCE + half_diag:
            continue
        boxes.append(Box(lo, hi))
    return boxes


def _surfaces(boxes: list) -> list:
    """(origin, u-axis, v-axis, outward normal, area) patches: arena walls
    plus the vertical faces and tops of every obstacle."""
    sx, sy, sz = ARENA_SIZE
    ex, ey, ez = np.eye(3)
    patches = [
        (np.array([0.0, 0.0, 0.0]), ey * sy, ez * sz, ex),        # x = 0 wall
        (np.array([sx, 0.0, 0.0]), ey * sy, ez * sz, -ex),        # x = sx wall
        (np.array([0.0, 0.0, 0.0]), ex * sx, ez * sz, ey),        # y = 0 wall
        (np.array([0.0, sy, 0.0]), ex * sx, ez * sz, -ey),        # y = sy wall
    ]
    for box in boxes:
        d = box.hi - box.lo
        patches.append((box.lo, ey * d[1], ez * d[2], -ex))
        patches.append((np.array([box.hi[0], box.lo[1], box.lo[2]]), ey * d[1], ez * d[2], ex))
        patches.append((box.lo, ex * d[0], ez * d[2], -ey))
        patches.append((np.array([box.lo[0], box.hi[1], box.lo[2]]), ex * d[0], ez * d[2], ey))
        if box.hi[2] < sz - 1e-9:
            patches.append((np.array([box.lo[0], box.lo[1], box.hi[2]]), ex * d[0], ey * d[1], ez))
    out = []
    for origin, u, v, n in patches:
        out.append((origin, u, v, n, np.linalg.norm(u) * np.linalg.norm(v)))
    return out


def generate_world(texture_level: str, seed: int, resolution: float = 0.1) -> GroundTruthWorld:
    """Deterministic 10 m x 10 m x 2 m arena for (texture_level, seed)."""
    if texture_level not in TEXTURE_LEVELS:
        raise ValueError(f"unknown texture level {texture_level!r}; "
                         f"expected one of {TEXTURE_LEVELS}")
    density, s_lo, s_hi = _TEXTURE[texture_level]
    level_index = TEXTURE_LEVELS.index(texture_level)

    geom_rng = np.random.default_rng([seed, 17])
    boxes = _sample_boxes(geom_rng)
    world = GroundTruthWorld(np.zeros(3), ARENA_SIZE, resolution, boxes, FeatureMap())

    feat_rng = np.random.default_rng([seed, level_index, 29])
    patches = _surfaces(boxes)
    areas = np.array([p[4] for p in patches])
    n_features = int(round(density * float(areas.sum())))
    probs = areas / areas.sum()
    positions = []
    scores = []
    for _ in range(n_features):
        origin, u, v, normal, _ = patches[int(feat_rng.choice(len(patches), p=probs))]
        p = origin + feat_rng.random() * u + feat_rng.random() * v + _SURFACE_OFFSET * normal
        s = float(feat_rng.uniform(s_lo, s_hi))
        if not world.grid.contains_point(p):
            continue
        if world.grid.state_at(p) != FREE:  # keep only features in free space
            continue
        positions.append(p)
        scores.append(s)
    if positions:
        world.features = FeatureMap(np.array(positions), np.array(scores),
                                    np.arange(len(scores)))
    return world
