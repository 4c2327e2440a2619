"""Late (box-level) and intermediate (feature-level) fusion."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from trustpoison.geometry.boxes import box_iou
from trustpoison.geometry.pose import normalize_yaw
from trustpoison.perception.detector import Detection
from trustpoison.perception.grid import BevGrid

DEFAULT_ASSOCIATION_IOU = 0.3
FUSED_ID = "fused"


def _weight(weights: dict[str, float] | None, agent_id: str) -> float:
    if weights is None:
        return 1.0
    w = float(weights.get(agent_id, 1.0))
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"fusion weight for '{agent_id}' must lie in [0, 1], got {w}")
    return w


def _merge(members: list[tuple[Detection, float]]) -> Detection:
    seed, seed_score = members[0]
    if len(members) == 1:
        return replace(seed, confidence=seed_score)
    scores = np.array([score for _, score in members])
    total = scores.sum()
    centers = np.array([d.center for d, _ in members])
    sizes = np.array([d.size for d, _ in members])
    offsets = []
    for det, _ in members:
        # box yaw is only defined modulo pi
        delta = normalize_yaw(det.yaw - seed.yaw)
        if delta > 0.5 * math.pi:
            delta -= math.pi
        elif delta < -0.5 * math.pi:
            delta += math.pi
        offsets.append(delta)
    center = scores @ centers / total
    size = scores @ sizes / total
    yaw = seed.yaw + float(scores @ np.array(offsets) / total)
    return Detection(
        (float(center[0]), float(center[1])),
        (float(size[0]), float(size[1])),
        normalize_yaw(yaw),
        float(scores.max()),
        FUSED_ID,
        max(d.cells for d, _ in members),
    )


def late_fuse(
    box_sets: dict[str, list[Detection]],
    weights: dict[str, float] | None = None,
    association_iou: float = DEFAULT_ASSOCIATION_IOU,
) -> list[Detection]:
    """Greedy IoU association of per-agent boxes into fused detections.

    Each box's confidence is scaled by its agent's weight; weight-0 agents
    contribute nothing. Boxes are visited by scaled confidence (ties by
    agent order, then center) and join the cluster whose seed they overlap
    best above ``association_iou``.
    """
    order = {agent_id: i for i, agent_id in enumerate(box_sets)}
    candidates = []
    for agent_id, detections in box_sets.items():
        w = _weight(weights, agent_id)
        if w <= 0.0:
            continue
        for det in detections:
            candidates.append((det, det.confidence * w, order[agent_id]))
    candidates.sort(key=lambda c: (-c[1], c[2], c[0].center[0], c[0].center[1]))

    clusters: list[list[tuple[Detection, float]]] = []
    for det, score, _ in candidates:
        best, best_iou = None, association_iou
        for cluster in clusters:
            overlap = box_iou(cluster[0][0].box, det.box)
            if overlap > best_iou:
                best, best_iou = cluster, overlap
        if best is None:
            clusters.append([(det, score)])
        else:
            best.append((det, score))
    return [_merge(cluster) for cluster in clusters]


def feature_fuse(grids: dict[str, BevGrid], weights: dict[str, float] | None = None) -> BevGrid:
    """Per-cell convex combination over the agents that observe each cell.

    Weights are renormalized cell by cell; a cell whose observers all have
    weight 0 comes out unobserved and empty.
    """
    if not grids:
        raise ValueError("feature_fuse needs at least one grid")
    first = next(iter(grids.values()))
    spec = first.spec
    shape = spec.shape
    total = np.zeros(shape)
    count = np.zeros(shape)
    height = np.zeros(shape)
    occupancy = np.zeros(shape)
    origins: list[tuple[float, float, float]] = []
    dropped = 0

    for agent_id, grid in grids.items():
        if grid.spec != spec:
            raise ValueError(f"grid of '{agent_id}' uses a different spec")
        w = _weight(weights, agent_id)
        if w <= 0.0:
            continue
        cell_w = w * grid.observed
        total += cell_w
        count += cell_w * grid.count
        height += cell_w * grid.max_height
        occupancy += cell_w * grid.occupancy
        origins.extend(grid.origins)
        dropped += grid.dropped

    observed = total > 0
    safe = np.where(observed, total, 1.0)
    return BevGrid(
        spec,
        np.where(observed, count / safe, 0.0),
        np.where(observed, height / safe, 0.0),
        np.where(observed, occupancy / safe, 0.0),
        observed,
        origins=tuple(origins),
        dropped=dropped,
        agent_id=FUSED_ID,
    )
