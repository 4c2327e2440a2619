import numpy as np
import pytest

from trustpoison import mitigation
from trustpoison.defenses.base import DefenseInputs, Track
from trustpoison.defenses.cad import cad_check
from trustpoison.defenses.made import MadeCalibration
from trustpoison.defenses.occupancy import occupancy_from_grid
from trustpoison.geometry.raycast import PointCloud
from trustpoison.mitigation import (
    ReflectionSettings,
    ReflectionState,
    TrustMask,
    apply_mask,
    ego_reconstruction,
    masked_fusion_guard,
    self_reflect,
)
from trustpoison.perception.detector import Detection
from trustpoison.perception.grid import dilate_cells

SETTINGS = ReflectionSettings(mask_dilation_cells=1)


def _cell(i=5, j=5):
    cells = np.zeros((10, 10), dtype=bool)
    cells[i, j] = True
    return cells


def _reflect(monkeypatch, inconsistent, frames=6, tracks=frozenset()):
    def fake(inputs, agent_id, kind, settings, calibration, cloud):
        if inputs.frame in inconsistent:
            return (None if tracks else _cell()), tracks
        return None, frozenset()

    monkeypatch.setattr(mitigation, "_localize", fake)
    state, masks = ReflectionState(), {}
    for t in range(frames):
        mask, state = self_reflect(DefenseInputs(t, {}, {}), "a", "cad", state, settings=SETTINGS)
        masks[mask.frame_id] = mask
    return masks, state


def test_two_consecutive_frames_activate(monkeypatch):
    masks, state = _reflect(monkeypatch, {2, 3})
    assert state.activation_frame == 4
    assert [f for f, m in sorted(masks.items()) if m.active] == [4, 5, 6]
    assert masks[4].has_cells
    assert masks[4].masked_cells[5, 5]
    assert masks[4].masked_cells.sum() == 5
    assert state.counter == 0


def test_interrupted_inconsistency_never_activates(monkeypatch):
    masks, state = _reflect(monkeypatch, {2, 4})
    assert state.activation_frame is None
    assert not any(m.active for m in masks.values())


def test_track_masks_accumulate(monkeypatch):
    masks, _ = _reflect(monkeypatch, {0, 1}, frames=3, tracks=frozenset({7}))
    assert masks[2].active
    assert masks[2].masked_track_ids == frozenset({7})
    assert not masks[2].has_cells


BLOCK_BOX = Detection((0.0, 0.0), (0.8, 0.8), 0.0, 0.9)


def _cells(*cells):
    mask = np.zeros((10, 10), dtype=bool)
    for cell in cells:
        mask[cell] = True
    return mask


def _block():
    return _cells((4, 4), (4, 5), (5, 4), (5, 5))


def _cloud(agent_id, *xy):
    points = np.array([(x, y, 1.0) for x, y in xy])
    return PointCloud(points, 0, agent_id, np.array([-1.9, 0.2, 0.0]))


def _reflect_twice(inputs, agent_id, kind, **kwargs):
    state = ReflectionState()
    for t in (0, 1):
        mask, state = self_reflect(inputs.with_changes(frame=t), agent_id, kind, state, settings=SETTINGS, **kwargs)
    return mask


def test_cad_reflection_masks_returns_its_own_boxes_miss(make_grid):
    # the agent sees through the block except for one stray return
    peers = _block() | _cells((9, 4), (9, 5))
    grids = {
        "a": make_grid(_cells((4, 5), (9, 4), (9, 5)), agent_id="a"),
        "b": make_grid(peers, agent_id="b"),
        "c": make_grid(peers, agent_id="c"),
    }
    boxes = {"a": [], "b": [BLOCK_BOX], "c": [BLOCK_BOX]}
    cloud = _cloud("a", (-0.2, 0.2), (1.8, -0.2), (1.8, 0.2))
    mask = _reflect_twice(DefenseInputs(0, grids, boxes), "a", "cad", cloud=cloud)
    assert mask.active
    # the far returns are outside the disputed neighborhood
    assert np.array_equal(mask.masked_cells, dilate_cells(_cells((4, 5)), 1))


def test_cad_reflection_spares_an_agent_its_own_data_supports(make_grid):
    grids = {
        "a": make_grid(_block(), agent_id="a"),
        "b": make_grid(_cells(), agent_id="b"),
        "c": make_grid(_cells(), agent_id="c"),
    }
    boxes = {"a": [BLOCK_BOX], "b": [], "c": []}
    maps = {agent_id: occupancy_from_grid(grid) for agent_id, grid in grids.items()}
    assert cad_check(maps, boxes).flagged_agent == "a"

    cloud = _cloud("a", (-0.2, -0.2), (-0.2, 0.2), (0.2, -0.2), (0.2, 0.2))
    state = ReflectionState()
    for t in range(3):
        mask, state = self_reflect(
            DefenseInputs(t, grids, boxes), "a", "cad", state, settings=SETTINGS, cloud=cloud
        )
    assert state.counter == 0
    assert not mask.active


def test_ego_reconstruction_pools_a_finer_grid(small_spec):
    cloud = _cloud("a", (1.3, -1.1), (1.5, -1.1), (1.3, -0.9), (1.5, -0.9), (-1.5, 0.9))
    recon = ego_reconstruction(cloud, small_spec)
    assert recon.shape == small_spec.shape
    assert recon[8, 2] == pytest.approx(1.0)
    assert recon[1, 7] == pytest.approx(0.25)
    assert recon.sum() == pytest.approx(1.25)


def test_lucia_reflection_masks_cells_the_ego_reconstruction_disputes(make_grid):
    grids = {"a": make_grid(_cells((8, 2), (1, 7)), agent_id="a")}
    grids |= {peer: make_grid(_block(), agent_id=peer) for peer in ("b", "c", "d")}
    cloud = _cloud("a", (1.3, -1.1), (1.5, -1.1), (1.3, -0.9), (1.5, -0.9), (-1.5, 0.9))
    inputs = DefenseInputs(0, grids, {})
    mask = _reflect_twice(inputs, "a", "lucia", cloud=cloud)
    assert mask.active
    assert np.array_equal(mask.masked_cells, dilate_cells(_cells((1, 7)), 1))
    with pytest.raises(ValueError, match="point cloud"):
        self_reflect(inputs, "a", "lucia", ReflectionState(), settings=SETTINGS)


def test_made_reflection_masks_cells_above_the_calibrated_residual(make_grid):
    grids = {
        "a": make_grid(_cells((4, 4)), agent_id="a"),
        "b": make_grid(_block(), agent_id="b"),
        "c": make_grid(_block(), agent_id="c"),
    }
    calibration = MadeCalibration(recon_threshold=0.6, match_threshold=1.0, beta=0.0)
    mask = _reflect_twice(DefenseInputs(0, grids, {}), "a", "made", calibration=calibration)
    assert mask.active
    assert np.array_equal(mask.masked_cells, dilate_cells(_cells((4, 5), (5, 4), (5, 5)), 1))


def test_mate_reflection_masks_tracks_the_agent_misses(make_grid):
    grids = {"a": make_grid(_cells(), agent_id="a"), "b": make_grid(_block(), agent_id="b")}
    inputs = DefenseInputs(0, grids, {"a": [], "b": [BLOCK_BOX]}, [BLOCK_BOX], [Track(3, BLOCK_BOX)])
    mask = _reflect_twice(inputs, "a", "mate")
    assert mask.active
    assert mask.masked_track_ids == frozenset({3})
    assert not mask.has_cells
    assert not _reflect_twice(inputs, "b", "mate").active


def test_settings_and_state_validation():
    settings = ReflectionSettings.from_constants(activation_frames=3)
    assert settings.activation_frames == 3
    assert settings.mask_dilation_cells == 5
    with pytest.raises(ValueError):
        ReflectionState(counter=-1)


def test_inactive_mask_record():
    assert TrustMask("a", 3).to_record() == {"agent": "a", "frame": 3, "cells": [], "tracks": [], "active": False}
    active = TrustMask("a", 3, _cell(1, 2), frozenset({4}), True)
    assert active.to_record()["cells"] == [[1, 2]]


def test_apply_mask_without_active_masks_is_identity():
    inputs = DefenseInputs(0, {}, {})
    assert apply_mask(inputs, None, "cad") is inputs
    assert apply_mask(inputs, {"a": TrustMask("a", 0, _cell())}, "lucia") is inputs


def test_apply_mask_per_defense():
    inputs = DefenseInputs(1, {}, {}, ignore_cells=_cell(0, 0), masked_tracks={"a": {1}})
    masks = {"a": TrustMask("a", 1, _cell(), frozenset({2}), True)}

    cad = apply_mask(inputs, masks, "cad")
    assert cad.ignore_cells[5, 5] and cad.ignore_cells[0, 0]
    assert cad.ignore_cells.sum() == 2

    made = apply_mask(inputs, masks, "made")
    assert made.ignore_cells.sum() == 1
    assert made.masked_cells["a"][5, 5]

    mate = apply_mask(inputs, masks, "mate")
    assert mate.masked_tracks == {"a": {1, 2}}
    assert inputs.masked_tracks == {"a": {1}}


def test_masked_fusion_guard(make_grid):
    occupied = _cell()
    grids = {"a": make_grid(occupied, agent_id="a"), "b": make_grid(occupied, agent_id="b")}
    near = Detection((0.2, 0.2), (0.4, 0.4), 0.0, 0.9, "a")
    far = Detection((-1.4, -1.4), (0.4, 0.4), 0.0, 0.9, "a")
    boxes = {"a": [near, far], "b": [near]}

    masks = {"a": TrustMask("a", 1, _cell(), active=True)}
    kept, cut = masked_fusion_guard(boxes, grids, masks)
    assert kept["a"] == [far]
    assert kept["b"] == [near]
    assert not cut["a"].observed[5, 5]
    assert cut["b"] is grids["b"]

    by_track = {"a": TrustMask("a", 1, None, frozenset({3}), True)}
    kept, _ = masked_fusion_guard(boxes, grids, by_track, [Track(3, far)])
    assert kept["a"] == [near]

    assert masked_fusion_guard(boxes, grids, {"a": TrustMask("a", 1)}) == (boxes, grids)
