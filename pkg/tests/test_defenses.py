import json

import numpy as np
import pytest

from trustpoison.defenses import (
    DEFENSE_INFO,
    CellState,
    DefenseInputs,
    DefenseKind,
    Psm,
    PsmSign,
    Track,
    TrustScores,
    TrustState,
    cad_check,
    calibrate_made,
    get_defense,
    list_defenses,
    lucia_decide,
    lucia_scores,
    made_check,
    mate_decide,
    mate_derive_psms,
    mate_update,
    occupancy_from_grid,
)
from trustpoison.defenses.base import DefenseVerdict
from trustpoison.defenses.cad import CadDefense, conflict_region, single_vehicle_disagreement
from trustpoison.defenses.lucia import cross_view_l1, pairwise_l1, pool, target_window
from trustpoison.defenses.made import (
    MadeCalibration,
    MadeDefense,
    load_calibration,
    reconstruction_residual,
    save_calibration,
)
from trustpoison.defenses.mate import Tracker, select_tracks, threshold_for
from trustpoison.errors import CalibrationError, ConfigError
from trustpoison.perception.detector import Detection
from trustpoison.perception.grid import CellWindow

SHAPE = (10, 10)


def _mask(*cells):
    mask = np.zeros(SHAPE, dtype=bool)
    for cell in cells:
        mask[cell] = True
    return mask


def _cell_box(agent="", conf=0.9):
    """A detection covering exactly cell (5, 5) of the small grid."""
    return Detection((0.2, 0.2), (0.4, 0.4), 0.0, conf, agent)


# -- occupancy / CAD -----------------------------------------------------------


def test_occupancy_states(make_grid):
    observed = _mask((1, 1), (5, 5))
    grid = make_grid(_mask((5, 5)), observed=observed)
    occ = occupancy_from_grid(grid)
    assert occ.cells[5, 5] == CellState.OCCUPIED
    assert occ.cells[1, 1] == CellState.FREE
    assert occ.cells[0, 0] == CellState.UNKNOWN


def _cad_maps(make_grid):
    return {
        "a": occupancy_from_grid(make_grid(_mask(), agent_id="a")),
        "b": occupancy_from_grid(make_grid(_mask(), agent_id="b")),
        "c": occupancy_from_grid(make_grid(_mask((5, 5)), agent_id="c")),
    }


def test_conflict_region(make_grid):
    maps = _cad_maps(make_grid)
    conflict = conflict_region(maps)
    assert conflict.sum() == 1
    assert conflict[5, 5]
    assert not conflict_region(maps, ignore=_mask((5, 5))).any()


def test_single_vehicle_disagreement(make_grid):
    own = occupancy_from_grid(make_grid(_mask((5, 5), (2, 2)), agent_id="a"))
    assert np.array_equal(single_vehicle_disagreement(own, [_cell_box("a")]), _mask((2, 2)))
    empty = occupancy_from_grid(make_grid(_mask(), agent_id="a"))
    assert np.array_equal(single_vehicle_disagreement(empty, [_cell_box("a")]), _mask((5, 5)))
    assert not single_vehicle_disagreement(empty, []).any()


def test_cad_flags_minority_backed_by_own_box(make_grid):
    maps = _cad_maps(make_grid)
    verdict = cad_check(maps, {"c": [_cell_box("c")]}, frame=3)
    assert verdict.flagged_agent == "c"
    assert verdict.scores == {"a": 0.0, "b": 0.0, "c": 1.0}
    assert verdict.frame == 3


def test_cad_minority_without_box_is_supported(make_grid):
    verdict = cad_check(_cad_maps(make_grid), {})
    assert verdict.flagged_agent is None


def test_cad_needs_two_maps(make_grid):
    with pytest.raises(ValueError):
        cad_check({"a": occupancy_from_grid(make_grid(_mask()))}, {})


def test_cad_defense_all_masked(make_grid):
    grids = {a: make_grid(_mask(), agent_id=a) for a in "ab"}
    inputs = DefenseInputs(0, grids, {}, ignore_cells=np.ones(SHAPE, dtype=bool))
    (verdict,) = CadDefense().check(inputs)
    assert verdict.flagged_agent is None


# -- MATE ----------------------------------------------------------------------


def _frames(agent, positive, negative, frames=10):
    psms = []
    for _ in range(frames):
        psms += [Psm(agent, PsmSign.POSITIVE)] * positive + [Psm(agent, PsmSign.NEGATIVE)] * negative
    return psms


def test_mate_trust_accumulates():
    state = TrustState.initial(["honest", "victim"])
    for _ in range(10):
        state = mate_update(state, _frames("honest", 4, 1, 1) + _frames("victim", 1, 4, 1))
    assert state.trust("honest") == pytest.approx(41 / 52)
    assert state.trust("victim") == pytest.approx(11 / 52)
    verdict = mate_decide(state, 5)
    assert verdict.flagged_agent == "victim"
    assert verdict.threshold_used == 0.40


def test_mate_update_is_order_independent():
    psms = _frames("a", 2, 3, 2) + _frames("b", 1, 0, 2)
    state = TrustState.initial(["a", "b"])
    assert mate_update(state, psms).params == mate_update(state, psms[::-1]).params


def test_mate_threshold_strict_and_ties():
    state = TrustState({"b": (2.0, 3.0), "a": (2.0, 3.0), "c": (1.0, 1.0)})
    assert mate_decide(state, 5).flagged_agent is None
    assert mate_decide(state, 10).flagged_agent == "a"
    with pytest.raises(ValueError, match="Available"):
        threshold_for(4)


def test_mate_derive_psms():
    track = Track(7, _cell_box())
    other = Track(8, Detection((-1.4, -1.4), (0.4, 0.4), 0.0, 0.9))
    psms = mate_derive_psms(
        {"a": [_cell_box("a")], "b": []},
        [track, other],
        {"a": {7: True, 8: False}, "b": {7: True, 8: True}},
        masked_tracks={"b": {8}},
    )
    signs = {(p.subject_agent, p.source_track): p.sign for p in psms}
    assert signs == {("a", 7): PsmSign.POSITIVE, ("b", 7): PsmSign.NEGATIVE}


def test_select_tracks_nearest_first():
    tracks = [Track(i, Detection((float(x), 0.0), (4.4, 1.8), 0.0, 0.9)) for i, x in enumerate([30, 5, -5, 10])]
    chosen = select_tracks(tracks, np.zeros(2), 3)
    assert [t.track_id for t in chosen] == [1, 2, 3]


def test_tracker_keeps_identity():
    tracker = Tracker(gate=2.5)
    first = tracker.update([Detection((10.0, 0.0), (4.4, 1.8), 0.0, 0.9), Detection((30.0, 0.0), (4.4, 1.8), 0.0, 0.9)])
    second = tracker.update([Detection((31.0, 0.0), (4.4, 1.8), 0.0, 0.9), Detection((50.0, 0.0), (4.4, 1.8), 0.0, 0.9)])
    assert [t.track_id for t in first] == [0, 1]
    assert [t.track_id for t in second] == [1, 2]


def test_mate_defense_weights_are_trust(make_grid):
    defense = get_defense("mate")
    grids = {a: make_grid(_mask((5, 5)), agent_id=a) for a in ("a", "b")}
    inputs = DefenseInputs(0, grids, {"a": [_cell_box("a")], "b": []}, tracks=[Track(0, _cell_box())])
    defense.reset(["a", "b"])
    defense.check(inputs)
    weights = defense.fusion_weights([], ["a", "b"])
    assert weights["a"] == pytest.approx(2 / 3)
    assert weights["b"] == pytest.approx(1 / 3)


# -- LUCIA ---------------------------------------------------------------------


def test_pool_pads_and_averages():
    values = np.arange(9, dtype=float).reshape(3, 3)
    pooled = pool(values, 2)
    assert pooled.shape == (2, 2)
    assert pooled[0, 0] == pytest.approx((0 + 1 + 3 + 4) / 4)
    assert pooled[1, 1] == pytest.approx(8 / 4)
    with pytest.raises(ValueError):
        pool(values, 0)


def test_pairwise_l1_identical_and_disjoint(make_grid):
    a = make_grid(_mask((2, 2)))
    b = make_grid(_mask((7, 7)))
    assert pairwise_l1(a, a) == pytest.approx(0.0)
    assert pairwise_l1(a, b) == pytest.approx(2.0)
    assert pairwise_l1(a, b) == pytest.approx(pairwise_l1(b, a))


def test_lucia_scores_single_out_inconsistent_agent(make_grid):
    block = _mask((4, 4), (4, 5), (5, 4), (5, 5))
    grids = {
        "a": make_grid(block, agent_id="a"),
        "b": make_grid(block, agent_id="b"),
        "c": make_grid(_mask((1, 8)), agent_id="c"),
    }
    scores = lucia_scores(grids)
    trust = scores.as_dict()
    assert trust["c"] < trust["a"] == pytest.approx(trust["b"])
    assert sum(trust.values()) == pytest.approx(1.0)
    assert scores.weights()["a"] == pytest.approx(1.0)


def test_lucia_identical_agents_share_trust(make_grid):
    grids = {a: make_grid(_mask((3, 3)), agent_id=a) for a in "abcd"}
    scores = lucia_scores(grids)
    np.testing.assert_allclose(scores.trust, 0.25)
    assert lucia_decide(scores).flagged_agent is None


def test_lucia_decide_threshold():
    scores = TrustScores(("a", "b", "c"), np.array([0.55, 0.37, 0.08]), np.zeros(3))
    verdict = lucia_decide(scores)
    assert verdict.flagged_agent == "c"
    assert verdict.defense is DefenseKind.LUCIA
    assert lucia_decide(scores, threshold=0.05).flagged_agent is None


def test_lucia_coarser_pooling_blurs_disagreement(make_grid):
    a = make_grid(_mask((4, 4)))
    b = make_grid(_mask((4, 5)))
    distances = [pairwise_l1(a, b, cr) for cr in (1, 2, 5, 10)]
    assert distances[0] == pytest.approx(2.0)
    assert distances == sorted(distances, reverse=True)
    assert distances[-1] == pytest.approx(0.0)


def test_cross_view_l1_inside_target_window(make_grid):
    block = _mask((4, 4), (4, 5), (5, 4), (5, 5))
    window = target_window(block, margin=1)
    assert window == CellWindow(3, 7, 3, 7)
    rear = make_grid(block | _mask((0, 9)))
    side = make_grid(block, observed=block)
    shifted = make_grid(_mask((4, 5), (4, 6), (5, 5), (5, 6)))
    assert cross_view_l1(rear, side, window) == pytest.approx(0.0)
    assert cross_view_l1(rear, shifted, window) == pytest.approx(2.0)


# -- MADE ----------------------------------------------------------------------


def test_made_calibration_needs_frames():
    with pytest.raises(CalibrationError, match="30"):
        calibrate_made([(0.1, 0.2)] * 29)
    calib = calibrate_made([(0.0, 0.0)] * 40)
    assert calib.recon_threshold == pytest.approx(1e-6)
    assert calib.frames == 40


def test_made_calibration_quantiles():
    samples = [(float(i), 2.0 * i) for i in range(101)]
    calib = calibrate_made(samples, beta=0.5, quantile=95.0)
    assert calib.recon_threshold == pytest.approx(95.0)
    assert calib.match_threshold == pytest.approx(190.0)
    assert calib.combine(95.0, 190.0) == pytest.approx(1.0)
    assert calib.combine(190.0, 0.0) == pytest.approx(2.0 / 1.5)


def test_made_calibration_file_round_trip(tmp_path):
    calib = MadeCalibration(0.2, 0.3, beta=2.0, frames=31)
    path = save_calibration(calib, tmp_path / "made.json")
    assert load_calibration(path) == calib
    record = json.loads(path.read_text())
    record["version"] = 9
    path.write_text(json.dumps(record))
    with pytest.raises(ConfigError, match="version"):
        load_calibration(path)
    with pytest.raises(CalibrationError):
        load_calibration(tmp_path / "missing.json")


def _made_grids(make_grid):
    block = _mask((5, 5))
    return {
        "a": make_grid(block, agent_id="a"),
        "b": make_grid(block, agent_id="b"),
        "c": make_grid(_mask(), agent_id="c"),
    }


def test_reconstruction_residual(make_grid):
    grids = _made_grids(make_grid)
    residual = reconstruction_residual(grids, "c")
    assert residual[5, 5] == pytest.approx(1.0)
    assert residual.sum() == pytest.approx(1.0)
    assert reconstruction_residual(grids, "a")[5, 5] == pytest.approx(0.5)


def test_made_flags_worst_peer(make_grid):
    grids = _made_grids(make_grid)
    fused = [_cell_box("fused")]
    boxes = {"a": [_cell_box("a")], "b": [_cell_box("b")], "c": []}
    calib = MadeCalibration(0.1, 0.1)
    verdict = made_check(grids, "a", calib, fused, boxes, frame=2)
    assert set(verdict.scores) == {"b", "c"}
    assert verdict.scores["c"] == pytest.approx(10.0)
    assert verdict.flagged_agent == "c"
    assert verdict.ego_id == "a"
    masked = made_check(grids, "a", calib, fused, boxes, masked_cells={"c": _mask((5, 5))})
    assert masked.scores["c"] < verdict.scores["c"]


def test_made_requires_calibration(make_grid):
    grids = _made_grids(make_grid)
    with pytest.raises(CalibrationError):
        made_check(grids, "a", None, [], {})
    with pytest.raises(CalibrationError):
        MadeDefense().check(DefenseInputs(0, grids, {}))


def test_made_defense_one_verdict_per_ego(make_grid):
    grids = _made_grids(make_grid)
    defense = MadeDefense(MadeCalibration(0.1, 0.1))
    verdicts = defense.check(DefenseInputs(0, grids, {}, egos=["a", "b"]))
    assert [v.ego_id for v in verdicts] == ["a", "b"]


# -- registry ------------------------------------------------------------------


def test_registry():
    assert [info.name for info in list_defenses()] == ["cad", "mate", "lucia", "made"]
    assert DEFENSE_INFO["mate"].temporal
    assert DEFENSE_INFO["made"].needs_calibration
    assert get_defense(DefenseKind.CAD).kind is DefenseKind.CAD
    assert get_defense("LUCIA").kind is DefenseKind.LUCIA
    with pytest.raises(ValueError, match="Available"):
        get_defense("magic")


def test_default_weights_drop_flagged():
    verdicts = [DefenseVerdict(DefenseKind.CAD, flagged_agent="b")]
    assert get_defense("cad").fusion_weights(verdicts, ["a", "b"]) == {"a": 1.0, "b": 0.0}
    record = verdicts[0].to_record()
    assert record["flagged_agent"] == "b"
    assert record["conflict_cell_count"] == 0
