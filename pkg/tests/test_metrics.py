from fractions import Fraction

import numpy as np
import pytest

from trustpoison.defenses.base import DefenseKind, DefenseVerdict
from trustpoison.geometry.boxes import OrientedBox
from trustpoison.metrics import (
    AsrReport,
    FrameRecord,
    average_precision,
    dataset_average_precision,
    defense_asr,
    perception_asr,
)
from trustpoison.perception.detector import Detection

SIZE = (4.4, 1.8)
TARGET = OrientedBox((20.0, 0.0), SIZE)


def _det(x, conf=0.9, agent="a"):
    return Detection((x, 0.0), SIZE, 0.0, conf, agent)


def _gt(x):
    return OrientedBox((x, 0.0), SIZE)


def test_average_precision_hand_case():
    predictions = [_det(0.0, 0.9), _det(40.0, 0.8), _det(20.0, 0.7)]
    assert average_precision(predictions, [_gt(0.0), _gt(20.0)]) == pytest.approx(5 / 6)


def test_average_precision_edge_cases():
    truth = [_gt(0.0), _gt(20.0)]
    assert average_precision([_det(0.0), _det(20.0, 0.5)], truth) == pytest.approx(1.0)
    assert average_precision([], truth) == 0.0
    assert average_precision([_det(0.0)], []) is None
    # a duplicate box on an already matched object is a false positive
    assert average_precision([_det(0.0, 0.9), _det(0.1, 0.8)], [_gt(0.0)]) == pytest.approx(1.0)


def test_dataset_ap_ranks_across_frames():
    frames = [([_det(0.0, 0.9)], [_gt(0.0)]), ([_det(40.0, 0.95)], [_gt(20.0)])]
    assert dataset_average_precision(frames) == pytest.approx(0.25)
    assert dataset_average_precision([([_det(0.0)], [])]) is None


def _record(frame, detections, verdicts=(), target=TARGET, trajectory="t", target_cells=None):
    return FrameRecord(
        frame_id=frame,
        victim_id="v",
        detections=detections,
        fused=[],
        ground_truth=[],
        target=target,
        verdicts=list(verdicts),
        target_cells=target_cells,
        trajectory=trajectory,
    )


def test_perception_asr():
    records = [
        _record(0, {"v": [_det(0.0, agent="v")], "n": [_det(20.0, agent="n")]}),
        _record(1, {"v": [_det(20.3, agent="v")], "n": [_det(20.0, agent="n")]}),
        _record(2, {"v": [], "n": []}, target=None),
    ]
    victim, nonvictim = perception_asr(records)
    assert (victim.numerator, victim.denominator) == (1, 2)
    assert (nonvictim.numerator, nonvictim.denominator) == (2, 2)


def _verdict(kind, scores=None, threshold=0.0, flagged=None, ego=None, cells=None):
    return DefenseVerdict(DefenseKind(kind), flagged, cells, scores or {}, threshold, 0, ego)


def test_mate_asr_counts_trajectories_by_last_frame():
    records = [
        _record(0, {}, [_verdict("mate", {"v": 0.9}, 0.40)], trajectory="one"),
        _record(1, {}, [_verdict("mate", {"v": 0.21}, 0.40)], trajectory="one"),
        _record(0, {}, [_verdict("mate", {"v": 0.1}, 0.40)], trajectory="two"),
        _record(1, {}, [_verdict("mate", {"v": 0.5}, 0.40)], trajectory="two"),
    ]
    report = defense_asr(records, "mate")
    assert (report.numerator, report.denominator, report.unit) == (1, 2, "trajectory")


def test_defense_asr_requires_verdicts():
    with pytest.raises(ValueError, match="no cad verdict"):
        defense_asr([_record(0, {}, [_verdict("lucia")])], "cad")


def test_cad_asr_needs_half_the_footprint():
    target_cells = np.zeros((10, 10), dtype=bool)
    target_cells[4:6, 4:6] = True
    half = np.zeros_like(target_cells)
    half[4, 4:6] = True
    one = np.zeros_like(target_cells)
    one[4, 4] = True
    records = [
        _record(0, {}, [_verdict("cad", flagged="n", cells=half)], target_cells=target_cells),
        _record(1, {}, [_verdict("cad", flagged="n", cells=one)], target_cells=target_cells),
        _record(2, {}, [_verdict("cad")], target_cells=target_cells),
    ]
    assert defense_asr(records, "cad").numerator == 1


def test_lucia_and_made_asr():
    lucia = [
        _record(0, {}, [_verdict("lucia", {"v": 0.05, "n": 1.0}, 0.1)]),
        _record(1, {}, [_verdict("lucia", {"v": 0.5, "n": 1.0}, 0.1)]),
    ]
    assert defense_asr(lucia, "lucia").exact == Fraction(1, 2)
    made = [
        _record(0, {}, [_verdict("made", flagged="v", ego="n")]),
        _record(1, {}, [_verdict("made", flagged="v", ego="v"), _verdict("made", ego="n")]),
    ]
    report = defense_asr(made, "made")
    assert (report.metric, report.numerator, report.denominator) == ("made_asr", 1, 2)


def test_asr_report_rates():
    assert AsrReport("x", 0, 0).rate == 0.0
    assert AsrReport("x", 0, 0).exact == Fraction(0)
    assert AsrReport("x", 1, 3).to_record() == {
        "metric": "x",
        "numerator": 1,
        "denominator": 3,
        "rate": 0.333333,
        "unit": "frame",
    }
