import numpy as np
import pytest

from segcritic import errors
from segcritic.core import RegionSelection, SegmentationMask
from segcritic.metrics import (
    SessionLog,
    boundary_band,
    boundary_iou,
    confusion_matrix,
    effort_stats,
    miou,
    propagation_gain,
)

from conftest import random_mask
from oracles import boundary_band_oracle, iou_oracle


def _mask(arr):
    return SegmentationMask(np.asarray(arr, np.uint8))


class TestConfusionMatrix:
    def test_perfect_is_diagonal(self, rng):
        m = random_mask(rng, 6, 6)
        cm = confusion_matrix(m, m)
        assert cm.counts.sum() == 36
        assert np.array_equal(np.diag(np.diag(cm.counts)), cm.counts)

    def test_all_ignored_zero(self, rng):
        m = random_mask(rng, 4, 4)
        cm = confusion_matrix(m, m, ignore=RegionSelection.full(4, 4))
        assert cm.total == 0

    def test_hand_enumerated_case(self):
        pred = _mask([[1, 1], [0, 0]])
        gt = _mask([[1, 0], [0, 0]])
        cm = confusion_matrix(pred, gt)
        assert cm.counts[1, 1] == 1
        assert cm.counts[0, 1] == 1
        assert cm.counts[0, 0] == 2

    def test_dimension_mismatch(self):
        with pytest.raises(errors.DimensionMismatch):
            confusion_matrix(_mask([[0]]), _mask([[0, 0]]))


class TestMiou:
    def test_perfect(self, rng):
        m = random_mask(rng, 8, 8)
        _, mean = miou(confusion_matrix(m, m))
        assert mean == 1.0

    def test_hand_case_7_12(self):
        pred = _mask([[1, 1], [0, 0]])
        gt = _mask([[1, 0], [0, 0]])
        per_class, mean = miou(confusion_matrix(pred, gt))
        assert per_class[1] == pytest.approx(1 / 2)
        assert per_class[0] == pytest.approx(2 / 3)
        assert mean == pytest.approx(7 / 12)

    def test_total_miss(self):
        pred = _mask(np.zeros((3, 3)))
        gt = _mask(np.ones((3, 3)))
        per_class, mean = miou(confusion_matrix(pred, gt))
        assert per_class[0] == 0.0
        assert per_class[1] == 0.0
        assert mean == 0.0

    def test_empty_matrix(self):
        with pytest.raises(errors.EmptyMatrix):
            m = _mask([[0]])
            miou(confusion_matrix(m, m, ignore=RegionSelection.full(1, 1)))

    def test_matches_oracle_random(self, rng):
        for _ in range(300):
            pred = random_mask(rng, 8, 8)
            gt = random_mask(rng, 8, 8)
            per_class, mean = miou(confusion_matrix(pred, gt))
            o_per, o_mean = iou_oracle(pred.labels, gt.labels)
            for got, want in zip(per_class, o_per):
                if want is None:
                    assert got is None
                else:
                    assert abs(got - want) < 1e-12
            assert abs(mean - o_mean) < 1e-12

    def test_symmetric(self, rng):
        pred = random_mask(rng, 8, 8)
        gt = random_mask(rng, 8, 8)
        _, a = miou(confusion_matrix(pred, gt))
        _, b = miou(confusion_matrix(gt, pred))
        assert a == pytest.approx(b)


class TestBoundaryIou:
    def test_identical_masks(self):
        labels = np.zeros((8, 8), np.uint8)
        labels[2:6, 2:6] = 1
        m = _mask(labels)
        assert boundary_iou(m, m, 1, d=2) == 1.0

    def test_disjoint_bands(self):
        a = np.zeros((12, 12), np.uint8)
        b = np.zeros((12, 12), np.uint8)
        a[0:3, 0:3] = 1
        b[8:11, 8:11] = 1
        assert boundary_iou(_mask(a), _mask(b), 1, d=1) == 0.0

    def test_absent_when_class_missing(self):
        m = _mask(np.zeros((4, 4)))
        assert boundary_iou(m, m, 3, d=1) is None

    def test_shifted_square_matches_oracle(self):
        a = np.zeros((8, 8), np.uint8)
        b = np.zeros((8, 8), np.uint8)
        a[1:6, 1:6] = 1
        b[2:7, 1:6] = 1  # shifted down by one
        d = 2
        band_a = boundary_band_oracle(a == 1, d)
        band_b = boundary_band_oracle(b == 1, d)
        expected = (band_a & band_b).sum() / (band_a | band_b).sum()
        assert boundary_iou(_mask(a), _mask(b), 1, d=d) == pytest.approx(expected)

    def test_band_matches_oracle_random(self, rng):
        for _ in range(100):
            mask = rng.random((8, 8)) < 0.5
            d = int(rng.integers(1, 3))
            assert np.array_equal(boundary_band(mask, d), boundary_band_oracle(mask, d))

    def test_symmetric(self, rng):
        a = random_mask(rng, 8, 8)
        b = random_mask(rng, 8, 8)
        for c in range(7):
            x = boundary_iou(a, b, c)
            y = boundary_iou(b, a, c)
            assert (x is None and y is None) or x == pytest.approx(y)

    def test_in_unit_interval(self, rng):
        for _ in range(50):
            a = random_mask(rng, 8, 8)
            b = random_mask(rng, 8, 8)
            for c in range(7):
                v = boundary_iou(a, b, c)
                assert v is None or 0.0 <= v <= 1.0


def _correction_event(rid, kind, site="s0", face="flat", secs=10.0, clicks=2, confirmed=False, ts=0.0):
    prov = (
        {"kind": "human", "interactions": clicks, "elapsed_s": secs}
        if kind == "human"
        else {"kind": "propagated", "source_record": "h0", "family_similarities": [0.9, 0.9, None], "confirmed": confirmed}
    )
    return {
        "type": "correction_applied",
        "ts": ts,
        "record": {
            "record_id": rid,
            "site_id": site,
            "face": face,
            "provenance": prov,
        },
    }


class TestPropagationGain:
    def test_31_of_50(self):
        log = SessionLog()
        for i in range(19):
            log.append(_correction_event(f"h{i}", "human", ts=float(i)))
        for i in range(31):
            log.append(_correction_event(f"p{i}", "prop", ts=float(19 + i)))
        assert propagation_gain(log) == pytest.approx(0.62)

    def test_no_propagation(self):
        log = SessionLog()
        log.append(_correction_event("h0", "human"))
        assert propagation_gain(log) == 0.0

    def test_all_auto(self):
        log = SessionLog()
        log.append(_correction_event("p0", "prop"))
        assert propagation_gain(log) == 1.0

    def test_empty_log(self):
        with pytest.raises(errors.EmptyLog):
            propagation_gain(SessionLog())


class TestEffortStats:
    def test_two_records_one_image(self):
        log = SessionLog()
        log.append(_correction_event("a", "human", secs=10.0, clicks=2, ts=0.0))
        log.append(_correction_event("b", "human", secs=14.0, clicks=1, ts=1.0))
        secs, clicks = effort_stats(log)
        assert secs == 24.0
        assert clicks == 3.0

    def test_propagated_excluded(self):
        log = SessionLog()
        log.append(_correction_event("a", "human", secs=95.0, clicks=1, ts=0.0))
        log.append(_correction_event("p", "prop", ts=1.0))
        secs, clicks = effort_stats(log)
        assert secs == 95.0

    def test_single_95s_record(self):
        log = SessionLog()
        log.append(_correction_event("a", "human", secs=95.0, clicks=4))
        assert effort_stats(log)[0] == 95.0

    def test_empty(self):
        with pytest.raises(errors.EmptyLog):
            effort_stats(SessionLog())


class TestSessionLogInvariants:
    def test_monotone_timestamps(self):
        log = SessionLog()
        log.append({"type": "x", "ts": 5.0})
        with pytest.raises(ValueError):
            log.append({"type": "x", "ts": 4.0})

    def test_unique_record_ids(self):
        log = SessionLog()
        log.append(_correction_event("a", "human", ts=0.0))
        with pytest.raises(ValueError):
            log.append(_correction_event("a", "human", ts=1.0))

    def test_ndjson_round_trip(self):
        log = SessionLog()
        log.append(_correction_event("a", "human", ts=0.0))
        log.append({"type": "propagation_run", "ts": 1.0, "auto_count": 2, "review_count": 0})
        back = SessionLog.from_ndjson(log.to_ndjson())
        assert back.events == log.events
