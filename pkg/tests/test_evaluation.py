import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from blc.boxes import Box
from blc.evaluation import (
    MetricError, average_precision, classwise_recall, evaluate_gzsd, evaluate_zsd, harmonic_mean, iou,
    map_at_05, match_image, per_class_ap, recall_at_k,
)
from blc.records import (
    SEEN, UNSEEN, Detection, GroundTruth, RecordError, read_detections, read_ground_truth, write_detections,
    write_ground_truth,
)
from metric_fixtures import det_records, gt_records, oracle_images

CLASSES = ["cat", "dog", "bus"]


class TestIou:
    def test_identical(self):
        assert iou(Box(0, 0, 3, 4), Box(0, 0, 3, 4)) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) == 0.0

    def test_half_overlap(self):
        assert iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)


class TestRecall:
    def test_exact_copies(self):
        gts = gt_records()
        dets = [Detection(g.image_id, g.class_name, 0.5, g.box) for g in gts]
        assert recall_at_k(dets, gts) == 100.0

    def test_no_detections(self):
        assert recall_at_k([], gt_records()) == 0.0

    def test_no_ground_truth(self):
        with pytest.raises(MetricError, match="undefined recall"):
            recall_at_k(det_records(), [])

    @pytest.mark.parametrize("thr", [0.4, 0.5, 0.6, 0.7])
    @pytest.mark.parametrize("k", [1, 2, 3, 100])
    def test_fixture_vs_oracle(self, thr, k):
        got = recall_at_k(det_records(), gt_records(), k, thr)
        assert abs(got - oracles.recall(oracle_images(), k, thr)) <= 1e-9

    def test_fixture_known_value(self):
        # hits at 0.5: gt0, gt2 (dog), gt1 (IoU 7/13), img1 cat, bus (0,40), img2 dog, cat, bus
        assert recall_at_k(det_records(), gt_records(), 100, 0.5) == pytest.approx(80.0, abs=1e-9)

    def test_permutation_invariance(self):
        dets, gts = det_records(), gt_records()
        ref = recall_at_k(dets, gts, 2, 0.5)
        rnd = random.Random(0)
        for _ in range(30):
            d = dets[:]
            # shuffle but keep the tied pair in its original relative order
            rnd.shuffle(d)
            i, j = d.index(dets[2]), d.index(dets[3])
            if i > j:
                d[i], d[j] = d[j], d[i]
            assert recall_at_k(d, rnd.sample(gts, len(gts)), 2, 0.5) == ref

    def test_monotone(self):
        dets, gts = det_records(), gt_records()
        by_thr = [recall_at_k(dets, gts, 100, t) for t in (0.3, 0.4, 0.5, 0.6, 0.7, 0.9)]
        assert by_thr == sorted(by_thr, reverse=True)
        by_k = [recall_at_k(dets, gts, k, 0.5) for k in (1, 2, 3, 4, 100)]
        assert by_k == sorted(by_k)

    def test_each_gt_matched_once(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10))]
        dets = [Detection("a", "cat", 0.9 - 0.1 * i, (0, 0, 10, 10)) for i in range(3)]
        res = match_image(dets, gts, 0.5)
        assert res.det_tp.tolist() == [True, False, False] and res.gt_matched.sum() == 1

    def test_tie_goes_to_lowest_gt_index(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10)), GroundTruth("a", "cat", (0, 0, 10, 10))]
        res = match_image([Detection("a", "cat", 0.9, (0, 0, 10, 10))], gts, 0.5)
        assert res.det_gt.tolist() == [0]

    def test_class_aware(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10))]
        assert recall_at_k([Detection("a", "dog", 0.9, (0, 0, 10, 10))], gts) == 0.0


class TestAveragePrecision:
    def test_single_perfect(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10))]
        assert average_precision([Detection("a", "cat", 0.9, (0, 0, 10, 10))], gts) == 100.0

    def test_tp_then_fp(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10))]
        dets = [Detection("a", "cat", 0.9, (0, 0, 10, 10)), Detection("a", "cat", 0.8, (50, 50, 60, 60))]
        assert average_precision(dets, gts) == 100.0

    def test_fp_then_tp(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10))]
        dets = [Detection("a", "cat", 0.9, (50, 50, 60, 60)), Detection("a", "cat", 0.8, (0, 0, 10, 10))]
        assert average_precision(dets, gts) == 50.0

    @pytest.mark.parametrize("cls", CLASSES)
    @pytest.mark.parametrize("thr", [0.5, 0.6])
    def test_fixture_vs_oracle(self, cls, thr):
        dets = [d for d in det_records() if d.class_name == cls]
        gts = [g for g in gt_records() if g.class_name == cls]
        assert abs(average_precision(dets, gts, thr) - oracles.average_precision(oracle_images(cls), thr)) <= 1e-9

    def test_five_box_fixture(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10)), GroundTruth("a", "cat", (20, 0, 30, 10)),
               GroundTruth("b", "cat", (0, 0, 8, 8))]
        dets = [Detection("a", "cat", 0.9, (0, 0, 10, 9)), Detection("b", "cat", 0.8, (30, 30, 40, 40)),
                Detection("a", "cat", 0.7, (21, 0, 31, 10)), Detection("b", "cat", 0.6, (0, 0, 8, 9)),
                Detection("a", "cat", 0.5, (0, 0, 10, 10))]
        images = {"a": ([("cat", d.box, d.score) for d in dets if d.image_id == "a"],
                        [("cat", g.box) for g in gts if g.image_id == "a"]),
                  "b": ([("cat", d.box, d.score) for d in dets if d.image_id == "b"],
                        [("cat", g.box) for g in gts if g.image_id == "b"])}
        # PR: 1/1, 1/2, 2/3, 3/4, 3/5 at recalls 1/3, 1/3, 2/3, 1, 1 -> (1 + 3/4 + 3/4) / 3
        assert average_precision(dets, gts) == pytest.approx(100 * 2.5 / 3, abs=1e-9)
        assert abs(average_precision(dets, gts) - oracles.average_precision(images, 0.5)) <= 1e-9

    def test_no_ground_truth(self):
        with pytest.raises(MetricError):
            average_precision([], [])

    def test_map_skips_absent_classes(self):
        aps = per_class_ap(det_records(), gt_records(), CLASSES + ["zebra"])
        assert aps["zebra"] is None
        assert map_at_05(aps) == pytest.approx(np.mean([aps[c] for c in CLASSES]))

    def test_101_point_flag(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10))]
        dets = [Detection("a", "cat", 0.9, (50, 50, 60, 60)), Detection("a", "cat", 0.8, (0, 0, 10, 10))]
        assert average_precision(dets, gts, interpolation="101") == pytest.approx(50.0)
        with pytest.raises(MetricError):
            average_precision(dets, gts, interpolation="11")


class TestClasswiseRecall:
    def test_weighted_mean_is_overall(self):
        per = classwise_recall(det_records(), gt_records(), CLASSES)
        counts = {c: sum(g.class_name == c for g in gt_records()) for c in CLASSES}
        weighted = sum(per[c] * counts[c] for c in CLASSES) / sum(counts.values())
        assert weighted == pytest.approx(recall_at_k(det_records(), gt_records()), abs=1e-9)

    def test_zero_detections_and_absent(self):
        per = classwise_recall([], gt_records(), ["cat", "zebra"])
        assert per == {"cat": 0.0, "zebra": None}

    @pytest.mark.parametrize("cls", CLASSES)
    def test_vs_oracle(self, cls):
        per = classwise_recall(det_records(), gt_records(), CLASSES)
        ref = oracles.recall({i: (d, [g for g in gs if g[0] == cls]) for i, (d, gs) in oracle_images().items()
                              if any(g[0] == cls for g in gs)}, 100, 0.5)
        assert abs(per[cls] - ref) <= 1e-9


class TestHarmonicMean:
    @pytest.mark.parametrize("a,b,expected", [(36.00, 13.10, 19.21), (56.39, 51.65, 53.92)])
    def test_reported_pairs(self, a, b, expected):
        assert abs(harmonic_mean(a, b) - expected) <= 0.02

    def test_equal(self):
        assert harmonic_mean(7.5, 7.5) == 7.5

    def test_errors(self):
        with pytest.raises(MetricError):
            harmonic_mean(0, 0)
        with pytest.raises(MetricError):
            harmonic_mean(-1, 2)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 100), st.floats(0, 100))
    def test_bounds(self, a, b):
        if a + b == 0:
            return
        h = harmonic_mean(a, b)
        assert min(a, b) - 1e-9 <= h <= (a + b) / 2 + 1e-9


class TestReports:
    def _unseen_gts(self):
        return [GroundTruth(g.image_id, g.class_name, g.box, UNSEEN) for g in gt_records()]

    def test_zsd_report_fields(self):
        rep = evaluate_zsd(det_records(), self._unseen_gts(), CLASSES)
        assert set(rep.recall) == {0.4, 0.5, 0.6}
        assert all(0 <= v <= 100 for v in rep.recall.values())
        assert rep.map50 is not None and rep.meta["ap_interpolation"] == "all-point"
        d = json.loads(rep.to_json())
        assert set(d["recall_at_100"]) == {"0.4", "0.5", "0.6"}
        assert "R@100/0.5" in rep.to_text()

    def test_zsd_ignores_seen_records(self):
        gts = self._unseen_gts() + [GroundTruth("img0", "car", (0, 0, 5, 5), SEEN)]
        dets = det_records() + [Detection("img0", "car", 0.99, (0, 0, 5, 5), SEEN)]
        assert evaluate_zsd(dets, gts, CLASSES).recall == evaluate_zsd(det_records(), self._unseen_gts(), CLASSES).recall

    def test_gzsd_triplets(self):
        gts = [GroundTruth("a", "cat", (0, 0, 10, 10), SEEN), GroundTruth("a", "dog", (20, 20, 30, 30), UNSEEN),
               GroundTruth("b", "dog", (0, 0, 10, 10), UNSEEN)]
        dets = [Detection("a", "cat", 0.9, (0, 0, 10, 10), SEEN), Detection("a", "dog", 0.3, (20, 20, 30, 30), UNSEEN)]
        rep = evaluate_gzsd(dets, gts, ["cat"], ["dog"])
        assert rep.gzsd["seen"] == {"map": 100.0, "recall": 100.0}
        assert rep.gzsd["unseen"]["recall"] == 50.0
        assert rep.gzsd["hm"]["recall"] == pytest.approx(2 * 100 * 50 / 150)
        assert "HM" in rep.to_text()


class TestDumps:
    def test_round_trip(self, tmp_path):
        dets = det_records() + [Detection("x y", "hot dog", -0.25, (0.5, 1.25, 3.0, 4.0), UNSEEN, 2)]
        write_detections(tmp_path / "d.tsv", dets)
        back = read_detections(tmp_path / "d.tsv")
        assert [(d.image_id, d.class_name, d.score, d.box, d.group) for d in back] == \
               [(d.image_id, d.class_name, d.score, tuple(map(float, d.box)), d.group) for d in dets]
        write_ground_truth(tmp_path / "g.tsv", gt_records())
        assert len(read_ground_truth(tmp_path / "g.tsv")) == len(gt_records())

    def test_bad_record(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("image_id\tgroup\tclass_name\tscore\tx1\ty1\tx2\ty2\na\tunseen\tcat\tnope\t0\t0\t1\t1\n")
        with pytest.raises(RecordError, match=":2"):
            read_detections(p)

    def test_non_finite_score(self):
        with pytest.raises(RecordError):
            Detection("a", "cat", float("nan"), (0, 0, 1, 1))
