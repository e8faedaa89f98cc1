"""Zero-shot detection metrics: IoU, Recall@K, AP/mAP, class-wise recall, HM.

All reported values are percentages.  Matching is greedy by descending
detection score inside one image; a detection claims the unmatched
ground-truth box of its class with the highest IoU (ties go to the lower
ground-truth index), and equal scores keep input order.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boxes import Box, iou_matrix
from .records import SEEN, UNSEEN, Detection, GroundTruth

IOU_THRESHOLDS = (0.4, 0.5, 0.6)
TOP_K = 100


class MetricError(ValueError):
    pass


def iou(a: Box, b: Box) -> float:
    return float(iou_matrix(np.array([a.as_tuple()]), np.array([b.as_tuple()]))[0, 0])


@dataclass
class MatchResult:
    gt_matched: np.ndarray          # (G,) bool
    det_tp: np.ndarray              # (n,) bool, in the order detections were given
    det_gt: np.ndarray              # (n,) matched gt index or -1


def _score_order(scores: Sequence[float]) -> np.ndarray:
    # stable descending sort: equal scores keep input order
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def match_image(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float) -> MatchResult:
    n, g = len(dets), len(gts)
    gt_matched = np.zeros(g, dtype=bool)
    det_tp = np.zeros(n, dtype=bool)
    det_gt = np.full(n, -1, dtype=int)
    if n == 0 or g == 0:
        return MatchResult(gt_matched, det_tp, det_gt)
    ious = iou_matrix(np.array([d.box for d in dets]), np.array([t.box for t in gts]))
    same_class = np.array([[d.class_name == t.class_name for t in gts] for d in dets])
    ious = np.where(same_class, ious, -1.0)
    for i in _score_order([d.score for d in dets]):
        cand = np.where(gt_matched, -1.0, ious[i])
        j = int(np.argmax(cand))  # first maximum -> lowest gt index
        if cand[j] >= iou_threshold:
            gt_matched[j] = True
            det_tp[i] = True
            det_gt[i] = j
    return MatchResult(gt_matched, det_tp, det_gt)


def _by_image(records):
    out = defaultdict(list)
    for r in records:
        out[r.image_id].append(r)
    return out


def top_k(dets: Sequence[Detection], k: int) -> List[Detection]:
    return [dets[i] for i in _score_order([d.score for d in dets])[:k]]


def _matched_counts(dets, gts, k, iou_threshold) -> Tuple[Dict[str, int], Dict[str, int]]:
    """Per-class (matched, total) ground-truth counts under top-k greedy matching."""
    det_img = _by_image(dets)
    matched: Dict[str, int] = defaultdict(int)
    total: Dict[str, int] = defaultdict(int)
    for image_id, img_gts in _by_image(gts).items():
        kept = top_k(det_img.get(image_id, []), k)
        res = match_image(kept, img_gts, iou_threshold)
        for t, hit in zip(img_gts, res.gt_matched):
            total[t.class_name] += 1
            matched[t.class_name] += int(hit)
    return matched, total


def recall_at_k(dets: Sequence[Detection], gts: Sequence[GroundTruth], k: int = TOP_K,
                iou_threshold: float = 0.5) -> float:
    if len(gts) == 0:
        raise MetricError("undefined recall: no ground truth")
    matched, total = _matched_counts(dets, gts, k, iou_threshold)
    return 100.0 * sum(matched.values()) / sum(total.values())


def classwise_recall(dets: Sequence[Detection], gts: Sequence[GroundTruth], classes: Sequence[str],
                     iou_threshold: float = 0.5, k: int = TOP_K) -> Dict[str, Optional[float]]:
    """Recall@k per class; ``None`` for classes without ground truth."""
    matched, total = _matched_counts(dets, gts, k, iou_threshold)
    return {c: (100.0 * matched[c] / total[c] if total.get(c) else None) for c in classes}


def _interpolated_ap(tp: np.ndarray, num_gt: int, interpolation: str) -> float:
    fp = ~tp
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    recall = ctp / num_gt
    precision = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    if interpolation == "all":
        mrec = np.concatenate([[0.0], recall, [1.0]])
        mpre = np.concatenate([[0.0], precision, [0.0]])
        for i in range(len(mpre) - 2, -1, -1):
            mpre[i] = max(mpre[i], mpre[i + 1])
        idx = np.where(mrec[1:] != mrec[:-1])[0]
        return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
    if interpolation == "101":
        total = 0.0
        for r in np.linspace(0.0, 1.0, 101):
            above = precision[recall >= r]
            total += above.max() if above.size else 0.0
        return total / 101.0
    raise MetricError(f"unknown interpolation {interpolation!r}")


def average_precision(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.5,
                      interpolation: str = "all") -> float:
    """AP of a single class (callers filter records by class)."""
    if len(gts) == 0:
        raise MetricError("undefined AP: no ground truth")
    if len(dets) == 0:
        return 0.0
    gt_img = _by_image(gts)
    tp_flags, scores = [], []
    for image_id, img_dets in _by_image(dets).items():
        res = match_image(img_dets, gt_img.get(image_id, []), iou_threshold)
        tp_flags.extend(res.det_tp.tolist())
        scores.extend(d.score for d in img_dets)
    # image grouping preserves first-seen order, so ties still follow input order
    order = _score_order(scores)
    return 100.0 * _interpolated_ap(np.asarray(tp_flags, dtype=bool)[order], len(gts), interpolation)


def per_class_ap(dets: Sequence[Detection], gts: Sequence[GroundTruth], classes: Sequence[str],
                 iou_threshold: float = 0.5, interpolation: str = "all") -> Dict[str, Optional[float]]:
    out: Dict[str, Optional[float]] = {}
    for c in classes:
        c_gts = [g for g in gts if g.class_name == c]
        if not c_gts:
            out[c] = None
            continue
        out[c] = average_precision([d for d in dets if d.class_name == c], c_gts, iou_threshold, interpolation)
    return out


def map_at_05(aps: Dict[str, Optional[float]]) -> float:
    """Mean of the per-class APs, skipping classes without ground truth."""
    vals = [v for v in aps.values() if v is not None]
    if not vals:
        raise MetricError("undefined mAP: no class has ground truth")
    return float(np.mean(vals))


def harmonic_mean(seen_value: float, unseen_value: float) -> float:
    if seen_value < 0 or unseen_value < 0:
        raise MetricError("harmonic mean needs non-negative values")
    if seen_value + unseen_value == 0:
        raise MetricError("harmonic mean undefined for two zeros")
    return 2.0 * seen_value * unseen_value / (seen_value + unseen_value)


@dataclass
class EvalReport:
    recall: Dict[float, float] = field(default_factory=dict)
    map50: Optional[float] = None
    per_class_recall: Dict[str, Optional[float]] = field(default_factory=dict)
    per_class_ap: Dict[str, Optional[float]] = field(default_factory=dict)
    gzsd: Optional[Dict[str, Dict[str, float]]] = None
    meta: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "recall_at_100": {f"{t:.1f}": v for t, v in sorted(self.recall.items())},
            "map_50": self.map50,
            "per_class_recall": self.per_class_recall,
            "per_class_ap": self.per_class_ap,
            "gzsd": self.gzsd,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = []
        if self.recall:
            ths = sorted(self.recall)
            lines.append("ZSD          " + "  ".join(f"R@100/{t:.1f}" for t in ths) + "  mAP/0.5")
            vals = "  ".join(f"{self.recall[t]:10.2f}" for t in ths)
            lines.append(f"unseen       {vals}  {_fmt(self.map50):>7}")
        if self.per_class_recall:
            lines.append("")
            lines.append("class-wise Recall@100 (IoU 0.5)")
            for c, v in self.per_class_recall.items():
                lines.append(f"  {c:<20} {_fmt(v):>7}")
        if self.gzsd:
            lines.append("")
            lines.append("GZSD         seen mAP  seen R   unseen mAP  unseen R  HM mAP  HM R")
            s, u, h = self.gzsd["seen"], self.gzsd["unseen"], self.gzsd["hm"]
            lines.append(
                f"             {_fmt(s['map']):>8}  {_fmt(s['recall']):>6}   {_fmt(u['map']):>10}  "
                f"{_fmt(u['recall']):>8}  {_fmt(h['map']):>6}  {_fmt(h['recall']):>5}"
            )
        for k in sorted(self.meta):
            lines.append(f"# {k}: {self.meta[k]}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def evaluate_zsd(dets: Sequence[Detection], gts: Sequence[GroundTruth], unseen_classes: Sequence[str],
                 k: int = TOP_K, iou_thresholds: Sequence[float] = IOU_THRESHOLDS) -> EvalReport:
    """ZSD protocol: only unseen detections and unseen ground truth take part."""
    dets = [d for d in dets if d.group == UNSEEN]
    gts = [g for g in gts if g.group == UNSEEN]
    report = EvalReport()
    report.recall = {t: recall_at_k(dets, gts, k, t) for t in iou_thresholds}
    capped = _cap(dets, k)
    report.per_class_ap = per_class_ap(capped, gts, unseen_classes, 0.5)
    report.map50 = map_at_05(report.per_class_ap)
    report.per_class_recall = classwise_recall(dets, gts, unseen_classes, 0.5, k)
    report.meta["ap_interpolation"] = "all-point"
    return report


def _cap(dets, k):
    out = []
    for img in _by_image(dets).values():
        out.extend(top_k(img, k))
    return out


def evaluate_gzsd(dets: Sequence[Detection], gts: Sequence[GroundTruth], seen_classes: Sequence[str],
                  unseen_classes: Sequence[str], k: int = TOP_K, iou_threshold: float = 0.5) -> EvalReport:
    """GZSD protocol: one detection list ranked jointly, metrics split by group."""
    capped = _cap(dets, k)
    out = {}
    for group, classes in ((SEEN, seen_classes), (UNSEEN, unseen_classes)):
        g_gts = [g for g in gts if g.group == group]
        g_dets = [d for d in capped if d.group == group]
        if not g_gts:
            raise MetricError(f"no {group} ground truth for GZSD")
        out[group] = {
            "map": map_at_05(per_class_ap(g_dets, g_gts, classes, iou_threshold)),
            "recall": recall_at_k(g_dets, g_gts, k, iou_threshold),
        }
    out["hm"] = {
        m: (harmonic_mean(out[SEEN][m], out[UNSEEN][m]) if out[SEEN][m] + out[UNSEEN][m] > 0 else 0.0)
        for m in ("map", "recall")
    }
    report = EvalReport(gzsd=out)
    report.meta["ap_interpolation"] = "all-point"
    return report
