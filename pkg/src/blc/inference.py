"""Seen, unseen (ZSD) and joint (GZSD) inference on a trained cascade.

Unseen classes are scored by mapping the seen-class probabilities back into
word-vector space with ``W_s`` and projecting onto ``W_u``:
``scores = W_u^T (W_s p)``.  The result is a ranking score, not a
probability, and may be negative.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .detector import CascadeModel, cascade_forward, greedy_nms, rpn_propose
from .embeddings import SeenMatrix, UnseenMatrix
from .records import SEEN, UNSEEN, Detection

SEEN_THRESHOLD = 0.2
UNSEEN_THRESHOLD = 0.05
MAX_PER_IMAGE = 100


@dataclass
class InferenceConfig:
    nms_iou: float = 0.5
    max_per_image: int = MAX_PER_IMAGE
    seen_threshold: float = SEEN_THRESHOLD
    unseen_threshold: float = UNSEEN_THRESHOLD
    stage_ensemble: bool = False      # average c_1..c_3 instead of using stage 3 only


def _columns(m):
    return m.columns if hasattr(m, "columns") else m


def unseen_scores(wu, ws, seen_probs):
    """``W_u^T (W_s p)`` for a probability vector (k,) or a batch (R, k)."""
    Wu, Ws = _columns(wu), _columns(ws)
    if isinstance(seen_probs, torch.Tensor):
        Wu = torch.tensor(np.asarray(Wu), dtype=seen_probs.dtype)
        Ws = torch.tensor(np.asarray(Ws), dtype=seen_probs.dtype)
    else:
        seen_probs = np.asarray(seen_probs, dtype=np.float64)
    if seen_probs.shape[-1] != Ws.shape[1]:
        raise ValueError(f"{seen_probs.shape[-1]} probabilities for a W_s with {Ws.shape[1]} columns")
    if Wu.shape[0] != Ws.shape[0]:
        raise ValueError(f"W_u dimension {Wu.shape[0]} differs from W_s dimension {Ws.shape[0]}")
    return (seen_probs @ Ws.T) @ Wu


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> List[Detection]:
    """Greedy per-class NMS; output sorted by score, ties in input order."""
    groups = {}
    for i, d in enumerate(dets):
        groups.setdefault((d.image_id, d.group, d.class_name), []).append(i)
    kept = []
    for idx in groups.values():
        boxes = np.array([dets[i].box for i in idx])
        scores = np.array([dets[i].score for i in idx])
        kept.extend(idx[k] for k in greedy_nms(boxes, scores, iou_threshold))
    kept.sort(key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in kept]


@dataclass
class RoiPredictions:
    """Per-roi outputs of the final stage for one image."""

    boxes: np.ndarray          # (R, 4) r_3
    seen_probs: np.ndarray     # (R, s+1)
    unseen: np.ndarray         # (R, u+1) back-projected scores, background in column 0


@torch.no_grad()
def predict_rois(features: torch.Tensor, model: CascadeModel, wu: UnseenMatrix, image_size: Tuple[int, int],
                 cfg: InferenceConfig = InferenceConfig(), proposals: Optional[torch.Tensor] = None
                 ) -> RoiPredictions:
    """Cascade forward for one image's (C, H, W) features."""
    dtype = model.W_s.dtype
    features = features.to(dtype)
    if proposals is None:
        proposals, _ = rpn_propose(features, model.rpn, model.cfg, image_size)
    if len(proposals) == 0:
        k = model.W_s.shape[1]
        return RoiPredictions(np.zeros((0, 4)), np.zeros((0, k)), np.zeros((0, _columns(wu).shape[1])))
    outs = cascade_forward(features[None], proposals.to(dtype), torch.zeros(len(proposals), dtype=torch.long),
                           model, image_size)
    if cfg.stage_ensemble:
        probs = torch.stack([o.probs for o in outs]).mean(dim=0)
    else:
        probs = outs[-1].probs
    probs = probs.double()
    ws = model.W_s.double()
    u = unseen_scores(wu, ws.numpy(), probs)
    return RoiPredictions(outs[-1].boxes.double().numpy(), probs.numpy(), u.numpy())


def _candidates(image_id, boxes, scores, names, group, threshold=None):
    """One detection per (roi, class); ``scores`` excludes the background column."""
    R, K = scores.shape
    out_boxes, out_scores, out_cls = [], [], []
    for c in range(K):
        s = scores[:, c]
        sel = np.arange(R) if threshold is None else np.flatnonzero(s >= threshold)
        out_boxes.append(boxes[sel])
        out_scores.append(s[sel])
        out_cls.append(np.full(len(sel), c + 1))
    return (np.concatenate(out_boxes) if out_boxes else np.zeros((0, 4)),
            np.concatenate(out_scores) if out_scores else np.zeros(0),
            np.concatenate(out_cls) if out_cls else np.zeros(0, dtype=int))


def _nms_topk(image_id, parts, iou, k) -> List[Detection]:
    """Per-class NMS over several (boxes, scores, class_ids, names, group) parts, then top-k."""
    kept = []
    order_key = 0
    for boxes, scores, cls, names, group in parts:
        for c in np.unique(cls):
            sel = np.flatnonzero(cls == c)
            for j in greedy_nms(boxes[sel], scores[sel], iou):
                i = sel[j]
                kept.append((-scores[i], order_key + i, boxes[i], scores[i], int(c), names[c - 1], group))
        order_key += len(scores)
    kept.sort(key=lambda r: (r[0], r[1]))
    return [Detection(image_id, name, float(score), tuple(float(v) for v in box), group, cid)
            for _, _, box, score, cid, name, group in kept[:k]]


def zsd_from_predictions(image_id: str, pred: RoiPredictions, unseen_names: Sequence[str],
                         cfg: InferenceConfig = InferenceConfig()) -> List[Detection]:
    boxes, scores, cls = _candidates(image_id, pred.boxes, pred.unseen[:, 1:], unseen_names, UNSEEN)
    return _nms_topk(image_id, [(boxes, scores, cls, unseen_names, UNSEEN)], cfg.nms_iou, cfg.max_per_image)


def gzsd_from_predictions(image_id: str, pred: RoiPredictions, seen_names: Sequence[str],
                          unseen_names: Sequence[str], cfg: InferenceConfig = InferenceConfig()) -> List[Detection]:
    seen = _candidates(image_id, pred.boxes, pred.seen_probs[:, 1:], seen_names, SEEN, cfg.seen_threshold)
    unseen = _candidates(image_id, pred.boxes, pred.unseen[:, 1:], unseen_names, UNSEEN, cfg.unseen_threshold)
    return _nms_topk(image_id, [(*seen, seen_names, SEEN), (*unseen, unseen_names, UNSEEN)],
                     cfg.nms_iou, cfg.max_per_image)


def gzsd_filter(dets: Sequence[Detection], cfg: InferenceConfig = InferenceConfig()) -> List[Detection]:
    """Group-specific score thresholds followed by per-class NMS."""
    kept = [d for d in dets
            if d.score >= (cfg.seen_threshold if d.group == SEEN else cfg.unseen_threshold)]
    return nms(kept, cfg.nms_iou)


def detect_zsd(features: torch.Tensor, model: CascadeModel, wu: UnseenMatrix, image_id: str,
               image_size: Tuple[int, int], cfg: InferenceConfig = InferenceConfig()) -> List[Detection]:
    pred = predict_rois(features, model, wu, image_size, cfg)
    return zsd_from_predictions(image_id, pred, wu.class_order, cfg)


def detect_gzsd(features: torch.Tensor, model: CascadeModel, ws: SeenMatrix, wu: UnseenMatrix, image_id: str,
                image_size: Tuple[int, int], cfg: InferenceConfig = InferenceConfig()) -> List[Detection]:
    pred = predict_rois(features, model, wu, image_size, cfg)
    return gzsd_from_predictions(image_id, pred, ws.class_order, wu.class_order, cfg)


def detect_dataset(images, model: CascadeModel, ws: SeenMatrix, wu: UnseenMatrix, mode: str = "zsd",
                   cfg: InferenceConfig = InferenceConfig(), proposals=None) -> List[Detection]:
    """Run ``detect_zsd`` or ``detect_gzsd`` over annotated images with oracle features.

    ``proposals`` optionally maps image id to precomputed RPN boxes.
    """
    out: List[Detection] = []
    for im in images:
        feats = torch.as_tensor(im.features)
        props = None if proposals is None else proposals[im.image_id]
        pred = predict_rois(feats, model, wu, (im.height, im.width), cfg, props)
        if mode == "zsd":
            out.extend(zsd_from_predictions(im.image_id, pred, wu.class_order, cfg))
        elif mode == "gzsd":
            out.extend(gzsd_from_predictions(im.image_id, pred, ws.class_order, wu.class_order, cfg))
        else:
            raise ValueError(f"unknown detection mode {mode!r}")
    return out
