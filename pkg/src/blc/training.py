"""Losses, target assignment and the two-step training protocol.

Step one trains the BLRPN and reads off its learned background vector; step
two trains the cascade with that vector installed in ``W_s``.  The RPN that
feeds the cascade is a plain objectness RPN trained on its own.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .boxes import encode_boxes, iou_matrix
from .data import AnnotatedImage, SplitConfig, ZeroShotLeakError
from .detector import (
    BLRPN, RPN, CascadeModel, ModelConfig, StageOutput, generate_anchors, pool_anchors,
    roi_align, rpn_propose, stage_forward,
)
from .embeddings import ForegroundBackgroundMatrix, SeenMatrix, VocabularyMatrix

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int = 12
    lr_decay_epochs: Tuple[int, ...] = (8, 11)
    decay_factor: float = 0.1
    stage_weights: Tuple[float, ...] = (1.0, 0.5, 0.25)
    stage_iou: Tuple[float, ...] = (0.5, 0.6, 0.7)
    batch_size: int = 8
    seed: int = 0
    max_iters: Optional[int] = None
    grad_clip: Optional[float] = None
    add_gt_as_proposals: bool = True
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rpn_batch_per_image: int = 256
    rpn_pos_fraction: float = 0.5

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if len(self.stage_weights) != len(self.stage_iou):
            raise ValueError("one loss weight per stage")
        if list(self.stage_iou) != sorted(self.stage_iou):
            raise ValueError("stage IoU thresholds must be ascending")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for k in ("lr_decay_epochs", "stage_weights", "stage_iou"):
            if k in d:
                d[k] = tuple(d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate during 1-based ``epoch``: decayed once after each listed epoch."""
    n = sum(1 for e in cfg.lr_decay_epochs if epoch > e)
    return cfg.lr * cfg.decay_factor ** n


# -- losses ------------------------------------------------------------------------------

def _finite(x) -> bool:
    return bool(torch.isfinite(x).all()) if isinstance(x, torch.Tensor) else math.isfinite(x)


def smooth_l1(pred, target, num_rois: Optional[int] = None, beta: float = 1.0):
    """Elementwise smooth L1 summed over coordinates and averaged over ``num_rois``."""
    pred = torch.as_tensor(pred, dtype=torch.float64) if not isinstance(pred, torch.Tensor) else pred
    target = torch.as_tensor(target, dtype=pred.dtype) if not isinstance(target, torch.Tensor) else target
    if pred.shape != target.shape:
        raise ValueError(f"smooth_l1 shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = (pred - target).abs()
    per = torch.where(diff < beta, 0.5 * diff ** 2 / beta, diff - 0.5 * beta)
    if num_rois is None:
        num_rois = pred.shape[0] if pred.dim() > 1 else 1
    return per.sum() / max(num_rois, 1)


def cross_entropy(probs, label: int):
    probs = torch.as_tensor(probs)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} outside [0, {probs.shape[-1]})")
    return -torch.log(probs[..., label])


def cascade_loss(stage_losses: Sequence[Tuple[object, object]], alpha: Sequence[float] = (1.0, 0.5, 0.25)):
    if len(stage_losses) != len(alpha):
        raise ValueError(f"{len(stage_losses)} stage losses for {len(alpha)} weights")
    total = 0.0
    for (reg, sem), a in zip(stage_losses, alpha):
        if not (_finite(reg) and _finite(sem)):
            raise TrainingDiverged("non-finite stage loss")
        total = total + a * (reg + sem)
    return total


def blrpn_loss(reg_loss, fbsem_loss):
    if not (_finite(reg_loss) and _finite(fbsem_loss)):
        raise TrainingDiverged("non-finite BLRPN loss")
    return reg_loss + fbsem_loss


# -- targets -------------------------------------------------------------------------------

@dataclass
class StageAssignment:
    labels: torch.Tensor        # (R,) 0 = background, 1..s seen class
    targets: torch.Tensor       # (R, 4) raw deltas to the matched ground truth
    matched: torch.Tensor       # (R,) gt index or -1
    max_iou: torch.Tensor       # (R,)
    iou_threshold: float

    @property
    def positive(self) -> torch.Tensor:
        return self.labels > 0


def assign_stage_targets(rois: torch.Tensor, gt_boxes: torch.Tensor, gt_labels: torch.Tensor,
                         iou_threshold: float) -> StageAssignment:
    """Positive iff max IoU >= threshold; ties go to the lowest gt index."""
    R = rois.shape[0]
    if gt_boxes.shape[0] == 0:
        return StageAssignment(torch.zeros(R, dtype=torch.long), torch.zeros_like(rois),
                               torch.full((R,), -1, dtype=torch.long), torch.zeros(R, dtype=rois.dtype),
                               iou_threshold)
    ious = iou_matrix(rois, gt_boxes.to(rois.dtype))
    max_iou, idx = ious.max(dim=1)      # torch returns the first maximum
    pos = max_iou >= iou_threshold
    labels = torch.where(pos, gt_labels[idx], torch.zeros_like(idx))
    targets = torch.zeros_like(rois)
    if pos.any():
        targets[pos] = encode_boxes(rois[pos], gt_boxes[idx[pos]].to(rois.dtype))
    matched = torch.where(pos, idx, torch.full_like(idx, -1))
    return StageAssignment(labels, targets, matched, max_iou, iou_threshold)


# -- provenance -----------------------------------------------------------------------------

@dataclass
class ProvenanceAudit:
    """Counts every annotated box that reaches a loss, by class group."""

    split: SplitConfig
    boxes_used: int = 0
    unseen_boxes_used: int = 0
    strict: bool = True

    def record(self, labels: Sequence[str]) -> None:
        for name in labels:
            self.boxes_used += 1
            if name in self.split.unseen:
                self.unseen_boxes_used += 1
                if self.strict:
                    raise ZeroShotLeakError(f"unseen class {name!r} reached a training loss")
            elif name not in self.split.seen:
                raise ZeroShotLeakError(f"class {name!r} is not part of split {self.split.name}")


def seen_label_ids(image: AnnotatedImage, split: SplitConfig) -> torch.Tensor:
    index = {c: i + 1 for i, c in enumerate(split.seen)}
    return torch.tensor([index.get(l, -1) for l in image.labels], dtype=torch.long)


@dataclass
class TrainLog:
    records: List[dict] = field(default_factory=list)

    def add(self, **rec) -> None:
        self.records.append(rec)

    def losses(self, key: str = "loss") -> np.ndarray:
        return np.array([r[key] for r in self.records if key in r])


def _stack_features(images: Sequence[AnnotatedImage], dtype) -> torch.Tensor:
    missing = [im.image_id for im in images if im.features is None]
    if missing:
        raise ValueError(f"images without features (oracle mode needs them): {missing[:3]}")
    return torch.as_tensor(np.stack([im.features for im in images])).to(dtype)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i: i + batch_size]


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _make_optimizer(params, cfg: TrainConfig):
    return torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def _step(opt, loss, params, cfg: TrainConfig):
    opt.zero_grad()
    loss.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
    opt.step()


# -- anchor (RPN / BLRPN) training ------------------------------------------------------------

@dataclass
class AnchorTargets:
    anchors: torch.Tensor    # (A, 4)
    labels: torch.Tensor     # (A,) 1 fg, 0 bg, -1 ignore
    targets: torch.Tensor    # (A, 4) raw deltas for positives


def anchor_targets(anchors: torch.Tensor, gt_boxes: torch.Tensor, pos_iou: float, neg_iou: float) -> AnchorTargets:
    A = anchors.shape[0]
    labels = torch.full((A,), -1, dtype=torch.long)
    targets = torch.zeros_like(anchors)
    if gt_boxes.shape[0] == 0:
        labels[:] = 0
        return AnchorTargets(anchors, labels, targets)
    ious = iou_matrix(anchors, gt_boxes.to(anchors.dtype))
    max_iou, idx = ious.max(dim=1)
    labels[max_iou < neg_iou] = 0
    labels[max_iou >= pos_iou] = 1
    # every gt keeps its best anchor as a positive
    best = ious.argmax(dim=0)
    labels[best] = 1
    idx[best] = torch.arange(gt_boxes.shape[0])
    pos = labels == 1
    targets[pos] = encode_boxes(anchors[pos], gt_boxes[idx[pos]].to(anchors.dtype))
    return AnchorTargets(anchors, labels, targets)


def sample_anchors(labels: torch.Tensor, batch: int, pos_fraction: float, rng: np.random.Generator) -> np.ndarray:
    pos = np.flatnonzero(labels.numpy() == 1)
    neg = np.flatnonzero(labels.numpy() == 0)
    n_pos = min(len(pos), int(batch * pos_fraction))
    n_neg = min(len(neg), batch - n_pos)
    return np.concatenate([rng.choice(pos, n_pos, replace=False), rng.choice(neg, n_neg, replace=False)])


@dataclass
class AnchorBatch:
    pooled: torch.Tensor     # (R, N)
    labels: torch.Tensor     # (R,) 0/1
    targets: torch.Tensor    # (R, 4)


def _anchor_batch(features: torch.Tensor, images: Sequence[AnnotatedImage], idx, model_cfg: ModelConfig,
                  cfg: TrainConfig, rng: np.random.Generator, audit: Optional[ProvenanceAudit],
                  cache: Dict[int, AnchorTargets]) -> AnchorBatch:
    _, _, H, W = features.shape
    anchors = generate_anchors(H, W, model_cfg.stride, model_cfg.anchor_scales, features.dtype)
    rois, bidx, labels, targets = [], [], [], []
    for j, i in enumerate(idx):
        im = images[i]
        if audit is not None:
            audit.record(im.labels)
        if i not in cache:
            cache[i] = anchor_targets(anchors, torch.as_tensor(im.boxes, dtype=features.dtype),
                                      cfg.rpn_pos_iou, cfg.rpn_neg_iou)
        at = cache[i]
        sel = torch.as_tensor(sample_anchors(at.labels, cfg.rpn_batch_per_image, cfg.rpn_pos_fraction, rng))
        rois.append(anchors[sel])
        bidx.append(torch.full((len(sel),), j, dtype=torch.long))
        labels.append(at.labels[sel])
        targets.append(at.targets[sel])
    rois = torch.cat(rois)
    pooled = roi_align(features[torch.as_tensor(idx)], rois, torch.cat(bidx), model_cfg.out_size,
                       model_cfg.stride, model_cfg.sampling_ratio)
    return AnchorBatch(pooled, torch.cat(labels), torch.cat(targets))


def anchor_reg_loss(deltas: torch.Tensor, batch: AnchorBatch) -> torch.Tensor:
    pos = batch.labels == 1
    return smooth_l1(deltas[pos], batch.targets[pos].to(deltas.dtype), num_rois=len(batch.labels))


def blrpn_batch_loss(blrpn: BLRPN, batch: AnchorBatch) -> Tuple[torch.Tensor, torch.Tensor]:
    logits, deltas = blrpn(batch.pooled.to(blrpn.D.dtype))
    return anchor_reg_loss(deltas, batch), F.cross_entropy(logits, batch.labels)


def rpn_batch_loss(rpn: RPN, batch: AnchorBatch) -> Tuple[torch.Tensor, torch.Tensor]:
    logits, deltas = rpn(batch.pooled.to(rpn.cls.weight.dtype))
    return anchor_reg_loss(deltas, batch), F.binary_cross_entropy_with_logits(logits, batch.labels.to(logits.dtype))


def _anchor_training(module, loss_fn, images, model_cfg, cfg, audit, dtype, tag, progress=None,
                     step_hook=None) -> TrainLog:
    features = _stack_features(images, dtype)
    rng = np.random.default_rng([cfg.seed, 0xA1])
    params = [p for p in module.parameters() if p.requires_grad]
    opt = _make_optimizer(params, cfg)
    tlog = TrainLog()
    cache: Dict[int, AnchorTargets] = {}
    it = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(cfg, epoch)
        _set_lr(opt, lr)
        tlog.add(event="lr", epoch=epoch, lr=lr)
        for idx in _batches(len(images), cfg.batch_size, rng):
            if cfg.max_iters is not None and it >= cfg.max_iters:
                return tlog
            batch = _anchor_batch(features, images, idx, model_cfg, cfg, rng, audit, cache)
            reg, cls = loss_fn(module, batch)
            loss = blrpn_loss(reg, cls)
            _step(opt, loss, params, cfg)
            tlog.add(iter=it, epoch=epoch, lr=lr, loss=loss.item(), reg=reg.item(), cls=cls.item())
            it += 1
            if step_hook is not None:
                step_hook(module, it)
            if progress:
                progress(tag, it)
    return tlog


def train_rpn(images: Sequence[AnnotatedImage], split: SplitConfig, model_cfg: ModelConfig,
              cfg: TrainConfig, audit: Optional[ProvenanceAudit] = None, dtype=torch.float32) -> Tuple[RPN, TrainLog]:
    torch.manual_seed(cfg.seed)
    rpn = RPN(model_cfg.roi_feature_dim).to(dtype)
    tlog = _anchor_training(rpn, rpn_batch_loss, _training_images(images, split), model_cfg, cfg, audit, dtype, "rpn")
    return rpn, tlog


def _training_images(images: Sequence[AnnotatedImage], split: SplitConfig) -> List[AnnotatedImage]:
    from .data import filter_training_images
    return filter_training_images(images, split)


@dataclass
class BLRPNResult:
    v_b: np.ndarray
    initial_v_b: np.ndarray
    blrpn: BLRPN
    log: TrainLog


def build_blrpn(seen: SeenMatrix, D: VocabularyMatrix, model_cfg: ModelConfig, seed: int,
                dtype=torch.float32) -> BLRPN:
    rng = np.random.default_rng([seed, 0xFB])
    seen_vectors = [seen.columns[:, i] for i in range(1, seen.num_classes + 1)]
    init = ForegroundBackgroundMatrix.initial(seen_vectors, rng)
    gen = torch.Generator().manual_seed(seed)
    return BLRPN(model_cfg.roi_feature_dim, torch.tensor(D.columns, dtype=dtype),
                 torch.tensor(init.columns, dtype=dtype), gen)


def train_blrpn(images: Sequence[AnnotatedImage], split: SplitConfig, seen: SeenMatrix, D: VocabularyMatrix,
                model_cfg: ModelConfig, cfg: TrainConfig, audit: Optional[ProvenanceAudit] = None,
                dtype=torch.float32, progress=None,
                step_hook: Optional[Callable[[BLRPN, int], None]] = None) -> BLRPNResult:
    """Train the BLRPN on seen-class images and return its background column."""
    torch.manual_seed(cfg.seed)
    blrpn = build_blrpn(seen, D, model_cfg, cfg.seed, dtype)
    initial = blrpn.v_b.detach().numpy().astype(np.float64).copy()
    tlog = _anchor_training(blrpn, blrpn_batch_loss, _training_images(images, split), model_cfg, cfg,
                            audit, dtype, "blrpn", progress, step_hook)
    v_b = blrpn.v_b.detach().numpy().astype(np.float64).copy()
    if not np.all(np.isfinite(v_b)):
        raise TrainingDiverged("learned background vector is not finite")
    return BLRPNResult(v_b, initial, blrpn, tlog)


# -- cascade training ------------------------------------------------------------------------------

def stage_loss(out: StageOutput, assignment: StageAssignment, std: Sequence[float]) -> Tuple[torch.Tensor, torch.Tensor]:
    sem = F.cross_entropy(out.logits, assignment.labels)
    pos = assignment.positive
    std_t = torch.tensor(std, dtype=out.deltas.dtype)
    reg = smooth_l1(out.deltas[pos], assignment.targets[pos].to(out.deltas.dtype) / std_t,
                    num_rois=len(assignment.labels))
    return reg, sem


def cascade_stage_losses(model: CascadeModel, features: torch.Tensor, batch_idx: torch.Tensor,
                         stage_rois: Sequence[torch.Tensor], assignments: Sequence[StageAssignment],
                         image_size: Tuple[int, int]) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    """Per-stage (reg, sem) losses with the pooled rois and targets held fixed."""
    P = model.projections()
    out = []
    for t, (rois, a) in enumerate(zip(stage_rois, assignments)):
        so = stage_forward(model, t, features, rois, batch_idx, P[t], image_size)
        out.append(stage_loss(so, a, model.cfg.stage_stds[t]))
    return out


@dataclass
class CascadeBatch:
    features: torch.Tensor
    proposals: torch.Tensor
    batch_idx: torch.Tensor
    gt_boxes: List[torch.Tensor]
    gt_labels: List[torch.Tensor]


def assign_batch(rois: torch.Tensor, batch: CascadeBatch, iou_threshold: float) -> StageAssignment:
    parts = []
    for j in range(len(batch.gt_boxes)):
        sel = batch.batch_idx == j
        parts.append((sel, assign_stage_targets(rois[sel], batch.gt_boxes[j], batch.gt_labels[j], iou_threshold)))
    R = rois.shape[0]
    labels = torch.zeros(R, dtype=torch.long)
    targets = torch.zeros_like(rois)
    matched = torch.full((R,), -1, dtype=torch.long)
    max_iou = torch.zeros(R, dtype=rois.dtype)
    for sel, a in parts:
        labels[sel], targets[sel], matched[sel], max_iou[sel] = a.labels, a.targets, a.matched, a.max_iou
    return StageAssignment(labels, targets, matched, max_iou, iou_threshold)


def cascade_training_pass(model: CascadeModel, batch: CascadeBatch, cfg: TrainConfig, image_size
                          ) -> Tuple[List[Tuple[torch.Tensor, torch.Tensor]], List[torch.Tensor], List[StageAssignment]]:
    """One forward pass with per-stage resampling: assign at r_{t-1}, score, regress r_t."""
    P = model.projections()
    rois = batch.proposals
    losses, rois_used, assigns = [], [], []
    for t in range(model.cfg.num_stages):
        a = assign_batch(rois, batch, cfg.stage_iou[t])
        so = stage_forward(model, t, batch.features, rois, batch.batch_idx, P[t], image_size)
        losses.append(stage_loss(so, a, model.cfg.stage_stds[t]))
        rois_used.append(rois)
        assigns.append(a)
        rois = so.boxes
    return losses, rois_used, assigns


def build_cascade(seen: SeenMatrix, D: VocabularyMatrix, model_cfg: ModelConfig, seed: int,
                  dtype=torch.float32) -> CascadeModel:
    gen = torch.Generator().manual_seed(seed)
    return CascadeModel(model_cfg, torch.tensor(seen.columns, dtype=dtype),
                        torch.tensor(D.columns, dtype=dtype), gen, dtype)


def propose_all(images: Sequence[AnnotatedImage], rpn: RPN, model_cfg: ModelConfig,
                dtype=torch.float32) -> Dict[str, torch.Tensor]:
    """RPN proposals for every image, keyed by image id."""
    return {im.image_id: rpn_propose(torch.as_tensor(im.features).to(dtype), rpn, model_cfg,
                                     (im.height, im.width))[0]
            for im in images}


def make_cascade_batch(features, images, idx, proposals, split, cfg: TrainConfig,
                       audit: Optional[ProvenanceAudit]) -> CascadeBatch:
    rois, bidx, gtb, gtl = [], [], [], []
    for j, i in enumerate(idx):
        im = images[i]
        if audit is not None:
            audit.record(im.labels)
        labels = seen_label_ids(im, split)
        if (labels < 0).any():
            raise ZeroShotLeakError(f"{im.image_id}: non-seen class among {im.labels}")
        boxes = torch.as_tensor(im.boxes, dtype=features.dtype)
        p = proposals[i].to(features.dtype)
        if cfg.add_gt_as_proposals and len(boxes):
            p = torch.cat([p, boxes])
        rois.append(p)
        bidx.append(torch.full((len(p),), j, dtype=torch.long))
        gtb.append(boxes)
        gtl.append(labels)
    return CascadeBatch(features[torch.as_tensor(idx)], torch.cat(rois), torch.cat(bidx), gtb, gtl)


def train_cascade(images: Sequence[AnnotatedImage], split: SplitConfig, seen: SeenMatrix, D: VocabularyMatrix,
                  model_cfg: ModelConfig, cfg: TrainConfig, rpn: Optional[RPN] = None,
                  audit: Optional[ProvenanceAudit] = None, dtype=torch.float32,
                  step_hook: Optional[Callable[[CascadeModel, int], None]] = None,
                  progress=None, proposals: Optional[Dict[str, torch.Tensor]] = None
                  ) -> Tuple[CascadeModel, TrainLog]:
    """Train the cascade with ``seen`` (whose column 0 is the background vector) held fixed.

    ``proposals`` (image id -> boxes) lets several runs share one RPN pass.
    """
    images = _training_images(images, split)
    torch.manual_seed(cfg.seed)
    model = build_cascade(seen, D, model_cfg, cfg.seed, dtype)
    if rpn is None:
        rpn, _ = train_rpn(images, split, model_cfg, cfg, audit, dtype)
    model.rpn.load_state_dict(rpn.state_dict())
    for p in model.rpn.parameters():
        p.requires_grad_(False)

    features = _stack_features(images, dtype)
    image_size = (images[0].height, images[0].width)
    if proposals is None:
        proposals = propose_all(images, model.rpn, model_cfg, dtype)
    proposals = [proposals[im.image_id] for im in images]

    params = [p for p in model.trainable_named().values()]
    opt = _make_optimizer(params, cfg)
    rng = np.random.default_rng([cfg.seed, 0xCA])
    tlog = TrainLog()
    it = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(cfg, epoch)
        _set_lr(opt, lr)
        tlog.add(event="lr", epoch=epoch, lr=lr)
        for idx in _batches(len(images), cfg.batch_size, rng):
            if cfg.max_iters is not None and it >= cfg.max_iters:
                return model, tlog
            batch = make_cascade_batch(features, images, idx, proposals, split, cfg, audit)
            stage_losses, _, _ = cascade_training_pass(model, batch, cfg, image_size)
            loss = cascade_loss(stage_losses, cfg.stage_weights)
            _step(opt, loss, params, cfg)
            rec = dict(iter=it, epoch=epoch, lr=lr, loss=loss.item())
            for t, (reg, sem) in enumerate(stage_losses, start=1):
                rec[f"reg{t}"] = reg.item()
                rec[f"sem{t}"] = sem.item()
            tlog.add(**rec)
            it += 1
            if step_hook is not None:
                step_hook(model, it)
            if progress:
                progress("cascade", it)
    return model, tlog
