"""Detection skeleton: backbone, RoI Align, RPN, BLRPN and the three-stage cascade.

At desk scale the backbone is either a small convolutional stack or the
"oracle features" pass-through that hands over the dataset's feature maps.
Everything downstream consumes pooled RoI features of size
``N = channels * out_size**2``.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torchvision
from torch import nn

from .boxes import Box, BoxError, clip_boxes, decode_boxes, iou_matrix
from .semantic_flow import FlowFuser, flow_states
from .semantic_head import SemanticBranch, compose_projection, project_with_semantics, uniform_

CHECKPOINT_FORMAT = 1


@dataclass
class ModelConfig:
    feature_channels: int = 16
    stride: int = 4
    out_size: int = 3
    sampling_ratio: int = 2
    embed_dim: int = 32
    vocab_size: int = 64
    num_stages: int = 3
    use_flow: bool = True
    fuser_activation: Optional[str] = None
    anchor_scales: Tuple[float, ...] = (12.0, 20.0, 32.0)
    rpn_pre_nms: int = 300
    rpn_nms_iou: float = 0.7
    max_proposals: int = 100
    stage_stds: Tuple[Tuple[float, float, float, float], ...] = (
        (0.1, 0.1, 0.2, 0.2), (0.05, 0.05, 0.1, 0.1), (0.033, 0.033, 0.067, 0.067),
    )

    @property
    def roi_feature_dim(self) -> int:
        return self.feature_channels * self.out_size ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["anchor_scales"] = tuple(d["anchor_scales"])
        d["stage_stds"] = tuple(tuple(s) for s in d["stage_stds"])
        return cls(**d)


@dataclass
class FeatureMap:
    tensor: torch.Tensor   # (C, H, W)
    stride: int

    def __post_init__(self):
        if not torch.isfinite(self.tensor).all():
            raise ValueError("feature map has non-finite entries")


# -- backbone -------------------------------------------------------------------

class ToyBackbone(nn.Module):
    """Four 3x3 conv blocks; the two strided ones give an output stride of 4."""

    def __init__(self, in_channels: int = 3, channels: int = 16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, channels, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(channels, channels, 3, stride=1, padding=1), nn.ReLU(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(channels, channels, 3, stride=1, padding=1),
        )
        self.stride = 4

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.body(images)


MIN_IMAGE_SIZE = 32


def backbone_forward(image, backbone: Optional[ToyBackbone] = None, stride: int = 4) -> FeatureMap:
    """Feature map for one image.

    With ``backbone=None`` the image must carry oracle ``features`` (an
    :class:`~blc.data.AnnotatedImage`) and they are returned verbatim.
    """
    if backbone is None:
        feats = getattr(image, "features", None)
        if feats is None:
            raise ValueError("oracle-features mode needs an image with features")
        return FeatureMap(torch.as_tensor(feats), stride)
    x = torch.as_tensor(image)
    if x.dim() != 3:
        raise ValueError(f"expected a (channels, height, width) image, got shape {tuple(x.shape)}")
    if x.shape[1] < MIN_IMAGE_SIZE or x.shape[2] < MIN_IMAGE_SIZE:
        raise ValueError(f"image {tuple(x.shape[1:])} smaller than {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}")
    return FeatureMap(backbone(x[None].to(next(backbone.parameters()).dtype))[0], backbone.stride)


# -- RoI Align ------------------------------------------------------------------------

def roi_align(features: torch.Tensor, rois: torch.Tensor, batch_idx: torch.Tensor, out_size: int,
              stride: int, sampling_ratio: int = 2) -> torch.Tensor:
    """Bilinear RoI pooling without coordinate quantization.

    ``features`` is (B, C, H, W); rois are image-space boxes.  Feature cell
    ``(i, j)`` sits at image point ``((j + .5) * stride, (i + .5) * stride)``.
    Each output bin averages ``sampling_ratio**2`` bilinear samples at
    regularly spaced points; samples outside the map use the border value.
    Returns (R, C * out_size * out_size) in channel-major order.
    """
    B, C, H, W = features.shape
    R = rois.shape[0]
    if R == 0:
        return features.new_zeros((0, C * out_size * out_size))
    r = rois.to(features.dtype) / stride - 0.5
    # bilinear sampling is separable: build per-roi (out, H) and (out, W)
    # interpolation matrices and contract the feature map with both
    wy = _axis_weights(r[:, 1], r[:, 3], out_size, sampling_ratio, H)
    wx = _axis_weights(r[:, 0], r[:, 2], out_size, sampling_ratio, W)
    batch_idx = batch_idx.long()
    if B == 1:
        return _contract(features[0], wy, wx).reshape(R, -1)
    val = features.new_zeros((R, C, out_size, out_size))
    for b in torch.unique(batch_idx).tolist():
        sel = torch.nonzero(batch_idx == b)[:, 0]
        val = val.index_copy(0, sel, _contract(features[b], wy[sel], wx[sel]))
    return val.reshape(R, -1)


def _contract(feat: torch.Tensor, wy: torch.Tensor, wx: torch.Tensor) -> torch.Tensor:
    rows = torch.einsum("roh,chw->rocw", wy, feat)
    return torch.einsum("rocw,rpw->rcop", rows, wx)


def _axis_weights(lo: torch.Tensor, hi: torch.Tensor, out_size: int, sampling_ratio: int, size: int) -> torch.Tensor:
    """(R, out_size, size) weights averaging ``sampling_ratio`` bilinear samples per bin."""
    R = lo.shape[0]
    S = sampling_ratio
    steps = (torch.arange(out_size, dtype=lo.dtype)[:, None]
             + (torch.arange(S, dtype=lo.dtype)[None, :] + 0.5) / S).reshape(-1)
    pts = lo[:, None] + steps[None, :] * ((hi - lo) / out_size)[:, None]    # (R, out*S)
    pts = pts.clamp(0, size - 1)
    p0 = pts.floor().long().clamp(max=size - 1)
    p1 = (p0 + 1).clamp(max=size - 1)
    frac = pts - p0.to(pts.dtype)
    w = torch.zeros(R, out_size * S, size, dtype=lo.dtype)
    w.scatter_add_(2, p0[:, :, None], (1 - frac)[:, :, None])
    w.scatter_add_(2, p1[:, :, None], frac[:, :, None])
    return w.reshape(R, out_size, S, size).sum(dim=2) / S


def roi_pool(feat: FeatureMap, roi: Box, out_size: int, sampling_ratio: int = 2) -> torch.Tensor:
    """Pool one box from one feature map into a flat (N,) vector."""
    _, H, W = feat.tensor.shape
    if roi.x2 <= 0 or roi.y2 <= 0 or roi.x1 >= W * feat.stride or roi.y1 >= H * feat.stride:
        raise BoxError(f"roi {roi.as_tuple()} does not intersect the image")
    rois = torch.tensor([roi.as_tuple()], dtype=feat.tensor.dtype)
    return roi_align(feat.tensor[None], rois, torch.zeros(1, dtype=torch.long), out_size,
                     feat.stride, sampling_ratio)[0]


# -- anchors, NMS, proposals ---------------------------------------------------------------

def generate_anchors(feat_h: int, feat_w: int, stride: int, scales: Sequence[float],
                     dtype=torch.float32) -> torch.Tensor:
    """Square anchors centred on every cell; index = cell_index * len(scales) + scale_index."""
    cy = (torch.arange(feat_h, dtype=dtype) + 0.5) * stride
    cx = (torch.arange(feat_w, dtype=dtype) + 0.5) * stride
    cy, cx = torch.meshgrid(cy, cx, indexing="ij")
    centers = torch.stack([cx.reshape(-1), cy.reshape(-1)], dim=1)        # (HW, 2)
    half = torch.tensor(scales, dtype=dtype)[None, :, None] / 2            # (1, S, 1)
    c = centers[:, None, :]
    return torch.cat([c - half, c + half], dim=2).reshape(-1, 4)


def greedy_nms(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Indices kept by greedy NMS, highest score first; equal scores keep input order.

    A box is suppressed when its IoU with a kept box exceeds the threshold.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if len(order) == 0:
        return order
    # hand torchvision strictly decreasing rank scores so its internal sort
    # cannot reorder ties
    ranks = -torch.arange(len(order), dtype=torch.float64)
    keep = torchvision.ops.nms(torch.from_numpy(boxes[order]), ranks, iou_threshold)
    return order[keep.numpy()]


class RPN(nn.Module):
    """Standard RPN head on anchor-pooled features: a shared hidden layer, then
    an objectness logit and box deltas."""

    def __init__(self, feature_dim: int, hidden: int = 64):
        super().__init__()
        self.hidden = nn.Linear(feature_dim, hidden)
        self.cls = nn.Linear(hidden, 1)
        self.reg = nn.Linear(hidden, 4)
        with torch.no_grad():
            self.reg.weight.mul_(0.01)
            self.reg.bias.zero_()

    def forward(self, pooled: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h = torch.relu(self.hidden(pooled))
        return self.cls(h)[:, 0], self.reg(h)


def pool_anchors(features: torch.Tensor, cfg: ModelConfig) -> Tuple[torch.Tensor, torch.Tensor]:
    """Anchors of one image and their pooled features."""
    _, H, W = features.shape
    anchors = generate_anchors(H, W, cfg.stride, cfg.anchor_scales, features.dtype)
    pooled = roi_align(features[None], anchors, torch.zeros(len(anchors), dtype=torch.long),
                       cfg.out_size, cfg.stride, cfg.sampling_ratio)
    return anchors, pooled


@torch.no_grad()
def rpn_propose(features: torch.Tensor, rpn: RPN, cfg: ModelConfig,
                image_size: Tuple[int, int], objectness: Optional[torch.Tensor] = None
                ) -> Tuple[torch.Tensor, torch.Tensor]:
    """Proposals for one image, sorted by objectness descending.

    ``objectness`` overrides the head's logits (testing hook).  Ties keep
    anchor order.
    """
    anchors, pooled = pool_anchors(features, cfg)
    logits, deltas = rpn(pooled.to(rpn.cls.weight.dtype))
    if objectness is not None:
        logits = objectness.to(logits.dtype).expand_as(logits)
    boxes = decode_boxes(anchors.to(deltas.dtype), deltas, image_size)
    scores = torch.sigmoid(logits)
    order = torch.sort(scores, descending=True, stable=True).indices[: cfg.rpn_pre_nms]
    boxes, scores = boxes[order], scores[order]
    keep = greedy_nms(boxes.numpy(), scores.numpy(), cfg.rpn_nms_iou)[: cfg.max_proposals]
    keep = torch.as_tensor(keep, dtype=torch.long)
    return boxes[keep], scores[keep]


def _small_linear(feature_dim: int, generator: Optional[torch.Generator], dtype) -> nn.Linear:
    """Box regressor starting near the identity transform: tiny weights, zero bias."""
    reg = nn.Linear(feature_dim, 4).to(dtype)
    uniform_(reg.weight, feature_dim, generator)
    with torch.no_grad():
        reg.weight.mul_(0.01)
        reg.bias.zero_()
    return reg


class BLRPN(nn.Module):
    """RPN whose objectness comes from a foreground/background semantic branch.

    ``W_fb`` (d, 2) holds the background vector in column 0 and the
    foreground vector in column 1; both are trainable, ``D`` is not.
    """

    def __init__(self, feature_dim: int, D: torch.Tensor, W_fb: torch.Tensor,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        d, v = D.shape
        self.register_buffer("D", D.clone())
        self.W_fb = nn.Parameter(W_fb.clone().to(D.dtype))
        self.branch = SemanticBranch(feature_dim, d, v, generator, dtype=D.dtype)
        self.reg = _small_linear(feature_dim, generator, D.dtype)

    @property
    def v_b(self) -> torch.Tensor:
        return self.W_fb[:, 0]

    def forward(self, pooled: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.branch(pooled, self.W_fb, self.D), self.reg(pooled)


def blrpn_forward(features: torch.Tensor, rois: torch.Tensor, blrpn: BLRPN, cfg: ModelConfig
                  ) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-roi (background, foreground) probabilities and regression deltas for one image."""
    if len(rois) == 0:
        raise ValueError("blrpn_forward needs at least one roi")
    pooled = roi_align(features[None], rois, torch.zeros(len(rois), dtype=torch.long),
                       cfg.out_size, cfg.stride, cfg.sampling_ratio)
    logits, deltas = blrpn(pooled.to(blrpn.D.dtype))
    return torch.softmax(logits, dim=-1), deltas


# -- cascade ---------------------------------------------------------------------------------

class CascadeStage(nn.Module):
    def __init__(self, feature_dim: int, embed_dim: int, vocab_size: int,
                 generator: Optional[torch.Generator] = None, dtype=torch.float32):
        super().__init__()
        self.branch = SemanticBranch(feature_dim, embed_dim, vocab_size, generator, dtype)
        self.reg = _small_linear(feature_dim, generator, dtype)


class CascadeModel(nn.Module):
    """Three non-shared semantic stages over one fixed ``W_s`` and ``D``.

    With ``use_flow`` the stage projections use the flow states
    ``f_1 .. f_3`` instead of each stage's own ``D M_t``.
    """

    def __init__(self, cfg: ModelConfig, W_s: torch.Tensor, D: torch.Tensor,
                 generator: Optional[torch.Generator] = None, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg
        d, v = D.shape
        if W_s.shape[0] != d:
            raise ValueError(f"W_s has dimension {W_s.shape[0]} but D has {d}")
        self.register_buffer("W_s", W_s.clone().to(dtype))
        self.register_buffer("D", D.clone().to(dtype))
        N = cfg.roi_feature_dim
        self.stages = nn.ModuleList(CascadeStage(N, d, v, generator, dtype) for _ in range(cfg.num_stages))
        self.fusers = nn.ModuleList(
            FlowFuser(d, cfg.fuser_activation, generator, dtype) for _ in range(cfg.num_stages - 1)
        ) if cfg.use_flow else nn.ModuleList()
        self.rpn = RPN(N).to(dtype)

    @property
    def use_flow(self) -> bool:
        return len(self.fusers) > 0

    @property
    def num_seen(self) -> int:
        return self.W_s.shape[1] - 1

    def semantic_states(self) -> List[torch.Tensor]:
        """The (d, d) matrix each stage uses in place of ``D M_t``."""
        if self.use_flow:
            return [s.f for s in flow_states(self.D, [st.branch.M for st in self.stages], list(self.fusers))]
        return [st.branch.local_semantics(self.D) for st in self.stages]

    def projections(self) -> List[torch.Tensor]:
        return [project_with_semantics(self.W_s, f, st.branch.T)
                for f, st in zip(self.semantic_states(), self.stages)]

    def trainable_named(self) -> Dict[str, torch.Tensor]:
        return {n: p for n, p in self.named_parameters() if not n.startswith("rpn.")}


@dataclass
class StageOutput:
    rois: torch.Tensor          # boxes pooled at this stage (r_{t-1})
    pooled: torch.Tensor        # x_t^box
    logits: torch.Tensor        # (R, s+1)
    deltas: torch.Tensor        # normalized regression output
    boxes: torch.Tensor         # r_t, detached

    @property
    def probs(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)


def stage_forward(model: CascadeModel, t: int, features: torch.Tensor, rois: torch.Tensor,
                  batch_idx: torch.Tensor, P: torch.Tensor, image_size: Tuple[int, int]) -> StageOutput:
    cfg = model.cfg
    pooled = roi_align(features, rois, batch_idx, cfg.out_size, cfg.stride, cfg.sampling_ratio)
    pooled = pooled.to(P.dtype)
    logits = pooled @ P.T
    deltas = model.stages[t].reg(pooled)
    std = torch.tensor(cfg.stage_stds[t], dtype=deltas.dtype)
    with torch.no_grad():
        boxes = decode_boxes(rois.to(deltas.dtype), deltas.detach() * std, image_size)
    return StageOutput(rois, pooled, logits, deltas, boxes)


def cascade_forward(features: torch.Tensor, proposals: torch.Tensor, batch_idx: torch.Tensor,
                    model: CascadeModel, image_size: Tuple[int, int],
                    stage_rois: Optional[Sequence[torch.Tensor]] = None) -> List[StageOutput]:
    """Run all stages: stage t pools at ``r_{t-1}``, scores, and regresses ``r_t``.

    ``features`` is (B, C, H, W) and ``batch_idx`` maps each proposal to its
    image.  Boxes handed to the next stage are detached.  ``stage_rois``
    pins the rois pooled at every stage (used to differentiate the losses
    with the sampled boxes held fixed).
    """
    if len(proposals) == 0:
        return []
    projections = model.projections()
    outs: List[StageOutput] = []
    rois = proposals
    for t in range(model.cfg.num_stages):
        if stage_rois is not None:
            rois = stage_rois[t]
        out = stage_forward(model, t, features, rois, batch_idx, projections[t], image_size)
        outs.append(out)
        rois = out.boxes
    return outs


# -- checkpoints -------------------------------------------------------------------------------

def save_checkpoint(path, arrays: Dict[str, np.ndarray], meta: dict) -> None:
    """npz file: one entry per parameter path plus a JSON ``__meta__`` record."""
    meta = dict(meta)
    meta["format_version"] = CHECKPOINT_FORMAT
    meta["shapes"] = {k: list(np.shape(v)) for k, v in arrays.items()}
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
    for k, shape in meta["shapes"].items():
        if list(arrays[k].shape) != shape:
            raise ValueError(f"{path}: {k} has shape {arrays[k].shape}, manifest says {shape}")
    return arrays, meta


def module_arrays(module: nn.Module) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_arrays(module: nn.Module, arrays: Dict[str, np.ndarray]) -> None:
    state = {k: torch.as_tensor(v) for k, v in arrays.items()}
    module.load_state_dict(state)
