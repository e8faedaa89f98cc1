"""Axis-aligned box primitives shared by the detector, inference and evaluation.

Boxes are ``(x1, y1, x2, y2)`` in continuous pixel coordinates; width is
``x2 - x1`` (no +1 convention).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
import torch

# Largest log-scale delta allowed when decoding (same cap as common detectors).
DELTA_CLAMP = math.log(1000.0 / 16)


class BoxError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise BoxError(f"non-finite box {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise BoxError(f"degenerate box {coords}")

    def __iter__(self) -> Iterator[float]:
        return iter((self.x1, self.y1, self.x2, self.y2))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)


def box_area(boxes):
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def iou_matrix(a, b):
    """Pairwise IoU between ``a`` (n, 4) and ``b`` (m, 4).

    Works on numpy arrays and torch tensors alike.
    """
    if isinstance(a, torch.Tensor):
        lt = torch.maximum(a[:, None, :2], b[None, :, :2])
        rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
        wh = (rb - lt).clamp(min=0)
    else:
        a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
        b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
        lt = np.maximum(a[:, None, :2], b[None, :, :2])
        rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
        wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    return inter / union


def clip_boxes(boxes: torch.Tensor, image_size: Tuple[int, int], min_size: float = 1.0) -> torch.Tensor:
    """Clip to ``image_size = (height, width)`` keeping every box at least ``min_size`` wide/high."""
    h, w = image_size
    x1 = boxes[:, 0].clamp(0, w - min_size)
    y1 = boxes[:, 1].clamp(0, h - min_size)
    x2 = torch.maximum(boxes[:, 2].clamp(max=w), x1 + min_size)
    y2 = torch.maximum(boxes[:, 3].clamp(max=h), y1 + min_size)
    return torch.stack([x1, y1, x2, y2], dim=1)


def encode_boxes(rois: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Center/size deltas ``(dx, dy, dw, dh)`` that map ``rois`` onto ``targets``."""
    pw = rois[:, 2] - rois[:, 0]
    ph = rois[:, 3] - rois[:, 1]
    px = rois[:, 0] + 0.5 * pw
    py = rois[:, 1] + 0.5 * ph
    gw = targets[:, 2] - targets[:, 0]
    gh = targets[:, 3] - targets[:, 1]
    gx = targets[:, 0] + 0.5 * gw
    gy = targets[:, 1] + 0.5 * gh
    return torch.stack(
        [(gx - px) / pw, (gy - py) / ph, torch.log(gw / pw), torch.log(gh / ph)], dim=1
    )


def decode_boxes(
    rois: torch.Tensor,
    deltas: torch.Tensor,
    image_size: Optional[Tuple[int, int]] = None,
) -> torch.Tensor:
    """Apply center/size ``deltas`` to ``rois``; clip when ``image_size`` is given."""
    if not torch.isfinite(deltas).all():
        raise BoxError("non-finite regression deltas")
    pw = rois[:, 2] - rois[:, 0]
    ph = rois[:, 3] - rois[:, 1]
    px = rois[:, 0] + 0.5 * pw
    py = rois[:, 1] + 0.5 * ph
    dw = deltas[:, 2].clamp(-DELTA_CLAMP, DELTA_CLAMP)
    dh = deltas[:, 3].clamp(-DELTA_CLAMP, DELTA_CLAMP)
    cx = px + deltas[:, 0] * pw
    cy = py + deltas[:, 1] * ph
    w = pw * torch.exp(dw)
    h = ph * torch.exp(dh)
    out = torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=1)
    if image_size is not None:
        out = clip_boxes(out, image_size)
    return out


def decode_box(roi: Box, deltas: Sequence[float], image_size: Optional[Tuple[int, int]] = None) -> Box:
    """Single-box convenience wrapper around :func:`decode_boxes`."""
    d = torch.as_tensor(np.asarray(deltas, dtype=np.float64)).reshape(1, 4)
    r = torch.tensor([roi.as_tuple()], dtype=torch.float64)
    out = decode_boxes(r, d, image_size)[0].tolist()
    return Box(*out)
