"""Detection and ground-truth records plus their tab-separated dump format.

Dump files carry a header line; columns are::

    image_id  group  class_name  score  x1  y1  x2  y2      (detections)
    image_id  group  class_name  x1  y1  x2  y2             (ground truth)

Tabs separate fields because class names may contain spaces.  Optional
``# key: value`` lines before the header carry provenance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

SEEN = "seen"
UNSEEN = "unseen"
GROUPS = (SEEN, UNSEEN)

DET_HEADER = ("image_id", "group", "class_name", "score", "x1", "y1", "x2", "y2")
GT_HEADER = ("image_id", "group", "class_name", "x1", "y1", "x2", "y2")


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_name: str
    score: float
    box: Tuple[float, float, float, float]
    group: str = UNSEEN
    class_id: int = 0

    def __post_init__(self):
        if self.group not in GROUPS:
            raise RecordError(f"unknown group {self.group!r}")
        if not math.isfinite(self.score):
            raise RecordError(f"non-finite score for {self.class_name!r} in {self.image_id!r}")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_name: str
    box: Tuple[float, float, float, float]
    group: str = UNSEEN


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_meta(fh, meta: Optional[Dict[str, object]]) -> None:
    for k in sorted(meta or {}):
        fh.write(f"# {k}: {meta[k]}\n")


def write_detections(path, dets: Iterable[Detection], meta: Optional[Dict[str, object]] = None) -> None:
    """Tab-separated dump; ``meta`` goes into leading ``# key: value`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        _write_meta(fh, meta)
        fh.write("\t".join(DET_HEADER) + "\n")
        for d in dets:
            fields = [d.image_id, d.group, d.class_name, _fmt(d.score)] + [_fmt(c) for c in d.box]
            fh.write("\t".join(fields) + "\n")


def write_ground_truth(path, gts: Iterable[GroundTruth], meta: Optional[Dict[str, object]] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        _write_meta(fh, meta)
        fh.write("\t".join(GT_HEADER) + "\n")
        for g in gts:
            fields = [g.image_id, g.group, g.class_name] + [_fmt(c) for c in g.box]
            fh.write("\t".join(fields) + "\n")


def read_meta(path) -> Dict[str, str]:
    """The ``# key: value`` lines in front of a dump's header."""
    meta = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(":")
            meta[key.strip()] = value.strip()
    return meta


def _rows(path, header):
    with open(path, "r", encoding="utf-8") as fh:
        lineno = 1
        first = fh.readline()
        while first.startswith("#"):
            first = fh.readline()
            lineno += 1
        first = first.rstrip("\n").split("\t")
        if tuple(first) != header:
            raise RecordError(f"{path}: unexpected header {first}")
        for lineno, line in enumerate(fh, start=lineno + 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(header):
                raise RecordError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
            yield lineno, parts


def read_detections(path) -> List[Detection]:
    out = []
    for lineno, p in _rows(path, DET_HEADER):
        try:
            out.append(Detection(p[0], p[2], float(p[3]), tuple(float(c) for c in p[4:8]), group=p[1]))
        except ValueError as exc:
            raise RecordError(f"{path}:{lineno}: {exc}") from None
    return out


def read_ground_truth(path) -> List[GroundTruth]:
    out = []
    for lineno, p in _rows(path, GT_HEADER):
        try:
            out.append(GroundTruth(p[0], p[2], tuple(float(c) for c in p[3:7]), group=p[1]))
        except ValueError as exc:
            raise RecordError(f"{path}:{lineno}: {exc}") from None
    return out
