"""Small hand-built detection fixtures shared by metric and acceptance tests."""
from blc.records import Detection, GroundTruth

# three images, ten ground-truth boxes, ten detections; mixed IoUs, two
# detections contending for one box, a wrong-class hit and a score tie
GT = [
    ("img0", "cat", (0, 0, 10, 10)),
    ("img0", "cat", (20, 20, 30, 30)),
    ("img0", "dog", (40, 0, 60, 20)),
    ("img0", "dog", (42, 2, 62, 22)),
    ("img1", "cat", (5, 5, 25, 25)),
    ("img1", "bus", (30, 30, 50, 60)),
    ("img1", "bus", (0, 40, 20, 60)),
    ("img2", "dog", (10, 10, 20, 20)),
    ("img2", "cat", (30, 0, 40, 12)),
    ("img2", "bus", (0, 30, 30, 60)),
]

DETS = [
    ("img0", "cat", (1, 0, 11, 10), 0.90),      # IoU ~0.82 with gt0
    ("img0", "cat", (0, 1, 10, 11), 0.80),      # contends for gt0, falls to nothing
    ("img0", "dog", (41, 1, 61, 21), 0.70),     # near both dogs, takes the closer one
    ("img0", "cat", (23, 20, 33, 30), 0.70),    # score tie with the dog above; IoU 7/13
    ("img1", "cat", (5, 5, 25, 25), 0.95),      # exact
    ("img1", "dog", (30, 30, 50, 60), 0.60),    # right box, wrong class
    ("img1", "bus", (4, 44, 20, 60), 0.30),     # IoU 0.64
    ("img2", "dog", (13, 10, 23, 20), 0.50),    # IoU 7/13 ~0.54
    ("img2", "cat", (30, 0, 40, 10), 0.40),     # IoU 10/12
    ("img2", "bus", (5, 25, 35, 55), 0.20),     # IoU ~0.53
]


def gt_records():
    return [GroundTruth(i, c, b) for i, c, b in GT]


def det_records():
    return [Detection(i, c, s, b) for i, c, b, s in DETS]


def oracle_images(cls=None):
    """{image: (dets, gts)} in the oracle's tuple format, optionally one class only."""
    out = {}
    for i, c, b in GT:
        if cls is None or c == cls:
            out.setdefault(i, ([], []))[1].append((c, b))
    for i, c, b, s in DETS:
        if cls is None or c == cls:
            out.setdefault(i, ([], []))[0].append((c, b, s))
    return out


NMS_BOXES = [
    (0, 0, 10, 10), (1, 1, 11, 11), (0, 0, 10, 10), (20, 20, 30, 30),
    (22, 22, 32, 32), (5, 0, 15, 10), (40, 40, 45, 45), (21, 20, 31, 30),
]
NMS_SCORES = [0.9, 0.85, 0.9, 0.6, 0.7, 0.8, 0.1, 0.6]
