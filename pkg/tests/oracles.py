"""Plain-Python reference implementations used as test oracles.

Nothing here imports the package: every value is recomputed from the box
coordinates with loops so that a bug in the vectorized code cannot hide in
a shared helper.
"""


def iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def score_order(dets):
    """Indices by descending score; equal scores keep input order."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i][2], i))


def greedy_match(dets, gts, thr):
    """dets: [(class, box, score)], gts: [(class, box)] of one image.

    Returns (gt_hit list, det_tp list).
    """
    hit = [False] * len(gts)
    tp = [False] * len(dets)
    for i in score_order(dets):
        cls, box, _ = dets[i]
        best, best_j = -1.0, -1
        for j, (gcls, gbox) in enumerate(gts):
            if hit[j] or gcls != cls:
                continue
            o = iou(box, gbox)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= thr:
            hit[best_j] = True
            tp[i] = True
    return hit, tp


def recall(images, k, thr):
    """images: {image_id: (dets, gts)}; percent of gts hit by the top-k detections."""
    matched = total = 0
    for dets, gts in images.values():
        kept = [dets[i] for i in score_order(dets)[:k]]
        hit, _ = greedy_match(kept, gts, thr)
        matched += sum(hit)
        total += len(gts)
    return 100.0 * matched / total


def average_precision(images, thr):
    """All-point AP of one class: interpolated precision summed over recall steps."""
    flagged = []
    num_gt = 0
    order = 0
    for dets, gts in images.values():
        _, tp = greedy_match(dets, gts, thr)
        for d, t in zip(dets, tp):
            flagged.append((-d[2], order, t))
            order += 1
        num_gt += len(gts)
    flagged.sort()
    precisions, recalls = [], []
    n_tp = 0
    for rank, (_, _, t) in enumerate(flagged, start=1):
        n_tp += t
        precisions.append(n_tp / rank)
        recalls.append(n_tp / num_gt)
    ap = 0.0
    prev_r = 0.0
    for i in range(len(flagged)):
        if recalls[i] > prev_r:
            ap += (recalls[i] - prev_r) * max(precisions[i:])
            prev_r = recalls[i]
    return 100.0 * ap


def nms(boxes, scores, thr):
    """Exhaustive greedy suppression: keep a box unless a kept box overlaps it by more than thr."""
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) <= thr for j in kept):
            kept.append(i)
    return kept


def harmonic_mean(a, b):
    return 2 * a * b / (a + b)
