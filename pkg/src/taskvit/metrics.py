"""Benchmark metrics: accuracy, detection mAP, mIoU, retrieval mAP@K, and the
three-task global average.

Everything here is pure and depends only on numpy, so each metric can be
verified against brute-force oracles in isolation.

Conventions pinned by this implementation:

* Detection AP uses exact all-point interpolation (area under the precision
  envelope), greedy score-ordered matching at a single IoU threshold, and
  averages over the classes present in the ground truth.
* mIoU aggregates one confusion matrix over the whole evaluation set; classes
  with an empty union are excluded from the mean.
* AP@K uses recall steps r(i) = (#relevant in top-i) / |relevant| with the
  full relevant count in the denominator, so a query with more relevant items
  than K cannot reach 1.0. (The alternative min(K, |relevant|) normalization
  was rejected; the ``test_ap_at_k_more_relevant_than_k`` case pins this.)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_K = 10
DEFAULT_IOU_THRESH = 0.5


@dataclass
class RankedResult:
    """One query's gallery ranking: (gallery_id, score) in descending score order."""

    query_id: str
    ranking: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        scores = [s for _, s in self.ranking]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise DataError(f"ranking for query {self.query_id!r} has increasing scores")
        ids = [g for g, _ in self.ranking]
        if len(set(ids)) != len(ids):
            raise DataError(f"ranking for query {self.query_id!r} repeats a gallery id")


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise DimensionError(f"accuracy: shapes {preds.shape} and {labels.shape} differ")
    if preds.size == 0:
        raise DataError("accuracy: empty input")
    return float((preds == labels).mean())


# ---------------------------------------------------------------------------
# detection mAP
# ---------------------------------------------------------------------------


def _to_corners(box) -> np.ndarray:
    cx, cy, w, h = (float(v) for v in box)
    return np.array([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0])


def box_iou(box_a, box_b) -> float:
    """IoU of two (cx, cy, w, h) boxes."""
    a, b = _to_corners(box_a), _to_corners(box_b)
    x1, y1 = max(a[0], b[0]), max(a[1], b[1])
    x2, y2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, x2 - x1) * max(0.0, y2 - y1)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _ap_from_pr(tp: np.ndarray, fp: np.ndarray, num_gt: int) -> float:
    """Exact area under the precision envelope of a cumulative PR curve."""
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(fp)
    recall = tp_cum / num_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
    r = np.concatenate([[0.0], recall, [recall[-1] if len(recall) else 0.0]])
    p = np.concatenate([[1.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    steps = np.nonzero(r[1:] != r[:-1])[0]
    return float(((r[steps + 1] - r[steps]) * p[steps + 1]).sum())


def detection_map(
    detections: list[dict],
    ground_truth: list[dict],
    iou_thresh: float = DEFAULT_IOU_THRESH,
) -> float:
    """Mean average precision over the classes present in the ground truth.

    ``detections``: {"image_id", "class", "score", "box": (cx, cy, w, h)}.
    ``ground_truth``: {"image_id", "class", "box"}. Detections are sorted by
    descending score (ties: ascending image_id, then input order) and matched
    greedily to the best still-unmatched gt of their class in their image.
    Detections for classes absent from the gt contribute no AP term.
    """
    gt_by_class: dict[int, dict] = {}
    for g in ground_truth:
        cls = int(g["class"])
        per_image = gt_by_class.setdefault(cls, {})
        per_image.setdefault(g["image_id"], []).append(np.asarray(g["box"], dtype=np.float64))
    if not gt_by_class:
        raise DataError("detection_map: ground truth is empty")

    aps = []
    for cls, gt_images in sorted(gt_by_class.items()):
        num_gt = sum(len(v) for v in gt_images.values())
        dets = [
            (float(d["score"]), d["image_id"], order, d["box"])
            for order, d in enumerate(detections)
            if int(d["class"]) == cls
        ]
        dets.sort(key=lambda item: (-item[0], item[1], item[2]))
        matched: dict = {img: np.zeros(len(boxes), dtype=bool) for img, boxes in gt_images.items()}
        tp = np.zeros(len(dets))
        fp = np.zeros(len(dets))
        for i, (_, image_id, _, box) in enumerate(dets):
            candidates = gt_images.get(image_id, [])
            best_iou, best_j = 0.0, -1
            for j, gt_box in enumerate(candidates):
                if matched[image_id][j]:
                    continue
                iou = box_iou(box, gt_box)
                if iou > best_iou:
                    best_iou, best_j = iou, j
            if best_j >= 0 and best_iou >= iou_thresh:
                tp[i] = 1.0
                matched[image_id][best_j] = True
            else:
                fp[i] = 1.0
        aps.append(_ap_from_pr(tp, fp, num_gt) if len(dets) else 0.0)
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# segmentation mIoU
# ---------------------------------------------------------------------------


def confusion_matrix(pred_mask, gt_mask, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred_mask).ravel()
    gt = np.asarray(gt_mask).ravel()
    if pred.shape != gt.shape:
        raise DimensionError(
            f"confusion_matrix: shapes {np.asarray(pred_mask).shape} and "
            f"{np.asarray(gt_mask).shape} differ"
        )
    if pred.size and (pred.max() >= num_classes or gt.max() >= num_classes):
        raise DataError(f"mask value out of range for {num_classes} classes")
    idx = gt.astype(np.intp) * num_classes + pred.astype(np.intp)
    return np.bincount(idx, minlength=num_classes**2).reshape(num_classes, num_classes)


def miou_from_confusion(confusion: np.ndarray) -> float:
    inter = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - np.diag(confusion)
    present = union > 0
    if not present.any():
        raise DataError("miou: no class has a nonempty union")
    return float((inter[present] / union[present]).mean())


def miou(pred_mask, gt_mask, num_classes: int) -> float:
    """Mean IoU with a set-aggregate confusion matrix (single pair here;
    accumulate ``confusion_matrix`` across images for dataset evaluation)."""
    return miou_from_confusion(confusion_matrix(pred_mask, gt_mask, num_classes))


# ---------------------------------------------------------------------------
# retrieval mAP@K
# ---------------------------------------------------------------------------


def ap_at_k(result: RankedResult, relevant: set, k: int = DEFAULT_K) -> float:
    """AP@K = sum over the top K of p(i) * (r(i) - r(i-1)), r(0) = 0.

    r(i) counts relevant hits in the top i over the total number of relevant
    gallery items; p(i) is precision at rank i. The recall denominator is the
    full |relevant|, so AP@K caps at min(K, |relevant|) / |relevant|.
    """
    if k < 1:
        raise DataError(f"ap_at_k: K must be >= 1, got {k}")
    if not relevant:
        raise DataError(f"ap_at_k: query {result.query_id!r} has no relevant items")
    total = len(relevant)
    hits = 0
    ap = 0.0
    for i, (gallery_id, _) in enumerate(result.ranking[:k], start=1):
        if gallery_id in relevant:
            hits += 1
            # delta-r is 1/total exactly at relevant ranks, 0 elsewhere
            ap += (hits / i) * (1.0 / total)
    return ap


def map_at_k(results: list[RankedResult], judgments: dict, k: int = DEFAULT_K) -> float:
    """Mean of per-query AP@K. Queries with an empty relevant set are skipped
    (with a logged warning count); at least one scoreable query is required."""
    aps = []
    skipped = 0
    for result in results:
        relevant = judgments.get(result.query_id, set())
        if not relevant:
            skipped += 1
            continue
        aps.append(ap_at_k(result, relevant, k=k))
    if skipped:
        logger.warning("map_at_k: skipped %d queries with empty relevance sets", skipped)
    if not aps:
        raise DataError("map_at_k: no queries with nonempty relevance sets")
    return float(np.mean(aps))


def global_score(acc: float, map_det: float, miou_val: float) -> float:
    """The three-task leaderboard value: the arithmetic mean of Acc,
    detection mAP, and mIoU."""
    return (float(acc) + float(map_det) + float(miou_val)) / 3.0
