"""Task decoders over shared encoder features.

Classification: linear projection (an isolation layer) followed by a
fully-connected classifier. Detection: a dense per-patch-token predictor
emitting sigmoid-bounded (cx, cy, w, h), an objectness logit, and class
logits; ground-truth boxes are matched to the token whose patch center lies
nearest the box center. Segmentation: per-stage linear projections with 2x
nearest-neighbor upsampling until the patch grid reaches pixel resolution,
then a linear classifier per pixel. The detection and segmentation decoders
are deliberately simple stand-ins shaped like the real systems they replace.

All head parameters are task-private: a loss for one head reaches no other
head's parameters.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .encoder import fan_in_weight
from .errors import DataError, DimensionError
from .store import ParamStore
from .tensor import Tensor

DET_CONF_THRESH = 0.3
DET_NMS_IOU = 0.5


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def init_cls_head(store: ParamStore, embed_dim: int, num_classes: int, rng,
                  prefix: str = "cls_head.") -> None:
    fan_in_weight(store, prefix + "proj.w", (embed_dim, embed_dim), rng)
    store.add(prefix + "proj.b", np.zeros(embed_dim))
    fan_in_weight(store, prefix + "out.w", (embed_dim, num_classes), rng)
    store.add(prefix + "out.b", np.zeros(num_classes))


def cls_forward(pooled: Tensor, store: ParamStore, prefix: str = "cls_head.") -> Tensor:
    h = T.linear(pooled, store[prefix + "proj.w"], store[prefix + "proj.b"])
    return T.linear(h, store[prefix + "out.w"], store[prefix + "out.b"])


def cls_loss(logits: Tensor, labels) -> Tensor:
    return T.cross_entropy(logits, np.asarray(labels))


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------


def init_det_head(store: ParamStore, embed_dim: int, num_classes: int, rng,
                  prefix: str = "det_head.") -> None:
    width = 4 + 1 + num_classes
    fan_in_weight(store, prefix + "out.w", (embed_dim, width), rng)
    store.add(prefix + "out.b", np.zeros(width))


def det_forward(tokens: Tensor, store: ParamStore, prefix: str = "det_head.") -> Tensor:
    """Raw per-patch-token predictions [B, N, 4+1+C]; the cls token is dropped."""
    patch_tokens = T.narrow(tokens, 1, 1, tokens.shape[1] - 1)
    return T.linear(patch_tokens, store[prefix + "out.w"], store[prefix + "out.b"])


def patch_centers(grid_size: int) -> np.ndarray:
    """Normalized (cx, cy) centers of the patch grid, row-major token order."""
    step = 1.0 / grid_size
    coords = (np.arange(grid_size) + 0.5) * step
    cy, cx = np.meshgrid(coords, coords, indexing="ij")
    return np.stack([cx.ravel(), cy.ravel()], axis=1)


def match_boxes_to_tokens(boxes: np.ndarray, grid_size: int) -> np.ndarray:
    """Assign each gt box to the token whose patch center is nearest the box
    center; ties resolve to the lowest token index."""
    centers = patch_centers(grid_size)
    out = np.empty(len(boxes), dtype=np.intp)
    for i, box in enumerate(boxes):
        d2 = ((centers - box[:2]) ** 2).sum(axis=1)
        out[i] = int(np.argmin(d2))
    return out


def _validate_gt(boxes: np.ndarray) -> None:
    if boxes.size and (boxes[:, 2].min() <= 0 or boxes[:, 3].min() <= 0):
        raise DataError("degenerate ground-truth box: w and h must be positive")


def det_loss(preds: Tensor, gt_boxes: list[np.ndarray], gt_classes: list[np.ndarray],
             num_classes: int) -> Tensor:
    """Objectness BCE over all tokens plus L1 box and class CE on matched tokens.

    ``gt_boxes[i]`` is an [k_i, 4] array of normalized (cx, cy, w, h) for image
    i; ``gt_classes[i]`` the matching class ids. The three terms are means over
    their own supports and summed unweighted.
    """
    b, n, width = preds.shape
    grid = int(round(math.sqrt(n)))
    if grid * grid != n:
        raise DimensionError(f"det_loss: token count {n} is not a square grid")
    obj_targets = np.zeros((b, n))
    matched_flat: list[int] = []
    matched_boxes: list[np.ndarray] = []
    matched_classes: list[int] = []
    for i, (boxes, classes) in enumerate(zip(gt_boxes, gt_classes)):
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        _validate_gt(boxes)
        tokens = match_boxes_to_tokens(boxes, grid)
        for j, tok in enumerate(tokens):
            obj_targets[i, tok] = 1.0
            matched_flat.append(i * n + tok)
            matched_boxes.append(boxes[j])
            matched_classes.append(int(classes[j]))
    flat = T.reshape(preds, (b * n, width))
    obj_logits = T.reshape(T.narrow(flat, 1, 4, 1), (b, n))
    loss = T.bce_with_logits(obj_logits, obj_targets)
    if matched_flat:
        rows = T.take_rows(flat, np.asarray(matched_flat))
        box_pred = T.sigmoid(T.narrow(rows, 1, 0, 4))
        box_l1 = T.mean(T.absolute(T.sub(box_pred, Tensor(np.asarray(matched_boxes)))))
        cls_ce = T.cross_entropy(T.narrow(rows, 1, 5, width - 5),
                                 np.asarray(matched_classes))
        loss = T.add(loss, T.add(box_l1, cls_ce))
    return loss


def box_corners(boxes: np.ndarray) -> np.ndarray:
    """(cx, cy, w, h) -> (x1, y1, x2, y2)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:4] / 2.0
    return np.concatenate([boxes[..., 0:2] - half, boxes[..., 0:2] + half], axis=-1)


def iou_corners(a: np.ndarray, b: np.ndarray) -> float:
    x1 = max(a[0], b[0])
    y1 = max(a[1], b[1])
    x2 = min(a[2], b[2])
    y2 = min(a[3], b[3])
    inter = max(0.0, x2 - x1) * max(0.0, y2 - y1)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def greedy_nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> list[int]:
    """Keep boxes in descending score order, dropping any with IoU above the
    threshold against an already-kept box."""
    order = np.argsort(-scores, kind="stable")
    corners = box_corners(boxes)
    keep: list[int] = []
    for idx in order:
        if all(iou_corners(corners[idx], corners[k]) <= iou_thresh for k in keep):
            keep.append(int(idx))
    return keep


def det_decode(preds: Tensor, conf_thresh: float = DET_CONF_THRESH,
               nms_iou: float = DET_NMS_IOU) -> list[list[dict]]:
    """Decode raw predictions into per-image detections.

    Returns, per image, dicts {"box": (cx, cy, w, h), "class": id, "score": s}
    sorted by descending score. Boxes are clipped to the unit square; the
    score is objectness times the winning class probability.
    """
    data = preds.data
    b, n, width = data.shape
    num_classes = width - 5
    results: list[list[dict]] = []
    for i in range(b):
        raw = data[i]
        boxes = 1.0 / (1.0 + np.exp(-raw[:, 0:4]))
        obj = 1.0 / (1.0 + np.exp(-raw[:, 4]))
        cls_logits = raw[:, 5:]
        shifted = cls_logits - cls_logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        cls_ids = probs.argmax(axis=1)
        scores = obj * probs[np.arange(n), cls_ids]
        mask = scores >= conf_thresh
        if not mask.any():
            results.append([])
            continue
        corners = np.clip(box_corners(boxes[mask]), 0.0, 1.0)
        clipped = np.concatenate(
            [(corners[:, 0:2] + corners[:, 2:4]) / 2.0, corners[:, 2:4] - corners[:, 0:2]],
            axis=1,
        )
        kept = greedy_nms(clipped, scores[mask], nms_iou)
        sel_scores = scores[mask]
        sel_classes = cls_ids[mask]
        dets = [
            {
                "box": tuple(float(v) for v in clipped[k]),
                "class": int(sel_classes[k]),
                "score": float(sel_scores[k]),
            }
            for k in kept
        ]
        dets.sort(key=lambda d: -d["score"])
        results.append(dets)
    return results


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def seg_num_stages(patch_size: int) -> int:
    stages = int(round(math.log2(patch_size)))
    if 2**stages != patch_size:
        raise DimensionError(f"seg head needs a power-of-two patch size, got {patch_size}")
    return stages


def init_seg_head(store: ParamStore, embed_dim: int, num_seg_classes: int, patch_size: int,
                  rng, prefix: str = "seg_head.") -> None:
    for i in range(seg_num_stages(patch_size)):
        fan_in_weight(store, prefix + f"up{i}.w", (embed_dim, embed_dim), rng)
        store.add(prefix + f"up{i}.b", np.zeros(embed_dim))
    fan_in_weight(store, prefix + "out.w", (embed_dim, num_seg_classes), rng)
    store.add(prefix + "out.b", np.zeros(num_seg_classes))


def seg_forward(tokens: Tensor, store: ParamStore, patch_size: int,
                prefix: str = "seg_head.") -> Tensor:
    """Progressive-upsampling decode to per-pixel logits [B, C, H, W].

    The cls token is dropped; the remaining patch tokens are laid out on the
    patch grid and upsampled 2x per stage until grid * 2^S = image size.
    """
    b, n_plus_1, d = tokens.shape
    n = n_plus_1 - 1
    grid = int(round(math.sqrt(n)))
    if grid * grid != n:
        raise DimensionError(f"seg_forward: patch token count {n} is not a square grid")
    x = T.narrow(tokens, 1, 1, n)
    x = T.reshape(x, (b, grid, grid, d))
    size = grid
    for i in range(seg_num_stages(patch_size)):
        flat = T.reshape(x, (b * size * size, d))
        flat = T.linear(flat, store[prefix + f"up{i}.w"], store[prefix + f"up{i}.b"])
        x = T.upsample2x(T.reshape(flat, (b, size, size, d)))
        size *= 2
    flat = T.reshape(x, (b * size * size, d))
    logits = T.linear(flat, store[prefix + "out.w"], store[prefix + "out.b"])
    logits = T.reshape(logits, (b, size, size, -1))
    return T.transpose(logits, (0, 3, 1, 2))


def seg_loss(logits: Tensor, masks) -> Tensor:
    """Mean per-pixel cross-entropy of [B, C, H, W] logits against int masks."""
    masks = np.asarray(masks)
    b, c, h, w = logits.shape
    if masks.shape != (b, h, w):
        raise DimensionError(
            f"seg_loss: mask shape {masks.shape} does not match logits {(b, h, w)}"
        )
    flat = T.reshape(T.transpose(logits, (0, 2, 3, 1)), (b * h * w, c))
    return T.cross_entropy(flat, masks.reshape(-1))
