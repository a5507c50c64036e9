"""Detection evaluation: IoU, greedy matching, PR curves, all-point AP, mAP and NMS.

Conventions
-----------
* Detections are ranked by descending score; equal scores keep input order.
* A detection matches the unmatched ground-truth box of the same image and
  class with the highest IoU, provided IoU >= threshold. Equal IoUs go to the
  earlier ground-truth box.
* AP is the exact area under the monotone precision envelope (precision
  replaced by its running maximum from the right), summed over recall steps.
* mAP averages per-class AP over classes that have ground truth, unless
  ``include_empty`` is set, in which case classes seen only in detections
  contribute AP 0.
* Means are taken with :func:`statistics.mean`, which sums exactly and rounds
  once, so a mean never exceeds its largest term.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean

from .errors import ArgumentError, FormatError, MetricError

IOU_RANGE = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def _check_bbox(bbox, what):
    if len(bbox) != 4:
        raise ArgumentError(f"{what} bbox needs 4 coordinates, got {len(bbox)}")
    x1, y1, x2, y2 = bbox
    if not all(math.isfinite(v) for v in bbox):
        raise ArgumentError(f"{what} bbox has non-finite coordinates: {bbox}")
    if not (x2 > x1 and y2 > y1):
        raise ArgumentError(f"{what} bbox must satisfy x2 > x1 and y2 > y1, got {bbox}")


@dataclass(frozen=True)
class GtBox:
    image_id: str
    class_id: int
    bbox: tuple

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        _check_bbox(self.bbox, "ground-truth")


@dataclass(frozen=True)
class DetBox:
    image_id: str
    class_id: int
    bbox: tuple
    score: float

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        _check_bbox(self.bbox, "detection")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ArgumentError(f"detection score must be in [0, 1], got {self.score}")


def iou(a, b):
    """Intersection over union of two ``(x1, y1, x2, y2)`` boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def rank(dets):
    """Indices of ``dets`` by descending score, ties in input order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of greedy matching for the selected detections (kept in input order).

    ``matched[i]`` is the index into ``gts`` claimed by ``dets[i]``, or ``None``.
    """

    dets: tuple
    gts: tuple
    matched: tuple

    @property
    def flags(self):
        return tuple(m is not None for m in self.matched)

    @property
    def tp(self):
        return sum(self.flags)

    @property
    def fp(self):
        return len(self.dets) - self.tp

    @property
    def fn(self):
        return len(self.gts) - self.tp

    def ranked_flags(self):
        """TP flags in score order, the input to :func:`pr_curve`."""
        return [self.matched[i] is not None for i in rank(self.dets)]


def match_greedy(dets, gts, iou_thr=0.5, class_id=None, image_id=None):
    """Greedy score-ordered matching, optionally restricted to one class and/or image."""
    def keep(b):
        return (class_id is None or b.class_id == class_id) and (image_id is None or b.image_id == image_id)

    dets = tuple(d for d in dets if keep(d))
    gts = tuple(g for g in gts if keep(g))
    by_cell = {}
    for j, g in enumerate(gts):
        by_cell.setdefault((g.image_id, g.class_id), []).append(j)
    used = set()
    matched = [None] * len(dets)
    for i in rank(dets):
        d = dets[i]
        best, best_iou = None, -1.0
        for j in by_cell.get((d.image_id, d.class_id), ()):
            if j in used:
                continue
            v = iou(d.bbox, gts[j].bbox)
            if v >= iou_thr and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            used.add(best)
            matched[i] = best
    return MatchResult(dets, gts, tuple(matched))


def pr_curve(flags, total_gt):
    """Cumulative ``(precision, recall)`` after each ranked detection.

    With ``total_gt == 0`` recall is reported as 0, so the curve integrates to
    AP 0.
    """
    if total_gt < 0:
        raise ArgumentError(f"total_gt must be >= 0, got {total_gt}")
    curve, tp = [], 0
    for k, f in enumerate(flags, start=1):
        tp += bool(f)
        curve.append((tp / k, tp / total_gt if total_gt else 0.0))
    return curve


def ap(curve):
    """All-point AP: monotone precision envelope integrated over recall increments."""
    if not curve:
        return 0.0
    env = [p for p, _ in curve]
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    area, prev_r = 0.0, 0.0
    for p, (_, r) in zip(env, curve):
        if r > prev_r:
            area += (r - prev_r) * p
            prev_r = r
    return area


def class_ids(dets, gts, include_empty=False):
    classes = {g.class_id for g in gts}
    if include_empty:
        classes |= {d.class_id for d in dets}
    return sorted(classes)


def class_ap(dets, gts, class_id, iou_thr):
    m = match_greedy(dets, gts, iou_thr, class_id=class_id)
    return ap(pr_curve(m.ranked_flags(), len(m.gts)))


def _require_gt(gts):
    if not gts:
        raise MetricError("mAP is undefined without ground-truth boxes")


def map_at(dets, gts, iou_thr=0.5, include_empty=False):
    """Mean per-class AP at one IoU threshold."""
    _require_gt(gts)
    classes = class_ids(dets, gts, include_empty)
    return mean(class_ap(dets, gts, c, iou_thr) for c in classes)


def map_range(dets, gts, thresholds=IOU_RANGE, include_empty=False):
    """mAP averaged over IoU thresholds 0.50, 0.55, ..., 0.95."""
    _require_gt(gts)
    return mean(map_at(dets, gts, t, include_empty) for t in thresholds)


@dataclass(frozen=True)
class EvalResult:
    """Per-class AP by threshold, mAP values and the operating point.

    ``map_50`` is always the IoU-0.5 value; ``map_thr`` is the value at the
    requested ``iou_thr``. ``precision``, ``recall`` and ``counts`` use every
    detection (no score cut) at ``iou_thr``; precision and recall are averaged
    over the evaluated classes.
    """

    classes: tuple
    thresholds: tuple
    ap: dict
    iou_thr: float
    map_thr: float
    map_50: float
    map_50_95: float | None
    precision: float
    recall: float
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "classes": list(self.classes),
            "thresholds": list(self.thresholds),
            "ap": {str(c): {f"{t:.2f}": v for t, v in per.items()} for c, per in self.ap.items()},
            "iou_thr": self.iou_thr,
            "map_thr": self.map_thr,
            "map_50": self.map_50,
            "map_50_95": self.map_50_95,
            "precision": self.precision,
            "recall": self.recall,
            "counts": {str(c): dict(v) for c, v in self.counts.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self):
        t = self.iou_thr
        lines = [f"{'class':>5}  {f'AP@{t:.2f}':>7}  {'TP':>5}  {'FP':>5}  {'FN':>5}"]
        for c in self.classes:
            k = self.counts[c]
            lines.append(f"{c:>5}  {self.ap[c][t]:7.3f}  {k['tp']:>5}  {k['fp']:>5}  {k['fn']:>5}")
        lines.append(f"precision {self.precision:.3f}  recall {self.recall:.3f}  (IoU {t:.2f})")
        if t != 0.5:
            lines.append(f"mAP@{t:.2f} {self.map_thr:.3f}")
        lines.append(f"mAP0.5 {self.map_50:.3f}")
        if self.map_50_95 is not None:
            lines.append(f"mAP0.5:0.95 {self.map_50_95:.3f}")
        return "\n".join(lines)


def evaluate(dets, gts, iou_thr=0.5, iou_range=False, include_empty=False):
    """Evaluate detections against ground truth at ``iou_thr`` (and 0.5).

    With ``iou_range`` the mean over IoU 0.50:0.95 is added.
    """
    _require_gt(gts)
    dets, gts = list(dets), list(gts)
    classes = tuple(class_ids(dets, gts, include_empty))
    thresholds = tuple(sorted({0.5, iou_thr, *(IOU_RANGE if iou_range else ())}))
    aps, counts, precisions, recalls = {}, {}, [], []
    for c in classes:
        aps[c] = {t: class_ap(dets, gts, c, t) for t in thresholds}
        m = match_greedy(dets, gts, iou_thr, class_id=c)
        counts[c] = {"tp": m.tp, "fp": m.fp, "fn": m.fn}
        precisions.append(m.tp / len(m.dets) if m.dets else 0.0)
        recalls.append(m.tp / len(m.gts) if m.gts else 0.0)

    def class_mean(t):
        return mean(aps[c][t] for c in classes)

    map_50_95 = mean(class_mean(t) for t in IOU_RANGE) if iou_range else None
    return EvalResult(classes, thresholds, aps, iou_thr, class_mean(iou_thr), class_mean(0.5), map_50_95,
                      mean(precisions), mean(recalls), counts)


def nms(dets, iou_thr=0.7, per_class=True):
    """Greedy suppression: keep boxes in score order unless IoU > ``iou_thr`` with a kept box.

    Boxes only suppress boxes of the same image, and of the same class when
    ``per_class`` is set.
    """
    kept = []
    for i in rank(dets):
        d = dets[i]
        rivals = (k for k in kept
                  if k.image_id == d.image_id and (not per_class or k.class_id == d.class_id))
        if all(iou(d.bbox, k.bbox) <= iou_thr for k in rivals):
            kept.append(d)
    return kept


_DET_FIELDS = frozenset({"image_id", "class_id", "bbox", "score"})
_GT_FIELDS = frozenset({"image_id", "class_id", "bbox"})


def _parse_box(obj, detections):
    fields = _DET_FIELDS if detections else _GT_FIELDS
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    if set(obj) != fields:
        missing, extra = sorted(fields - set(obj)), sorted(set(obj) - fields)
        raise ValueError(f"fields must be exactly {sorted(fields)} (missing {missing}, unexpected {extra})")
    image_id, class_id, bbox = obj["image_id"], obj["class_id"], obj["bbox"]
    if isinstance(image_id, bool) or not isinstance(image_id, (str, int)):
        raise ValueError("image_id must be a string or integer")
    if isinstance(class_id, bool) or not isinstance(class_id, int) or class_id < 0:
        raise ValueError("class_id must be a non-negative integer")
    if not isinstance(bbox, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox):
        raise ValueError("bbox must be a list of 4 numbers")
    if detections:
        score = obj["score"]
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ValueError("score must be a number")
        return DetBox(str(image_id), class_id, bbox, float(score))
    return GtBox(str(image_id), class_id, bbox)


def parse_boxes(lines, detections, source="<input>"):
    """Parse JSON-lines records; blank lines are skipped, anything malformed raises."""
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(_parse_box(json.loads(line), detections))
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from None
    return out


def read_boxes(path, detections):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    return parse_boxes(text.splitlines(), detections, str(path))


def box_record(box):
    rec = {"image_id": box.image_id, "class_id": box.class_id, "bbox": list(box.bbox)}
    if isinstance(box, DetBox):
        rec["score"] = box.score
    return rec


def write_boxes(path, boxes):
    Path(path).write_text("".join(json.dumps(box_record(b)) + "\n" for b in boxes))
