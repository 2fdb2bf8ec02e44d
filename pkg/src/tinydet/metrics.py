"""Detection evaluation: greedy matching, precision/recall, all-points
average precision, and mAP at fixed and swept IoU thresholds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import BBox, iou

IOU_SWEEP = [0.5 + 0.05 * i for i in range(10)]


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    bbox: BBox
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0) or not np.isfinite(self.score):
            raise ValueError(f"score must be finite in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_id: int
    bbox: BBox


@dataclass
class EvalReport:
    num_classes: int
    ap50: dict[int, float]  # per-class AP at IoU 0.5
    ap_sweep: dict[int, float]  # per-class AP averaged over 0.5:0.05:0.95
    map50: float
    map50_95: float
    precision: float  # at the score threshold
    recall: float
    score_threshold: float
    tp: int
    fp: int
    fn: int

    def to_csv(self) -> str:
        lines = ["class_id,ap50,ap50_95"]
        for k in range(self.num_classes):
            lines.append(f"{k},{self.ap50[k]:.9f},{self.ap_sweep[k]:.9f}")
        lines.append(f"mAP50,{self.map50:.9f},")
        lines.append(f"mAP50_95,{self.map50_95:.9f},")
        lines.append(f"precision@{self.score_threshold:g},{self.precision:.9f},")
        lines.append(f"recall@{self.score_threshold:g},{self.recall:.9f},")
        lines.append(f"tp,{self.tp},")
        lines.append(f"fp,{self.fp},")
        lines.append(f"fn,{self.fn},")
        return "\n".join(lines) + "\n"


def match_detections(
    preds: list[Detection], gts: list[GroundTruth], iou_threshold: float
) -> tuple[list[bool], list[bool]]:
    """Greedy one-to-one matching per image and class.

    Predictions are taken in descending score order (stable under ties);
    each claims the highest-IoU still-unmatched ground truth of its image
    and class if that IoU reaches the threshold, else it is a false
    positive.  Returns (per-prediction TP flags in input order,
    per-gt matched flags in input order).
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    gt_matched = [False] * len(gts)
    tp_flags = [False] * len(preds)
    gt_index: dict[tuple[str, int], list[int]] = {}
    for j, g in enumerate(gts):
        gt_index.setdefault((g.image_id, g.class_id), []).append(j)
    for i in order:
        p = preds[i]
        best_j, best_iou = -1, 0.0
        for j in gt_index.get((p.image_id, p.class_id), []):
            if gt_matched[j]:
                continue
            v = iou(p.bbox, gts[j].bbox)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= iou_threshold:
            gt_matched[best_j] = True
            tp_flags[i] = True
    return tp_flags, gt_matched


def precision_recall(tp_flags: list[bool], gt_count: int) -> tuple[float, float]:
    """P = TP/(TP+FP), defined as 1 with no predictions; R = TP/(TP+FN),
    defined as 1 with no ground truths."""
    tp = sum(tp_flags)
    p = tp / len(tp_flags) if tp_flags else 1.0
    r = tp / gt_count if gt_count else 1.0
    return p, r


def average_precision(
    tp_flags: list[bool], scores: list[float], gt_count: int
) -> float:
    """All-points interpolated AP: area under the precision envelope."""
    if gt_count == 0:
        return 0.0
    order = sorted(range(len(tp_flags)), key=lambda i: -scores[i])
    tps = np.cumsum([1 if tp_flags[i] else 0 for i in order])
    fps = np.cumsum([0 if tp_flags[i] else 1 for i in order])
    recall = tps / gt_count
    precision = tps / np.maximum(tps + fps, 1)
    # envelope: precision at each recall replaced by max precision at >= recall
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def map_report(
    preds: list[Detection],
    gts: list[GroundTruth],
    num_classes: int,
    *,
    score_threshold: float = 0.25,
) -> EvalReport:
    for p in preds:
        if not (0 <= p.class_id < num_classes):
            raise ValueError(f"unknown class_id {p.class_id}")
    for g in gts:
        if not (0 <= g.class_id < num_classes):
            raise ValueError(f"unknown class_id {g.class_id}")
    ap50: dict[int, float] = {}
    ap_sweep: dict[int, float] = {}
    for k in range(num_classes):
        pk = [p for p in preds if p.class_id == k]
        gk = [g for g in gts if g.class_id == k]
        aps = []
        for thr in IOU_SWEEP:
            flags, _ = match_detections(pk, gk, thr)
            aps.append(average_precision(flags, [p.score for p in pk], len(gk)))
        ap50[k] = aps[0]
        ap_sweep[k] = sum(aps) / len(aps)
    thresholded = [p for p in preds if p.score >= score_threshold]
    flags, gt_matched = match_detections(thresholded, gts, 0.5)
    tp = sum(flags)
    p, r = precision_recall(flags, len(gts))
    return EvalReport(
        num_classes=num_classes,
        ap50=ap50,
        ap_sweep=ap_sweep,
        map50=sum(ap50.values()) / num_classes if num_classes else 0.0,
        map50_95=sum(ap_sweep.values()) / num_classes if num_classes else 0.0,
        precision=p,
        recall=r,
        score_threshold=score_threshold,
        tp=tp,
        fp=len(flags) - tp,
        fn=len(gts) - tp,
    )


def nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy class-wise non-maximum suppression within one image."""
    kept: list[Detection] = []
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    for i in order:
        d = dets[i]
        ok = True
        for k in kept:
            if (
                k.image_id == d.image_id
                and k.class_id == d.class_id
                and iou(k.bbox, d.bbox) > iou_threshold
            ):
                ok = False
                break
        if ok:
            kept.append(d)
    return kept


# --- predictions file: CSV image_id,class_id,cx,cy,w,h,score (pixels) ------

PRED_HEADER = "image_id,class_id,cx,cy,w,h,score"


def predictions_to_csv(preds: list[Detection]) -> str:
    lines = [PRED_HEADER]
    for p in preds:
        b = p.bbox
        lines.append(
            f"{p.image_id},{p.class_id},{b.cx:.6f},{b.cy:.6f},{b.w:.6f},{b.h:.6f},{p.score:.6f}"
        )
    return "\n".join(lines) + "\n"


def predictions_from_csv(text: str) -> list[Detection]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != PRED_HEADER:
        raise ValueError(f"predictions CSV must start with header '{PRED_HEADER}'")
    out = []
    for ln in lines[1:]:
        img, cls, cx, cy, w, h, score = ln.split(",")
        out.append(
            Detection(img, int(cls), BBox(float(cx), float(cy), float(w), float(h)), float(score))
        )
    return out
