"""Evaluation measures for piecewise planar reconstruction.

All functions work on a single frame; :func:`aggregate_reports` folds
per-frame reports into a dataset-level one in a fixed order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, EmptySupportError, InsufficientDataError, ShapeError
from .geometry import CameraIntrinsics, DepthMap
from .planes import InstanceMask, Plane, fit_plane_svd, param_difference, render_plane_depth
from .segmentation import NON_PLANAR, SegmentationMap, SoftMask, assemble_segmentation, segmentation_from_masks
from .warping import PlanarScene, assemble_depth

__all__ = [
    "RECALL_THRESHOLDS",
    "AP_DEPTH_THRESHOLDS",
    "DetectionResult",
    "RecallCurve",
    "ParameterAccuracy",
    "EvalReport",
    "mask_iou",
    "match_planes",
    "plane_depth_errors",
    "recall_curve",
    "average_precision",
    "clustering_metrics",
    "depth_metrics",
    "parameter_accuracy",
    "evaluate_frame",
    "aggregate_reports",
]

RECALL_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(21))
AP_DEPTH_THRESHOLDS = (0.4, 0.6, 0.9)
IOU_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class DetectionResult:
    plane: Plane
    mask: InstanceMask
    confidence: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.confidence):
            raise ValueError("confidence must be finite")


@dataclass(frozen=True)
class RecallCurve:
    thresholds: tuple[float, ...]
    recall: tuple[float, ...]

    def rows(self):
        return list(zip(self.thresholds, self.recall))


@dataclass(frozen=True)
class ParameterAccuracy:
    mean: float
    area_weighted_mean: float
    evaluated: int
    skipped: int


@dataclass(frozen=True)
class EvalReport:
    """Per-frame or aggregated evaluation; field order is the JSON order."""

    recall_curve: RecallCurve
    ap_04: float
    ap_06: float
    ap_09: float
    voi: float
    ri: float
    sc: float
    rel: float
    log10: float
    rmse: float
    param_mean: float
    param_weighted: float

    def as_dict(self) -> dict:
        return {
            "recall_curve": {
                "thresholds": list(self.recall_curve.thresholds),
                "recall": list(self.recall_curve.recall),
            },
            "ap_04": self.ap_04,
            "ap_06": self.ap_06,
            "ap_09": self.ap_09,
            "voi": self.voi,
            "ri": self.ri,
            "sc": self.sc,
            "rel": self.rel,
            "log10": self.log10,
            "rmse": self.rmse,
            "param_mean": self.param_mean,
            "param_weighted": self.param_weighted,
        }


def _gt_masks(gts) -> list[InstanceMask]:
    return list(gts.visible_masks) if hasattr(gts, "visible_masks") else list(gts)


def mask_iou(a: InstanceMask, b: InstanceMask) -> float:
    if a.shape != b.shape:
        raise ShapeError("masks differ in size")
    inter = np.count_nonzero(a.membership & b.membership)
    union = np.count_nonzero(a.membership | b.membership)
    return inter / union if union else 0.0


def _iou_matrix(preds, gt_masks) -> np.ndarray:
    if not preds or not gt_masks:
        return np.zeros((len(preds), len(gt_masks)))
    P = np.stack([p.mask.membership.ravel() for p in preds]).astype(np.int64)
    G = np.stack([g.membership.ravel() for g in gt_masks]).astype(np.int64)
    if P.shape[1] != G.shape[1]:
        raise ShapeError("prediction and ground-truth masks differ in size")
    inter = P @ G.T
    union = P.sum(1)[:, None] + G.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


def match_planes(preds, gts, iou_min: float = IOU_THRESHOLD) -> dict[int, int]:
    """Greedy one-to-one matching in descending IOU order.

    Only pairs with IOU >= ``iou_min`` are considered; equal IOUs are broken
    by (prediction index, ground-truth index).

    Returns:
        Mapping from ground-truth index to prediction index.
    """
    iou = _iou_matrix(list(preds), _gt_masks(gts))
    pairs = [(-iou[p, g], p, g) for p, g in zip(*np.nonzero(iou >= iou_min))]
    pairs.sort()
    used_p, matching = set(), {}
    for _, p, g in pairs:
        if p in used_p or g in matching:
            continue
        used_p.add(p)
        matching[int(g)] = int(p)
    return matching


def _overlap_depth_error(pred: DetectionResult, gt_plane: Plane, gt_mask: InstanceMask, K) -> float:
    """Mean |pred plane depth - gt plane depth| over the mask intersection.

    Returns inf when no overlapping pixel sees both planes.
    """
    pred_z = render_plane_depth(pred.plane, K)
    gt_z = render_plane_depth(gt_plane, K)
    overlap = pred.mask.membership & gt_mask.membership & (pred_z > 0) & (gt_z > 0)
    if not overlap.any():
        return math.inf
    return float(np.mean(np.abs(pred_z[overlap] - gt_z[overlap])))


def plane_depth_errors(preds, gts, iou_min: float = IOU_THRESHOLD) -> list[float]:
    """Per ground-truth plane: mean depth error of its matched prediction (inf if unmatched)."""
    gt_masks = _gt_masks(gts)
    matching = match_planes(preds, gt_masks, iou_min)
    errors = []
    for g, mask in enumerate(gt_masks):
        if g in matching:
            errors.append(_overlap_depth_error(preds[matching[g]], gts.planes[g], mask, gts.K))
        else:
            errors.append(math.inf)
    return errors


def recall_curve(preds, gts, iou_min: float = IOU_THRESHOLD, thresholds=RECALL_THRESHOLDS) -> RecallCurve:
    """Fraction of ground-truth planes matched with mean depth error <= each threshold.

    Raises:
        EmptySupportError: the frame has no ground-truth plane.
    """
    if len(gts.planes) == 0:
        raise EmptySupportError("recall is undefined without ground-truth planes")
    errors = np.array(plane_depth_errors(list(preds), gts, iou_min))
    recall = tuple(float(np.mean(errors <= t)) for t in thresholds)
    return RecallCurve(tuple(thresholds), recall)


def _all_point_ap(tp: np.ndarray, n_gt: int) -> float:
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(preds, gts, depth_max: float, iou_min: float = IOU_THRESHOLD) -> float:
    """AP where a true positive needs IOU >= ``iou_min`` and mean depth error <= ``depth_max``.

    Detections are ranked by descending confidence (stable for ties). Each
    claims the highest-IOU unclaimed ground truth that satisfies both
    criteria. The area under the precision-recall curve uses all-point
    interpolation of the precision envelope.
    """
    preds = list(preds)
    gt_masks = _gt_masks(gts)
    if not gt_masks:
        warnings.warn("average precision with no ground-truth planes is reported as 0")
        return 0.0
    if not preds:
        return 0.0
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    iou = _iou_matrix(preds, gt_masks)
    claimed = np.zeros(len(gt_masks), dtype=bool)
    tp = np.zeros(len(preds), dtype=bool)
    for rank, p in enumerate(order):
        for g in np.argsort(-iou[p], kind="stable"):
            if iou[p, g] < iou_min:
                break
            if claimed[g]:
                continue
            if _overlap_depth_error(preds[p], gts.planes[g], gt_masks[g], gts.K) <= depth_max:
                claimed[g] = True
                tp[rank] = True
                break
    return _all_point_ap(tp, len(gt_masks))


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def clustering_metrics(pred: SegmentationMap, gt: SegmentationMap) -> tuple[float, float, float]:
    """Variation of information (natural log), Rand index and segmentation covering.

    Every label value, ``NON_PLANAR`` included, is an ordinary segment.
    Covering is measured over ground-truth regions and is not symmetric.
    """
    if pred.shape != gt.shape:
        raise ShapeError("segmentations differ in size")
    n = pred.labels.size
    _, p_idx = np.unique(pred.labels.ravel(), return_inverse=True)
    _, g_idx = np.unique(gt.labels.ravel(), return_inverse=True)
    joint = np.zeros((p_idx.max() + 1, g_idx.max() + 1), dtype=np.int64)
    np.add.at(joint, (p_idx, g_idx), 1)
    a = joint.sum(axis=1)
    b = joint.sum(axis=0)

    h_p = _entropy(a, n)
    h_g = _entropy(b, n)
    h_joint = _entropy(joint.ravel(), n)
    # I = H(P) + H(G) - H(P,G), so VOI = 2 H(P,G) - H(P) - H(G)
    voi = max(2.0 * h_joint - h_p - h_g, 0.0)

    def pairs(x):
        x = x.astype(np.float64)
        return float(np.sum(x * (x - 1) / 2))

    total = n * (n - 1) / 2
    if total == 0:
        ri = 1.0
    else:
        agree = total + 2 * pairs(joint) - pairs(a) - pairs(b)
        ri = agree / total

    union = a[:, None] + b[None, :] - joint
    best_iou = (joint / union).max(axis=0)
    sc = float(np.sum(b * best_iou) / n)
    return voi, float(ri), sc


def depth_metrics(pred: DepthMap, gt: DepthMap) -> tuple[float, float, float]:
    """(rel, log10, rmse) over pixels valid in both maps."""
    if pred.shape != gt.shape:
        raise ShapeError("depth maps differ in size")
    both = pred.valid & gt.valid
    if not both.any():
        raise EmptySupportError("no pixel is valid in both depth maps")
    p, g = pred.values[both], gt.values[both]
    rel = float(np.mean(np.abs(p - g) / g))
    log10 = float(np.mean(np.abs(np.log10(p) - np.log10(g))))
    rmse = float(np.sqrt(np.mean((p - g) ** 2)))
    return rel, log10, rmse


def parameter_accuracy(
    pred_depth: DepthMap, gt, K: CameraIntrinsics, representation: str = "normal_offset"
) -> ParameterAccuracy:
    """Plane-parameter error of the reconstruction on each ground-truth segment.

    For every ground-truth visible mask, the predicted depths inside it are
    unprojected and fit by SVD; the fit is compared to the ground-truth plane
    with :func:`param_difference`. Segments with fewer than 3 valid predicted
    pixels (or collinear points) are skipped. Weights for the weighted mean are
    the segment pixel areas.

    Raises:
        EmptySupportError: every segment was skipped.
    """
    if pred_depth.shape != K.shape:
        raise ShapeError("predicted depth does not match the intrinsics")
    diffs, areas, skipped = [], [], 0
    for plane, mask in zip(gt.planes, gt.visible_masks):
        use = mask.membership & pred_depth.valid
        v, u = np.nonzero(use)
        pts = K.rays(np.stack([u, v], axis=-1).astype(float)) * pred_depth.values[v, u][:, None]
        try:
            fitted, _ = fit_plane_svd(pts)
        except (InsufficientDataError, DegenerateGeometryError):
            skipped += 1
            continue
        diffs.append(param_difference(fitted, plane, representation))
        areas.append(mask.area)
    if not diffs:
        raise EmptySupportError("no ground-truth segment has enough predicted depth")
    diffs_a, areas_a = np.array(diffs), np.array(areas, dtype=float)
    return ParameterAccuracy(
        mean=float(diffs_a.mean()),
        area_weighted_mean=float(np.sum(diffs_a * areas_a) / areas_a.sum()),
        evaluated=len(diffs),
        skipped=skipped,
    )


def evaluate_frame(detections, pred_depth: DepthMap, gt) -> EvalReport:
    """Full report for one frame.

    The reconstruction's depth map is rebuilt piecewise-planar: overlapping
    detection masks are resolved per pixel (highest confidence, then lowest
    index), planar pixels take their plane depth and the rest fall back to
    ``pred_depth``. That depth map feeds the depth and parameter metrics; the
    resolved labels feed the clustering metrics.
    """
    detections = list(detections)
    K = gt.K
    shape = K.shape
    ranked = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    if detections:
        labels = assemble_segmentation([SoftMask.from_instance(detections[i].mask) for i in ranked]).labels
        remap = np.full(NON_PLANAR + 1, NON_PLANAR)
        remap[: len(ranked)] = ranked
        pred_seg = SegmentationMap(remap[labels])
    else:
        pred_seg = SegmentationMap(np.full(shape, NON_PLANAR))
    masks = [InstanceMask(pred_seg.labels == i) for i in range(len(detections))]
    scene = PlanarScene([d.plane for d in detections], masks, pred_depth)
    depth = assemble_depth(scene, K)

    curve = recall_curve(detections, gt)
    aps = [average_precision(detections, gt, t) for t in AP_DEPTH_THRESHOLDS]
    voi, ri, sc = clustering_metrics(pred_seg, segmentation_from_masks(gt.visible_masks, shape))
    rel, log10, rmse = depth_metrics(depth, gt.gt_depth)
    params = parameter_accuracy(depth, gt, K)
    return EvalReport(
        recall_curve=curve,
        ap_04=aps[0],
        ap_06=aps[1],
        ap_09=aps[2],
        voi=voi,
        ri=ri,
        sc=sc,
        rel=rel,
        log10=log10,
        rmse=rmse,
        param_mean=params.mean,
        param_weighted=params.area_weighted_mean,
    )


def aggregate_reports(reports) -> EvalReport:
    """Unweighted mean of per-frame reports, folded in the given order."""
    reports = list(reports)
    if not reports:
        raise EmptySupportError("nothing to aggregate")
    if len(reports) == 1:
        return reports[0]
    curves = np.array([r.recall_curve.recall for r in reports])
    scalars = {
        name: float(math.fsum(getattr(r, name) for r in reports) / len(reports))
        for name in ("ap_04", "ap_06", "ap_09", "voi", "ri", "sc", "rel", "log10", "rmse", "param_mean", "param_weighted")
    }
    curve = RecallCurve(reports[0].recall_curve.thresholds, tuple(float(x) for x in curves.mean(axis=0)))
    return EvalReport(recall_curve=curve, **scalars)
