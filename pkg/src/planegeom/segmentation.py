"""Target assignment, bounding-box mask alignment and final segmentation assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .planes import InstanceMask

__all__ = [
    "NON_PLANAR",
    "SegmentationMap",
    "SoftMask",
    "assign_targets",
    "align_mask",
    "assemble_segmentation",
    "segmentation_from_masks",
]

NON_PLANAR = 65535


@dataclass(frozen=True, eq=False)
class SegmentationMap:
    """Per-pixel plane index, or ``NON_PLANAR``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ShapeError(f"segmentation must be 2-D, got shape {labels.shape}")
        if np.any((labels < 0) | (labels > NON_PLANAR)):
            raise DomainError(f"labels must lie in [0, {NON_PLANAR}]")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True, eq=False)
class SoftMask:
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        if p.ndim != 2:
            raise ShapeError(f"soft mask must be 2-D, got shape {p.shape}")
        if not np.all((p >= 0) & (p <= 1)):
            raise DomainError("soft mask values must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def from_instance(cls, mask: InstanceMask) -> "SoftMask":
        return cls(mask.membership.astype(float))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probabilities.shape


def assign_targets(pred_masks, gt_masks) -> list[int | None]:
    """Ground-truth index with the largest pixel intersection for each prediction.

    Predictions touching no ground-truth mask get None. Ties go to the lowest
    ground-truth index; several predictions may share one target.
    """
    if not gt_masks:
        return [None] * len(pred_masks)
    gt = np.stack([g.membership.ravel() for g in gt_masks]).astype(np.int64)
    out: list[int | None] = []
    for p in pred_masks:
        if p.shape != gt_masks[0].shape:
            raise ShapeError("prediction and ground-truth masks differ in size")
        overlap = gt @ p.membership.ravel().astype(np.int64)
        best = int(np.argmax(overlap))
        out.append(best if overlap[best] > 0 else None)
    return out


def align_mask(mask: SoftMask, bbox, out_w: int, out_h: int) -> SoftMask:
    """Paste ``mask`` into ``bbox`` of an ``out_h`` x ``out_w`` canvas.

    ``bbox`` is ``(x0, y0, x1, y1)`` in integer pixels, end-exclusive. The
    mask is resampled bilinearly with pixel-center alignment (output pixel
    ``x`` reads source coordinate ``(x - x0 + 0.5) * in_w / box_w - 0.5``),
    clamped at the mask border. Pixels outside the box are 0.
    """
    x0, y0, x1, y1 = (int(c) for c in bbox)
    if not (0 <= x0 < x1 <= out_w and 0 <= y0 < y1 <= out_h):
        raise DomainError(f"bbox {bbox} must have positive area inside a {out_w}x{out_h} frame")
    src = mask.probabilities
    in_h, in_w = src.shape
    bw, bh = x1 - x0, y1 - y0
    sx = np.clip((np.arange(bw) + 0.5) * in_w / bw - 0.5, 0, in_w - 1)
    sy = np.clip((np.arange(bh) + 0.5) * in_h / bh - 0.5, 0, in_h - 1)
    ix0 = np.minimum(np.floor(sx).astype(int), max(in_w - 2, 0))
    iy0 = np.minimum(np.floor(sy).astype(int), max(in_h - 2, 0))
    ix1 = np.minimum(ix0 + 1, in_w - 1)
    iy1 = np.minimum(iy0 + 1, in_h - 1)
    fx = (sx - ix0)[None, :]
    fy = (sy - iy0)[:, None]
    top = src[np.ix_(iy0, ix0)] * (1 - fx) + src[np.ix_(iy0, ix1)] * fx
    bottom = src[np.ix_(iy1, ix0)] * (1 - fx) + src[np.ix_(iy1, ix1)] * fx
    canvas = np.zeros((out_h, out_w))
    # clip guards against 1 + ulp from the blend
    canvas[y0:y1, x0:x1] = np.clip(top * (1 - fy) + bottom * fy, 0.0, 1.0)
    return SoftMask(canvas)


def assemble_segmentation(soft_masks, threshold: float = 0.5) -> SegmentationMap:
    """Per-pixel argmax over masks (ties to the lowest index) if it reaches ``threshold``."""
    if not soft_masks:
        raise DomainError("at least one mask is needed to know the frame size")
    shape = soft_masks[0].shape
    if any(m.shape != shape for m in soft_masks):
        raise ShapeError("soft masks differ in size")
    probs = np.stack([m.probabilities for m in soft_masks])
    best = probs.argmax(axis=0)
    peak = probs.max(axis=0)
    return SegmentationMap(np.where(peak >= threshold, best, NON_PLANAR))


def segmentation_from_masks(masks, shape: tuple[int, int]) -> SegmentationMap:
    """Label map from binary instance masks; lowest index wins on overlap."""
    if not masks:
        return SegmentationMap(np.full(shape, NON_PLANAR))
    return assemble_segmentation([SoftMask.from_instance(m) for m in masks])
