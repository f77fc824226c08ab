"""Ground-truth construction: plane extraction, frame filters and occlusion completion."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from .errors import DomainError, EmptySupportError, InsufficientDataError, ShapeError
from .geometry import CameraIntrinsics, DepthMap, Pose
from .planes import InstanceMask, Plane, fit_plane_svd, render_plane_depth
from .warping import PlanarScene, assemble_depth

__all__ = [
    "MIN_PLANE_AREA",
    "POSE_DISCREPANCY_THRESHOLD",
    "FrameAnnotation",
    "PairRelation",
    "PoseCheck",
    "LayoutCompletion",
    "extract_planes",
    "pose_failure_filter",
    "rasterize_visible",
    "rasterize_complete",
    "classify_pair",
    "layout_relations",
    "behind_check",
    "compose_layout_depth",
    "complete_layout",
]

logger = logging.getLogger(__name__)

MIN_PLANE_AREA = 500
POSE_DISCREPANCY_THRESHOLD = 0.1
LAYOUT_TOLERANCE = 0.2
BEHIND_FRACTION = 0.9
MAX_EXHAUSTIVE_LAYOUT = 8
PARALLEL_ANGLE_DEG = 0.5


@dataclass(frozen=True, eq=False)
class FrameAnnotation:
    """Per-frame ground truth.

    Visible masks must be pairwise disjoint and, when complete masks are
    given, each complete mask must contain its visible counterpart. The
    minimum-area rule is checked separately by :meth:`check_min_area` so that
    small synthetic frames remain representable.
    """

    planes: tuple[Plane, ...]
    visible_masks: tuple[InstanceMask, ...]
    gt_depth: DepthMap
    K: CameraIntrinsics
    pose: Pose = field(default_factory=Pose.identity)
    is_layout: tuple[bool, ...] | None = None
    complete_masks: tuple[InstanceMask, ...] | None = None

    def __post_init__(self):
        planes = tuple(self.planes)
        visible = tuple(self.visible_masks)
        if len(planes) != len(visible):
            raise ShapeError(f"{len(planes)} planes but {len(visible)} visible masks")
        if self.gt_depth.shape != self.K.shape:
            raise ShapeError("ground-truth depth does not match the intrinsics")
        claimed = np.zeros(self.K.shape, dtype=int)
        for m in visible:
            if m.shape != self.K.shape:
                raise ShapeError("visible mask does not match the intrinsics")
            claimed += m.membership
        if np.any(claimed > 1):
            raise DomainError("visible masks must be pairwise disjoint")
        layout = (False,) * len(planes) if self.is_layout is None else tuple(bool(f) for f in self.is_layout)
        if len(layout) != len(planes):
            raise ShapeError("one layout flag per plane is required")
        complete = self.complete_masks
        if complete is not None:
            complete = tuple(complete)
            if len(complete) != len(planes):
                raise ShapeError("one complete mask per plane is required")
            for c, v in zip(complete, visible):
                if c.shape != self.K.shape:
                    raise ShapeError("complete mask does not match the intrinsics")
                if np.any(v.membership & ~c.membership):
                    raise DomainError("complete mask must contain its visible mask")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "visible_masks", visible)
        object.__setattr__(self, "is_layout", layout)
        object.__setattr__(self, "complete_masks", complete)

    def __len__(self) -> int:
        return len(self.planes)

    def check_min_area(self, min_area: int = MIN_PLANE_AREA) -> None:
        for i, m in enumerate(self.visible_masks):
            if m.area < min_area:
                raise DomainError(f"plane {i} covers {m.area} px, below the {min_area} px minimum")

    def planar_depth(self) -> DepthMap:
        """Plane renders over the visible masks, 0 elsewhere."""
        scene = PlanarScene(self.planes, self.visible_masks, DepthMap.zeros(*self.K.shape))
        return assemble_depth(scene, self.K)


@dataclass(frozen=True)
class PairRelation:
    plane_a: int
    plane_b: int
    relation: Literal["convex", "concave"]


@dataclass(frozen=True)
class PoseCheck:
    keep: bool
    discrepancy: float


@dataclass(frozen=True, eq=False)
class LayoutCompletion:
    """Selected layout combination with its complete depth and per-plane masks."""

    planes: tuple[int, ...]
    depth: DepthMap
    masks: dict[int, InstanceMask]
    behind_fraction: float
    support: int


def _unproject_valid(depth: DepthMap, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.nonzero(depth.valid)
    pts = K.rays(np.stack([u, v], axis=-1).astype(float)) * depth.values[v, u][:, None]
    return pts, v * K.width + u


def extract_planes(
    depth: DepthMap,
    K: CameraIntrinsics,
    min_area: int = MIN_PLANE_AREA,
    inlier_tol: float = 0.01,
    max_planes: int | None = None,
    seed: int = 0,
    trials: int = 200,
) -> list[tuple[Plane, InstanceMask]]:
    """Greedy sequential RANSAC over the unprojected depth frame.

    Each round samples ``trials`` three-point hypotheses from the points not
    yet explained, keeps the one with the most inliers (``|n.X - d| <=
    inlier_tol``), refits it by SVD and removes its inliers. The inlier set
    is split into 8-connected image regions; every region of at least
    ``min_area`` pixels becomes its own instance (coplanar regions are not
    merged). Extraction stops when the best hypothesis falls below
    ``min_area`` or ``max_planes`` instances exist; there is no other cap on
    the number of planes.

    Raises:
        InsufficientDataError: the frame has fewer than ``min_area`` valid pixels.
    """
    if depth.shape != K.shape:
        raise ShapeError("depth map does not match the intrinsics")
    points, flat = _unproject_valid(depth, K)
    if len(points) < max(min_area, 3):
        raise InsufficientDataError(f"{len(points)} valid pixels, need at least {max(min_area, 3)}")
    rng = np.random.default_rng(seed)
    remaining = np.ones(len(points), dtype=bool)
    structure = np.ones((3, 3), dtype=bool)
    results: list[tuple[Plane, InstanceMask]] = []

    while max_planes is None or len(results) < max_planes:
        pool = np.flatnonzero(remaining)
        if len(pool) < max(min_area, 3):
            break
        pool_pts = points[pool]
        best_inliers, best_count = None, 0
        for _ in range(trials):
            a, b, c = pool_pts[rng.choice(len(pool), 3, replace=False)]
            normal = np.cross(b - a, c - a)
            norm = np.linalg.norm(normal)
            if norm < 1e-12:
                continue
            normal /= norm
            inliers = np.abs(pool_pts @ normal - normal @ a) <= inlier_tol
            count = int(inliers.sum())
            if count > best_count:
                best_inliers, best_count = inliers, count
        if best_count < max(min_area, 3):
            break
        plane, _ = fit_plane_svd(pool_pts[best_inliers])
        refit = np.abs(plane.signed_distance(pool_pts)) <= inlier_tol
        if refit.sum() >= best_count:
            best_inliers = refit
        members = pool[best_inliers]
        remaining[members] = False

        image = np.zeros(K.height * K.width, dtype=bool)
        image[flat[members]] = True
        labels, n_regions = ndimage.label(image.reshape(K.shape), structure=structure)
        sizes = np.bincount(labels.ravel(), minlength=n_regions + 1)
        for region in range(1, n_regions + 1):
            if sizes[region] < min_area:
                continue
            if max_planes is not None and len(results) >= max_planes:
                break
            mask = labels == region
            region_plane, _ = fit_plane_svd(points[np.isin(flat, np.flatnonzero(mask.ravel()))])
            results.append((region_plane, InstanceMask(mask)))
    logger.debug("extracted %d planes", len(results))
    return results


def pose_failure_filter(
    annotation: FrameAnnotation, sensor_depth: DepthMap, threshold: float = POSE_DISCREPANCY_THRESHOLD
) -> PoseCheck:
    """Mean |plane depth - sensor depth| over the planar pixels; drop if above threshold."""
    if sensor_depth.shape != annotation.K.shape:
        raise ShapeError("sensor depth does not match the annotation")
    planar = annotation.planar_depth().values
    support = (planar > 0) & sensor_depth.valid
    if not support.any():
        raise EmptySupportError("no planar pixel with valid sensor depth")
    discrepancy = float(np.mean(np.abs(planar[support] - sensor_depth.values[support])))
    return PoseCheck(keep=not discrepancy > threshold, discrepancy=discrepancy)


def _claimed_depths(planes, full_masks, K: CameraIntrinsics) -> np.ndarray:
    """(P, H, W) plane depths where the plane claims the pixel and hits it, else +inf."""
    if len(planes) != len(full_masks):
        raise ShapeError(f"{len(planes)} planes but {len(full_masks)} masks")
    out = np.full((len(planes),) + K.shape, np.inf)
    for i, (plane, mask) in enumerate(zip(planes, full_masks)):
        if mask.shape != K.shape:
            raise ShapeError("mask does not match the intrinsics")
        z = render_plane_depth(plane, K)
        use = mask.membership & (z > 0)
        out[i][use] = z[use]
    return out


def rasterize_visible(planes, full_masks, K: CameraIntrinsics) -> list[InstanceMask]:
    """Depth-tested rasterization: the nearest claiming plane keeps each pixel."""
    depths = _claimed_depths(planes, full_masks, K)
    if len(depths) == 0:
        return []
    winner = depths.argmin(axis=0)
    hit = np.isfinite(depths.min(axis=0))
    return [
        InstanceMask(hit & (winner == i), confidence=m.confidence) for i, m in enumerate(full_masks)
    ]


def rasterize_complete(planes, full_masks, K: CameraIntrinsics) -> list[InstanceMask]:
    """Rasterization without the depth test; masks may overlap."""
    depths = _claimed_depths(planes, full_masks, K)
    return [InstanceMask(np.isfinite(d), confidence=m.confidence) for d, m in zip(depths, full_masks)]


def _region_centroid(plane: Plane, mask: InstanceMask, depth: DepthMap, K: CameraIntrinsics) -> np.ndarray:
    use = mask.membership & depth.valid
    values = depth.values
    if not use.any():
        values = render_plane_depth(plane, K)
        use = mask.membership & (values > 0)
    if not use.any():
        raise EmptySupportError("plane region has no depth to locate it")
    v, u = np.nonzero(use)
    pts = K.rays(np.stack([u, v], axis=-1).astype(float)) * values[v, u][:, None]
    return pts.mean(axis=0)


def classify_pair(
    a: Plane,
    mask_a: InstanceMask,
    b: Plane,
    mask_b: InstanceMask,
    depth: DepthMap,
    K: CameraIntrinsics,
    indices: tuple[int, int] = (0, 1),
) -> PairRelation | None:
    """Concave if each region's centroid lies on the camera side of the other plane.

    The camera side of ``n.X = d`` (with ``d >= 0``) is ``n.X < d``. Any other
    sidedness is convex. Planes within 0.5 degrees of parallel have no
    relation and give None.
    """
    cos = abs(float(a.normal @ b.normal))
    if cos >= np.cos(np.deg2rad(PARALLEL_ANGLE_DEG)):
        return None
    ca = _region_centroid(a, mask_a, depth, K)
    cb = _region_centroid(b, mask_b, depth, K)
    concave = b.signed_distance(ca) < 0 and a.signed_distance(cb) < 0
    return PairRelation(indices[0], indices[1], "concave" if concave else "convex")


def layout_relations(annotation: FrameAnnotation) -> dict[tuple[int, int], PairRelation]:
    """Relations between all pairs of layout planes, keyed by ``(i, j)`` with ``i < j``."""
    layout = [i for i, f in enumerate(annotation.is_layout) if f]
    out = {}
    for i, j in itertools.combinations(layout, 2):
        rel = classify_pair(
            annotation.planes[i],
            annotation.visible_masks[i],
            annotation.planes[j],
            annotation.visible_masks[j],
            annotation.gt_depth,
            annotation.K,
            indices=(i, j),
        )
        if rel is not None:
            out[(i, j)] = rel
    return out


def behind_check(
    candidate: np.ndarray,
    visible: DepthMap,
    tolerance: float = LAYOUT_TOLERANCE,
    behind_fraction: float = BEHIND_FRACTION,
) -> tuple[bool, float]:
    """Whether enough of a candidate complete depth lies behind the visible depth.

    Only pixels where both depths are valid are compared; a pixel is behind
    when ``candidate >= visible - tolerance``.
    """
    candidate = np.asarray(candidate, dtype=float)
    compared = (candidate > 0) & visible.valid
    if not compared.any():
        return False, 0.0
    frac = float(np.mean(candidate[compared] >= visible.values[compared] - tolerance))
    return frac >= behind_fraction, frac


def compose_layout_depth(
    plane_depths: dict[int, np.ndarray],
    combination,
    relations: dict[tuple[int, int], PairRelation],
) -> tuple[np.ndarray, np.ndarray]:
    """Fold plane depths into one complete depth map.

    Each new plane is combined with the plane currently owning the pixel:
    greater depth for a convex pair, smaller depth for a concave pair or a
    pair without relation. For combinations whose pairs all share one
    relation this reduces to a global min or max and does not depend on the
    fold order.

    Returns:
        ``(depth, owner)``; ``owner`` is the plane index providing each pixel
        (-1 where no plane of the combination has a valid depth).
    """
    combination = list(combination)
    shape = next(iter(plane_depths.values())).shape
    depth = np.zeros(shape)
    owner = np.full(shape, -1)
    for i in combination:
        z = plane_depths[i]
        hit = z > 0
        fresh = hit & (owner < 0)
        depth[fresh] = z[fresh]
        owner[fresh] = i
        shared = hit & ~fresh
        for j in np.unique(owner[shared]):
            if j == i:
                continue
            rel = relations.get((min(i, j), max(i, j)))
            sel = shared & (owner == j)
            if rel is not None and rel.relation == "convex":
                take = sel & (z > depth)
            else:
                take = sel & (z < depth)
            depth[take] = z[take]
            owner[take] = i
    return depth, owner


def complete_layout(
    annotation: FrameAnnotation,
    tolerance: float = LAYOUT_TOLERANCE,
    behind_fraction: float = BEHIND_FRACTION,
    max_exhaustive: int = MAX_EXHAUSTIVE_LAYOUT,
) -> LayoutCompletion | None:
    """Pick the best valid complete layout depth among combinations of layout planes.

    Candidates are enumerated by subset size, then lexicographically. A
    candidate is valid when :func:`behind_check` passes. Among valid
    candidates the one agreeing (within ``tolerance``) with the visible depth
    on the most visible layout pixels wins; ties keep the earlier candidate.
    With more than ``max_exhaustive`` layout planes, planes are added
    greedily by support instead.

    Returns:
        The selected completion, or None when no candidate is valid.
    """
    layout = [i for i, f in enumerate(annotation.is_layout) if f]
    if not layout:
        raise InsufficientDataError("frame has no layout plane")
    K = annotation.K
    visible = annotation.gt_depth
    relations = layout_relations(annotation)
    plane_depths = {i: render_plane_depth(annotation.planes[i], K) for i in layout}
    layout_pixels = np.zeros(K.shape, dtype=bool)
    for i in layout:
        layout_pixels |= annotation.visible_masks[i].membership
    layout_pixels &= visible.valid

    def evaluate(combo):
        depth, owner = compose_layout_depth(plane_depths, combo, relations)
        ok, frac = behind_check(depth, visible, tolerance, behind_fraction)
        agree = layout_pixels & (depth > 0) & (np.abs(depth - visible.values) <= tolerance)
        return ok, frac, int(agree.sum()), depth, owner

    best = None
    if len(layout) <= max_exhaustive:
        combos = (c for r in range(1, len(layout) + 1) for c in itertools.combinations(layout, r))
        for combo in combos:
            ok, frac, support, depth, owner = evaluate(combo)
            if ok and (best is None or support > best[2]):
                best = (combo, frac, support, depth, owner)
    else:
        chosen: tuple[int, ...] = ()
        while True:
            step = None
            for j in layout:
                if j in chosen:
                    continue
                combo = tuple(sorted(chosen + (j,)))
                ok, frac, support, depth, owner = evaluate(combo)
                if ok and (step is None or support > step[2]):
                    step = (combo, frac, support, depth, owner)
            if step is None or (best is not None and step[2] <= best[2]):
                break
            best, chosen = step, step[0]

    if best is None:
        logger.info("no valid layout completion")
        return None
    combo, frac, support, depth, owner = best
    masks = {
        i: InstanceMask((owner == i) | annotation.visible_masks[i].membership,
                        confidence=annotation.visible_masks[i].confidence)
        for i in combo
    }
    return LayoutCompletion(tuple(combo), DepthMap(depth), masks, frac, support)
