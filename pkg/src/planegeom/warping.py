"""Piecewise-planar depth assembly and the two-view warping loss.

The loss compares every valid point ``p_n`` of the nearby view with the point
read from the current view's coordinate map at the location where ``p_n``
projects, after moving that read point into the nearby frame::

    p_c   = bilinear(M_current, project(pose^-1 p_n))
    p_c^t = R p_c + t
    loss  = sum ||p_c^t - p_n|| / N_contributing          (default)
    loss  = sqrt(sum ||p_c^t - p_n||^2) / N_contributing  (squared=True)

Sample locations depend only on the nearby map and the pose, so the loss is
affine-inside-a-norm in the current map and its gradient is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyOverlapError, ShapeError
from .geometry import CameraIntrinsics, CoordinateMap, DepthMap, Pose, bilinear_footprint
from .planes import InstanceMask, Plane, render_plane_depth

__all__ = [
    "PlanarScene",
    "WarpLossReport",
    "assemble_depth",
    "warping_loss",
    "warping_loss_grad",
]


@dataclass(frozen=True, eq=False)
class PlanarScene:
    """Planes with their (disjoint) masks and the per-pixel fallback depth."""

    planes: tuple[Plane, ...]
    masks: tuple[InstanceMask, ...]
    fallback_depth: DepthMap

    def __post_init__(self):
        planes, masks = tuple(self.planes), tuple(self.masks)
        if len(planes) != len(masks):
            raise ShapeError(f"{len(planes)} planes but {len(masks)} masks")
        claimed = np.zeros(self.fallback_depth.shape, dtype=int)
        for m in masks:
            if m.shape != self.fallback_depth.shape:
                raise ShapeError("mask and fallback depth dimensions differ")
            claimed += m.membership
        if np.any(claimed > 1):
            raise DomainError("plane masks must be pairwise disjoint")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "masks", masks)


@dataclass(frozen=True)
class WarpLossReport:
    loss: float
    contributing_pixels: int
    skipped_out_of_frame: int
    skipped_invalid: int

    def as_dict(self) -> dict:
        return {
            "loss": self.loss,
            "contributing_pixels": self.contributing_pixels,
            "skipped_out_of_frame": self.skipped_out_of_frame,
            "skipped_invalid": self.skipped_invalid,
        }


def assemble_depth(scene: PlanarScene, K: CameraIntrinsics) -> DepthMap:
    """Plane depths inside masks, fallback depth elsewhere.

    Masked pixels whose ray misses the plane (grazing or behind the camera)
    keep the fallback value; pixels where the fallback is invalid and no
    plane applies stay invalid.
    """
    if scene.fallback_depth.shape != K.shape:
        raise ShapeError("scene and intrinsics dimensions differ")
    out = scene.fallback_depth.values.copy()
    for plane, mask in zip(scene.planes, scene.masks):
        z = render_plane_depth(plane, K)
        use = mask.membership & (z > 0)
        out[use] = z[use]
    return DepthMap(out)


@dataclass
class _Correspondences:
    p_n: np.ndarray  # (N, 3) contributing nearby points
    index: np.ndarray  # (N, 4) flat indices into the current map
    weights: np.ndarray  # (N, 4)
    skipped_out_of_frame: int
    skipped_invalid: int


def _correspondences(
    M_current: CoordinateMap, M_nearby: CoordinateMap, pose: Pose, K: CameraIntrinsics
) -> _Correspondences:
    if M_current.shape != K.shape or M_nearby.shape != K.shape:
        raise ShapeError("coordinate maps must match the intrinsics dimensions")
    # fixed row-major order keeps the accumulation deterministic
    p_n = M_nearby.points[M_nearby.valid]
    in_current = pose.inverse().apply(p_n)
    z = in_current[:, 2]
    front = z > 0
    u = np.full(len(p_n), -1.0)
    v = np.full(len(p_n), -1.0)
    u[front] = K.fx * in_current[front, 0] / z[front] + K.cx
    v[front] = K.fy * in_current[front, 1] / z[front] + K.cy
    inside, index, weights = bilinear_footprint(u, v, K.width, K.height)
    inside &= front
    neighbors_valid = M_current.valid.reshape(-1)[index].all(axis=1)
    keep = inside & neighbors_valid
    return _Correspondences(
        p_n=p_n[keep],
        index=index[keep],
        weights=weights[keep],
        skipped_out_of_frame=int((~inside).sum()),
        skipped_invalid=int((inside & ~neighbors_valid).sum()),
    )


def _residuals(M_current: CoordinateMap, corr: _Correspondences, pose: Pose) -> np.ndarray:
    flat = M_current.points.reshape(-1, 3)
    p_c = np.einsum("nk,nkc->nc", corr.weights, flat[corr.index])
    return pose.apply(p_c) - corr.p_n


def _loss_from_distances(dist: np.ndarray, squared: bool) -> float:
    n = len(dist)
    if squared:
        return math.sqrt(math.fsum(dist**2)) / n
    return math.fsum(dist) / n


def warping_loss(
    M_current: CoordinateMap,
    M_nearby: CoordinateMap,
    pose_nearby_from_current: Pose,
    K: CameraIntrinsics,
    squared: bool = False,
) -> WarpLossReport:
    """Two-view warping loss; see the module docstring for the definition.

    Nearby points that land behind the current camera or outside
    ``[0, W-1] x [0, H-1]`` count as out of frame; those whose bilinear
    footprint touches an invalid current entry count as invalid.

    Raises:
        EmptyOverlapError: no nearby point contributes.
    """
    corr = _correspondences(M_current, M_nearby, pose_nearby_from_current, K)
    if len(corr.p_n) == 0:
        raise EmptyOverlapError("no nearby pixel projects onto valid current geometry")
    dist = np.linalg.norm(_residuals(M_current, corr, pose_nearby_from_current), axis=1)
    return WarpLossReport(
        loss=_loss_from_distances(dist, squared),
        contributing_pixels=len(dist),
        skipped_out_of_frame=corr.skipped_out_of_frame,
        skipped_invalid=corr.skipped_invalid,
    )


def warping_loss_grad(
    M_current: CoordinateMap,
    M_nearby: CoordinateMap,
    pose_nearby_from_current: Pose,
    K: CameraIntrinsics,
    squared: bool = False,
) -> np.ndarray:
    """Gradient of :func:`warping_loss` with respect to ``M_current.points``.

    Returns an (H, W, 3) array. Entries outside every bilinear footprint are
    exactly zero. A pixel at zero distance contributes a zero subgradient.
    """
    pose = pose_nearby_from_current
    corr = _correspondences(M_current, M_nearby, pose, K)
    n = len(corr.p_n)
    if n == 0:
        raise EmptyOverlapError("no nearby pixel projects onto valid current geometry")
    diff = _residuals(M_current, corr, pose)
    dist = np.linalg.norm(diff, axis=1)
    if squared:
        total = math.sqrt(math.fsum(dist**2))
        g = diff / (n * total) if total > 0 else np.zeros_like(diff)
    else:
        g = np.zeros_like(diff)
        nz = dist > 0
        g[nz] = diff[nz] / (n * dist[nz, None])
    # d(R p + t)/dp = R, so pull back with R^T
    g_current = g @ pose.rotation
    grad = np.zeros((M_current.height * M_current.width, 3))
    for k in range(4):
        np.add.at(grad, corr.index[:, k], corr.weights[:, k, None] * g_current)
    return grad.reshape(M_current.height, M_current.width, 3)
