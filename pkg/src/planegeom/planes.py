"""Planes ``n . X = d`` in the camera frame: offset recovery, depth rendering, SVD fitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DegenerateGeometryError, DomainError, EmptySupportError, InsufficientDataError, ShapeError
from .geometry import CameraIntrinsics, DepthMap

__all__ = [
    "Plane",
    "InstanceMask",
    "offset_from_depth",
    "plane_depth",
    "render_plane_depth",
    "fit_plane_svd",
    "param_difference",
    "transform_plane",
]

# |n . K^-1 x| below this means the ray grazes the plane
GRAZING_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class Plane:
    """Unit normal and offset, canonicalized so that ``offset >= 0``.

    A normal within 1e-6 of unit length is renormalized; anything further off
    is rejected. When the offset is exactly zero the sign is fixed by making
    the first non-zero normal component positive.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(-1)
        d = float(self.offset)
        if n.shape != (3,) or not np.all(np.isfinite(n)) or not np.isfinite(d):
            raise DomainError("plane needs a finite 3-vector normal and finite offset")
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-6:
            raise DomainError(f"plane normal must be unit length, got norm {norm}")
        n = n / norm
        if d < 0 or (d == 0 and n[np.flatnonzero(n)[0]] < 0):
            n, d = -n, -d
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", d + 0.0)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def as_vector(self) -> np.ndarray:
        return np.append(self.normal, self.offset)

    def __repr__(self) -> str:
        nx, ny, nz = self.normal
        return f"Plane(normal=({nx:.6g}, {ny:.6g}, {nz:.6g}), offset={self.offset:.6g})"


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """Binary per-pixel membership for one plane instance."""

    membership: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        m = np.array(self.membership, dtype=bool)
        if m.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {m.shape}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence must lie in [0, 1], got {self.confidence}")
        m.setflags(write=False)
        object.__setattr__(self, "membership", m)

    @classmethod
    def empty(cls, height: int, width: int) -> "InstanceMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.membership.shape

    @property
    def area(self) -> int:
        return int(self.membership.sum())


def offset_from_depth(n, depth: DepthMap, mask: InstanceMask, K: CameraIntrinsics) -> float:
    """Mean of ``n . (z_i K^-1 x_i)`` over masked pixels with valid depth."""
    if depth.shape != K.shape or mask.shape != K.shape:
        raise ShapeError("depth, mask and intrinsics must share dimensions")
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise DomainError("normal must be unit length")
    support = mask.membership & depth.valid
    if not support.any():
        raise EmptySupportError("mask covers no pixel with valid depth")
    v, u = np.nonzero(support)
    points = K.rays(np.stack([u, v], axis=-1).astype(float)) * depth.values[v, u][:, None]
    return float(np.mean(points @ n))


def plane_depth(plane: Plane, pixel, K: CameraIntrinsics) -> float | None:
    """Depth at which the ray through ``pixel`` meets ``plane``, or None."""
    denom = float(K.rays(np.asarray(pixel, dtype=float)) @ plane.normal)
    if abs(denom) < GRAZING_EPS:
        return None
    z = plane.offset / denom
    return z if z > 0 else None


def render_plane_depth(plane: Plane, K: CameraIntrinsics) -> np.ndarray:
    """Per-pixel :func:`plane_depth` over the whole image; 0 where it is None."""
    denom = K.ray_grid() @ plane.normal
    ok = np.abs(denom) >= GRAZING_EPS
    z = np.zeros(K.shape)
    z[ok] = plane.offset / denom[ok]
    z[~(z > 0)] = 0.0
    return z


def fit_plane_svd(points) -> tuple[Plane, float]:
    """Total least-squares plane through ``points``.

    Returns:
        The canonical plane and the RMS of the point-to-plane distances.

    Raises:
        InsufficientDataError: fewer than 3 points.
        DegenerateGeometryError: points are collinear.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 3:
        raise InsufficientDataError(f"plane fit needs at least 3 points, got {len(points)}")
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[1] <= 1e-9 * max(1.0, s[0]):
        raise DegenerateGeometryError("points are collinear")
    normal = vt[2]
    plane = Plane(normal, float(normal @ centroid))
    residual = float(np.sqrt(np.mean(plane.signed_distance(points) ** 2)))
    return plane, residual


def param_difference(
    a: Plane, b: Plane, representation: Literal["normal_offset", "scaled_normal"] = "normal_offset"
) -> float:
    """Euclidean distance between plane parameter vectors.

    ``"normal_offset"`` compares the 4-vectors ``(n, d)``; ``"scaled_normal"``
    compares the 3-vectors ``n / d`` (undefined for planes through the camera).
    """
    if representation == "normal_offset":
        return float(np.linalg.norm(a.as_vector() - b.as_vector()))
    if representation == "scaled_normal":
        if a.offset == 0 or b.offset == 0:
            raise DomainError("n/d representation is undefined for zero offset")
        return float(np.linalg.norm(a.normal / a.offset - b.normal / b.offset))
    raise ValueError(f"unknown representation {representation!r}")


def transform_plane(plane: Plane, pose) -> Plane:
    """Express ``plane`` in the frame reached by ``pose`` (``X' = R X + t``)."""
    n = pose.rotation @ plane.normal
    return Plane(n, plane.offset + float(n @ pose.translation))
