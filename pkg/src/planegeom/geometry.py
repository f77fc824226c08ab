"""Pinhole camera model, rigid transforms and per-pixel map containers.

Conventions used everywhere in the package:

* Pixel ``(u, v)`` is (column, row) and its center sits at integer coordinates,
  so the ray through pixel ``(u, v)`` is ``K^-1 [u, v, 1]``.
* Depth ``0`` marks a missing measurement. It is never treated as geometry.
* Points are expressed in the camera frame, in meters, with +z along the
  optical axis.

Point-like arguments accept any array-like whose last axis holds the
coordinates (``(..., 2)`` for pixels, ``(..., 3)`` for points); the leading
axes broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, DomainError, ShapeError

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "DepthMap",
    "CoordinateMap",
    "unproject",
    "project",
    "transform",
    "depthmap_to_coords",
    "bilinear_footprint",
    "bilinear_sample",
]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics for an image of ``width`` x ``height`` pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise DomainError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not np.all(np.isfinite([self.cx, self.cy])):
            raise DomainError("principal point must be finite")

    @classmethod
    def from_matrix(cls, K, width: int, height: int) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=float)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], int(width), int(height))

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width), matching the layout of per-pixel arrays."""
        return (self.height, self.width)

    def rays(self, pixels) -> np.ndarray:
        """``K^-1 x`` for homogeneous pixels ``x``; the returned rays have z = 1."""
        pixels = np.asarray(pixels, dtype=float)
        out = np.empty(pixels.shape[:-1] + (3,))
        out[..., 0] = (pixels[..., 0] - self.cx) / self.fx
        out[..., 1] = (pixels[..., 1] - self.cy) / self.fy
        out[..., 2] = 1.0
        return out

    def pixel_grid(self) -> np.ndarray:
        """(H, W, 2) array of integer pixel centers as floats."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return np.stack([u, v], axis=-1).astype(float)

    def ray_grid(self) -> np.ndarray:
        return self.rays(self.pixel_grid())


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``X -> R X + t``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ShapeError(f"pose expects a 3x3 rotation and 3-vector, got {R.shape} and {t.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise DomainError("pose entries must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise DomainError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """Pose applying ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth in meters, shape (height, width); 0 marks invalid."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"depth map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("depth values must be finite and non-negative (0 = invalid)")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def zeros(cls, height: int, width: int) -> "DepthMap":
        return cls(np.zeros((height, width)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True, eq=False)
class CoordinateMap:
    """Per-pixel 3D points, shape (height, width, 3), with a validity mask.

    Invalid entries are stored as zeros so that arithmetic on the full array
    never propagates NaNs.
    """

    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if points.ndim != 3 or points.shape[2] != 3 or valid.shape != points.shape[:2]:
            raise ShapeError(
                f"coordinate map expects (H, W, 3) points and (H, W) validity, "
                f"got {points.shape} and {valid.shape}"
            )
        if np.any(valid & ~(points[..., 2] > 0)):
            raise DomainError("valid coordinate entries must have z > 0")
        if not np.all(np.isfinite(points[valid])):
            raise DomainError("valid coordinate entries must be finite")
        points[~valid] = 0.0
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


def unproject(pixel, depth, K: CameraIntrinsics) -> np.ndarray:
    """Back-project pixel(s) at the given depth(s): ``z * K^-1 x``."""
    depth = np.asarray(depth, dtype=float)
    if np.any(~(depth > 0)):
        raise DomainError("unproject requires positive depth")
    return K.rays(pixel) * depth[..., None]


def project(point, K: CameraIntrinsics) -> np.ndarray:
    """Perspective projection of camera-frame point(s) to pixel coordinates."""
    point = np.asarray(point, dtype=float)
    z = point[..., 2]
    if np.any(~(z > 0)):
        raise BehindCameraError("cannot project a point with z <= 0")
    out = np.empty(point.shape[:-1] + (2,))
    out[..., 0] = K.fx * point[..., 0] / z + K.cx
    out[..., 1] = K.fy * point[..., 1] / z + K.cy
    return out


def transform(point, pose: Pose) -> np.ndarray:
    """``R p + t``."""
    return pose.apply(point)


def depthmap_to_coords(depth: DepthMap, K: CameraIntrinsics) -> CoordinateMap:
    if depth.shape != K.shape:
        raise ShapeError(f"depth map is {depth.width}x{depth.height}, intrinsics expect {K.width}x{K.height}")
    points = K.ray_grid() * depth.values[..., None]
    return CoordinateMap(points, depth.valid)


def bilinear_footprint(u, v, width: int, height: int):
    """Neighbor indices and weights for bilinear reads at ``(u, v)``.

    Returns ``(inside, flat_index, weights)`` where ``flat_index`` and
    ``weights`` have shape ``(..., 4)`` (order: top-left, top-right,
    bottom-left, bottom-right) and index a row-major ``height * width`` grid.
    Entries with ``inside == False`` hold clamped, meaningless values. A sample
    exactly on the last row or column uses the preceding cell with weight 0 on
    the far neighbors.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    u0 = np.clip(np.floor(uc), 0, max(width - 2, 0)).astype(np.int64)
    v0 = np.clip(np.floor(vc), 0, max(height - 2, 0)).astype(np.int64)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    fu = uc - u0
    fv = vc - v0
    index = np.stack(
        [v0 * width + u0, v0 * width + u1, v1 * width + u0, v1 * width + u1], axis=-1
    )
    weights = np.stack(
        [(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=-1
    )
    return inside, index, weights


def bilinear_sample(coords: CoordinateMap, at) -> np.ndarray | None:
    """Bilinearly interpolated point at pixel ``at``.

    Returns ``None`` when ``at`` lies outside ``[0, W-1] x [0, H-1]`` or when
    any of the four neighbors is invalid; no renormalization across holes.
    """
    u, v = (float(c) for c in at)
    inside, index, weights = bilinear_footprint(u, v, coords.width, coords.height)
    if not inside:
        return None
    valid = coords.valid.reshape(-1)[index]
    if not np.all(valid):
        return None
    neighbors = coords.points.reshape(-1, 3)[index]
    return weights @ neighbors
