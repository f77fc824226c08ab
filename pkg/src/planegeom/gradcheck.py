"""Central finite-difference check of the warping-loss gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, CoordinateMap, Pose
from .warping import _correspondences, _residuals, warping_loss, warping_loss_grad

# pixels closer than this sit on the non-differentiable point of the norm
ZERO_DISTANCE_BALL = 1e-8


@dataclass(frozen=True)
class GradCheckResult:
    checked: int
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_relative_error < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _perturbed(M: CoordinateMap, flat_index: int, delta: float) -> CoordinateMap:
    points = M.points.copy().reshape(-1)
    points[flat_index] += delta
    return CoordinateMap(points.reshape(M.points.shape), M.valid)


def sampled_entries(M_current, M_nearby, pose, K, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Flat indices into ``M_current.points`` read by the loss, away from zero-distance pixels.

    Without ``rng`` the first ``n`` eligible entries at an even stride are taken.
    """
    corr = _correspondences(M_current, M_nearby, pose, K)
    dist = np.linalg.norm(_residuals(M_current, corr, pose), axis=1)
    touched = np.zeros(M_current.height * M_current.width, dtype=bool)
    near_zero = np.zeros_like(touched)
    touched[corr.index[corr.weights > 0]] = True
    near_zero[corr.index[dist < ZERO_DISTANCE_BALL].ravel()] = True
    pixels = np.flatnonzero(touched & ~near_zero)
    entries = (pixels[:, None] * 3 + np.arange(3)[None, :]).ravel()
    if len(entries) <= n:
        return entries
    if rng is None:
        return entries[np.linspace(0, len(entries) - 1, n).astype(int)]
    return np.sort(rng.choice(entries, size=n, replace=False))


def check_gradient(
    M_current: CoordinateMap,
    M_nearby: CoordinateMap,
    pose: Pose,
    K: CameraIntrinsics,
    entries=None,
    squared: bool = False,
    h: float = 1e-4,
    tolerance: float = 1e-4,
) -> GradCheckResult:
    """Compare :func:`warping_loss_grad` with central differences of :func:`warping_loss`."""
    if entries is None:
        entries = sampled_entries(M_current, M_nearby, pose, K, 200)
    grad = warping_loss_grad(M_current, M_nearby, pose, K, squared=squared).reshape(-1)
    worst = 0.0
    for e in entries:
        plus = warping_loss(_perturbed(M_current, e, h), M_nearby, pose, K, squared=squared).loss
        minus = warping_loss(_perturbed(M_current, e, -h), M_nearby, pose, K, squared=squared).loss
        worst = max(worst, relative_error(grad[e], (plus - minus) / (2 * h)))
    return GradCheckResult(len(entries), worst, tolerance)
