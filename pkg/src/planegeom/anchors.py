"""Anchor normals: spherical k-means and the (anchor id, residual) encoding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateEncodingError, DomainError, FormatError, InsufficientDataError

__all__ = [
    "AnchorSet",
    "EncodedNormal",
    "cluster_anchors",
    "encode_normal",
    "decode_normal",
    "read_anchors",
    "write_anchors",
]

DEFAULT_K = 7
MAX_ITERATIONS = 100
N_RESTARTS = 10


@dataclass(frozen=True, eq=False)
class AnchorSet:
    anchors: np.ndarray

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float)
        if anchors.ndim != 2 or anchors.shape[1] != 3 or len(anchors) < 1:
            raise DomainError(f"anchor set must be a non-empty (k, 3) array, got {anchors.shape}")
        norms = np.linalg.norm(anchors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DomainError("anchors must be unit vectors")
        if len(np.unique(anchors, axis=0)) != len(anchors):
            raise DomainError("anchors must be pairwise distinct")
        anchors.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)

    @property
    def k(self) -> int:
        return len(self.anchors)

    def __len__(self) -> int:
        return self.k

    def __getitem__(self, i: int) -> np.ndarray:
        return self.anchors[i]


@dataclass(frozen=True, eq=False)
class EncodedNormal:
    anchor_id: int
    residual: np.ndarray


def _check_unit(n: np.ndarray, tol: float = 1e-6) -> None:
    norms = np.linalg.norm(n, axis=-1)
    if not np.all(np.isfinite(n)) or np.any(np.abs(norms - 1.0) > tol):
        raise DomainError(f"expected unit vectors (tolerance {tol})")


def _assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(len(points)), labels]


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [points[rng.integers(len(points))]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(points))
        else:
            idx = rng.choice(len(points), p=d2 / total)
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _spherical_kmeans(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, float]:
    labels = None
    for _ in range(MAX_ITERATIONS):
        new_labels, d2 = _assign(points, centers)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = centers.copy()
        for j in range(len(centers)):
            members = labels == j
            if not members.any():
                # empty cluster: reseed with the point farthest from its own center
                far = int(d2.argmax())
                centers[j] = points[far]
                labels[far] = j
                d2[far] = 0.0
                continue
            mean = points[members].mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 1e-12:
                centers[j] = mean / norm
    _, d2 = _assign(points, centers)
    return centers, float(d2.sum())


def cluster_anchors(normals, k: int = DEFAULT_K, seed: int = 0) -> AnchorSet:
    """Cluster unit normals into ``k`` unit anchor directions.

    Runs Euclidean k-means on the unit vectors with centers renormalized after
    every update (spherical k-means), seeded by k-means++ and restarted
    ``N_RESTARTS`` times; the lowest-inertia run wins. Inputs are put in a
    canonical (lexicographic) order first, so the result only depends on the
    set of normals and the seed, never on their input order.

    Args:
        normals: (N, 3) unit vectors.
        k: Number of anchors.
        seed: Seed for the initialization sequence.

    Raises:
        InsufficientDataError: fewer than ``k`` distinct normals.
        DomainError: inputs not unit length within 1e-6.
    """
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    _check_unit(normals)
    if k < 1:
        raise DomainError("k must be at least 1")
    order = np.lexsort(normals.T[::-1])
    points = normals[order]
    if len(np.unique(points, axis=0)) < k:
        raise InsufficientDataError(f"need at least {k} distinct normals")

    if k == 1:
        mean = points.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise InsufficientDataError("normals cancel out; mean direction undefined")
        return AnchorSet((mean / norm)[None, :])

    rng = np.random.default_rng(seed)
    best_centers, best_inertia = None, np.inf
    for _ in range(N_RESTARTS):
        centers, inertia = _spherical_kmeans(points, _kmeanspp_init(points, k, rng))
        if inertia < best_inertia - 1e-12:
            best_centers, best_inertia = centers, inertia
    return AnchorSet(_normalize_rows(best_centers))


def encode_normal(n, anchors: AnchorSet) -> EncodedNormal:
    """Closest anchor (ties go to the lowest index) and the residual ``n - anchor``."""
    n = np.asarray(n, dtype=float)
    _check_unit(n)
    dist = np.linalg.norm(n[None, :] - anchors.anchors, axis=1)
    idx = int(np.argmin(dist))
    return EncodedNormal(idx, n - anchors.anchors[idx])


def decode_normal(enc: EncodedNormal, anchors: AnchorSet) -> np.ndarray:
    if not 0 <= enc.anchor_id < anchors.k:
        raise DomainError(f"anchor id {enc.anchor_id} out of range for k={anchors.k}")
    v = anchors.anchors[enc.anchor_id] + np.asarray(enc.residual, dtype=float)
    norm = np.linalg.norm(v)
    if not norm > 1e-9:
        raise DegenerateEncodingError("anchor + residual is (near) zero")
    return v / norm


def write_anchors(path, anchors: AnchorSet) -> None:
    lines = [str(anchors.k)]
    lines += [" ".join(f"{c:.9g}" for c in a) for a in anchors.anchors]
    Path(path).write_text("\n".join(lines) + "\n")


def read_anchors(path) -> AnchorSet:
    """Read an anchor file; anchors are renormalized to undo 9-digit rounding."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        k = int(lines[0])
        rows = [[float(x) for x in ln.split()] for ln in lines[1:]]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed anchor file ({exc})") from None
    if len(rows) != k or any(len(r) != 3 for r in rows):
        raise FormatError(f"{path}: expected {k} lines of 3 numbers")
    arr = np.array(rows)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise FormatError(f"{path}: anchors are not unit length")
    return AnchorSet(_normalize_rows(arr))
