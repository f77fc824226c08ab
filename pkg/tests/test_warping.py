import math

import numpy as np
import pytest

from planegeom.errors import DomainError, EmptyOverlapError, ShapeError
from planegeom.geometry import CameraIntrinsics, CoordinateMap, DepthMap, Pose, depthmap_to_coords
from planegeom.gradcheck import check_gradient, relative_error, sampled_entries
from planegeom.planes import InstanceMask, Plane, render_plane_depth, transform_plane
from planegeom.synthetic import fronto_parallel_pair, plane_through, random_warp_scene
from planegeom.warping import PlanarScene, assemble_depth, warping_loss, warping_loss_grad


def scalar_loss(M_current, M_nearby, pose, K, squared=False):
    """Pixel-loop reference: every step written out with plain floats."""
    R = pose.rotation.tolist()
    t = pose.translation.tolist()
    H, W = K.height, K.width
    P, V = M_current.points, M_current.valid
    dists = []
    for vn in range(H):
        for un in range(W):
            if not M_nearby.valid[vn, un]:
                continue
            pn = [float(c) for c in M_nearby.points[vn, un]]
            # R^T (p - t)
            q = [pn[i] - t[i] for i in range(3)]
            pc = [sum(R[j][i] * q[j] for j in range(3)) for i in range(3)]
            if pc[2] <= 0:
                continue
            u = K.fx * pc[0] / pc[2] + K.cx
            v = K.fy * pc[1] / pc[2] + K.cy
            if not (0 <= u <= W - 1 and 0 <= v <= H - 1):
                continue
            u0 = min(int(math.floor(u)), W - 2) if W > 1 else 0
            v0 = min(int(math.floor(v)), H - 2) if H > 1 else 0
            a, b = u - u0, v - v0
            corners = [(v0, u0, (1 - a) * (1 - b)), (v0, u0 + 1, a * (1 - b)),
                       (v0 + 1, u0, (1 - a) * b), (v0 + 1, u0 + 1, a * b)]
            if not all(V[r, c] for r, c, _ in corners):
                continue
            s = [sum(w * float(P[r, c, i]) for r, c, w in corners) for i in range(3)]
            moved = [sum(R[i][j] * s[j] for j in range(3)) + t[i] for i in range(3)]
            dists.append(math.sqrt(sum((moved[i] - pn[i]) ** 2 for i in range(3))))
    if squared:
        return math.sqrt(math.fsum(d * d for d in dists)) / len(dists), len(dists)
    return math.fsum(dists) / len(dists), len(dists)


def test_identical_views_zero_loss():
    M_current, M_nearby, pose, K = fronto_parallel_pair()
    report = warping_loss(M_current, M_nearby, pose, K)
    assert report.loss < 1e-9
    assert report.contributing_pixels > 0
    total = report.contributing_pixels + report.skipped_out_of_frame + report.skipped_invalid
    assert total == int(M_nearby.valid.sum())


@pytest.mark.parametrize("offset", [1.0, 2.0, 3.5])
def test_fronto_parallel_zero_loss_any_offset(offset):
    report = warping_loss(*fronto_parallel_pair(offset=offset))
    assert report.loss < 1e-9


def test_perturbed_matches_scalar_oracle():
    args = fronto_parallel_pair(perturbation=0.05)
    report = warping_loss(*args)
    expected, n = scalar_loss(*args)
    assert report.contributing_pixels == n
    assert abs(report.loss - expected) < 1e-12
    assert report.loss > 0.01


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("squared", [False, True])
def test_random_scenes_match_scalar_oracle(seed, squared):
    args = random_warp_scene(seed)
    report = warping_loss(*args, squared=squared)
    expected, n = scalar_loss(*args, squared=squared)
    assert report.contributing_pixels == n
    assert abs(report.loss - expected) < 1e-12


def test_depth_shift_measured_along_normal():
    # identity pose, current plane moved by 0.1 along z: every distance is about 0.1 / cos
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    near = depthmap_to_coords(DepthMap(np.full(K.shape, 2.0)), K)
    cur = depthmap_to_coords(DepthMap(np.full(K.shape, 2.1)), K)
    report = warping_loss(cur, near, Pose.identity(), K)
    rays = K.ray_grid()
    expected = np.mean(0.1 * np.linalg.norm(rays, axis=-1))
    assert report.loss == pytest.approx(expected, rel=1e-12)
    assert report.contributing_pixels == 64


def test_invalid_current_skips_and_counts():
    M_current, M_nearby, pose, K = random_warp_scene(0)
    report = warping_loss(M_current, M_nearby, pose, K)
    assert report.skipped_invalid > 0
    assert report.contributing_pixels + report.skipped_invalid + report.skipped_out_of_frame == M_nearby.valid.sum()


def test_empty_overlap():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    M = depthmap_to_coords(DepthMap(np.full(K.shape, 2.0)), K)
    far = Pose(np.eye(3), [100.0, 0.0, 0.0])
    with pytest.raises(EmptyOverlapError):
        warping_loss(M, M, far, K)
    empty = depthmap_to_coords(DepthMap.zeros(*K.shape), K)
    with pytest.raises(EmptyOverlapError):
        warping_loss(empty, M, Pose.identity(), K)


def test_shape_mismatch():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    M = depthmap_to_coords(DepthMap(np.full(K.shape, 2.0)), K)
    small = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 7, 8)
    with pytest.raises(ShapeError):
        warping_loss(M, M, Pose.identity(), small)


def test_behind_camera_counts_as_out_of_frame():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    M = depthmap_to_coords(DepthMap(np.full(K.shape, 2.0)), K)
    # nearby points sit at z = 2 - 5 < 0 in the current frame
    behind = Pose(np.eye(3), [0.0, 0.0, 5.0])
    with pytest.raises(EmptyOverlapError):
        warping_loss(M, M, behind, K)
    # half the nearby points behind the camera, half in front
    z = np.full(K.shape, 2.0)
    z[:, 4:] = 8.0
    near = depthmap_to_coords(DepthMap(z), K)
    report = warping_loss(M, near, behind, K)
    assert report.skipped_out_of_frame >= 32


def test_grad_zero_outside_footprints():
    M_current, M_nearby, pose, K = random_warp_scene(1)
    grad = warping_loss_grad(M_current, M_nearby, pose, K)
    assert grad.shape == (K.height, K.width, 3)
    assert np.all(grad[~M_current.valid] == 0)


def test_grad_zero_at_zero_distance():
    grad = warping_loss_grad(*fronto_parallel_pair())
    # tiny residuals from rounding may leave some unit vectors; all are bounded by 1/N
    M_current, M_nearby, pose, K = fronto_parallel_pair()
    n = warping_loss(M_current, M_nearby, pose, K).contributing_pixels
    assert np.abs(grad).max() <= 4.0 / n


@pytest.mark.parametrize("squared", [False, True])
def test_grad_matches_finite_differences(squared):
    result = check_gradient(*random_warp_scene(3), squared=squared)
    assert result.checked > 0
    assert result.passed, result.max_relative_error


def test_grad_hand_finite_difference_single_entry():
    M_current, M_nearby, pose, K = random_warp_scene(4)
    entry = int(sampled_entries(M_current, M_nearby, pose, K, 1)[0])
    grad = warping_loss_grad(M_current, M_nearby, pose, K).reshape(-1)[entry]
    h = 1e-5
    pts = M_current.points.copy().reshape(-1)
    pts[entry] += h
    up = scalar_loss(CoordinateMap(pts.reshape(M_current.points.shape), M_current.valid), M_nearby, pose, K)[0]
    pts[entry] -= 2 * h
    down = scalar_loss(CoordinateMap(pts.reshape(M_current.points.shape), M_current.valid), M_nearby, pose, K)[0]
    assert relative_error(grad, (up - down) / (2 * h)) < 1e-5


def test_sampled_entries_deterministic_and_bounded():
    args = random_warp_scene(2)
    a = sampled_entries(*args, 50)
    assert len(a) == 50
    assert np.array_equal(a, sampled_entries(*args, 50))
    assert np.all(np.diff(a) > 0)
    b = sampled_entries(*args, 50, rng=np.random.default_rng(0))
    assert len(np.unique(b)) == 50


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == 0.5


def test_assemble_depth_uses_planes_and_fallback():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    fallback = np.full(K.shape, 5.0)
    fallback[0, 0] = 0.0
    mask = np.zeros(K.shape, dtype=bool)
    mask[2:6, 2:6] = True
    plane = Plane([0, 0, 1.0], 2.0)
    scene = PlanarScene([plane], [InstanceMask(mask)], DepthMap(fallback))
    depth = assemble_depth(scene, K).values
    assert np.all(depth[mask] == 2.0)
    assert np.all(depth[~mask & (fallback > 0)] == 5.0)
    assert depth[0, 0] == 0.0


def test_assemble_depth_rejects_overlap():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    m = InstanceMask(np.ones(K.shape, dtype=bool))
    with pytest.raises(DomainError):
        PlanarScene([Plane([0, 0, 1.0], 1.0)] * 2, [m, m], DepthMap.zeros(*K.shape))


def test_assemble_depth_then_loss_pipeline():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    plane = Plane([0, 0, 1.0], 2.0)
    full = InstanceMask(np.ones(K.shape, dtype=bool))
    depth = assemble_depth(PlanarScene([plane], [full], DepthMap.zeros(*K.shape)), K)
    assert np.array_equal(depth.values, render_plane_depth(plane, K))
    M = depthmap_to_coords(depth, K)
    assert warping_loss(M, M, Pose.identity(), K).loss == 0.0


def test_tilted_plane_residual_is_bilinear_error():
    # a tilted plane's coordinate map is not affine in (u, v): the zero-case loss
    # is interpolation error and falls about fourfold per resolution doubling
    from scipy.spatial.transform import Rotation

    plane = plane_through((0.2, -0.3, -1.0), (0.0, 0.0, 2.0))
    pose = Pose(Rotation.from_rotvec([0.02, -0.03, 0.01]).as_matrix(), np.array([0.04, -0.02, 0.03]))
    losses = []
    for s in (1, 2, 4):
        K = CameraIntrinsics(20.0 * s, 20.0 * s, (24 * s - 1) / 2, (18 * s - 1) / 2, 24 * s, 18 * s)
        M_c = depthmap_to_coords(DepthMap(render_plane_depth(plane, K)), K)
        M_n = depthmap_to_coords(DepthMap(render_plane_depth(transform_plane(plane, pose), K)), K)
        losses.append(warping_loss(M_c, M_n, pose, K).loss)
    ratios = [a / b for a, b in zip(losses, losses[1:])]
    assert all(3.0 < r < 5.0 for r in ratios), ratios
