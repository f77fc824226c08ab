"""Analytically rendered scenes used by the test-suite and the ``synth`` command."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .benchmark import FrameAnnotation
from .geometry import CameraIntrinsics, DepthMap, Pose, depthmap_to_coords
from .planes import InstanceMask, Plane, render_plane_depth, transform_plane
from .warping import PlanarScene, assemble_depth


def plane_through(normal, point) -> Plane:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    return Plane(n, float(n @ np.asarray(point, dtype=float)))


def render_annotation(planes, masks, K: CameraIntrinsics, is_layout=None, pose=None) -> FrameAnnotation:
    """Annotation whose ground-truth depth is the exact render of ``planes`` over ``masks``."""
    depth = assemble_depth(PlanarScene(planes, masks, DepthMap.zeros(*K.shape)), K)
    return FrameAnnotation(
        planes=planes,
        visible_masks=masks,
        gt_depth=depth,
        K=K,
        pose=pose if pose is not None else Pose.identity(),
        is_layout=is_layout,
    )


def three_plane_frame() -> FrameAnnotation:
    """64x48 frame split into three vertical bands, one plane each."""
    K = CameraIntrinsics(60.0, 60.0, 31.5, 23.5, 64, 48)
    planes = [
        plane_through((0.25, -0.1, -1.0), (-0.6, 0.0, 2.0)),
        plane_through((0.0, 0.35, -1.0), (0.0, 0.0, 3.0)),
        plane_through((0.3, -0.1, -1.0), (0.5, 0.0, 1.6)),
    ]
    cols = np.arange(K.width)[None, :].repeat(K.height, axis=0)
    bands = [cols < 21, (cols >= 21) & (cols < 43), cols >= 43]
    return render_annotation(planes, [InstanceMask(b) for b in bands], K)


def fronto_parallel_pair(offset: float = 2.0, perturbation: float = 0.0):
    """Two views of the plane ``z = offset`` related by an in-plane rotation and shift.

    Returns ``(M_current, M_nearby, pose_nearby_from_current, K)``; the
    current view's plane is moved by ``perturbation`` meters.
    """
    K = CameraIntrinsics(30.0, 30.0, 15.5, 11.5, 32, 24)
    pose = Pose(Rotation.from_euler("z", 3.0, degrees=True).as_matrix(), np.array([0.1, 0.05, 0.0]))
    plane = Plane((0.0, 0.0, 1.0), offset)
    current = Plane(plane.normal, offset + perturbation)
    M_current = depthmap_to_coords(DepthMap(render_plane_depth(current, K)), K)
    M_nearby = depthmap_to_coords(DepthMap(render_plane_depth(transform_plane(plane, pose), K)), K)
    return M_current, M_nearby, pose, K


def random_warp_scene(seed: int):
    """Two views of a random tilted plane under a small random motion.

    The current view sees the plane shifted along its normal by 5 to 15 cm
    (random sign), so every residual distance is at least that shift; a
    random rectangle of the current view is left without depth.
    """
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics(20.0, 20.0, 11.5, 8.5, 24, 18)
    n = np.array([0.0, 0.0, -1.0]) + rng.normal(scale=0.25, size=3)
    plane = plane_through(n, (0.0, 0.0, rng.uniform(1.5, 2.5)))
    shift = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.15)
    current = Plane(plane.normal, plane.offset + shift)
    pose = Pose(
        Rotation.from_rotvec(rng.normal(scale=np.deg2rad(2.0), size=3)).as_matrix(),
        rng.normal(scale=0.05, size=3),
    )
    depth = render_plane_depth(current, K)
    r0, c0 = rng.integers(0, K.height - 4), rng.integers(0, K.width - 4)
    depth[r0 : r0 + 4, c0 : c0 + 4] = 0.0
    M_current = depthmap_to_coords(DepthMap(depth), K)
    M_nearby = depthmap_to_coords(DepthMap(render_plane_depth(transform_plane(plane, pose), K)), K)
    return M_current, M_nearby, pose, K


def room_frame() -> FrameAnnotation:
    """16x16 view of a floor meeting a back wall, with a box standing on the floor.

    Camera frame: y points down, the floor is ``y = 1`` and the wall ``z = 4``.
    The box's front face is the plane ``z = 2`` for ``|x| <= 0.5`` and
    ``0.25 <= y <= 1``; it hides part of both layout planes.
    """
    K = CameraIntrinsics(8.0, 8.0, 7.5, 7.5, 16, 16)
    floor = Plane((0.0, 1.0, 0.0), 1.0)
    wall = Plane((0.0, 0.0, 1.0), 4.0)
    box = Plane((0.0, 0.0, 1.0), 2.0)

    rays = K.ray_grid()
    z_floor = render_plane_depth(floor, K)
    z_wall = render_plane_depth(wall, K)
    floor_vis = (z_floor > 0) & (z_floor < z_wall)
    wall_vis = ~floor_vis
    box_pts = rays * 2.0
    box_vis = (np.abs(box_pts[..., 0]) <= 0.5) & (box_pts[..., 1] >= 0.25) & (box_pts[..., 1] <= 1.0)
    floor_vis &= ~box_vis
    wall_vis &= ~box_vis
    masks = [InstanceMask(floor_vis), InstanceMask(wall_vis), InstanceMask(box_vis)]
    return render_annotation([floor, wall, box], masks, K, is_layout=[True, True, False])
