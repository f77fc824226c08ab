import itertools

import numpy as np
import pytest

from planegeom.benchmark import (
    FrameAnnotation,
    behind_check,
    classify_pair,
    complete_layout,
    compose_layout_depth,
    extract_planes,
    layout_relations,
    pose_failure_filter,
    rasterize_complete,
    rasterize_visible,
)
from planegeom.benchmark import PairRelation
from planegeom.errors import DomainError, InsufficientDataError, ShapeError
from planegeom.geometry import CameraIntrinsics, DepthMap
from planegeom.metrics import mask_iou
from planegeom.planes import InstanceMask, Plane, render_plane_depth
from planegeom.synthetic import plane_through, render_annotation, room_frame, three_plane_frame

BOUNDARY_K = CameraIntrinsics(40.0, 40.0, 19.5, 14.5, 40, 30)


def boundary_frame(area_a):
    """Plane z=2 on a 20x25 block (minus pixels to reach ``area_a``), plane z=3 elsewhere."""
    a = np.zeros(BOUNDARY_K.shape, dtype=bool)
    a[:25, :20] = True
    drop = 500 - area_a
    # peel pixels off the bottom-right corner of the block, next to the other plane
    for k in range(drop):
        a[24, 19 - k] = False
    assert a.sum() == area_a
    planes = [Plane([0, 0, 1.0], 2.0), Plane([0, 0, 1.0], 3.0)]
    return render_annotation(planes, [InstanceMask(a), InstanceMask(~a)], BOUNDARY_K)


@pytest.mark.parametrize("area, expected", [(500, 2), (499, 1)])
def test_min_area_boundary_extraction(area, expected):
    ann = boundary_frame(area)
    found = extract_planes(ann.gt_depth, BOUNDARY_K, min_area=500, seed=0)
    assert len(found) == expected
    offsets = sorted(p.offset for p, _ in found)
    assert offsets[-1] == pytest.approx(3.0, abs=1e-9)
    if expected == 2:
        assert offsets[0] == pytest.approx(2.0, abs=1e-9)


def test_min_area_boundary_annotation():
    boundary_frame(500).check_min_area(500)
    with pytest.raises(DomainError):
        boundary_frame(499).check_min_area(500)


@pytest.mark.parametrize("seed", range(3))
def test_extract_three_planes(seed):
    ann = three_plane_frame()
    found = extract_planes(ann.gt_depth, ann.K, min_area=300, seed=seed)
    assert len(found) == 3
    for plane, mask in zip(ann.planes, ann.visible_masks):
        ious = [mask_iou(mask, m) for _, m in found]
        best = int(np.argmax(ious))
        assert ious[best] > 0.99
        assert np.abs(found[best][0].as_vector() - plane.as_vector()).max() < 1e-6


def test_extract_splits_disconnected_coplanar_regions():
    K = CameraIntrinsics(20.0, 20.0, 15.5, 7.5, 32, 16)
    left = np.zeros(K.shape, dtype=bool)
    left[:, :10] = True
    right = np.zeros(K.shape, dtype=bool)
    right[:, 22:] = True
    same = Plane([0, 0, 1.0], 2.0)
    ann = render_annotation([same, Plane([0, 0, 1.0], 4.0), same], [InstanceMask(left), InstanceMask(~left & ~right), InstanceMask(right)], K)
    found = extract_planes(ann.gt_depth, K, min_area=100, seed=0)
    assert len(found) == 3
    assert sum(abs(p.offset - 2.0) < 1e-9 for p, _ in found) == 2


def test_extract_max_planes_and_insufficient():
    ann = three_plane_frame()
    assert len(extract_planes(ann.gt_depth, ann.K, min_area=300, max_planes=2)) == 2
    with pytest.raises(InsufficientDataError):
        extract_planes(DepthMap.zeros(*ann.K.shape), ann.K, min_area=10)


def test_extract_deterministic():
    ann = three_plane_frame()
    a = extract_planes(ann.gt_depth, ann.K, min_area=300, seed=7)
    b = extract_planes(ann.gt_depth, ann.K, min_area=300, seed=7)
    assert all(np.array_equal(p.as_vector(), q.as_vector()) for (p, _), (q, _) in zip(a, b))


@pytest.mark.parametrize("bias, keep", [(0.2, False), (0.05, True), (0.0, True), (-0.2, False)])
def test_pose_filter_bias(bias, keep):
    ann = three_plane_frame()
    sensor = ann.planar_depth().values.copy()
    sensor[sensor > 0] += bias
    result = pose_failure_filter(ann, DepthMap(sensor))
    assert result.keep is keep
    assert result.discrepancy == pytest.approx(abs(bias), abs=1e-12)


def test_pose_filter_mean_over_planar_pixels():
    ann = three_plane_frame()
    planar = ann.planar_depth().values
    rng = np.random.default_rng(0)
    sensor = planar + rng.uniform(-0.3, 0.3, size=planar.shape)
    sensor[5:9, 5:9] = 0.0
    total, count = 0.0, 0
    for v in range(ann.K.height):
        for u in range(ann.K.width):
            if planar[v, u] > 0 and sensor[v, u] > 0:
                total += abs(planar[v, u] - sensor[v, u])
                count += 1
    assert pose_failure_filter(ann, DepthMap(sensor)).discrepancy == pytest.approx(total / count, rel=1e-12)


def test_pose_filter_threshold_inclusive():
    ann = three_plane_frame()
    sensor = ann.planar_depth().values.copy()
    sensor[sensor > 0] += 0.1
    check = pose_failure_filter(ann, DepthMap(sensor), threshold=0.2)
    assert check.keep


def test_annotation_validation():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    m = InstanceMask(np.ones(K.shape, dtype=bool))
    p = Plane([0, 0, 1.0], 1.0)
    with pytest.raises(DomainError):
        FrameAnnotation([p, p], [m, m], DepthMap.zeros(*K.shape), K)
    with pytest.raises(ShapeError):
        FrameAnnotation([p], [m, m], DepthMap.zeros(*K.shape), K)
    half = np.zeros(K.shape, dtype=bool)
    half[:4] = True
    with pytest.raises(DomainError):
        FrameAnnotation([p], [m], DepthMap.zeros(*K.shape), K, complete_masks=[InstanceMask(half)])


def test_rasterize_visible_is_nearest():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    near, far = Plane([0, 0, 1.0], 1.0), Plane([0, 0, 1.0], 3.0)
    a = np.zeros(K.shape, dtype=bool)
    a[:, :5] = True
    b = np.zeros(K.shape, dtype=bool)
    b[:, 3:] = True
    vis = rasterize_visible([far, near], [InstanceMask(b), InstanceMask(a)], K)
    assert np.array_equal(vis[1].membership, a)
    assert np.array_equal(vis[0].membership, b & ~a)
    full = rasterize_complete([far, near], [InstanceMask(b), InstanceMask(a)], K)
    assert np.array_equal(full[0].membership, b)
    assert not np.any(vis[0].membership & vis[1].membership)


def test_rasterize_visible_matches_pixel_loop():
    rng = np.random.default_rng(1)
    K = CameraIntrinsics(10.0, 10.0, 5.5, 4.5, 12, 10)
    planes = [plane_through(rng.normal(scale=0.3, size=3) + [0, 0, 1], (0, 0, rng.uniform(1, 4))) for _ in range(4)]
    masks = [InstanceMask(rng.random(K.shape) < 0.5) for _ in range(4)]
    vis = rasterize_visible(planes, masks, K)
    for v in range(K.height):
        for u in range(K.width):
            best, best_z = None, np.inf
            for i, (p, m) in enumerate(zip(planes, masks)):
                if not m.membership[v, u]:
                    continue
                z = p.offset / (p.normal @ [(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
                if 0 < z < best_z:
                    best, best_z = i, z
            got = [i for i in range(4) if vis[i].membership[v, u]]
            assert got == ([] if best is None else [best])


def vee(concave):
    """Two planes meeting at x = 0, z = 2; the edge is farthest when ``concave``."""
    K = CameraIntrinsics(10.0, 10.0, 7.5, 5.5, 16, 12)
    s = -1.0 if concave else 1.0
    right = plane_through((-s, 0.0, 1.0), (0.0, 0.0, 2.0))  # z = 2 + s x
    left = plane_through((s, 0.0, 1.0), (0.0, 0.0, 2.0))  # z = 2 - s x
    cols = np.arange(K.width)[None, :].repeat(K.height, axis=0)
    rmask, lmask = cols >= 8, cols < 8
    return render_annotation([right, left], [InstanceMask(rmask), InstanceMask(lmask)], K, is_layout=[True, True])


@pytest.mark.parametrize("concave", [True, False])
def test_classify_vee(concave):
    ann = vee(concave)
    rel = classify_pair(ann.planes[0], ann.visible_masks[0], ann.planes[1], ann.visible_masks[1], ann.gt_depth, ann.K)
    assert rel.relation == ("concave" if concave else "convex")
    assert layout_relations(ann)[(0, 1)].relation == rel.relation


def test_classify_parallel_is_none():
    ann = boundary_frame(500)
    assert classify_pair(ann.planes[0], ann.visible_masks[0], ann.planes[1], ann.visible_masks[1], ann.gt_depth, ann.K) is None


def test_compose_min_max_against_pixel_loop():
    rng = np.random.default_rng(2)
    depths = {i: rng.uniform(1, 5, size=(6, 7)) * (rng.random((6, 7)) < 0.8) for i in range(3)}
    for kind in ("concave", "convex"):
        rel = {(i, j): PairRelation(i, j, kind) for i, j in itertools.combinations(range(3), 2)}
        for combo in [(0, 1), (0, 1, 2), (2, 0)]:
            for order in itertools.permutations(combo):
                got, owner = compose_layout_depth(depths, order, rel)
                for v in range(6):
                    for u in range(7):
                        vals = [depths[i][v, u] for i in combo if depths[i][v, u] > 0]
                        want = 0.0 if not vals else (min(vals) if kind == "concave" else max(vals))
                        assert got[v, u] == want
                        if vals:
                            assert depths[owner[v, u]][v, u] == want
                        else:
                            assert owner[v, u] == -1


def test_compose_no_relation_uses_min():
    a, b = np.full((2, 2), 2.0), np.full((2, 2), 3.0)
    got, owner = compose_layout_depth({0: a, 1: b}, (1, 0), {})
    assert np.all(got == 2.0) and np.all(owner == 0)


def test_behind_check_fraction():
    visible = DepthMap(np.full((10, 10), 3.0))
    cand = np.full((10, 10), 3.5)
    cand.reshape(-1)[:15] = 3.0 - 0.3
    ok, frac = behind_check(cand, visible, tolerance=0.2, behind_fraction=0.9)
    assert not ok and frac == pytest.approx(0.85)
    cand.reshape(-1)[:15] = 3.0 - 0.15  # within tolerance counts as behind
    ok, frac = behind_check(cand, visible, tolerance=0.2, behind_fraction=0.9)
    assert ok and frac == 1.0


def test_behind_check_ignores_invalid():
    visible = np.full((4, 4), 2.0)
    visible[0] = 0.0
    cand = np.full((4, 4), 2.5)
    cand[0] = 0.5
    assert behind_check(cand, DepthMap(visible)) == (True, 1.0)
    assert behind_check(np.zeros((4, 4)), DepthMap(visible)) == (False, 0.0)


def test_room_relations_and_completion():
    ann = room_frame()
    assert [m.area for m in ann.visible_masks] == [88, 156, 12]
    assert layout_relations(ann)[(0, 1)].relation == "concave"
    result = complete_layout(ann)
    assert result.planes == (0, 1)
    assert result.behind_fraction == 1.0
    assert result.support == 88 + 156
    floor = result.masks[0].membership
    rows = np.flatnonzero(floor.any(axis=1))
    assert rows.min() == 10 and rows.max() == 15
    # the completed floor extends under the box
    assert np.all(floor[ann.visible_masks[2].membership & (np.arange(16)[:, None] >= 10)])
    # completed depth behind the box face everywhere the box is seen
    box = ann.visible_masks[2].membership
    assert np.all(result.depth.values[box] > 2.0)
    expected = np.minimum(render_plane_depth(ann.planes[0], ann.K), render_plane_depth(ann.planes[1], ann.K))
    expected = np.where(render_plane_depth(ann.planes[0], ann.K) > 0, expected, render_plane_depth(ann.planes[1], ann.K))
    assert np.allclose(result.depth.values, expected)


def test_room_completion_greedy_matches_exhaustive():
    ann = room_frame()
    a = complete_layout(ann)
    b = complete_layout(ann, max_exhaustive=1)
    assert a.planes == b.planes and a.support == b.support


def test_completion_none_when_every_candidate_in_front():
    K = CameraIntrinsics(10.0, 10.0, 3.5, 3.5, 8, 8)
    wall = Plane([0, 0, 1.0], 4.0)
    full = InstanceMask(np.ones(K.shape, dtype=bool))
    ann = render_annotation([wall], [full], K, is_layout=[True])
    # observed depth far behind the claimed layout plane
    moved = FrameAnnotation(ann.planes, ann.visible_masks, DepthMap(np.full(K.shape, 1.0)), K, is_layout=[True])
    assert complete_layout(moved) is not None
    ahead = FrameAnnotation(ann.planes, ann.visible_masks, DepthMap(np.full(K.shape, 6.0)), K, is_layout=[True])
    assert complete_layout(ahead) is None


def test_completion_requires_layout():
    with pytest.raises(InsufficientDataError):
        complete_layout(three_plane_frame())
