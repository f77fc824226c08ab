"""Command-line entry point: ``planegeom <command> ...``.

Every failure (bad flags, missing files, malformed inputs, dimension
mismatches) exits with status 2 and a single diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, synthetic
from .anchors import cluster_anchors, write_anchors
from .benchmark import (
    MIN_PLANE_AREA,
    POSE_DISCREPANCY_THRESHOLD,
    complete_layout,
    extract_planes,
    pose_failure_filter,
    rasterize_complete,
)
from .errors import PlaneGeomError
from .geometry import DepthMap, depthmap_to_coords
from .gradcheck import check_gradient, sampled_entries
from .io import FORMAT_VERSION, FrameBundle, PlaneRecord, read_depth, read_frame, write_frame
from .metrics import aggregate_reports, evaluate_frame
from .planes import InstanceMask, offset_from_depth
from .warping import PlanarScene, assemble_depth, warping_loss

logger = logging.getLogger("planegeom")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(2)


def _parse_vector(text: str) -> np.ndarray:
    try:
        values = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a 3-vector: {text!r}") from None
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 numbers, got {len(values)}")
    return np.array(values)


def _coordinate_map(bundle: FrameBundle):
    scene = PlanarScene([r.plane for r in bundle.planes], bundle.masks, bundle.depth)
    return depthmap_to_coords(assemble_depth(scene, bundle.K), bundle.K)


# --- commands --------------------------------------------------------------


def cmd_anchors_cluster(args) -> int:
    rows = [ln.split() for ln in Path(args.input).read_text().splitlines() if ln.strip()]
    try:
        normals = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise PlaneGeomError(f"{args.input}: {exc}") from None
    if normals.ndim != 2 or normals.shape[1] != 3:
        raise PlaneGeomError(f"{args.input}: expected one 'nx ny nz' triple per line")
    anchors = cluster_anchors(normals, k=args.k, seed=args.seed)
    write_anchors(args.out, anchors)
    return 0


def cmd_plane_offset(args) -> int:
    bundle = read_frame(args.frame)
    ids = [r.id for r in bundle.planes]
    if args.mask not in ids:
        raise PlaneGeomError(f"frame has no plane with id {args.mask}")
    mask = bundle.masks[ids.index(args.mask)]
    n = args.normal / np.linalg.norm(args.normal)
    print(repr(offset_from_depth(n, bundle.depth, mask, bundle.K)))
    return 0


def cmd_warp_loss(args) -> int:
    current = read_frame(args.current)
    nearby = read_frame(args.nearby)
    if current.K != nearby.K:
        raise PlaneGeomError("current and nearby frames use different intrinsics")
    K = current.K
    pose = nearby.pose.inverse().compose(current.pose)
    M_c, M_n = _coordinate_map(current), _coordinate_map(nearby)
    report = warping_loss(M_c, M_n, pose, K, squared=args.squared)
    out = report.as_dict()
    status = 0
    if args.grad_check:
        entries = sampled_entries(M_c, M_n, pose, K, args.entries)
        result = check_gradient(M_c, M_n, pose, K, entries=entries, squared=args.squared)
        out["grad_check"] = {
            "checked": int(result.checked),
            "max_relative_error": float(result.max_relative_error),
            "tolerance": result.tolerance,
            "passed": bool(result.passed),
        }
        status = 0 if result.passed else 1
    print(json.dumps(out, indent=2))
    return status


def cmd_build_gt(args) -> int:
    bundle = read_frame(args.frame)
    found = extract_planes(
        bundle.depth,
        bundle.K,
        min_area=args.min_area,
        inlier_tol=args.inlier_tol,
        max_planes=args.max_planes,
        seed=args.seed,
        trials=args.trials,
    )
    bundle.planes = [PlaneRecord(i, plane) for i, (plane, _) in enumerate(found)]
    bundle.masks = [m for _, m in found]
    bundle.full_masks = None
    bundle.complete_masks = None
    bundle.layout_depth = None
    write_frame(args.out or args.frame, bundle)
    print(f"{len(found)} planes written to {args.out or args.frame}")
    return 0


def cmd_filter_pose(args) -> int:
    bundle = read_frame(args.frame)
    sensor = read_depth(args.sensor)
    check = pose_failure_filter(bundle.annotation(), sensor, threshold=args.threshold)
    row = [Path(args.frame).name, repr(check.discrepancy), int(check.keep)]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(row)
    if args.log:
        log = Path(args.log)
        new = not log.exists()
        with log.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["frame_id", "discrepancy", "kept"])
            w.writerow(row)
    return 0


def cmd_complete_masks(args) -> int:
    bundle = read_frame(args.frame)
    planes = [r.plane for r in bundle.planes]
    if bundle.full_masks is not None:
        base = rasterize_complete(planes, bundle.full_masks, bundle.K)
        complete = [InstanceMask(c.membership | v.membership, v.confidence) for c, v in zip(base, bundle.masks)]
    else:
        complete = list(bundle.masks)
    result = complete_layout(bundle.annotation(), tolerance=args.tolerance, behind_fraction=args.behind)
    summary = {"available": result is not None}
    if result is not None:
        for i, m in result.masks.items():
            complete[i] = InstanceMask(complete[i].membership | m.membership, complete[i].confidence)
        bundle.layout_depth = result.depth
        summary.update(
            planes=[bundle.planes[i].id for i in result.planes],
            behind_fraction=result.behind_fraction,
            support=result.support,
        )
    bundle.complete_masks = complete
    write_frame(args.out or args.frame, bundle)
    print(json.dumps(summary))
    return 0


def _frame_pairs(pred: Path, gt: Path) -> list[tuple[Path, Path]]:
    if (gt / "intrinsics.json").exists():
        return [(pred, gt)]
    names = sorted(p.name for p in gt.iterdir() if (p / "intrinsics.json").exists())
    if not names:
        raise FileNotFoundError(f"{gt} holds no frame bundle")
    return [(pred / n, gt / n) for n in names]


def cmd_eval(args) -> int:
    reports = []
    for pred_dir, gt_dir in _frame_pairs(Path(args.pred), Path(args.gt)):
        pred = read_frame(pred_dir)
        gt = read_frame(gt_dir)
        if pred.K != gt.K:
            raise PlaneGeomError(f"{pred_dir}: intrinsics differ from the ground truth")
        reports.append(evaluate_frame(pred.detections(), pred.depth, gt.annotation()))
    report = aggregate_reports(reports)
    text = json.dumps(report.as_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.curve:
        with open(args.curve, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "recall"])
            for t, r in report.recall_curve.rows():
                w.writerow([f"{t:.2f}", repr(r)])
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.kind == "three-planes":
        a = synthetic.three_plane_frame()
        bundle = FrameBundle(K=a.K, depth=a.gt_depth, pose=a.pose,
                             planes=[PlaneRecord(i, p) for i, p in enumerate(a.planes)],
                             masks=list(a.visible_masks))
        write_frame(out, bundle)
    elif args.kind == "room":
        a = synthetic.room_frame()
        records = [PlaneRecord(i, p, is_layout=f) for i, (p, f) in enumerate(zip(a.planes, a.is_layout))]
        write_frame(out, FrameBundle(K=a.K, depth=a.gt_depth, planes=records, masks=list(a.visible_masks)))
    else:
        M_c, M_n, pose, K = synthetic.fronto_parallel_pair(perturbation=0.05)
        write_frame(out / "current", FrameBundle(K=K, depth=DepthMap(M_c.points[..., 2])))
        write_frame(out / "nearby", FrameBundle(K=K, depth=DepthMap(M_n.points[..., 2]), pose=pose.inverse()))
    print(f"wrote {args.kind} scene to {out}")
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="planegeom", description="Piecewise planar reconstruction geometry toolkit.")
    parser.add_argument(
        "--version", action="version", version=f"planegeom {__version__} (format {FORMAT_VERSION})"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    anchors = sub.add_parser("anchors", help="anchor normal tools")
    anchors_sub = anchors.add_subparsers(dest="anchors_command", required=True, parser_class=_Parser)
    p = anchors_sub.add_parser("cluster", help="k-means anchor normals")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_anchors_cluster)

    plane = sub.add_parser("plane", help="plane tools")
    plane_sub = plane.add_subparsers(dest="plane_command", required=True, parser_class=_Parser)
    p = plane_sub.add_parser("offset", help="plane offset from depth for a given normal")
    p.add_argument("--frame", required=True)
    p.add_argument("--mask", type=int, required=True)
    p.add_argument("--normal", type=_parse_vector, required=True)
    p.set_defaults(func=cmd_plane_offset)

    p = sub.add_parser("warp-loss", help="two-view warping loss")
    p.add_argument("--current", required=True)
    p.add_argument("--nearby", required=True)
    p.add_argument("--squared", action="store_true", help="sqrt of summed squared distances instead of the mean distance")
    p.add_argument("--grad-check", action="store_true")
    p.add_argument("--entries", type=int, default=200, help="coordinate entries checked by --grad-check")
    p.set_defaults(func=cmd_warp_loss)

    p = sub.add_parser("build-gt", help="extract ground-truth planes from a depth frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--min-area", type=int, default=MIN_PLANE_AREA)
    p.add_argument("--inlier-tol", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-planes", type=int, default=None)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_build_gt)

    p = sub.add_parser("filter-pose", help="drop frames whose planes disagree with sensor depth")
    p.add_argument("--frame", required=True)
    p.add_argument("--sensor", required=True)
    p.add_argument("--threshold", type=float, default=POSE_DISCREPANCY_THRESHOLD)
    p.add_argument("--log", default=None, help="append the row to this CSV file")
    p.set_defaults(func=cmd_filter_pose)

    p = sub.add_parser("complete-masks", help="complete masks and layout depth")
    p.add_argument("--frame", required=True)
    p.add_argument("--tolerance", type=float, default=0.2)
    p.add_argument("--behind", type=float, default=0.9)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_complete_masks)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--curve", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic test scene")
    p.add_argument("kind", choices=["three-planes", "warp-pair", "room"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PlaneGeomError, OSError, KeyError, ValueError) as exc:
        message = " ".join(str(exc).split()) or type(exc).__name__
        sys.stderr.write(f"planegeom: error: {message}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
