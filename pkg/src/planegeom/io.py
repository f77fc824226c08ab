"""On-disk formats and the frame-bundle directory layout.

A frame bundle is a directory::

    intrinsics.json          {"fx", "fy", "cx", "cy", "width", "height"}
    pose.json                {"rotation": 3x3, "translation": 3}, camera-to-world (optional)
    depth.pgdm | depth.png   frame depth (ground truth or prediction)
    sensor_depth.pgdm        raw sensor depth (optional)
    planes.csv               plane table (optional, empty frame if absent)
    masks/plane_NNNN.png     visible mask per plane id
    full_masks/...           projected full extent per plane id (optional)
    complete_masks/...       complete masks per plane id (optional)
    segmentation.png         16-bit labels, 65535 = non-planar (written, informational)
    layout_depth.pgdm        completed layout depth (written by completion)

The refinement-stage inputs (image, union of other masks, reconstructed
depth, coordinate map) are all derivable from these files.
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ShapeError
from .geometry import CameraIntrinsics, DepthMap, Pose
from .planes import InstanceMask, Plane
from .segmentation import SegmentationMap

__all__ = [
    "FORMAT_VERSION",
    "PlaneRecord",
    "FrameBundle",
    "read_depth",
    "write_depth",
    "read_depth_raw",
    "write_depth_raw",
    "read_depth_png",
    "write_depth_png",
    "read_plane_table",
    "write_plane_table",
    "read_mask",
    "write_mask",
    "read_segmentation",
    "write_segmentation",
    "read_frame",
    "write_frame",
]

FORMAT_VERSION = 1
DEPTH_MAGIC = b"PGDM"
_HEADER = struct.Struct("<4sIII")
MAX_PIXELS = 1 << 28
PLANE_TABLE_HEADER = ["id", "nx", "ny", "nz", "d", "anchor_id", "confidence", "is_layout"]


# --- depth maps ------------------------------------------------------------


def write_depth_raw(path, depth: DepthMap) -> None:
    header = _HEADER.pack(DEPTH_MAGIC, depth.width, depth.height, 0)
    Path(path).write_bytes(header + depth.values.astype("<f4").tobytes())


def read_depth_raw(path) -> DepthMap:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: header truncated at byte {len(data)} (need {_HEADER.size})")
    magic, width, height, _ = _HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    if width == 0 or height == 0 or width * height > MAX_PIXELS:
        raise FormatError(f"{path}: invalid dimensions {width}x{height} at byte 4")
    expected = _HEADER.size + 4 * width * height
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "has trailing bytes"
        raise FormatError(f"{path}: payload {kind} at byte {min(len(data), expected)} (expected {expected} bytes)")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(height, width)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        bad = int(np.flatnonzero(~np.isfinite(values.ravel()) | (values.ravel() < 0))[0])
        raise FormatError(f"{path}: invalid depth value at byte {_HEADER.size + 4 * bad}")
    return DepthMap(values.astype(np.float64))


def write_depth_png(path, depth: DepthMap) -> None:
    """16-bit PNG in millimeters; 0 stays invalid."""
    mm = np.rint(depth.values * 1000.0)
    if np.any(mm > 65535):
        raise FormatError(f"{path}: depth {depth.values.max():.3f} m exceeds the 16-bit millimeter range")
    valid_lost = depth.valid & (mm == 0)
    if np.any(valid_lost):
        raise FormatError(f"{path}: depth below 0.5 mm would be stored as invalid")
    Image.fromarray(mm.astype(np.uint16)).save(path, format="PNG")


def read_depth_png(path) -> DepthMap:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I"):
            raise FormatError(f"{path}: expected a 16-bit grayscale PNG, got mode {im.mode}")
        mm = np.array(im)
    return DepthMap(mm.astype(np.float64) / 1000.0)


def write_depth(path, depth: DepthMap) -> None:
    if str(path).endswith(".png"):
        write_depth_png(path, depth)
    else:
        write_depth_raw(path, depth)


def read_depth(path) -> DepthMap:
    if str(path).endswith(".png"):
        return read_depth_png(path)
    return read_depth_raw(path)


# --- plane table -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlaneRecord:
    id: int
    plane: Plane
    anchor_id: int = -1
    confidence: float = 1.0
    is_layout: bool = False


def _parse_row(row: list[str], lineno: int, path) -> PlaneRecord:
    if len(row) != len(PLANE_TABLE_HEADER):
        raise FormatError(f"{path}:{lineno}: expected {len(PLANE_TABLE_HEADER)} fields, got {len(row)}")
    try:
        pid = int(row[0])
        n = np.array([float(x) for x in row[1:4]])
        d = float(row[4])
        anchor_id = int(row[5])
        confidence = float(row[6])
        layout = int(row[7])
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from None
    if layout not in (0, 1):
        raise FormatError(f"{path}:{lineno}: is_layout must be 0 or 1, got {row[7]}")
    if not 0.0 <= confidence <= 1.0:
        raise FormatError(f"{path}:{lineno}: confidence {confidence} outside [0, 1]")
    norm = np.linalg.norm(n)
    if not np.isfinite(norm) or norm == 0 or not np.isfinite(d):
        raise FormatError(f"{path}:{lineno}: degenerate plane")
    if abs(norm - 1.0) > 1e-6:
        warnings.warn(f"{path}:{lineno}: normal has norm {norm:.9g}; renormalized")
    return PlaneRecord(pid, Plane(n / norm, d), anchor_id, confidence, bool(layout))


def read_plane_table(path) -> list[PlaneRecord]:
    text = Path(path).read_text()
    reader = csv.reader(_io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}:1: empty plane table") from None
    if [h.strip() for h in header] != PLANE_TABLE_HEADER:
        raise FormatError(f"{path}:1: header must be {','.join(PLANE_TABLE_HEADER)}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        records.append(_parse_row([c.strip() for c in row], lineno, path))
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate plane ids")
    return records


def write_plane_table(path, records) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLANE_TABLE_HEADER)
    for r in records:
        nx, ny, nz = (repr(float(c)) for c in r.plane.normal)
        writer.writerow(
            [r.id, nx, ny, nz, repr(float(r.plane.offset)), r.anchor_id, repr(float(r.confidence)), int(r.is_layout)]
        )
    Path(path).write_text(buf.getvalue())


# --- masks and segmentation ------------------------------------------------


def write_mask(path, mask: InstanceMask) -> None:
    Image.fromarray(mask.membership.astype(np.uint8) * 255).save(path, format="PNG")


def read_mask(path, confidence: float = 1.0) -> InstanceMask:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise FormatError(f"{path}: mask must be single-channel")
    return InstanceMask(arr > 0, confidence=confidence)


def write_segmentation(path, seg: SegmentationMap) -> None:
    Image.fromarray(seg.labels.astype(np.uint16)).save(path, format="PNG")


def read_segmentation(path) -> SegmentationMap:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I"):
            raise FormatError(f"{path}: expected a 16-bit grayscale PNG, got mode {im.mode}")
        return SegmentationMap(np.array(im).astype(np.int64))


# --- frame bundles ---------------------------------------------------------


@dataclass(eq=False)
class FrameBundle:
    K: CameraIntrinsics
    depth: DepthMap
    pose: Pose = field(default_factory=Pose.identity)
    planes: list[PlaneRecord] = field(default_factory=list)
    masks: list[InstanceMask] = field(default_factory=list)
    full_masks: list[InstanceMask] | None = None
    complete_masks: list[InstanceMask] | None = None
    sensor_depth: DepthMap | None = None
    layout_depth: DepthMap | None = None

    def annotation(self):
        from .benchmark import FrameAnnotation

        return FrameAnnotation(
            planes=[r.plane for r in self.planes],
            visible_masks=self.masks,
            gt_depth=self.depth,
            K=self.K,
            pose=self.pose,
            is_layout=[r.is_layout for r in self.planes],
            complete_masks=self.complete_masks,
        )

    def detections(self):
        from .metrics import DetectionResult

        return [DetectionResult(r.plane, m, r.confidence) for r, m in zip(self.planes, self.masks)]


def _mask_name(pid: int) -> str:
    return f"plane_{pid:04d}.png"


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: {exc.msg}") from None


def _read_mask_dir(directory: Path, records, shape) -> list[InstanceMask]:
    masks = []
    for r in records:
        path = directory / _mask_name(r.id)
        if not path.exists():
            raise FileNotFoundError(f"missing mask {path}")
        m = read_mask(path, confidence=r.confidence)
        if m.shape != shape:
            raise ShapeError(f"{path}: mask is {m.shape[1]}x{m.shape[0]}, frame is {shape[1]}x{shape[0]}")
        masks.append(m)
    return masks


def read_frame(directory) -> FrameBundle:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"frame directory {d} does not exist")
    intr = _read_json(d / "intrinsics.json")
    try:
        K = CameraIntrinsics(
            float(intr["fx"]), float(intr["fy"]), float(intr["cx"]), float(intr["cy"]),
            int(intr["width"]), int(intr["height"]),
        )
    except KeyError as exc:
        raise FormatError(f"{d / 'intrinsics.json'}: missing field {exc}") from None

    pose = Pose.identity()
    if (d / "pose.json").exists():
        p = _read_json(d / "pose.json")
        pose = Pose(np.array(p["rotation"], dtype=float), np.array(p["translation"], dtype=float))

    if (d / "depth.pgdm").exists():
        depth = read_depth_raw(d / "depth.pgdm")
    elif (d / "depth.png").exists():
        depth = read_depth_png(d / "depth.png")
    else:
        raise FileNotFoundError(f"{d}: no depth.pgdm or depth.png")
    if depth.shape != K.shape:
        raise ShapeError(f"{d}: depth is {depth.width}x{depth.height}, intrinsics say {K.width}x{K.height}")

    records = read_plane_table(d / "planes.csv") if (d / "planes.csv").exists() else []
    bundle = FrameBundle(K=K, depth=depth, pose=pose, planes=records)
    bundle.masks = _read_mask_dir(d / "masks", records, K.shape)
    if (d / "full_masks").is_dir():
        bundle.full_masks = _read_mask_dir(d / "full_masks", records, K.shape)
    if (d / "complete_masks").is_dir():
        bundle.complete_masks = _read_mask_dir(d / "complete_masks", records, K.shape)
    for name, attr in (("sensor_depth.pgdm", "sensor_depth"), ("layout_depth.pgdm", "layout_depth")):
        if (d / name).exists():
            extra = read_depth_raw(d / name)
            if extra.shape != K.shape:
                raise ShapeError(f"{d / name}: dimensions differ from the frame")
            setattr(bundle, attr, extra)
    return bundle


def write_frame(directory, bundle: FrameBundle) -> None:
    from .segmentation import segmentation_from_masks

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    K = bundle.K
    (d / "intrinsics.json").write_text(
        json.dumps({"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height}, indent=2)
        + "\n"
    )
    (d / "pose.json").write_text(
        json.dumps(
            {"rotation": bundle.pose.rotation.tolist(), "translation": bundle.pose.translation.tolist()}, indent=2
        )
        + "\n"
    )
    write_depth_raw(d / "depth.pgdm", bundle.depth)
    write_plane_table(d / "planes.csv", bundle.planes)
    groups = [("masks", bundle.masks), ("full_masks", bundle.full_masks), ("complete_masks", bundle.complete_masks)]
    for sub, masks in groups:
        if masks is None:
            continue
        (d / sub).mkdir(exist_ok=True)
        for r, m in zip(bundle.planes, masks):
            write_mask(d / sub / _mask_name(r.id), m)
    write_segmentation(d / "segmentation.png", segmentation_from_masks(bundle.masks, K.shape))
    if bundle.sensor_depth is not None:
        write_depth_raw(d / "sensor_depth.pgdm", bundle.sensor_depth)
    if bundle.layout_depth is not None:
        write_depth_raw(d / "layout_depth.pgdm", bundle.layout_depth)
