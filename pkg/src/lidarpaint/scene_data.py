"""Capture-bundle ingestion: cameras, LiDAR sweeps, actor tracks, images.

A bundle directory holds everything in one world coordinate system:

* ``meta.json`` — frame_count, actor_count, sync_tolerance_s, and optionally
  ``lidar_timestamps_s`` (defaults to the camera timestamps).
* ``cameras.json`` — per-frame pinhole cameras with camera-to-world poses.
* ``boxes.json`` — per-frame actor bounding boxes (box-to-world poses).
* ``lidar/NNNNNN.bin`` — magic ``LPC1``, u64 LE point count, then (x, y, z,
  intensity) float32 LE records in world frame.
* ``images/NNNNNN.ppm`` — binary P6, 8-bit.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import Pose
from .image_io import read_ppm, write_ppm

LIDAR_MAGIC = b"LPC1"


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: pose maps camera coordinates to world coordinates.

    Camera axes: +x right, +y down, +z forward (the optical axis).
    """

    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    timestamp: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("camera.focal", f"fx={self.fx}, fy={self.fy} must be > 0")
        if not (0 <= self.cx < self.width):
            raise ValidationError("camera.cx", f"{self.cx} outside [0, {self.width})")
        if not (0 <= self.cy < self.height):
            raise ValidationError("camera.cy", f"{self.cy} outside [0, {self.height})")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) -> camera-frame points."""
        return self.pose.inverse().apply(points)

    def project(self, points_cam: np.ndarray):
        """Camera-frame points -> (u, v, depth) pixel coordinates."""
        pts = np.asarray(points_cam, dtype=np.float64)
        z = pts[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pts[..., 0] / z + self.cx
            v = self.fy * pts[..., 1] / z + self.cy
        return u, v, z

    def right_axis(self) -> np.ndarray:
        return self.pose.rotation[:, 0].copy()

    def up_axis(self) -> np.ndarray:
        return -self.pose.rotation[:, 1]

    def shifted(self, lateral: float, vertical: float) -> "Camera":
        """Camera translated in its own frame: +lateral right, +vertical up."""
        t = self.pose.translation + lateral * self.right_axis() + vertical * self.up_axis()
        pose = Pose(self.pose.rotation.copy(), t, _validated=True)
        return Camera(pose, self.fx, self.fy, self.cx, self.cy,
                      self.width, self.height, self.timestamp)


@dataclass(frozen=True)
class BoundingBox:
    """Actor box annotation at one frame; pose maps box-local to world."""

    pose: Pose
    half_extents: np.ndarray
    actor_id: int
    frame_index: int

    def __post_init__(self):
        he = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        object.__setattr__(self, "half_extents", he)
        if not np.all(he > 0):
            raise ValidationError("box.half_extents", f"{he.tolist()} must be > 0")

    def contains(self, points_world: np.ndarray) -> np.ndarray:
        local = self.pose.inverse().apply(points_world)
        return np.all(np.abs(local) <= self.half_extents, axis=-1)

    def to_local(self, points_world: np.ndarray) -> np.ndarray:
        return self.pose.inverse().apply(points_world)


@dataclass(frozen=True)
class LidarFrame:
    """One sweep: world-frame points with per-point intensity."""

    frame_index: int
    timestamp: float
    points: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        inten = np.asarray(self.intensities, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "intensities", inten)
        if pts.shape[0] != inten.shape[0]:
            raise ValidationError("lidar.points", "point/intensity count mismatch")


@dataclass
class SceneBundle:
    """Validated, world-frame capture bundle."""

    cameras: list
    lidar: list
    boxes: list
    image_paths: list
    frame_count: int
    actor_count: int
    sync_tolerance_s: float
    _image_cache: dict = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        n, m = self.frame_count, self.actor_count
        if len(self.cameras) != n:
            raise ValidationError("cameras", f"{len(self.cameras)} entries, expected {n}")
        if len(self.lidar) != n:
            raise ValidationError("lidar", f"{len(self.lidar)} frames, expected {n}")
        if len(self.image_paths) != n:
            raise ValidationError("images", f"{len(self.image_paths)} entries, expected {n}")
        cam_ts = [c.timestamp for c in self.cameras]
        if any(b >= a for a, b in zip(cam_ts[1:], cam_ts)):
            raise ValidationError("cameras.timestamp", "not strictly increasing")
        lid_ts = [f.timestamp for f in self.lidar]
        if any(b >= a for a, b in zip(lid_ts[1:], lid_ts)):
            raise ValidationError("lidar.timestamp", "not strictly increasing")
        for i, frame in enumerate(self.lidar):
            if frame.frame_index != i:
                raise ValidationError(f"lidar[{i}].frame_index", f"{frame.frame_index} != {i}")
            if frame.intensities.size and (
                frame.intensities.min() < 0 or frame.intensities.max() > 1
            ):
                raise ValidationError(f"lidar[{i}].intensity", "values outside [0, 1]")
            if frame.points.size and not np.all(np.isfinite(frame.points)):
                raise ValidationError(f"lidar[{i}].points", "non-finite coordinates")
        for j, box in enumerate(self.boxes):
            if not (0 <= box.frame_index < n):
                raise ValidationError(f"boxes[{j}].frame_index",
                                      f"{box.frame_index} outside [0, {n})")
            if not (0 <= box.actor_id < m):
                raise ValidationError(f"boxes[{j}].actor_id",
                                      f"{box.actor_id} outside [0, {m})")

    def image(self, frame_index: int) -> np.ndarray:
        if frame_index not in self._image_cache:
            self._image_cache[frame_index] = read_ppm(self.image_paths[frame_index])
        return self._image_cache[frame_index]

    def boxes_at(self, frame_index: int) -> list:
        found = [b for b in self.boxes if b.frame_index == frame_index]
        return sorted(found, key=lambda b: b.actor_id)

    def box_for(self, actor_id: int, frame_index: int):
        for b in self.boxes:
            if b.actor_id == actor_id and b.frame_index == frame_index:
                return b
        return None


def _require(obj, key, path, kind):
    if key not in obj:
        raise FormatError(path, f"missing key {key!r}")
    value = obj[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is list and isinstance(value, list):
        return value
    raise FormatError(path, f"key {key!r} is not a {kind.__name__}")


def _load_json(path):
    try:
        with open(path, "rb") as f:
            return json.loads(f.read().decode("utf-8"))
    except FileNotFoundError:
        raise FormatError(path, "file missing") from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(path, f"invalid JSON ({exc})") from None


def _pose_from_fields(rot9, t3, path, where):
    rot = np.asarray(rot9, dtype=np.float64)
    t = np.asarray(t3, dtype=np.float64)
    if rot.shape != (9,) or t.shape != (3,):
        raise FormatError(path, f"{where}: rotation must be 9 floats, translation 3")
    try:
        return Pose(rot.reshape(3, 3), t)
    except ValidationError as exc:
        raise ValidationError(f"{where}.{exc.field}", str(exc)) from None


def read_lidar_bin(path):
    """Read one LPC1 sweep file -> (points (N, 3), intensities (N,))."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise FormatError(path, "file missing") from None
    if len(blob) < 12 or blob[:4] != LIDAR_MAGIC:
        raise FormatError(path, "bad magic, expected LPC1")
    (count,) = struct.unpack_from("<Q", blob, 4)
    expected = 12 + 16 * count
    if len(blob) != expected:
        raise FormatError(path, f"size {len(blob)} != {expected} for {count} points")
    records = np.frombuffer(blob, dtype="<f4", offset=12).reshape(count, 4).astype(np.float64)
    return records[:, :3], records[:, 3]


def write_lidar_bin(path, points, intensities) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    intensities = np.asarray(intensities, dtype=np.float64).reshape(-1)
    records = np.concatenate([points, intensities[:, None]], axis=1).astype("<f4")
    with open(path, "wb") as f:
        f.write(LIDAR_MAGIC)
        f.write(struct.pack("<Q", points.shape[0]))
        f.write(records.tobytes())


def load_bundle(path) -> SceneBundle:
    """Load and validate a bundle directory.

    LiDAR frames whose timestamp is farther than the sync tolerance from
    every camera timestamp are dropped (their point list is emptied); the
    per-frame structure is preserved.
    """
    meta_path = os.path.join(path, "meta.json")
    meta = _load_json(meta_path)
    if not isinstance(meta, dict):
        raise FormatError(meta_path, "top level must be an object")
    frame_count = _require(meta, "frame_count", meta_path, int)
    actor_count = _require(meta, "actor_count", meta_path, int)
    tol = _require(meta, "sync_tolerance_s", meta_path, float)
    if frame_count < 1:
        raise ValidationError("meta.frame_count", f"{frame_count} must be >= 1")
    if actor_count < 0:
        raise ValidationError("meta.actor_count", f"{actor_count} must be >= 0")
    if tol < 0:
        raise ValidationError("meta.sync_tolerance_s", f"{tol} must be >= 0")

    cam_path = os.path.join(path, "cameras.json")
    cam_json = _load_json(cam_path)
    if not isinstance(cam_json, list):
        raise FormatError(cam_path, "top level must be an array")
    cameras = []
    for i, entry in enumerate(cam_json):
        if not isinstance(entry, dict):
            raise FormatError(cam_path, f"cameras[{i}] must be an object")
        pose = _pose_from_fields(
            _require(entry, "rotation", cam_path, list),
            _require(entry, "translation", cam_path, list),
            cam_path, f"cameras[{i}]")
        try:
            cameras.append(Camera(
                pose=pose,
                fx=_require(entry, "fx", cam_path, float),
                fy=_require(entry, "fy", cam_path, float),
                cx=_require(entry, "cx", cam_path, float),
                cy=_require(entry, "cy", cam_path, float),
                width=_require(entry, "width", cam_path, int),
                height=_require(entry, "height", cam_path, int),
                timestamp=_require(entry, "timestamp", cam_path, float),
            ))
        except ValidationError as exc:
            raise ValidationError(f"cameras[{i}].{exc.field}", str(exc)) from None

    box_path = os.path.join(path, "boxes.json")
    box_json = _load_json(box_path)
    if not isinstance(box_json, list):
        raise FormatError(box_path, "top level must be an array")
    boxes = []
    for j, entry in enumerate(box_json):
        if not isinstance(entry, dict):
            raise FormatError(box_path, f"boxes[{j}] must be an object")
        pose = _pose_from_fields(
            _require(entry, "rotation", box_path, list),
            _require(entry, "translation", box_path, list),
            box_path, f"boxes[{j}]")
        try:
            boxes.append(BoundingBox(
                pose=pose,
                half_extents=np.asarray(_require(entry, "half_extents", box_path, list),
                                        dtype=np.float64),
                actor_id=_require(entry, "actor_id", box_path, int),
                frame_index=_require(entry, "frame_index", box_path, int),
            ))
        except ValidationError as exc:
            raise ValidationError(f"boxes[{j}].{exc.field}", str(exc)) from None

    lidar_ts = meta.get("lidar_timestamps_s")
    if lidar_ts is None:
        lidar_ts = [c.timestamp for c in cameras]
    if len(lidar_ts) != frame_count:
        raise ValidationError("meta.lidar_timestamps_s",
                              f"{len(lidar_ts)} entries, expected {frame_count}")
    cam_ts = np.array([c.timestamp for c in cameras], dtype=np.float64)

    lidar = []
    for i in range(frame_count):
        bin_path = os.path.join(path, "lidar", f"{i:06d}.bin")
        points, intensities = read_lidar_bin(bin_path)
        ts = float(lidar_ts[i])
        if cam_ts.size and np.min(np.abs(cam_ts - ts)) > tol:
            points = np.zeros((0, 3))
            intensities = np.zeros(0)
        lidar.append(LidarFrame(i, ts, points, intensities))

    image_paths = []
    for i in range(frame_count):
        img_path = os.path.join(path, "images", f"{i:06d}.ppm")
        if not os.path.exists(img_path):
            raise FormatError(img_path, "file missing")
        image_paths.append(img_path)
        header = _read_ppm_dims(img_path)
        if header != (cameras[i].width, cameras[i].height):
            raise ValidationError(
                f"images[{i}]",
                f"size {header} does not match camera {cameras[i].width}x{cameras[i].height}")

    bundle = SceneBundle(cameras, lidar, boxes, image_paths,
                         frame_count, actor_count, tol)
    bundle.validate()
    return bundle


def _read_ppm_dims(path):
    with open(path, "rb") as f:
        head = f.read(64)
    if not head.startswith(b"P6"):
        raise FormatError(path, "not a binary P6 PPM")
    fields = head[2:].split()
    if len(fields) < 2:
        raise FormatError(path, "truncated PPM header")
    try:
        return int(fields[0]), int(fields[1])
    except ValueError:
        raise FormatError(path, "bad PPM header") from None


def split_points(bundle: SceneBundle, frame_index: int):
    """Partition one frame's points into background and per-actor clouds.

    Returns (background (B, 3) world, background intensities (B,),
    actor_points: M arrays in box-local coordinates, actor_intensities: M
    arrays). A point inside several boxes goes to the lowest actor_id.
    """
    if not (0 <= frame_index < bundle.frame_count):
        raise ValidationError("frame_index", f"{frame_index} outside [0, {bundle.frame_count})")
    frame = bundle.lidar[frame_index]
    pts, inten = frame.points, frame.intensities
    m = bundle.actor_count
    actor_points = [np.zeros((0, 3)) for _ in range(m)]
    actor_inten = [np.zeros(0) for _ in range(m)]
    unassigned = np.ones(pts.shape[0], dtype=bool)
    for box in bundle.boxes_at(frame_index):
        inside = unassigned & box.contains(pts)
        if np.any(inside):
            actor_points[box.actor_id] = box.to_local(pts[inside])
            actor_inten[box.actor_id] = inten[inside]
            unassigned &= ~inside
    return pts[unassigned], inten[unassigned], actor_points, actor_inten


def write_bundle(path, cameras, lidar_frames, boxes, images,
                 actor_count, sync_tolerance_s, lidar_timestamps=None) -> None:
    """Write a conformant bundle directory (used by the synthesizer and tests)."""
    os.makedirs(os.path.join(path, "lidar"), exist_ok=True)
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    n = len(cameras)
    meta = {
        "frame_count": n,
        "actor_count": int(actor_count),
        "sync_tolerance_s": float(sync_tolerance_s),
    }
    if lidar_timestamps is not None:
        meta["lidar_timestamps_s"] = [float(t) for t in lidar_timestamps]
    _dump_json(os.path.join(path, "meta.json"), meta)
    _dump_json(os.path.join(path, "cameras.json"), [
        {
            "rotation": [float(v) for v in c.pose.rotation.reshape(-1)],
            "translation": [float(v) for v in c.pose.translation],
            "fx": float(c.fx), "fy": float(c.fy),
            "cx": float(c.cx), "cy": float(c.cy),
            "width": int(c.width), "height": int(c.height),
            "timestamp": float(c.timestamp),
        }
        for c in cameras
    ])
    _dump_json(os.path.join(path, "boxes.json"), [
        {
            "actor_id": int(b.actor_id),
            "frame_index": int(b.frame_index),
            "rotation": [float(v) for v in b.pose.rotation.reshape(-1)],
            "translation": [float(v) for v in b.pose.translation],
            "half_extents": [float(v) for v in b.half_extents],
        }
        for b in boxes
    ])
    for i, frame in enumerate(lidar_frames):
        if isinstance(frame, LidarFrame):
            points, intensities = frame.points, frame.intensities
        else:
            points, intensities = frame
        write_lidar_bin(os.path.join(path, "lidar", f"{i:06d}.bin"), points, intensities)
    for i, image in enumerate(images):
        write_ppm(os.path.join(path, "images", f"{i:06d}.ppm"), image)


def _dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")
