"""Camera/lidar geometry: rigid transforms, pinhole projection, frustum culling.

Coordinate conventions:
  Lidar frame:  sensor-centric, meters, right-handed.
  Camera frame: x right, y down, z forward (optical axis), meters.
  Image frame:  u right, v down, pixels, origin at the top-left corner.

The extrinsic is a 4x4 camera-from-lidar rigid transform. Pixel bounds are
half-open, [0, width) x [0, height), matching integer pixel indexing. A point
is in front of the camera when its depth exceeds DEPTH_EPS; points on or
behind the image plane are never projected.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

DEPTH_EPS = 1e-6
ROTATION_TOL = 1e-6

CLOUD_MAGIC = b"LCPC"
CLOUD_VERSION = 1


class Frame(str, Enum):
    LIDAR = "lidar"
    CAMERA = "camera"


class GeometryError(ValueError):
    pass


class CalibrationError(GeometryError):
    pass


class FrameError(GeometryError):
    pass


class CloudFormatError(GeometryError):
    pass


@dataclass(frozen=True)
class Point:
    """Single lidar return: position in meters plus reflectance in [0, 1]."""

    x: float
    y: float
    z: float
    intensity: float

    def __post_init__(self):
        if not all(np.isfinite([self.x, self.y, self.z, self.intensity])):
            raise GeometryError("point coordinates and intensity must be finite")
        if not 0.0 <= self.intensity <= 1.0:
            raise GeometryError(f"intensity {self.intensity} outside [0, 1]")


@dataclass
class PointCloud:
    """Ordered point set stored as an (n, 4) float64 array: x, y, z, intensity.

    Empty clouds are permitted (they can fall out of ingestion or culling);
    the encoder rejects them at voxelization time.
    """

    points: np.ndarray
    frame: Frame

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise GeometryError(f"points must be (n, 4), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise GeometryError("point cloud contains non-finite values")
        if pts.shape[0] and (pts[:, 3].min() < 0.0 or pts[:, 3].max() > 1.0):
            raise GeometryError("intensity values outside [0, 1]")
        self.points = pts
        self.frame = Frame(self.frame)

    @classmethod
    def from_points(cls, points, frame: Frame) -> "PointCloud":
        rows = [(p.x, p.y, p.z, p.intensity) for p in points]
        arr = np.array(rows, dtype=np.float64).reshape(len(rows), 4)
        return cls(arr, frame)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class CameraCalibration:
    """Camera-from-lidar extrinsic, pinhole intrinsic, and image size."""

    extrinsic: np.ndarray
    intrinsic: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        ext = np.asarray(self.extrinsic, dtype=np.float64)
        intr = np.asarray(self.intrinsic, dtype=np.float64)
        if ext.shape != (4, 4):
            raise CalibrationError(f"extrinsic must be 4x4, got {ext.shape}")
        if intr.shape != (3, 3):
            raise CalibrationError(f"intrinsic must be 3x3, got {intr.shape}")
        if not (np.isfinite(ext).all() and np.isfinite(intr).all()):
            raise CalibrationError("calibration contains non-finite values")
        rot = ext[:3, :3]
        if np.abs(rot @ rot.T - np.eye(3)).max() > ROTATION_TOL:
            raise CalibrationError("extrinsic rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ROTATION_TOL:
            raise CalibrationError("extrinsic rotation determinant is not +1")
        if np.abs(ext[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > ROTATION_TOL:
            raise CalibrationError("extrinsic bottom row must be [0, 0, 0, 1]")
        if intr[0, 0] <= 0.0 or intr[1, 1] <= 0.0:
            raise CalibrationError("intrinsic focal entries must be positive")
        if self.width <= 0 or self.height <= 0:
            raise CalibrationError("image width and height must be positive")
        self.extrinsic = ext
        self.intrinsic = intr
        self.width = int(self.width)
        self.height = int(self.height)

    @property
    def fx(self) -> float:
        return float(self.intrinsic[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsic[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsic[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsic[1, 2])


def transform_to_camera(cloud: PointCloud, calib: CameraCalibration) -> PointCloud:
    """Apply the rigid camera-from-lidar transform to every point.

    Intensity and point order are preserved.
    """
    if cloud.frame is not Frame.LIDAR:
        raise FrameError(f"expected a lidar-frame cloud, got {cloud.frame.value}")
    out = cloud.points.copy()
    if len(cloud):
        xyz1 = np.hstack([cloud.xyz, np.ones((len(cloud), 1))])
        out[:, :3] = (xyz1 @ calib.extrinsic.T)[:, :3]
    return PointCloud(out, Frame.CAMERA)


def _project_xyz(xyz: np.ndarray, calib: CameraCalibration):
    """Pinhole projection of camera-frame coordinates; no culling.

    Returns (u, v, depth) arrays; u/v are meaningless where depth <= DEPTH_EPS.
    """
    depth = xyz[:, 2]
    safe = np.where(np.abs(depth) > DEPTH_EPS, depth, 1.0)
    u = calib.fx * xyz[:, 0] / safe + calib.cx
    v = calib.fy * xyz[:, 1] / safe + calib.cy
    return u, v, depth


def project_point(p, calib: CameraCalibration):
    """Project one camera-frame point to (u, v, depth) pixels/meters.

    Returns None when the point lies on or behind the image plane
    (depth <= DEPTH_EPS).
    """
    if isinstance(p, Point):
        x, y, z = p.x, p.y, p.z
    else:
        x, y, z = (float(c) for c in p)
    if z <= DEPTH_EPS:
        return None
    u = calib.fx * x / z + calib.cx
    v = calib.fy * y / z + calib.cy
    return (u, v, z)


def frustum_filter(cloud: PointCloud, calib: CameraCalibration) -> PointCloud:
    """Keep the points visible to the camera, in camera coordinates.

    Lidar-frame input is first moved through the extrinsic; camera-frame input
    is assumed already aligned and is culled as-is. A point is kept when
    depth > DEPTH_EPS and its projection lands inside [0, width) x [0, height).
    Relative point order is preserved; an empty result is valid.
    """
    if cloud.frame is Frame.LIDAR:
        cam = transform_to_camera(cloud, calib)
    else:
        cam = cloud
    if not len(cam):
        return PointCloud(cam.points.copy(), Frame.CAMERA)
    u, v, depth = _project_xyz(cam.xyz, calib)
    keep = (
        (depth > DEPTH_EPS)
        & (u >= 0.0)
        & (u < calib.width)
        & (v >= 0.0)
        & (v < calib.height)
    )
    return PointCloud(cam.points[keep], Frame.CAMERA)


def write_cloud_file(cloud: PointCloud, path) -> None:
    """Write the binary point-cloud format: magic, u16 version, u64 count, f32 rows."""
    data = cloud.points.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC)
        fh.write(struct.pack("<H", CLOUD_VERSION))
        fh.write(struct.pack("<Q", len(cloud)))
        fh.write(data.tobytes())


def read_cloud_file(path, frame: Frame = Frame.LIDAR, max_intensity: float = 1.0) -> PointCloud:
    """Read the binary point-cloud format.

    max_intensity rescales raw sensor reflectance into [0, 1]; leave at 1.0
    for files that are already normalized.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 14:
        raise CloudFormatError(f"{path}: truncated header")
    if raw[:4] != CLOUD_MAGIC:
        raise CloudFormatError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CLOUD_VERSION:
        raise CloudFormatError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack_from("<Q", raw, 6)
    body = raw[14:]
    expected = count * 16
    if len(body) != expected:
        raise CloudFormatError(
            f"{path}: expected {expected} payload bytes for {count} points, got {len(body)}"
        )
    pts = np.frombuffer(body, dtype="<f4").reshape(count, 4).astype(np.float64)
    if max_intensity != 1.0:
        if max_intensity <= 0:
            raise CloudFormatError("max_intensity must be positive")
        pts = pts.copy()
        pts[:, 3] /= max_intensity
    return PointCloud(pts, frame)


def write_calibration(calib: CameraCalibration, path) -> None:
    doc = {
        "extrinsic": [float(x) for x in calib.extrinsic.reshape(-1)],
        "intrinsic": [float(x) for x in calib.intrinsic.reshape(-1)],
        "width": calib.width,
        "height": calib.height,
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def read_calibration(path) -> CameraCalibration:
    try:
        doc = json.loads(Path(path).read_text())
        extrinsic = np.array(doc["extrinsic"], dtype=np.float64).reshape(4, 4)
        intrinsic = np.array(doc["intrinsic"], dtype=np.float64).reshape(3, 3)
        return CameraCalibration(extrinsic, intrinsic, int(doc["width"]), int(doc["height"]))
    except CalibrationError:
        raise
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CalibrationError(f"{path}: malformed calibration file: {exc}") from exc
