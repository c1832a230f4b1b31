"""Camera model, rigid transforms, cuboid vertex model, and projection.

Conventions
-----------
* Quaternions are (w, x, y, z), unit norm, sign-canonicalized so the
  scalar part is >= 0 (ties broken by the first nonzero component).
* The object frame has its origin at the cuboid centroid with y up.
* Cuboid vertex i encodes sign bits: bit0 -> x, bit1 -> y, bit2 -> z,
  a set bit meaning the positive half extent. Vertex 0 is (-,-,-),
  vertex 7 is (+,+,+).
* Pixel coordinates are (u, v) with u along image columns.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, EmptyDetectionError

DEPTH_EPS = 1e-9


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------


def quat_canonical(q):
    """Normalize and sign-canonicalize a (w, x, y, z) quaternion."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm < 1e-12:
        raise ValueError(f"degenerate quaternion {q!r}")
    q = q / norm
    for c in q:
        if c > 0:
            break
        if c < 0:
            q = -q
            break
    return q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m):
    """Rotation matrix to canonical quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_canonical(q)


def quat_from_axis_angle(v):
    """Exponential map: rotation vector (3,) to quaternion."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return quat_canonical(np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]]))
    axis = v / angle
    half = 0.5 * angle
    s = np.sin(half)
    return quat_canonical(np.array([np.cos(half), s * axis[0], s * axis[1], s * axis[2]]))


def quat_rotation_y(angle):
    """Quaternion for a rotation of ``angle`` radians about +y."""
    return quat_canonical(np.array([np.cos(0.5 * angle), 0.0, np.sin(0.5 * angle), 0.0]))


def quat_angle_between(a, b):
    """Geodesic angle in radians between two rotations."""
    dot = abs(float(np.dot(a, b)))
    return 2.0 * np.arccos(min(1.0, dot))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths, principal point, image size (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def diagonal(self):
        return float(np.hypot(self.width, self.height))

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


@dataclass(frozen=True)
class Pose:
    """Rigid transform from object frame to camera frame.

    Translation units follow the model handed to projection/PnP; with the
    y-normalized cuboid model they are only defined up to scale.
    """

    quat: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "quat", quat_canonical(self.quat))
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, rotation, translation):
        return cls(matrix_to_quat(rotation), np.asarray(translation, dtype=np.float64))

    @property
    def rotation(self):
        return quat_to_matrix(self.quat)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self):
        return {"quat_wxyz": self.quat.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["quat_wxyz"]), np.asarray(d["translation"]))


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Pose applying ``b`` first, then ``a``."""
    q = quat_multiply(a.quat, b.quat)
    t = quat_to_matrix(a.quat) @ b.translation + a.translation
    return Pose(q, t)


def pose_invert(p: Pose) -> Pose:
    qi = quat_conjugate(p.quat)
    return Pose(qi, -(quat_to_matrix(qi) @ p.translation))


def pose_apply(p: Pose, points):
    """Transform (n, 3) points into the camera frame."""
    return np.asarray(points, dtype=np.float64) @ p.rotation.T + p.translation


@dataclass(frozen=True)
class RelativeDims:
    """Cuboid extent ratios (x/y, z/y); the y extent is identically 1."""

    rx: float
    rz: float

    def __post_init__(self):
        if not (np.isfinite(self.rx) and np.isfinite(self.rz)):
            raise ValueError("relative dims must be finite")
        if self.rx <= 0 or self.rz <= 0:
            raise ValueError("relative dims must be positive")

    def as_extents(self, height=1.0):
        """Absolute (x, y, z) extents for a given y extent."""
        return np.array([self.rx * height, height, self.rz * height])

    def to_list(self):
        return [self.rx, self.rz]


@dataclass(frozen=True)
class Cuboid:
    """A y-normalized cuboid, optionally with a known metric height."""

    dims: RelativeDims
    height: float | None = None

    def vertices(self):
        return cuboid_vertices(self.dims)


@dataclass
class Keypoints2D:
    """Eight (u, v) pixel points with validity flags and confidences."""

    points: np.ndarray
    valid: np.ndarray = None
    confidence: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.valid is None:
            self.valid = np.ones(len(self.points), dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
        if self.confidence is None:
            self.confidence = np.ones(len(self.points))
        else:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if np.any(~np.isfinite(self.points[self.valid])):
            raise ValueError("valid keypoints must be finite")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

_SIGNS = np.array(
    [[(1.0 if (i >> k) & 1 else -1.0) for k in range(3)] for i in range(8)]
)


def cuboid_vertices(dims: RelativeDims):
    """Eight ordered vertices of the y-normalized cuboid, centroid at origin."""
    if not isinstance(dims, RelativeDims):
        dims = RelativeDims(*dims)
    return _SIGNS * (0.5 * np.array([dims.rx, 1.0, dims.rz]))


def box_vertices(extents):
    """Eight ordered vertices for absolute (x, y, z) extents."""
    extents = np.asarray(extents, dtype=np.float64)
    if extents.shape != (3,) or np.any(extents <= 0) or not np.all(np.isfinite(extents)):
        raise ValueError("extents must be three positive finite values")
    return _SIGNS * (0.5 * extents)


def vertex_index_from_signs(point):
    """Recover the vertex index from coordinate signs (order bijection)."""
    return int((point[0] > 0) | ((point[1] > 0) << 1) | ((point[2] > 0) << 2))


def project(points, pose: Pose, cam: CameraIntrinsics):
    """Project object-frame points to pixels.

    Raises BehindCameraError if any transformed point has depth <= 1e-9.
    """
    pts = pose_apply(pose, points)
    z = pts[:, 2]
    if np.any(z <= DEPTH_EPS):
        raise BehindCameraError(f"point depth {z.min():.3g} <= {DEPTH_EPS}")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = cam.fx * pts[:, 0] / z + cam.cx
    uv[:, 1] = cam.fy * pts[:, 1] / z + cam.cy
    return uv


def bbox2d_from_keypoints(kps) -> tuple:
    """Tight axis-aligned (u_min, v_min, u_max, v_max) over valid points.

    No clamping to image bounds; raster concerns belong to label encoding.
    """
    if isinstance(kps, Keypoints2D):
        pts = kps.points[kps.valid]
    else:
        pts = np.asarray(kps, dtype=np.float64)
    if len(pts) == 0:
        raise EmptyDetectionError("no valid keypoints for 2D bounding box")
    return (
        float(pts[:, 0].min()),
        float(pts[:, 1].min()),
        float(pts[:, 0].max()),
        float(pts[:, 1].max()),
    )


def bbox_center_size(bbox):
    u0, v0, u1, v1 = bbox
    return np.array([0.5 * (u0 + u1), 0.5 * (v0 + v1)]), np.array([u1 - u0, v1 - v0])
