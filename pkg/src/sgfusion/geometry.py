"""Frames, boxes, pinhole projection and image-plane overlap.

World frame is right-handed with z up; the ground plane is z = 0. A pose's
yaw rotates about z and its forward axis is local +x. The camera optical
frame is x right, y down, z forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


class BehindCamera(GeometryError):
    """Some point of the geometry has non-positive depth."""


class OutOfView(GeometryError):
    """The projection does not intersect the image rectangle."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(float(angle), 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def _vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"non-finite vector {v!r}")
    arr.setflags(write=False)
    return arr


def rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    # ground vehicles only rotate about the vertical axis
    pitch = 0.0
    roll = 0.0

    @property
    def forward(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])

    @property
    def left(self) -> np.ndarray:
        return np.array([-math.sin(self.yaw), math.cos(self.yaw), 0.0])

    def to_local(self, points) -> np.ndarray:
        """World points (N, 3) or (3,) expressed in this pose's frame."""
        p = np.asarray(points, dtype=float)
        return (p - self.position) @ rotation_z(self.yaw)

    def compose(self, offset: "Pose") -> "Pose":
        """Pose of ``offset`` (given in this frame) in the world frame."""
        pos = self.position + rotation_z(self.yaw) @ offset.position
        return Pose(pos, self.yaw + offset.yaw)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position)) and self.yaw == other.yaw

    def __hash__(self):
        return hash((tuple(self.position), self.yaw))


@dataclass(frozen=True)
class Box3D:
    """Yaw-rotated cuboid. ``dims`` is (h, w, l); length runs along local x."""

    center: np.ndarray
    dims: tuple
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != 3 or not all(math.isfinite(d) and d > 0 for d in dims):
            raise GeometryError(f"box dims must be three positive numbers, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def h(self) -> float:
        return self.dims[0]

    @property
    def w(self) -> float:
        return self.dims[1]

    @property
    def l(self) -> float:  # noqa: E743
        return self.dims[2]

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def bottom(self) -> float:
        return float(self.center[2] - self.dims[0] / 2.0)

    def translated(self, offset) -> "Box3D":
        return Box3D(self.center + np.asarray(offset, dtype=float), self.dims, self.yaw)

    def scaled(self, s: float) -> "Box3D":
        return Box3D(self.center, tuple(s * d for d in self.dims), self.yaw)

    def seated(self, ground: float = 0.0) -> "Box3D":
        """Same box with its bottom face resting on ``z = ground``."""
        c = np.array(self.center)
        c[2] = ground + self.dims[0] / 2.0
        return Box3D(c, self.dims, self.yaw)

    def __eq__(self, other):
        if not isinstance(other, Box3D):
            return NotImplemented
        return (bool(np.array_equal(self.center, other.center))
                and self.dims == other.dims and self.yaw == other.yaw)

    def __hash__(self):
        return hash((tuple(self.center), self.dims, self.yaw))


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned image box. ``size`` is (h, w) in pixels."""

    center: tuple
    size: tuple

    def __post_init__(self):
        u, v = (float(c) for c in self.center)
        h, w = (float(s) for s in self.size)
        if not (h >= 0 and w >= 0):
            raise GeometryError(f"box size must be non-negative, got {self.size!r}")
        object.__setattr__(self, "center", (u, v))
        object.__setattr__(self, "size", (h, w))

    @classmethod
    def from_extents(cls, u_min, v_min, u_max, v_max) -> "Box2D":
        return cls(((u_min + u_max) / 2.0, (v_min + v_max) / 2.0),
                   (v_max - v_min, u_max - u_min))

    @property
    def extents(self) -> tuple:
        """(u_min, v_min, u_max, v_max)."""
        (u, v), (h, w) = self.center, self.size
        return (u - w / 2.0, v - h / 2.0, u + w / 2.0, v + h / 2.0)

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]


@dataclass(frozen=True)
class CameraModel:
    focal: tuple = (1000.0, 1000.0)
    principal: tuple = (960.0, 540.0)
    image_size: tuple = (1920, 1080)
    extrinsic: Pose = field(default_factory=Pose)

    def __post_init__(self):
        fu, fv = (float(f) for f in self.focal)
        cu, cv = (float(c) for c in self.principal)
        W, H = (int(s) for s in self.image_size)
        if fu <= 0 or fv <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= cu <= W and 0 <= cv <= H):
            raise GeometryError("principal point must lie inside the image")
        object.__setattr__(self, "focal", (fu, fv))
        object.__setattr__(self, "principal", (cu, cv))
        object.__setattr__(self, "image_size", (W, H))
        fwd, left = self.extrinsic.forward, self.extrinsic.left
        # rows map world offsets to optical x (right), y (down), z (forward)
        rot = np.stack([-left, np.array([0.0, 0.0, -1.0]), fwd])
        rot.setflags(write=False)
        object.__setattr__(self, "_rot", rot)
        object.__setattr__(self, "_f", np.array([fu, fv]))
        object.__setattr__(self, "_c", np.array([cu, cv]))

    @property
    def position(self) -> np.ndarray:
        return self.extrinsic.position

    def to_camera(self, points) -> np.ndarray:
        """World points (N, 3) into the optical frame (x right, y down, z forward)."""
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.extrinsic.position
        return d @ self._rot.T

    def depth(self, point) -> float:
        return float(self.to_camera(point)[0, 2])

    def project_points(self, points) -> np.ndarray:
        """Pixel coordinates (N, 2); raises BehindCamera on non-positive depth."""
        pc = self.to_camera(points)
        z = pc[:, 2:3]
        if (z <= 0).any():
            raise BehindCamera("point at or behind the camera plane")
        return pc[:, :2] / z * self._f + self._c


_UNIT_CORNERS = np.array([[sx, sy, sz]
                          for sx in (-0.5, 0.5)
                          for sy in (-0.5, 0.5)
                          for sz in (-0.5, 0.5)])


def corners_3d(box: Box3D) -> np.ndarray:
    """The eight vertices of ``box`` as an (8, 3) array."""
    h, w, l = box.dims
    offsets = _UNIT_CORNERS * np.array([l, w, h])
    if box.yaw != 0.0:
        offsets = offsets @ rotation_z(box.yaw).T
    return box.center + offsets


def raw_hull(box: Box3D, cam: CameraModel) -> tuple:
    """Unclipped (u_min, v_min, u_max, v_max) of the projected corners."""
    uv = cam.project_points(corners_3d(box))
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def in_image(box: Box3D, cam: CameraModel) -> bool:
    """True if the projected hull lies fully inside the image without clipping."""
    try:
        u0, v0, u1, v1 = raw_hull(box, cam)
    except BehindCamera:
        return False
    W, H = cam.image_size
    return u0 >= 0 and v0 >= 0 and u1 <= W and v1 <= H


def project_box(box: Box3D, cam: CameraModel) -> Box2D:
    """Axis-aligned hull of the projected corners, clipped to the image."""
    u0, v0, u1, v1 = raw_hull(box, cam)
    W, H = cam.image_size
    u0, v0 = max(u0, 0.0), max(v0, 0.0)
    u1, v1 = min(u1, float(W)), min(v1, float(H))
    if u1 <= u0 or v1 <= v0:
        raise OutOfView("projected hull does not intersect the image")
    return Box2D.from_extents(u0, v0, u1, v1)


def intersection_area(a: Box2D, b: Box2D) -> float:
    au0, av0, au1, av1 = a.extents
    bu0, bv0, bu1, bv1 = b.extents
    du = min(au1, bu1) - max(au0, bu0)
    dv = min(av1, bv1) - max(av0, bv0)
    if du <= 0 or dv <= 0:
        return 0.0
    return du * dv


def _extent_area(b: Box2D) -> float:
    u0, v0, u1, v1 = b.extents
    return (u1 - u0) * (v1 - v0)


def iou_2d(a: Box2D, b: Box2D) -> float:
    # areas from the same extents as the intersection, so iou(a, a) == 1 exactly
    inter = intersection_area(a, b)
    union = _extent_area(a) + _extent_area(b) - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def frustum_axis(box: Box3D, cam: CameraModel) -> np.ndarray:
    """Unit world-frame ray from the camera centre through the box centre."""
    ray = box.center - cam.position
    norm = float(np.linalg.norm(ray))
    if norm == 0.0 or cam.depth(box.center) <= 0:
        raise BehindCamera("box centre is not in front of the camera")
    return ray / norm
