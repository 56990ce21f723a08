"""Pinhole camera model and the world -> camera -> clip -> pixel chain.

Conventions: right-handed camera frame, +X right, +Y down, looking down +Z.
The projection matrix maps camera depth ``z_near`` to 0 and ``z_far`` to 1
after perspective division. Pixel coordinates put the first pixel center at 0
and the last at ``width - 1``, so the principal point is always
``((width - 1) / 2, (height - 1) / 2)``.

Every function accepts either a single point or a stacked ``(..., 3)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigInvalid, DegenerateProjection

ORTHONORMAL_TOL = 1e-9
W_EPS = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    width: int
    height: int
    z_near: float = 0.01
    z_far: float = 100.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigInvalid(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 2 or self.height < 2:
            raise ConfigInvalid(f"image must be at least 2x2, got {self.width}x{self.height}")
        if not (0 < self.z_near < self.z_far):
            raise ConfigInvalid(f"need 0 < z_near < z_far, got {self.z_near}, {self.z_far}")

    def as_list(self) -> list[float]:
        return [float(self.fx), float(self.fy), int(self.width), int(self.height),
                float(self.z_near), float(self.z_far)]

    @classmethod
    def from_list(cls, values) -> "CameraIntrinsics":
        fx, fy, w, h, n, f = values
        if int(w) != w or int(h) != h:
            raise ConfigInvalid("width and height must be integers")
        return cls(float(fx), float(fy), int(w), int(h), float(n), float(f))


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera rigid transform ``x_cam = R @ x_world + T``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(rot.T @ rot, np.eye(3), rtol=0.0, atol=ORTHONORMAL_TOL):
            raise ConfigInvalid("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise ConfigInvalid("rotation determinant is not +1")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def __eq__(self, other):
        if not isinstance(other, CameraExtrinsics):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True)
class CameraRig:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics = field(default_factory=CameraExtrinsics)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.extrinsics.rotation.reshape(-1)],
            "translation": [float(x) for x in self.extrinsics.translation],
            "intrinsics": self.intrinsics.as_list(),
        }

    @classmethod
    def from_dict(cls, record: dict) -> "CameraRig":
        try:
            rot = np.asarray(record["rotation"], dtype=np.float64)
            trans = np.asarray(record["translation"], dtype=np.float64)
            intr = record["intrinsics"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad camera record: {exc}") from exc
        if rot.size != 9 or trans.size != 3 or len(intr) != 6:
            raise ConfigInvalid("camera record needs 9 rotation, 3 translation, 6 intrinsics values")
        return cls(CameraIntrinsics.from_list(intr), CameraExtrinsics(rot.reshape(3, 3), trans))


class Projection(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    clipped: np.ndarray


def world_to_camera(point, extrinsics: CameraExtrinsics) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    return p @ extrinsics.rotation.T + extrinsics.translation


def fov_from_focal(intrinsics: CameraIntrinsics) -> tuple[float, float]:
    """Horizontal and vertical field of view in radians."""
    theta_x = 2.0 * np.arctan(intrinsics.width / (2.0 * intrinsics.fx))
    theta_y = 2.0 * np.arctan(intrinsics.height / (2.0 * intrinsics.fy))
    return float(theta_x), float(theta_y)


def frustum_extents(intrinsics: CameraIntrinsics) -> tuple[float, float, float, float]:
    """Near-plane extents ``(l, r, b, t)`` of the symmetric frustum."""
    theta_x, theta_y = fov_from_focal(intrinsics)
    n = intrinsics.z_near
    r = n * np.tan(theta_x / 2.0)
    t = n * np.tan(theta_y / 2.0)
    return -r, r, -t, t


def projection_matrix(intrinsics: CameraIntrinsics) -> np.ndarray:
    l, r, b, t = frustum_extents(intrinsics)
    n, f = intrinsics.z_near, intrinsics.z_far
    return np.array(
        [
            [2 * n / (r - l), 0.0, (r + l) / (r - l), 0.0],
            [0.0, 2 * n / (t - b), (t + b) / (t - b), 0.0],
            [0.0, 0.0, f / (f - n), -n * f / (f - n)],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )


def camera_to_clip(point_cam, intrinsics: CameraIntrinsics) -> np.ndarray:
    p = np.asarray(point_cam, dtype=np.float64)
    homo = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    return homo @ projection_matrix(intrinsics).T


def ndc_to_pixel(clip, intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Perspective-divide homogeneous clip coordinates ``(x, y, z, w)`` and map to pixels.

    No clamping is applied; off-screen points come back out of range.
    """
    c = np.asarray(clip, dtype=np.float64)
    w = c[..., 3]
    if np.any(np.abs(w) < W_EPS):
        raise DegenerateProjection("clip-space w is zero; point lies on the camera plane")
    u = (c[..., 0] / w + 1.0) * (intrinsics.width - 1) / 2.0
    v = (c[..., 1] / w + 1.0) * (intrinsics.height - 1) / 2.0
    return u, v


def pixel_to_ndc(u, v, intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    x = 2.0 * np.asarray(u, dtype=np.float64) / (intrinsics.width - 1) - 1.0
    y = 2.0 * np.asarray(v, dtype=np.float64) / (intrinsics.height - 1) - 1.0
    return x, y


def clip_depth(point_cam, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Post-division depth in [0, 1] for camera depths within the frustum."""
    clip = camera_to_clip(point_cam, intrinsics)
    return clip[..., 2] / clip[..., 3]


def pixel_focal(intrinsics: CameraIntrinsics) -> tuple[float, float]:
    """Effective pixel-space focal lengths of the projection chain.

    Because pixel coordinates span ``width - 1`` rather than ``width``, a
    lateral offset ``x / z`` maps to ``fx * (width - 1) / width * x / z`` pixels.
    """
    mat = projection_matrix(intrinsics)
    return (mat[0, 0] * (intrinsics.width - 1) / 2.0,
            mat[1, 1] * (intrinsics.height - 1) / 2.0)


def project_points(points, rig: CameraRig) -> Projection:
    """Project world points to pixels, returning camera depth and a clipped flag.

    ``clipped`` is set where the camera depth is outside ``(z_near, z_far)``;
    pixel coordinates are still returned for those points unless ``w`` is zero.
    """
    cam = world_to_camera(points, rig.extrinsics)
    u, v = ndc_to_pixel(camera_to_clip(cam, rig.intrinsics), rig.intrinsics)
    depth = cam[..., 2]
    clipped = (depth <= rig.intrinsics.z_near) | (depth >= rig.intrinsics.z_far)
    return Projection(u, v, depth, clipped)


def project_point(point, rig: CameraRig) -> Projection:
    proj = project_points(np.asarray(point, dtype=np.float64).reshape(3), rig)
    return Projection(float(proj.u), float(proj.v), float(proj.depth), bool(proj.clipped))
