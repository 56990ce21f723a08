"""Gaussian splat primitives and their screen-space footprints."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .camera import CameraRig, pixel_focal, project_points, world_to_camera
from .errors import BehindCamera, ConfigInvalid

ALPHA_MAX = 0.99
COV_FLOOR = 0.3
CUTOFF_SIGMA = 3.0
QUAT_TOL = 1e-9


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrices from unit quaternions in (w, x, y, z) order; broadcasts over leading axes."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return rot.reshape(q.shape[:-1] + (3, 3))


@dataclass(frozen=True)
class Gaussian3D:
    center: tuple[float, float, float]
    scale: tuple[float, float, float]
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    opacity: float = 1.0
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if min(self.scale) <= 0:
            raise ConfigInvalid("scale components must be positive")
        if abs(np.linalg.norm(self.rotation) - 1.0) > QUAT_TOL:
            raise ConfigInvalid("rotation quaternion must have unit norm")
        if not 0.0 <= self.opacity <= 1.0:
            raise ConfigInvalid("opacity must lie in [0, 1]")


class GaussianCloud:
    """Struct-of-arrays container for ``N`` splats.

    ``rotations`` are unit quaternions in (w, x, y, z) order.
    """

    def __init__(self, centers, scales, rotations, opacities, colors):
        self.centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        n = len(self.centers)
        self.scales = np.asarray(scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(opacities, dtype=np.float64).reshape(n)
        self.colors = np.asarray(colors, dtype=np.float64).reshape(n, 3)
        if n:
            if np.any(self.scales <= 0):
                raise ConfigInvalid("scale components must be positive")
            if np.any(np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0) > QUAT_TOL):
                raise ConfigInvalid("rotation quaternions must have unit norm")
            if np.any((self.opacities < 0) | (self.opacities > 1)):
                raise ConfigInvalid("opacity must lie in [0, 1]")

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i) -> Gaussian3D:
        return Gaussian3D(
            tuple(self.centers[i]), tuple(self.scales[i]), tuple(self.rotations[i]),
            float(self.opacities[i]), tuple(self.colors[i]),
        )

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D]) -> "GaussianCloud":
        if not gaussians:
            return cls.empty()
        return cls(
            [g.center for g in gaussians], [g.scale for g in gaussians],
            [g.rotation for g in gaussians], [g.opacity for g in gaussians],
            [g.color for g in gaussians],
        )

    def with_centers(self, centers) -> "GaussianCloud":
        return GaussianCloud(centers, self.scales, self.rotations, self.opacities, self.colors)

    def records(self) -> np.ndarray:
        """``(N, 14)`` rows: center, scale, quaternion (wxyz), opacity, color."""
        return np.concatenate(
            [self.centers, self.scales, self.rotations, self.opacities[:, None], self.colors], axis=1
        )

    @classmethod
    def from_records(cls, records) -> "GaussianCloud":
        rec = np.asarray(records, dtype=np.float64)
        if rec.size == 0:
            return cls.empty()
        if rec.ndim != 2 or rec.shape[1] != 14:
            raise ConfigInvalid(f"splat records must have 14 columns, got shape {rec.shape}")
        return cls(rec[:, 0:3], rec[:, 3:6], rec[:, 6:10], rec[:, 10], rec[:, 11:14])


def covariance_from_scale_rotation(g: Gaussian3D) -> np.ndarray:
    rot = quat_to_matrix(g.rotation)
    return rot @ np.diag(np.square(g.scale)) @ rot.T


def covariances(cloud: GaussianCloud) -> np.ndarray:
    rot = quat_to_matrix(cloud.rotations)
    scaled = rot * np.square(cloud.scales)[:, None, :]
    return scaled @ np.swapaxes(rot, -1, -2)


def _projection_jacobian(mu_cam: np.ndarray, rig: CameraRig) -> np.ndarray:
    fu, fv = pixel_focal(rig.intrinsics)
    x, y, z = mu_cam[..., 0], mu_cam[..., 1], mu_cam[..., 2]
    zeros = np.zeros_like(z)
    jac = np.stack(
        [fu / z, zeros, -fu * x / (z * z),
         zeros, fv / z, -fv * y / (z * z)],
        axis=-1,
    )
    return jac.reshape(mu_cam.shape[:-1] + (2, 3))


def project_covariance(sigma, mu_cam, rig: CameraRig) -> np.ndarray:
    """EWA screen-space covariance ``J W Sigma W^T J^T`` in pixel^2 (no floor)."""
    mu_cam = np.asarray(mu_cam, dtype=np.float64)
    if np.any(mu_cam[..., 2] <= 0):
        raise BehindCamera("splat center is not in front of the camera")
    jw = _projection_jacobian(mu_cam, rig) @ rig.extrinsics.rotation
    return jw @ np.asarray(sigma, dtype=np.float64) @ np.swapaxes(jw, -1, -2)


@dataclass
class ProjectedSplat:
    """One screen-space footprint; ``cov2d`` already includes the stability floor."""

    pixel_center: tuple[float, float]
    cov2d: np.ndarray
    depth: float
    opacity: float
    payload: tuple = (0.0, 0.0, 0.0)


@dataclass
class ProjectedSplats:
    """Batched footprints of a cloud under one camera."""

    means: np.ndarray  # (N, 2) pixel centers
    cov2d: np.ndarray  # (N, 2, 2), floored
    conics: np.ndarray  # (N, 3) inverse covariance entries a, b, c
    radii: np.ndarray  # (N,) cutoff radius in pixels
    depths: np.ndarray
    opacities: np.ndarray
    valid: np.ndarray  # depth inside (z_near, z_far)

    def __len__(self):
        return len(self.depths)

    def splat(self, i: int, payload=(0.0, 0.0, 0.0)) -> ProjectedSplat:
        return ProjectedSplat(tuple(self.means[i]), self.cov2d[i].copy(), float(self.depths[i]),
                              float(self.opacities[i]), tuple(payload))


def conic_and_radius(cov2d: np.ndarray, cutoff_sigma: float = CUTOFF_SIGMA):
    """Inverse-covariance entries and the cutoff radius from the larger eigenvalue."""
    a, b, c = cov2d[..., 0, 0], cov2d[..., 0, 1], cov2d[..., 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=-1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    return conic, cutoff_sigma * np.sqrt(lam_max)


def project_gaussians(cloud: GaussianCloud, rig: CameraRig, cov_floor: float = COV_FLOOR,
                      cutoff_sigma: float = CUTOFF_SIGMA) -> ProjectedSplats:
    n = len(cloud)
    mu_cam = world_to_camera(cloud.centers, rig.extrinsics)
    depths = mu_cam[:, 2]
    valid = (depths > rig.intrinsics.z_near) & (depths < rig.intrinsics.z_far)
    means = np.full((n, 2), np.nan)
    cov2d = np.zeros((n, 2, 2))
    cov2d[:, 0, 0] = cov2d[:, 1, 1] = 1.0
    if valid.any():
        proj = project_points(cloud.centers[valid], rig)
        means[valid] = np.stack([proj.u, proj.v], axis=-1)
        cov2d[valid] = project_covariance(covariances(cloud)[valid], mu_cam[valid], rig)
    cov2d[:, 0, 0] += cov_floor
    cov2d[:, 1, 1] += cov_floor
    conics, radii = conic_and_radius(cov2d, cutoff_sigma)
    return ProjectedSplats(
        means=means,
        cov2d=cov2d,
        conics=conics,
        radii=radii,
        depths=depths.copy(),
        opacities=cloud.opacities.copy(),
        valid=valid,
    )


def splat_weight(s: ProjectedSplat, pixel, alpha_max: float = ALPHA_MAX,
                 cutoff_sigma: float = CUTOFF_SIGMA) -> float:
    """Blending weight of a footprint at ``pixel``: Gaussian falloff times opacity, clamped."""
    cov = np.asarray(s.cov2d, dtype=np.float64)
    conic, radius = conic_and_radius(cov, cutoff_sigma)
    dx = pixel[0] - s.pixel_center[0]
    dy = pixel[1] - s.pixel_center[1]
    if dx * dx + dy * dy > radius * radius:
        return 0.0
    power = -0.5 * (conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy)
    return float(min(alpha_max, s.opacity * np.exp(power)))


def depth_sort(splats) -> np.ndarray:
    """Stable ascending-depth permutation of ``ProjectedSplat`` items or raw depths."""
    if len(splats) and isinstance(splats[0], ProjectedSplat):
        depths = np.array([s.depth for s in splats], dtype=np.float64)
    else:
        depths = np.asarray(splats, dtype=np.float64)
    return np.argsort(depths, kind="stable")
