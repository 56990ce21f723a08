"""Tile-based, depth-ordered alpha compositing of color and optical flow.

Footprints, depths and blending weights all come from frame-t geometry under
the frame-t camera. Each splat additionally carries the pixel displacement of
its center between the two frames, and that displacement is composited with
exactly the weights used for color. As a result the flow field is linear in
the displacement payloads and co-registered with the frame-t color image.

Tiles are independent: every tile walks its own depth-sorted splat list, so
splitting tiles across threads cannot change a single output bit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numba
import numpy as np

from .camera import CameraRig, project_points
from .errors import Clipped
from .splat import (
    ALPHA_MAX,
    COV_FLOOR,
    CUTOFF_SIGMA,
    GaussianCloud,
    ProjectedSplat,
    ProjectedSplats,
    project_gaussians,
    splat_weight,
)

MIN_TRANSMITTANCE = 1e-4


@dataclass(frozen=True)
class RasterConfig:
    tile_size: int = 16
    mask_threshold: float = 0.5
    # Compositing stops once transmittance drops below this; 0 disables early exit.
    min_transmittance: float = MIN_TRANSMITTANCE
    cov_floor: float = COV_FLOOR
    alpha_max: float = ALPHA_MAX
    cutoff_sigma: float = CUTOFF_SIGMA
    threads: int | None = None

    def strict(self) -> "RasterConfig":
        return replace(self, min_transmittance=0.0)


@dataclass
class FramePairScene:
    """Splats at frame t (``gaussians``) plus their centers at t+1, matched by index."""

    gaussians: GaussianCloud
    next_centers: np.ndarray
    camera_t: CameraRig
    camera_next: CameraRig

    def __post_init__(self):
        self.next_centers = np.asarray(self.next_centers, dtype=np.float64).reshape(-1, 3)
        if len(self.next_centers) != len(self.gaussians):
            raise ValueError("next_centers must match the number of splats")


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    flow: np.ndarray  # (H, W, 2) pixels, (du, dv)
    alpha: np.ndarray  # (H, W)
    mask: np.ndarray  # (H, W) bool


def composite_color(sorted_splats: Sequence[ProjectedSplat], pixel,
                    alpha_max: float = ALPHA_MAX,
                    min_transmittance: float = MIN_TRANSMITTANCE) -> np.ndarray:
    """Front-to-back blend of the RGB payloads of depth-sorted splats at one pixel."""
    return _composite_payload(sorted_splats, pixel, 3, alpha_max, min_transmittance)


def composite_flow(sorted_splats: Sequence[ProjectedSplat], pixel,
                   alpha_max: float = ALPHA_MAX,
                   min_transmittance: float = MIN_TRANSMITTANCE) -> np.ndarray:
    """Same blend as :func:`composite_color`, carrying (du, dv) payloads."""
    return _composite_payload(sorted_splats, pixel, 2, alpha_max, min_transmittance)


def _composite_payload(splats, pixel, dim, alpha_max, min_transmittance):
    out = np.zeros(dim)
    transmittance = 1.0
    for s in splats:
        if transmittance < min_transmittance:
            break
        a = splat_weight(s, pixel, alpha_max=alpha_max)
        out += np.asarray(s.payload[:dim], dtype=np.float64) * (a * transmittance)
        transmittance *= 1.0 - a
    return out


def splat_displacements(scene: FramePairScene) -> tuple[np.ndarray, np.ndarray]:
    """Pixel displacement of every splat center from frame t to t+1.

    Returns ``(disp, ok)``; ``ok`` is False where either projection is clipped,
    and ``disp`` is zero there.
    """
    n = len(scene.gaussians)
    disp = np.zeros((n, 2))
    if n == 0:
        return disp, np.zeros(0, dtype=bool)
    ok = _in_depth_range(scene.gaussians.centers, scene.camera_t) & _in_depth_range(
        scene.next_centers, scene.camera_next
    )
    if ok.any():
        p0 = project_points(scene.gaussians.centers[ok], scene.camera_t)
        p1 = project_points(scene.next_centers[ok], scene.camera_next)
        disp[ok, 0] = p1.u - p0.u
        disp[ok, 1] = p1.v - p0.v
    return disp, ok


def _in_depth_range(points: np.ndarray, rig: CameraRig) -> np.ndarray:
    rot, trans = rig.extrinsics.rotation, rig.extrinsics.translation
    z = points @ rot[2] + trans[2]
    return (z > rig.intrinsics.z_near) & (z < rig.intrinsics.z_far)


def per_splat_displacement(scene: FramePairScene, index: int) -> tuple[float, float]:
    p0 = project_points(scene.gaussians.centers[index], scene.camera_t)
    p1 = project_points(scene.next_centers[index], scene.camera_next)
    if p0.clipped or p1.clipped:
        raise Clipped(f"splat {index} is outside the depth range of one of the cameras")
    return float(p1.u - p0.u), float(p1.v - p0.v)


@numba.njit(cache=True, nogil=True)
def _bin_splats(order, means, radii, tile_size, tiles_x, tiles_y, width, height):
    """Per-tile splat lists; ``order`` is already depth-sorted so lists stay sorted."""
    n = order.shape[0]
    rects = np.empty((n, 4), dtype=np.int64)
    counts = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    for k in range(n):
        i = order[k]
        u = means[i, 0]
        v = means[i, 1]
        r = radii[i]
        px0 = max(0, int(math.ceil(u - r)))
        px1 = min(width - 1, int(math.floor(u + r)))
        py0 = max(0, int(math.ceil(v - r)))
        py1 = min(height - 1, int(math.floor(v + r)))
        if px0 > px1 or py0 > py1:
            rects[k, 0] = 1
            rects[k, 1] = 0
            rects[k, 2] = 1
            rects[k, 3] = 0
            continue
        rects[k, 0] = px0 // tile_size
        rects[k, 1] = px1 // tile_size
        rects[k, 2] = py0 // tile_size
        rects[k, 3] = py1 // tile_size
        for ty in range(rects[k, 2], rects[k, 3] + 1):
            for tx in range(rects[k, 0], rects[k, 1] + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    ids = np.empty(offsets[-1], dtype=np.int64)
    for k in range(n):
        for ty in range(rects[k, 2], rects[k, 3] + 1):
            for tx in range(rects[k, 0], rects[k, 1] + 1):
                t = ty * tiles_x + tx
                ids[fill[t]] = order[k]
                fill[t] += 1
    return offsets, ids


@numba.njit(cache=True, nogil=True)
def _composite_tiles(t0, t1, offsets, ids, means, conics, radii, opacities, colors, disps,
                     width, height, tile_size, tiles_x, alpha_max, min_transmittance,
                     out_color, out_flow, out_alpha):
    for tile in range(t0, t1):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        start = offsets[tile]
        stop = offsets[tile + 1]
        for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                trans = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                f0 = 0.0
                f1 = 0.0
                for k in range(start, stop):
                    if trans < min_transmittance:
                        break
                    i = ids[k]
                    dx = px - means[i, 0]
                    dy = py - means[i, 1]
                    r = radii[i]
                    if dx * dx + dy * dy > r * r:
                        continue
                    power = -0.5 * (conics[i, 0] * dx * dx + 2.0 * conics[i, 1] * dx * dy
                                    + conics[i, 2] * dy * dy)
                    a = opacities[i] * math.exp(power)
                    if a > alpha_max:
                        a = alpha_max
                    w = a * trans
                    c0 += colors[i, 0] * w
                    c1 += colors[i, 1] * w
                    c2 += colors[i, 2] * w
                    f0 += disps[i, 0] * w
                    f1 += disps[i, 1] * w
                    trans *= 1.0 - a
                out_color[py, px, 0] = c0
                out_color[py, px, 1] = c1
                out_color[py, px, 2] = c2
                out_flow[py, px, 0] = f0
                out_flow[py, px, 1] = f1
                out_alpha[py, px] = 1.0 - trans


def default_threads() -> int:
    return os.cpu_count() or 1


def render(projected: ProjectedSplats, colors, displacements, width: int, height: int,
           config: RasterConfig = RasterConfig(), include=None) -> RenderOutput:
    """Composite color and displacement payloads of projected splats onto a W x H grid.

    ``include`` restricts the splats taken into account (defaults to those whose
    depth lies inside the frustum).
    """
    colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(-1, 3)
    disps = np.ascontiguousarray(displacements, dtype=np.float64).reshape(-1, 2)
    include = projected.valid if include is None else np.asarray(include, dtype=bool)
    idx = np.flatnonzero(include)
    order = idx[np.argsort(projected.depths[idx], kind="stable")].astype(np.int64)

    ts = int(config.tile_size)
    tiles_x = -(-width // ts)
    tiles_y = -(-height // ts)
    means = np.ascontiguousarray(np.nan_to_num(projected.means), dtype=np.float64)
    radii = np.ascontiguousarray(projected.radii, dtype=np.float64)
    offsets, ids = _bin_splats(order, means, radii, ts, tiles_x, tiles_y, width, height)

    color = np.zeros((height, width, 3))
    flow = np.zeros((height, width, 2))
    alpha = np.zeros((height, width))
    args = (offsets, ids, means, np.ascontiguousarray(projected.conics), radii,
            np.ascontiguousarray(projected.opacities, dtype=np.float64), colors, disps,
            width, height, ts, tiles_x, float(config.alpha_max), float(config.min_transmittance),
            color, flow, alpha)

    n_tiles = tiles_x * tiles_y
    threads = config.threads or default_threads()
    if threads <= 1 or n_tiles < 2:
        _composite_tiles(0, n_tiles, *args)
    else:
        # Contiguous tile-row bands; each band writes a disjoint slice of the outputs.
        bounds = np.linspace(0, tiles_y, min(threads * 4, tiles_y) + 1).astype(int) * tiles_x
        with ThreadPoolExecutor(max_workers=threads) as pool:
            jobs = [pool.submit(_composite_tiles, int(a), int(b), *args)
                    for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
            for job in jobs:
                job.result()

    return RenderOutput(color=color, flow=flow, alpha=alpha, mask=alpha >= config.mask_threshold)


def rasterize_pair(scene: FramePairScene, config: RasterConfig = RasterConfig()) -> RenderOutput:
    """Frame-t color, alpha, background mask and dense t -> t+1 flow of a scene.

    Splats whose center leaves the depth range of either camera are dropped.
    """
    cam = scene.camera_t
    projected = project_gaussians(scene.gaussians, cam, config.cov_floor, config.cutoff_sigma)
    disps, ok = splat_displacements(scene)
    return render(projected, scene.gaussians.colors, disps, cam.width, cam.height, config,
                  include=projected.valid & ok)


def render_frame(cloud: GaussianCloud, rig: CameraRig,
                 config: RasterConfig = RasterConfig()) -> RenderOutput:
    """Color and alpha of a single frame (flow is identically zero)."""
    return rasterize_pair(FramePairScene(cloud, cloud.centers, rig, rig), config)
