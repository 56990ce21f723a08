"""Deterministic synthetic dynamic scenes and flow datasets.

Each sequence renders a deformable ellipsoidal "head" of splats. The first and
last frames use the canonical front-facing camera; every intermediate frame
perturbs both the camera orientation and the subject orientation with bounded
random rotations. Consecutive frame pairs become (image, flow, mask) samples,
and whole sequences are assigned to train / val / test splits.

Randomness comes from PCG64 streams keyed by ``(seed, scene, frame, stream)``,
so any frame can be regenerated on its own and output never depends on
generation order or thread count.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import flowio
from .camera import CameraExtrinsics, CameraIntrinsics, CameraRig
from .errors import ConfigInvalid, OutputUnwritable
from .rasterizer import FramePairScene, RasterConfig, rasterize_pair, render_frame
from .splat import GaussianCloud

log = logging.getLogger(__name__)

RNG_VERSION = "pcg64-seedsequence-v1"
MANIFEST_SCHEMA = "splatflow-manifest-v1"
SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_PAIRS = (6791, 1212, 3158)
DEFAULT_SPLIT_RATIOS = tuple(n / sum(DEFAULT_SPLIT_PAIRS) for n in DEFAULT_SPLIT_PAIRS)

_STREAMS = {"head": 1, "deform": 2, "rotation": 3, "split": 4}


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_sequences: int = 6
    n_frames: int = 21
    n_gaussians: int = 20000
    resolution: tuple[int, int] = (512, 512)
    deformation_amplitude: float = 0.02
    max_rotation: float = 0.05
    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
    # focal length in pixels = focal_scale * max(width, height)
    focal_scale: float = 1.25
    camera_distance: float = 4.0
    z_near: float = 0.1
    z_far: float = 100.0
    head_axes: tuple[float, float, float] = (0.75, 1.0, 0.85)
    mask_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(x) for x in self.resolution))
        object.__setattr__(self, "split_ratios", tuple(float(x) for x in self.split_ratios))
        object.__setattr__(self, "head_axes", tuple(float(x) for x in self.head_axes))
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigInvalid("seed must be an integer in [0, 2**64)")
        if self.n_sequences < 1:
            raise ConfigInvalid("n_sequences must be >= 1")
        if self.n_frames < 2:
            raise ConfigInvalid("n_frames must be >= 2")
        if self.n_gaussians < 1:
            raise ConfigInvalid("n_gaussians must be >= 1")
        if len(self.resolution) != 2 or min(self.resolution) < 2:
            raise ConfigInvalid("resolution must be (width, height), each >= 2")
        if self.deformation_amplitude < 0:
            raise ConfigInvalid("deformation_amplitude must be >= 0")
        if not 0 <= self.max_rotation < math.pi:
            raise ConfigInvalid("max_rotation must lie in [0, pi)")
        if len(self.split_ratios) != 3 or min(self.split_ratios) < 0:
            raise ConfigInvalid("split_ratios must be three non-negative fractions")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigInvalid(f"split_ratios must sum to 1, got {sum(self.split_ratios)!r}")
        if len(self.head_axes) != 3 or min(self.head_axes) <= 0:
            raise ConfigInvalid("head_axes must be three positive semi-axes")
        if self.camera_distance <= max(self.head_axes) + self.z_near:
            raise ConfigInvalid("camera must sit outside the head")
        if self.focal_scale <= 0 or not 0 < self.z_near < self.z_far:
            raise ConfigInvalid("invalid focal_scale or clipping planes")

    @classmethod
    def from_dict(cls, values: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("resolution", "split_ratios", "head_axes"):
            d[key] = list(d[key])
        return d


def rng_for(seed: int, scene: int, frame: int, stream: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, scene, frame, _STREAMS[stream]])))


@dataclass
class HeadProxy:
    cloud: GaussianCloud
    surface: np.ndarray  # (N, 2) latitude, longitude on the unit sphere
    axes: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))


def _ellipsoid_area(a: float, b: float, c: float) -> float:
    p = 1.6075
    return 4 * math.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)


def _wxyz(rot: Rotation) -> np.ndarray:
    return np.roll(rot.as_quat(), 1, axis=-1)


def make_head_proxy(config: SceneConfig, scene: int = 0) -> HeadProxy:
    """Splats scattered over an ellipsoid, flattened along the surface normal."""
    rng = rng_for(config.seed, scene, 0, "head")
    n = config.n_gaussians
    axes = np.array(config.head_axes)

    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = dirs * axes
    lat = np.arcsin(np.clip(dirs[:, 1], -1.0, 1.0))
    lon = np.arctan2(dirs[:, 0], -dirs[:, 2])

    normals = centers / axes**2
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    helper = np.where(np.abs(normals[:, 1:2]) < 0.9, [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
    t1 = np.cross(helper, normals)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    frames = np.stack([t1, t2, normals], axis=2)
    quats = _wxyz(Rotation.from_matrix(frames))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)

    spacing = math.sqrt(_ellipsoid_area(*axes) / n)
    sigma_t = 0.8 * spacing * rng.uniform(0.8, 1.2, size=n)
    scales = np.stack([sigma_t, sigma_t, 0.2 * sigma_t], axis=1)

    phase = rng.uniform(0, 2 * np.pi, size=4)
    base = np.array([0.78, 0.58, 0.47])
    pattern = np.stack(
        [
            np.sin(5 * lat + 3 * lon + phase[0]),
            np.sin(7 * lat - 2 * lon + phase[1]),
            np.sin(4 * lat + 5 * lon + phase[2]),
        ],
        axis=1,
    )
    colors = np.clip(base + 0.2 * pattern, 0.0, 1.0)
    opacities = 0.75 + 0.2 * np.sin(3 * lat + 2 * lon + phase[3])

    cloud = GaussianCloud(centers, scales, quats, opacities, colors)
    return HeadProxy(cloud, np.stack([lat, lon], axis=1), tuple(config.head_axes))


def deform(proxy: HeadProxy, frame: int, config: SceneConfig, scene: int = 0) -> np.ndarray:
    """Splat centers at ``frame`` under a smooth sinusoidal displacement field.

    Each of three terms moves splats along a fixed direction by
    ``(sin(w k + s) - sin(s)) / 2`` with ``s`` a low-frequency function of the
    surface coordinates, so frame 0 is undeformed and ``|disp| <= amplitude``.
    """
    base = proxy.cloud.centers
    amp = config.deformation_amplitude
    if frame == 0 or amp == 0:
        return base.copy()
    rng = rng_for(config.seed, scene, 0, "deform")
    directions = rng.normal(size=(3, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    k_lat = rng.integers(1, 4, size=3)
    k_lon = rng.integers(1, 3, size=3)
    omega = rng.uniform(0.2, 0.6, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=3)

    lat, lon = proxy.surface[:, 0], proxy.surface[:, 1]
    disp = np.zeros_like(base)
    for j in range(3):
        s = k_lat[j] * lat + k_lon[j] * lon + phase[j]
        disp += np.outer((np.sin(omega[j] * frame + s) - np.sin(s)) / 2.0, directions[j])
    return base + (amp / 3.0) * disp


def canonical_rig(config: SceneConfig) -> CameraRig:
    width, height = config.resolution
    focal = config.focal_scale * max(width, height)
    intr = CameraIntrinsics(focal, focal, width, height, config.z_near, config.z_far)
    return CameraRig(intr, CameraExtrinsics(np.eye(3), [0.0, 0.0, config.camera_distance]))


def random_rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    """Axis uniform on the sphere, angle uniform in [0, max_angle]."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Rotation.from_rotvec(axis * angle).as_matrix()


def rotation_angle(rot) -> float:
    return float(Rotation.from_matrix(np.asarray(rot)).magnitude())


def rotation_schedule(config: SceneConfig, scene: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-frame ``(camera_rotation, subject_rotation)`` perturbations; identity at both ends."""
    out = []
    last = config.n_frames - 1
    for k in range(config.n_frames):
        if k in (0, last) or config.max_rotation == 0:
            out.append((np.eye(3), np.eye(3)))
            continue
        rng = rng_for(config.seed, scene, k, "rotation")
        cam = random_rotation(rng, config.max_rotation)
        subj = random_rotation(rng, config.max_rotation)
        out.append((cam, subj))
    return out


def camera_schedule(config: SceneConfig, scene: int = 0) -> list[CameraRig]:
    """Per-frame rigs with camera and subject perturbations folded into the extrinsics.

    The camera rotates about its own center and the subject about the world
    origin (the head center): ``R = P_cam R0 P_subj``, ``T = P_cam T0``.
    """
    canon = canonical_rig(config)
    r0 = canon.extrinsics.rotation
    t0 = canon.extrinsics.translation
    rigs = []
    for k, (cam, subj) in enumerate(rotation_schedule(config, scene)):
        if k in (0, config.n_frames - 1) or config.max_rotation == 0:
            rigs.append(canon)
            continue
        rigs.append(CameraRig(canon.intrinsics, CameraExtrinsics(cam @ r0 @ subj, cam @ t0)))
    return rigs


def assign_splits(pair_counts, ratios) -> list[int]:
    """Assign whole sequences to splits, greedily filling the split with the largest deficit.

    Returns one split index per sequence, in input order.
    """
    counts = [int(c) for c in pair_counts]
    targets = np.asarray(ratios, dtype=np.float64) * sum(counts)
    assigned = np.zeros(len(targets))
    out = []
    for c in counts:
        choice = int(np.argmax(targets - assigned))
        assigned[choice] += c
        out.append(choice)
    return out


def sequence_splits(config: SceneConfig) -> list[str]:
    """Split name per scene index; the visiting order is a seeded shuffle."""
    order = rng_for(config.seed, 0, 0, "split").permutation(config.n_sequences)
    choices = assign_splits([config.n_frames - 1] * config.n_sequences, config.split_ratios)
    splits = [""] * config.n_sequences
    for scene, choice in zip(order, choices):
        splits[int(scene)] = SPLITS[choice]
    return splits


def scene_name(scene: int) -> str:
    return f"scene_{scene:03d}"


def generate_sequence(config: SceneConfig, scene: int, split: str, root: Path,
                      raster: RasterConfig) -> dict:
    out_dir = Path(root) / split / scene_name(scene)
    out_dir.mkdir(parents=True, exist_ok=True)
    proxy = make_head_proxy(config, scene)
    rigs = camera_schedule(config, scene)
    positions = [deform(proxy, k, config, scene) for k in range(config.n_frames)]

    (out_dir / "splats.npy").write_bytes(flowio.npy_bytes(proxy.cloud.records()))
    frames, pairs = [], []
    for k in range(config.n_frames):
        (out_dir / f"positions_{k}.npy").write_bytes(flowio.npy_bytes(positions[k]))
        cloud_k = proxy.cloud.with_centers(positions[k])
        if k + 1 < config.n_frames:
            pair = FramePairScene(cloud_k, positions[k + 1], rigs[k], rigs[k + 1])
            out = rasterize_pair(pair, raster)
            flow_name, mask_name = f"flow_{k}_{k + 1}.flo", f"mask_{k}.png"
            flowio.write_flo(out.flow, out_dir / flow_name)
            flowio.write_mask(out.mask, out_dir / mask_name)
            pairs.append({"frames": [k, k + 1], "flow": flow_name, "mask": mask_name})
        else:
            out = render_frame(cloud_k, rigs[k], raster)
        flowio.write_image(out.color, out_dir / f"frame_{k}.png")
        frames.append({
            "index": k,
            "camera": rigs[k].to_dict(),
            "image": f"frame_{k}.png",
            "positions": f"positions_{k}.npy",
        })

    cameras = {"schema": flowio.SCENE_SCHEMA,
               "frames": [{"index": f["index"], "camera": f["camera"]} for f in frames]}
    (out_dir / "cameras.json").write_text(flowio.dumps_json(cameras), encoding="utf-8")
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "scene": scene_name(scene),
        "split": split,
        "splats": "splats.npy",
        "frames": frames,
        "pairs": pairs,
    }
    (out_dir / "manifest.json").write_text(flowio.dumps_json(manifest), encoding="utf-8")
    return manifest


def generate_dataset(config: SceneConfig, root, threads: int | None = None) -> dict:
    """Render every sequence of ``config`` under ``root``; returns the dataset summary.

    Sequences are written one after another; ``threads`` parallelizes tile
    compositing inside each render and never changes the output bytes.
    """
    config.validate()
    root = Path(root)
    raster = RasterConfig(mask_threshold=config.mask_threshold, threads=threads)
    splits = sequence_splits(config)
    try:
        root.mkdir(parents=True, exist_ok=True)
        scenes = []
        for scene in range(config.n_sequences):
            log.info("rendering %s (%s)", scene_name(scene), splits[scene])
            manifest = generate_sequence(config, scene, splits[scene], root, raster)
            scenes.append({"scene": manifest["scene"], "split": splits[scene],
                           "pairs": len(manifest["pairs"]),
                           "manifest": f"{splits[scene]}/{manifest['scene']}/manifest.json"})
        pair_counts = {name: sum(s["pairs"] for s in scenes if s["split"] == name) for name in SPLITS}
        summary = {
            "schema": MANIFEST_SCHEMA,
            "rng": RNG_VERSION,
            "config": config.to_dict(),
            "scenes": scenes,
            "split_pairs": pair_counts,
            "total_pairs": sum(pair_counts.values()),
        }
        (root / "dataset.json").write_text(flowio.dumps_json(summary), encoding="utf-8")
    except OSError as exc:
        raise OutputUnwritable(f"cannot write dataset under {root}: {exc}") from exc
    return summary


def load_config(path) -> SceneConfig:
    try:
        values = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigInvalid(f"{path}: expected a JSON object")
    return SceneConfig.from_dict(values)
