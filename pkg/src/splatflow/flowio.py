"""On-disk formats: Middlebury ``.flo`` files, masks, images, scene records, and flow coloring.

A ``.flo`` file is a 12-byte header followed by row-major interleaved (u, v)
float32 values, all little-endian::

    bytes 0-3   magic, the float32 202021.25 ("PIEH")
    bytes 4-7   width  (int32)
    bytes 8-11  height (int32)
    bytes 12-   u[0,0] v[0,0] u[0,1] v[0,1] ...
"""

from __future__ import annotations

import colorsys
import io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraRig
from .errors import (
    BadMagic,
    ConfigInvalid,
    DimensionOverflow,
    FloFormatError,
    SinkError,
    TruncatedFile,
)
from .splat import GaussianCloud

FLO_MAGIC = b"PIEH"
FLO_HEADER = struct.Struct("<4sii")
MAX_FLO_PIXELS = 2**30
SCENE_SCHEMA = "splatflow-scene-v1"


def write_flo(flow, sink) -> int:
    """Write an ``(H, W, 2)`` flow field; ``sink`` is a path or a binary file object.

    Returns the number of bytes written.
    """
    data = np.asarray(flow)
    if data.ndim != 3 or data.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {data.shape}")
    height, width = data.shape[:2]
    payload = FLO_HEADER.pack(FLO_MAGIC, width, height) + data.astype("<f4").tobytes(order="C")
    try:
        if hasattr(sink, "write"):
            sink.write(payload)
        else:
            with open(sink, "wb") as fh:
                fh.write(payload)
    except OSError as exc:
        raise SinkError(str(exc)) from exc
    return len(payload)


def read_flo(source) -> np.ndarray:
    """Parse a ``.flo`` file (path, bytes, or binary file object) into ``(H, W, 2)`` float32."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        raw = bytes(source)
    elif hasattr(source, "read"):
        raw = source.read()
    else:
        with open(source, "rb") as fh:
            raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFile(f"file has {len(raw)} bytes, shorter than the magic")
    if raw[:4] != FLO_MAGIC:
        raise BadMagic(f"bad magic {raw[:4]!r}")
    if len(raw) < FLO_HEADER.size:
        raise TruncatedFile("file ends inside the header")
    _, width, height = FLO_HEADER.unpack_from(raw)
    if width <= 0 or height <= 0:
        raise FloFormatError(f"invalid dimensions {width}x{height}")
    if width * height > MAX_FLO_PIXELS:
        raise DimensionOverflow(f"{width}x{height} exceeds {MAX_FLO_PIXELS} pixels")
    expected = FLO_HEADER.size + 8 * width * height
    if len(raw) < expected:
        raise TruncatedFile(f"expected {expected} bytes, got {len(raw)}")
    if len(raw) > expected:
        raise FloFormatError(f"{len(raw) - expected} trailing bytes after flow data")
    data = np.frombuffer(raw, dtype="<f4", offset=FLO_HEADER.size, count=2 * width * height)
    return data.reshape(height, width, 2).astype(np.float32)


def write_mask(mask, path) -> None:
    """Single-channel PNG, 0 = invalid, 255 = valid."""
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 127


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(image, path) -> None:
    """Save an ``(H, W, 3)`` image with values in [0, 1] as 8-bit PNG."""
    Image.fromarray(to_uint8(image), mode="RGB").save(path)


def write_gray(image, path) -> None:
    """Save an ``(H, W)`` array with values in [0, 1] as 8-bit grayscale PNG."""
    Image.fromarray(to_uint8(image), mode="L").save(path)


def read_image(path) -> np.ndarray:
    """Load an image as float64 RGB in [0, 1]."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


# Flow coloring ------------------------------------------------------------------------------


def flow_to_color(flow, max_magnitude: float | None = None) -> np.ndarray:
    """Color-wheel visualization of a flow field as float RGB in [0, 1].

    Hue follows the flow direction (0 deg = +u, 90 deg = +v), saturation is the
    magnitude divided by ``max_magnitude`` and value is 1, so zero flow is white.
    Magnitudes beyond ``max_magnitude`` saturate fully and are dimmed to 0.75.
    Without ``max_magnitude`` the 99th percentile of the field's magnitudes is used.
    """
    f = np.asarray(flow, dtype=np.float64)
    u, v = f[..., 0], f[..., 1]
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(np.percentile(mag, 99)) if mag.size else 0.0
    if max_magnitude <= 0:
        sat = np.zeros_like(mag)
    else:
        sat = mag / max_magnitude
    value = np.where(sat > 1.0, 0.75, 1.0)
    sat = np.minimum(sat, 1.0)
    hue = np.mod(np.arctan2(v, u), 2 * np.pi) / (2 * np.pi)
    return _hsv_to_rgb(hue, sat, value)


def _hsv_to_rgb(h, s, v) -> np.ndarray:
    h6 = np.mod(h, 1.0) * 6.0
    sector = np.floor(h6).astype(int) % 6
    frac = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * frac)
    t = v * (1 - s * (1 - frac))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    rgb = np.stack(
        [np.choose(sector, choices_r), np.choose(sector, choices_g), np.choose(sector, choices_b)],
        axis=-1,
    )
    return rgb


def color_to_hue(rgb) -> np.ndarray:
    """Inverse of the hue channel, in degrees; mainly useful for inspecting visualizations."""
    flat = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
    hues = np.array([colorsys.rgb_to_hsv(*px)[0] * 360.0 for px in flat])
    return hues.reshape(np.shape(rgb)[:-1])


# Scene records ------------------------------------------------------------------------------


def scene_to_dict(scene) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "cameras": [scene.camera_t.to_dict(), scene.camera_next.to_dict()],
        "splats": scene.gaussians.records().tolist(),
        "next_centers": np.asarray(scene.next_centers).tolist(),
    }


def scene_from_dict(record: dict):
    from .rasterizer import FramePairScene

    if record.get("schema") != SCENE_SCHEMA:
        raise ConfigInvalid(f"unsupported scene schema {record.get('schema')!r}")
    unknown = set(record) - {"schema", "cameras", "splats", "next_centers"}
    if unknown:
        raise ConfigInvalid(f"unknown scene keys: {sorted(unknown)}")
    cameras = record.get("cameras", [])
    if len(cameras) != 2:
        raise ConfigInvalid("a scene needs exactly two cameras (frame t and t+1)")
    cloud = GaussianCloud.from_records(record.get("splats", []))
    next_centers = record.get("next_centers")
    if next_centers is None:
        next_centers = cloud.centers
    next_centers = np.asarray(next_centers, dtype=np.float64).reshape(-1, 3)
    if len(next_centers) != len(cloud):
        raise ConfigInvalid("next_centers must have one row per splat")
    return FramePairScene(cloud, next_centers, CameraRig.from_dict(cameras[0]),
                          CameraRig.from_dict(cameras[1]))


def dumps_json(payload) -> str:
    """Canonical JSON text used for every structured record we write."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_scene(scene, path) -> None:
    Path(path).write_text(dumps_json(scene_to_dict(scene)), encoding="utf-8")


def read_scene(path):
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    return scene_from_dict(record)


def npy_bytes(array) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(array), allow_pickle=False)
    return buf.getvalue()
