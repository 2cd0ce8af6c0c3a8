"""Scene manifests, cloud checkpoints, depth maps and image files.

File formats (all little-endian):

* ``manifest.json`` - see README for the schema.
* ``*.ssgc`` cloud checkpoint - ``b"SSGC"``, u32 version, u32 sh_degree,
  u32 point count, 3 x f64 background, then f64 arrays positions (N, 3),
  log-scales (N, 3), rotations (N, 4), opacity logits (N,), SH (N, K, 3),
  then u32 metadata length and a UTF-8 JSON metadata blob.
* ``*.f32d`` depth map - 16-byte header ``b"F32D"``, u32 version, u32 width,
  u32 height, then H x W raw f32; invalid pixels are NaN.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .rasterizer import DepthBuffer
from .scene import Camera, GaussianCloud, check_rotation
from .sh import num_coeffs

MANIFEST_VERSION = 1
CHECKPOINT_MAGIC = b"SSGC"
CHECKPOINT_VERSION = 1
DEPTH_MAGIC = b"F32D"
DEPTH_VERSION = 1


class SceneError(ValueError):
    """Raised with every validation problem found in a manifest."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# --- images and depth ------------------------------------------------------

def save_image(path, image):
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_depth(path, depth: DepthBuffer | np.ndarray, mask=None):
    if isinstance(depth, DepthBuffer):
        depth, mask = depth.depth, depth.mask
    depth = np.asarray(depth, dtype=np.float64)
    out = depth.astype("<f4")
    if mask is not None:
        out = np.where(mask, out, np.float32(np.nan)).astype("<f4")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<III", DEPTH_VERSION, w, h) + out.tobytes())


def load_depth(path) -> DepthBuffer:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != DEPTH_MAGIC:
        raise ValueError(f"{path}: not a depth file")
    version, w, h = struct.unpack("<III", data[4:16])
    if version != DEPTH_VERSION:
        raise ValueError(f"{path}: unsupported depth version {version}")
    if len(data) != 16 + 4 * w * h:
        raise ValueError(f"{path}: depth file is truncated")
    depth = np.frombuffer(data, "<f4", offset=16).reshape(h, w).copy()
    mask = np.isfinite(depth)
    return DepthBuffer(depth, mask)


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(cloud: GaussianCloud, path, metadata=None):
    n = len(cloud)
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<III", CHECKPOINT_VERSION, cloud.sh_degree, n),
        cloud.background.astype("<f8").tobytes(),
    ]
    for name in ("positions", "log_scales", "rotations", "opacity_logits", "sh"):
        parts.append(np.ascontiguousarray(getattr(cloud, name), dtype="<f8").tobytes())
    parts.append(struct.pack("<I", len(meta)) + meta)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path, with_metadata=False):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an SSGC checkpoint")
    version, degree, n = struct.unpack("<III", data[4:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if degree > 3:
        raise ValueError(f"{path}: invalid SH degree {degree}")
    k = num_coeffs(degree)
    widths = {"positions": 3, "log_scales": 3, "rotations": 4, "opacity_logits": 1, "sh": 3 * k}
    body = 24 + 8 * n * sum(widths.values())
    if len(data) < 16 + body + 4:
        raise ValueError(f"{path}: checkpoint is truncated")
    offset = 16
    background = np.frombuffer(data, "<f8", 3, offset).copy()
    offset += 24
    arrays = {}
    for name, width in widths.items():
        arrays[name] = np.frombuffer(data, "<f8", n * width, offset).astype(np.float64)
        offset += 8 * n * width
    (meta_len,) = struct.unpack("<I", data[offset:offset + 4])
    offset += 4
    if len(data) != offset + meta_len:
        raise ValueError(f"{path}: checkpoint is truncated")
    metadata = json.loads(data[offset:offset + meta_len].decode("utf-8")) if meta_len else {}
    cloud = GaussianCloud(
        arrays["positions"].reshape(n, 3), arrays["log_scales"].reshape(n, 3),
        arrays["rotations"].reshape(n, 4), arrays["opacity_logits"],
        arrays["sh"].reshape(n, k, 3), degree, background,
    )
    return (cloud, metadata) if with_metadata else cloud


# --- scenes ----------------------------------------------------------------

@dataclass
class Frame:
    image: np.ndarray
    camera: Camera
    split: str = "train"
    depth: DepthBuffer | None = None
    name: str = ""


@dataclass
class Scene:
    frames: list
    real_pool: list = field(default_factory=list)
    root: Path | None = None

    def split(self, tag):
        return [f for f in self.frames if f.split == tag]

    @property
    def views(self):
        return [f.image for f in self.frames]

    @property
    def cameras(self):
        return [f.camera for f in self.frames]

    @property
    def depths(self):
        return [f.depth for f in self.frames]


def load_scene(manifest_path) -> Scene:
    """Load a scene manifest with all images and depth maps.

    Every problem (missing files, bad poses, bad version) is collected and
    raised together as a :class:`SceneError`.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        spec = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise SceneError([f"manifest not found: {manifest_path}"]) from None
    except json.JSONDecodeError as exc:
        raise SceneError([f"manifest is not valid JSON: {exc}"]) from None
    root = manifest_path.parent
    errors = []
    if spec.get("version") != MANIFEST_VERSION:
        errors.append(f"unsupported manifest version {spec.get('version')!r}")
    intr = spec.get("intrinsics", {})
    missing = [k for k in ("fx", "fy", "cx", "cy", "width", "height") if k not in intr]
    if missing:
        errors.append(f"intrinsics missing {missing}")
        raise SceneError(errors)

    frames = []
    for i, fr in enumerate(spec.get("frames", [])):
        c2w = np.asarray(fr.get("c2w", []), dtype=np.float64)
        camera = image = depth = None
        if c2w.size != 16:
            errors.append(f"frame {i}: c2w must have 16 entries")
        else:
            c2w = c2w.reshape(4, 4)
            try:
                check_rotation(c2w[:3, :3])
                camera = Camera.from_c2w(c2w, intr["fx"], intr["fy"], intr["cx"], intr["cy"],
                                         intr["width"], intr["height"])
            except ValueError as exc:
                errors.append(f"frame {i}: pose error: {exc}")
        img_path = root / fr.get("image", "")
        if not img_path.is_file():
            errors.append(f"frame {i}: missing image {img_path}")
        else:
            image = load_image(img_path)
            if image.shape[:2] != (intr["height"], intr["width"]):
                errors.append(f"frame {i}: image size {image.shape[:2]} does not match intrinsics")
        if fr.get("depth"):
            d_path = root / fr["depth"]
            if not d_path.is_file():
                errors.append(f"frame {i}: missing depth {d_path}")
            else:
                try:
                    depth = load_depth(d_path)
                except ValueError as exc:
                    errors.append(f"frame {i}: {exc}")
        split = fr.get("split", "train")
        if split not in ("train", "test"):
            errors.append(f"frame {i}: split must be train or test, got {split!r}")
        frames.append(Frame(image, camera, split, depth, fr.get("image", "")))

    pool = []
    for p in spec.get("real_pool", []):
        path = root / p
        if not path.is_file():
            errors.append(f"missing real-pool image {path}")
        else:
            pool.append(load_image(path))
    if errors:
        raise SceneError(errors)
    return Scene(frames, pool, root)


def intrinsics_dict(camera: Camera):
    return {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
            "width": camera.width, "height": camera.height}


def write_manifest(out_dir, cameras, splits, image_names, depth_names=None, pool_names=()):
    out_dir = Path(out_dir)
    frames = []
    for i, cam in enumerate(cameras):
        entry = {"image": image_names[i]}
        if depth_names is not None and depth_names[i]:
            entry["depth"] = depth_names[i]
        entry["c2w"] = [float(v) for v in cam.c2w().reshape(-1)]
        entry["split"] = splits[i]
        frames.append(entry)
    manifest = {
        "version": MANIFEST_VERSION,
        "intrinsics": intrinsics_dict(cameras[0]),
        "frames": frames,
        "real_pool": list(pool_names),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def save_scene(scene: Scene, out_dir):
    """Write a loaded scene back to disk under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    image_names, depth_names = [], []
    for i, fr in enumerate(scene.frames):
        name = f"images/{i:04d}.png"
        save_image(out_dir / name, fr.image)
        image_names.append(name)
        if fr.depth is not None:
            (out_dir / "depth").mkdir(exist_ok=True)
            dname = f"depth/{i:04d}.f32d"
            save_depth(out_dir / dname, fr.depth)
            depth_names.append(dname)
        else:
            depth_names.append(None)
    pool_names = []
    if scene.real_pool:
        (out_dir / "real").mkdir(exist_ok=True)
        for i, img in enumerate(scene.real_pool):
            name = f"real/{i:04d}.png"
            save_image(out_dir / name, img)
            pool_names.append(name)
    return write_manifest(out_dir, scene.cameras, [f.split for f in scene.frames],
                          image_names, depth_names, pool_names)


def load_image_folder(folder):
    folder = Path(folder)
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() == ".png")
    return [load_image(p) for p in paths], [p.name for p in paths]
