"""Video containers, frame I/O, coordinate mapping, and pixel-batch sampling.

Frames live on disk as 8-bit RGB images (lexicographic name order defines
time) or in the raw NVPV container. In memory a video is a T x H x W x 3
float array in [0, 1]; byte b maps to b / 255 on load and v maps to
round-half-up(v * 255) on save, so load(save(x)) is the identity on
byte-quantized data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import precision
from .rng import Rng

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"}

NVPV_MAGIC = b"NVPV"
NVPV_VERSION = 1


@dataclass(frozen=True)
class VideoTensor:
    """Dense T x H x W x 3 RGB video with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 4 or d.shape[3] != 3 or min(d.shape[:3]) < 1:
            raise ValueError(f"video data must be (T, H, W, 3), got {d.shape}")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("video values must lie in [0, 1]")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def H(self) -> int:
        return self.data.shape[1]

    @property
    def W(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def num_pixels(self) -> int:
        return self.T * self.H * self.W


@dataclass
class PixelBatch:
    """Sampled training pixels: coords columns are (x, y, t)."""

    coords: np.ndarray  # (n, 3)
    targets: np.ndarray  # (n, 3) RGB in [0, 1]

    def __len__(self) -> int:
        return self.coords.shape[0]


def to_bytes(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8, rounding halves up."""
    return np.clip(np.floor(np.asarray(values) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def from_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(precision.dtype()) / precision.asarray(255.0)


def list_frame_files(dir_path) -> list[Path]:
    d = Path(dir_path)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no image frames found in {d}")
    return files


def load_frames(dir_path) -> VideoTensor:
    """Read a directory of 8-bit RGB frames; name order defines t."""
    frames = []
    shape = None
    for path in list_frame_files(dir_path):
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except OSError as e:
            raise OSError(f"unreadable frame {path}: {e}") from e
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ValueError(
                f"frame {path.name} has shape {arr.shape[:2]}, expected {shape[:2]}"
            )
        frames.append(arr)
    return VideoTensor(from_bytes(np.stack(frames)))


def save_frames(v: VideoTensor, dir_path, prefix: str = "f") -> list[Path]:
    """Write one PNG per frame as <prefix>00000.png, <prefix>00001.png, ..."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    raw = to_bytes(v.data)
    paths = []
    for t in range(v.T):
        path = d / f"{prefix}{t:05d}.png"
        Image.fromarray(raw[t], mode="RGB").save(path)
        paths.append(path)
    return paths


def save_nvpv(v: VideoTensor, path) -> None:
    """Raw container: magic, version u8, T/H/W u32 LE, then RGB bytes."""
    raw = to_bytes(v.data)
    with open(path, "wb") as f:
        f.write(NVPV_MAGIC)
        f.write(struct.pack("<B", NVPV_VERSION))
        f.write(struct.pack("<III", v.T, v.H, v.W))
        f.write(raw.tobytes())


def load_nvpv(path) -> VideoTensor:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != NVPV_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {NVPV_MAGIC!r}")
    version = blob[4]
    if version != NVPV_VERSION:
        raise ValueError(f"{path}: unsupported NVPV version {version}")
    t, h, w = struct.unpack_from("<III", blob, 5)
    need = 17 + t * h * w * 3
    if len(blob) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(blob)}")
    raw = np.frombuffer(blob, dtype=np.uint8, offset=17).reshape(t, h, w, 3)
    return VideoTensor(from_bytes(raw))


def load_video(path) -> VideoTensor:
    """Load either a frame directory or an .nvpv file."""
    p = Path(path)
    if p.is_dir():
        return load_frames(p)
    return load_nvpv(p)


def pixel_to_coord(i_t: int, i_y: int, i_x: int, T: int, H: int, W: int):
    """Center-of-cell mapping of integer pixel indices to (x, y, t) in (0, 1)."""
    if not (0 <= i_t < T and 0 <= i_y < H and 0 <= i_x < W):
        raise IndexError(f"pixel index ({i_t}, {i_y}, {i_x}) out of range for {(T, H, W)}")
    return ((i_x + 0.5) / W, (i_y + 0.5) / H, (i_t + 0.5) / T)


def coord_lattice(T: int, H: int, W: int, t_range=(0.0, 1.0)) -> np.ndarray:
    """All center-of-cell coordinates of a T x H x W lattice, as (T*H*W, 3) x,y,t rows.

    t_range remaps the temporal axis onto a subinterval of [0, 1], which is
    how decoding renders an arbitrary time window at an arbitrary frame rate.
    """
    dt = precision.dtype()
    xs = (np.arange(W, dtype=dt) + dt.type(0.5)) / dt.type(W)
    ys = (np.arange(H, dtype=dt) + dt.type(0.5)) / dt.type(H)
    t0, t1 = t_range
    ts = dt.type(t0) + dt.type(t1 - t0) * (np.arange(T, dtype=dt) + dt.type(0.5)) / dt.type(T)
    tt, yy, xx = np.meshgrid(ts, ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), tt.ravel()], axis=1)


def sample_batch(v: VideoTensor, n: int, rng: Rng, mask: np.ndarray | None = None) -> PixelBatch:
    """Draw n pixels uniformly with replacement; masked pixels are never drawn.

    mask, when given, is a (T, H, W) boolean array where True marks pixels
    excluded from training.
    """
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    T, H, W = v.dims
    if mask is not None:
        if mask.shape != (T, H, W):
            raise ValueError(f"mask shape {mask.shape} does not match video {(T, H, W)}")
        allowed = np.flatnonzero(~mask.reshape(-1))
        if allowed.size == 0:
            raise ValueError("mask excludes every pixel; nothing to sample")
        flat = allowed[rng.integers(0, allowed.size, size=n)]
    else:
        flat = rng.integers(0, T * H * W, size=n)
    i_t, rem = np.divmod(flat, H * W)
    i_y, i_x = np.divmod(rem, W)
    dt = precision.dtype()
    coords = np.empty((n, 3), dtype=dt)
    coords[:, 0] = (i_x + 0.5) / W
    coords[:, 1] = (i_y + 0.5) / H
    coords[:, 2] = (i_t + 0.5) / T
    targets = v.data.reshape(-1, 3)[flat].astype(dt, copy=False)
    return PixelBatch(coords, targets)
