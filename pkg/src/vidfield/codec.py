"""Re-training-free compression of trained models.

Latent grids are quantized to 8 bits per channel (affine min/max per
channel) and then either passed through a lossless byte compressor or
handed to an external encoder: keyframe planes go down the still-image
path, the sparse grid down the video path, one grayscale stream per latent
channel so chroma subsampling can never corrupt a channel. Field weights
ride along uncompressed; nothing is ever fine-tuned after compression.

The NVPC container is self-describing: header, config, per-grid quantizer
state and payloads, then the raw field weights.
"""

from __future__ import annotations

import io
import json
import shutil
import struct
import subprocess
import tempfile
import warnings
import zlib
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image

from . import precision
from .model import ModelConfig, NvpModel, build_model
from .serialization import FormatError, Reader, _config_blob, _read_header

NVPC_MAGIC = b"NVPC"
NVPC_VERSION = 1

CODEC_LOSSLESS = 0
CODEC_IMAGE = 1
CODEC_VIDEO = 2

FFMPEG = "ffmpeg"


class ExternalToolError(RuntimeError):
    """The external encoder is missing or exited nonzero."""


@dataclass
class CodecBackend:
    """Per-grid codec selection and quality knobs.

    Image quality is ffmpeg's -qscale:v (higher = smaller/worse); video
    quality is -crf at frame rate fr with B-frames disabled.
    """

    kind: str = "lossless"  # "lossless" | "external"
    scale_xy: int = 2
    scale_xt: int = 3
    scale_yt: int = 3
    fr: int = 25
    crf: int = 21
    vcodec: str = "libx265"
    fallback_lossless: bool = False

    def validate(self) -> None:
        if self.kind not in ("lossless", "external"):
            raise ValueError(f"backend kind must be lossless or external, got {self.kind!r}")

    def image_scale(self, grid_name: str) -> int:
        if grid_name.startswith("kf_xy"):
            return self.scale_xy
        if grid_name.startswith("kf_xt"):
            return self.scale_xt
        return self.scale_yt


# Quality presets matching the small/large model configurations.
BACKEND_PRESETS = {
    "S": CodecBackend("external", scale_xy=2, scale_xt=3, scale_yt=3, fr=25, crf=21),
    "L": CodecBackend("external", scale_xy=2, scale_xt=2, scale_yt=2, fr=40, crf=21),
}


@dataclass
class QuantizedGrid:
    """8-bit codes with the per-channel affine dequantizer."""

    shape: tuple[int, ...]  # original array shape, channels last
    scales: np.ndarray  # (C,) float32
    offsets: np.ndarray  # (C,) float32
    payload: np.ndarray  # uint8, original shape


def quantize_grid(values: np.ndarray) -> QuantizedGrid:
    """Per-channel min/max quantization to bytes; channels are the last axis."""
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("grid contains non-finite values; cannot quantize")
    flat = values.reshape(-1, values.shape[-1]).astype(np.float64)
    lo = flat.min(axis=0)
    hi = flat.max(axis=0)
    scales = ((hi - lo) / 255.0).astype(np.float32)
    degenerate = scales == 0
    scales[degenerate] = 1.0
    offsets = lo.astype(np.float32)
    steps = (flat - offsets.astype(np.float64)) / scales.astype(np.float64)
    steps[:, degenerate] = 0.0
    payload = np.clip(np.floor(steps + 0.5), 0, 255).astype(np.uint8)
    return QuantizedGrid(values.shape, scales, offsets, payload.reshape(values.shape))


def dequantize_grid(q: QuantizedGrid) -> np.ndarray:
    """Bytes back to reals: offset + byte * scale, in float32 like the header."""
    out = q.offsets + q.payload.astype(np.float32) * q.scales
    return out.astype(precision.dtype(), copy=False)


@dataclass
class GridPayload:
    name: str
    codec: int
    shape: tuple[int, ...]
    scales: np.ndarray
    offsets: np.ndarray
    parts: list[bytes]


@dataclass
class CompressedModel:
    config: ModelConfig
    grids: list[GridPayload] = dc_field(default_factory=list)
    field_arrays: list[tuple[str, np.ndarray]] = dc_field(default_factory=list)


def have_external_tool() -> bool:
    return shutil.which(FFMPEG) is not None


def _run_tool(args: list[str]) -> None:
    try:
        proc = subprocess.run(args, capture_output=True, text=True)
    except FileNotFoundError as e:
        raise ExternalToolError(f"{args[0]} not found on PATH") from e
    if proc.returncode != 0:
        raise ExternalToolError(
            f"{' '.join(args)} exited {proc.returncode}:\n{proc.stderr.strip()}"
        )


def _encode_image_channel(plane: np.ndarray, qscale: int) -> bytes:
    """One grayscale plane through the still-image encoder."""
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "in.png"
        dst = Path(tmp) / "out.jpg"
        Image.fromarray(plane, mode="L").save(src)
        _run_tool([FFMPEG, "-hide_banner", "-y", "-i", str(src), "-qscale:v", str(qscale), str(dst)])
        return dst.read_bytes()


def _decode_image_channel(blob: bytes, shape: tuple[int, int]) -> np.ndarray:
    with Image.open(io.BytesIO(blob)) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    if arr.shape != shape:
        raise FormatError(f"decoded image is {arr.shape}, expected {shape}")
    return arr


def _encode_video_channel(frames: np.ndarray, fr: int, crf: int, vcodec: str) -> bytes:
    """(S, H, W) grayscale frames through the video encoder, B-frames off."""
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(frames.shape[0]):
            Image.fromarray(frames[k], mode="L").save(Path(tmp) / f"f{k:05d}.png")
        dst = Path(tmp) / "out.mp4"
        args = [FFMPEG, "-hide_banner", "-y", "-framerate", str(fr),
                "-i", str(Path(tmp) / "f%05d.png"), "-c:v", vcodec]
        if vcodec == "libx265":
            args += ["-x265-params", "bframes=0"]
        else:
            args += ["-bf", "0"]
        args += ["-crf", str(crf), "-pix_fmt", "gray", str(dst)]
        _run_tool(args)
        return dst.read_bytes()


def _decode_video_channel(blob: bytes, shape: tuple[int, int, int]) -> np.ndarray:
    s, h, w = shape
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "in.mp4"
        src.write_bytes(blob)
        proc = subprocess.run(
            [FFMPEG, "-hide_banner", "-i", str(src), "-f", "rawvideo", "-pix_fmt", "gray", "-"],
            capture_output=True,
        )
        if proc.returncode != 0:
            raise ExternalToolError(f"video decode failed:\n{proc.stderr.decode(errors='replace')}")
        raw = np.frombuffer(proc.stdout, dtype=np.uint8)
    if raw.size != s * h * w:
        raise FormatError(f"decoded video has {raw.size} samples, expected {s * h * w}")
    return raw.reshape(s, h, w)


def _grid_blocks(model: NvpModel):
    """Latent-grid parameter blocks in canonical order, tagged with their path."""
    out = []
    for pair in ("xy", "xt", "yt"):
        if pair in model.keyframes:
            for block in model.keyframes[pair].parameters():
                out.append((block, CODEC_IMAGE))
    if model.sparse is not None:
        out.append((model.sparse.codes, CODEC_VIDEO))
    return out


def compress(model: NvpModel, backend: CodecBackend) -> CompressedModel:
    """Quantize every latent grid and run each through its codec path."""
    backend.validate()
    if not isinstance(model, NvpModel):
        raise TypeError("compression applies to grid models only")
    kind = backend.kind
    if kind == "external" and not have_external_tool():
        if not backend.fallback_lossless:
            raise ExternalToolError(
                f"{FFMPEG} not found on PATH; rerun with the lossless backend "
                "or enable the fallback flag"
            )
        warnings.warn("external encoder missing; falling back to lossless payloads")
        kind = "lossless"

    grid_names = {block.name for block, _ in _grid_blocks(model)}
    cm = CompressedModel(config=model.config)
    for block, path_codec in _grid_blocks(model):
        q = quantize_grid(block.value)
        if kind == "lossless":
            parts = [zlib.compress(q.payload.tobytes(), level=9)]
            codec = CODEC_LOSSLESS
        elif path_codec == CODEC_IMAGE:
            h, w, c = q.shape
            parts = [
                _encode_image_channel(q.payload[:, :, ci], backend.image_scale(block.name))
                for ci in range(c)
            ]
            codec = CODEC_IMAGE
        else:
            gh, gw, gs, d = q.shape
            parts = [
                _encode_video_channel(
                    q.payload[:, :, :, ci].transpose(2, 0, 1), backend.fr, backend.crf,
                    backend.vcodec,
                )
                for ci in range(d)
            ]
            codec = CODEC_VIDEO
        cm.grids.append(GridPayload(block.name, codec, q.shape, q.scales, q.offsets, parts))
    cm.field_arrays = [
        (name, np.ascontiguousarray(arr, dtype=np.float32))
        for name, arr in model.arrays()
        if name not in grid_names
    ]
    return cm


def decompress(cm: CompressedModel) -> NvpModel:
    """Rebuild the model: dequantized grids, field weights copied verbatim."""
    model = build_model(cm.config)
    by_name = {name: arr for name, arr in model.arrays()}
    for g in cm.grids:
        if g.name not in by_name:
            raise FormatError(f"payload {g.name!r} not part of the configured model")
        if g.codec == CODEC_LOSSLESS:
            raw = np.frombuffer(zlib.decompress(g.parts[0]), dtype=np.uint8)
            if raw.size != int(np.prod(g.shape)):
                raise FormatError(f"{g.name}: payload has {raw.size} codes, expected shape {g.shape}")
            payload = raw.reshape(g.shape)
        elif g.codec == CODEC_IMAGE:
            h, w, c = g.shape
            payload = np.stack(
                [_decode_image_channel(p, (h, w)) for p in g.parts], axis=-1
            )
        elif g.codec == CODEC_VIDEO:
            gh, gw, gs, d = g.shape
            payload = np.stack(
                [_decode_video_channel(p, (gs, gh, gw)).transpose(1, 2, 0) for p in g.parts],
                axis=-1,
            )
        else:
            raise FormatError(f"{g.name}: unknown codec id {g.codec}")
        by_name[g.name][...] = dequantize_grid(
            QuantizedGrid(g.shape, g.scales, g.offsets, payload)
        )
    for name, arr in cm.field_arrays:
        if name not in by_name:
            raise FormatError(f"field array {name!r} not part of the configured model")
        by_name[name][...] = arr.astype(precision.dtype(), copy=False)
    return model


def serialize_compressed(cm: CompressedModel) -> bytes:
    cfg = _config_blob(cm.config)
    out = [NVPC_MAGIC, struct.pack("<BI", NVPC_VERSION, len(cfg)), cfg]
    out.append(struct.pack("<H", len(cm.grids)))
    for g in cm.grids:
        name = g.name.encode()
        out.append(struct.pack("<H", len(name)))
        out.append(name)
        out.append(struct.pack("<BB", g.codec, len(g.shape)))
        out.append(struct.pack(f"<{len(g.shape)}I", *g.shape))
        c = g.shape[-1]
        out.append(struct.pack("<H", c))
        out.append(np.asarray(g.scales, dtype="<f4").tobytes())
        out.append(np.asarray(g.offsets, dtype="<f4").tobytes())
        out.append(struct.pack("<H", len(g.parts)))
        for part in g.parts:
            out.append(struct.pack("<I", len(part)))
            out.append(part)
    out.append(struct.pack("<H", len(cm.field_arrays)))
    for name, arr in cm.field_arrays:
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.size))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def parse_compressed(blob: bytes, label: str = "NVPC") -> CompressedModel:
    r = Reader(blob, label)
    config = _read_header(r, NVPC_MAGIC, NVPC_VERSION)
    cm = CompressedModel(config=config)
    n_grids = r.unpack("H")
    for _ in range(n_grids):
        name = r.take(r.unpack("H")).decode()
        codec, ndim = r.unpack("BB")
        shape = tuple(r.unpack(f"{ndim}I")) if ndim > 1 else (r.unpack("I"),)
        c = r.unpack("H")
        scales = np.frombuffer(r.take(4 * c), dtype="<f4").copy()
        offsets = np.frombuffer(r.take(4 * c), dtype="<f4").copy()
        parts = [bytes(r.take(r.unpack("I"))) for _ in range(r.unpack("H"))]
        cm.grids.append(GridPayload(name, codec, shape, scales, offsets, parts))
    n_field = r.unpack("H")
    for _ in range(n_field):
        name = r.take(r.unpack("H")).decode()
        count = r.unpack("I")
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").copy()
        cm.field_arrays.append((name, arr))
    r.expect_end()
    # Field array shapes come from the config, not the wire.
    model_shapes = {name: a.shape for name, a in build_model(config).arrays()}
    cm.field_arrays = [
        (name, arr.reshape(model_shapes[name])) for name, arr in cm.field_arrays
    ]
    return cm


def save_compressed(cm: CompressedModel, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_compressed(cm))


def load_compressed(path) -> CompressedModel:
    with open(path, "rb") as f:
        return parse_compressed(f.read(), label=str(path))


def bpp_from_bits(bits: int, dims: tuple[int, int, int]) -> float:
    """Bits per pixel of a payload of the given size for a T x H x W video."""
    t, h, w = dims
    if min(dims) < 1:
        raise ValueError(f"bad video dims {dims}")
    return bits / float(t * h * w)


def bpp(cm: CompressedModel, dims: tuple[int, int, int] | None = None) -> float:
    """Bits per pixel of the full serialized container (header included)."""
    if dims is None:
        dims = cm.config.video_dims
    return bpp_from_bits(8 * len(serialize_compressed(cm)), dims)
