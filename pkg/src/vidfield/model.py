"""Model assembly: configuration, the grid+field video model, and baselines."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import precision
from .field import Affine, FieldTape, Mlp, MlpTape, ModulatedField, RffEmbedding
from .grids import KeyframeGrid, SparseGrid3D, level_shapes
from .optim import ParamBlock

MODEL_KINDS = ("nvp", "siren", "ffn")

# Latent widths for the small/large presets.
PRESET_CHANNELS = {"S": 2, "L": 4}


@dataclass
class ModelConfig:
    """Every architectural hyperparameter; serialized into model headers."""

    kind: str = "nvp"
    video_dims: tuple[int, int, int] = (1, 1, 1)  # (T, H, W) the model was fit to
    use_keyframes: bool = True
    use_sparse: bool = True
    modulated: bool = True
    levels: int = 16
    gamma: float = 1.35
    kf_base: tuple[int, int] = (16, 16)
    kf_channels: int = 2
    sparse_shape: tuple[int, int, int] = (4, 4, 4)  # grid extents along (x, y, t)
    sparse_channels: int = 2
    window: tuple[int, int, int] = (3, 3, 1)
    upsample: bool = False
    hidden: int = 128
    depth: int = 3
    sigmas: tuple[float, ...] = (30.0, 1.0)
    siren_omega: float = 30.0
    ffn_features: int = 64
    ffn_sigma: float = 10.0

    @property
    def z_dim(self) -> int:
        h, w, s = self.window
        dim = 0
        if self.use_keyframes:
            dim += 3 * self.levels * self.kf_channels
        if self.use_sparse:
            dim += h * w * s * self.sparse_channels
        return dim

    def validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if min(self.video_dims) < 1:
            raise ValueError(f"bad video dims {self.video_dims}")
        if self.depth < 2 or self.hidden < 1:
            raise ValueError("field needs depth >= 2 and positive hidden width")
        if len(self.sigmas) != self.depth - 1:
            raise ValueError(f"need {self.depth - 1} frequencies, got {len(self.sigmas)}")
        if self.kind == "nvp":
            if not (self.use_keyframes or self.use_sparse):
                raise ValueError("grid model needs at least one grid component")
            if self.kf_channels < 1 or self.sparse_channels < 1:
                raise ValueError("latent channel counts must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        # JSON turns tuples into lists.
        cfg.video_dims = tuple(cfg.video_dims)
        cfg.kf_base = tuple(cfg.kf_base)
        cfg.sparse_shape = tuple(cfg.sparse_shape)
        cfg.window = tuple(cfg.window)
        cfg.sigmas = tuple(cfg.sigmas)
        cfg.validate()
        return cfg

    @classmethod
    def for_video(cls, T: int, H: int, W: int, preset: str = "S", **overrides) -> "ModelConfig":
        """Desk-scale defaults derived from the video extents.

        Keyframe levels stop once the finest plane covers the largest video
        axis (capped at 16); the sparse grid takes a quarter of each axis,
        no smaller than 4 cells.
        """
        if preset not in PRESET_CHANNELS:
            raise ValueError(f"preset must be one of {sorted(PRESET_CHANNELS)}")
        c = PRESET_CHANNELS[preset]
        largest = max(T, H, W)
        levels = 1
        while levels < 16 and math.floor(1.35 ** (levels - 1) * 16) < largest:
            levels += 1
        cfg = cls(
            video_dims=(T, H, W),
            levels=levels,
            kf_channels=c,
            sparse_channels=c,
            sparse_shape=(max(4, W // 4), max(4, H // 4), max(4, T // 4)),
        )
        for key, value in overrides.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
        cfg.validate()
        return cfg


def grid_param_count(cfg: ModelConfig) -> int:
    """Total latent-code parameters implied by a config."""
    total = 0
    if cfg.use_keyframes:
        shapes = level_shapes(cfg.kf_base, cfg.gamma, cfg.levels)
        total += 3 * cfg.kf_channels * sum(h * w for h, w in shapes)
    if cfg.use_sparse:
        gh, gw, gs = cfg.sparse_shape
        total += cfg.sparse_channels * gh * gw * gs
    return total


def matched_variant(cfg: ModelConfig, name: str) -> ModelConfig:
    """Ablation variant with the grid parameter budget held roughly constant.

    Removing one grid type rebalances the surviving latent width so the code
    count stays near the full model's; window/upsample/modulation toggles do
    not change the budget.
    """
    target = grid_param_count(cfg)
    v = dataclasses.replace(cfg)
    if name == "full":
        pass
    elif name == "no_keyframes":
        v.use_keyframes = False
        gh, gw, gs = cfg.sparse_shape
        v.sparse_channels = max(1, round(target / (gh * gw * gs)))
    elif name == "no_sparse":
        v.use_sparse = False
        shapes = level_shapes(cfg.kf_base, cfg.gamma, cfg.levels)
        v.kf_channels = max(1, round(target / (3 * sum(h * w for h, w in shapes))))
    elif name == "no_modulation":
        v.modulated = False
    elif name == "no_concat":
        v.window = (1, 1, 1)
    elif name == "upsample":
        v.upsample = True
    else:
        raise ValueError(f"unknown ablation variant {name!r}")
    v.validate()
    return v


@dataclass
class NvpTape:
    coords: np.ndarray
    field_tape: FieldTape | MlpTape


class NvpModel:
    """Latent grids plus the latent-to-RGB head, trained as one unit."""

    def __init__(self, config: ModelConfig):
        config.validate()
        if config.kind != "nvp":
            raise ValueError(f"NvpModel requires kind 'nvp', got {config.kind!r}")
        self.config = config
        self.keyframes: dict[str, KeyframeGrid] = {}
        if config.use_keyframes:
            for pair in ("xy", "xt", "yt"):
                self.keyframes[pair] = KeyframeGrid(
                    pair, config.kf_base, config.gamma, config.levels, config.kf_channels
                )
        self.sparse = (
            SparseGrid3D(
                config.sparse_shape,
                config.sparse_channels,
                config.window,
                config.upsample,
            )
            if config.use_sparse
            else None
        )
        if config.modulated:
            self.field = ModulatedField(config.z_dim, config.hidden, config.depth, config.sigmas)
            assert self.field.z_dim == config.z_dim
        else:
            dims = [config.z_dim + 1] + [config.hidden] * (config.depth - 1) + [3]
            self.field = Mlp("head", dims, [("lrelu",)] * (config.depth - 1) + [("none",)])

    def latent(self, coords: np.ndarray) -> np.ndarray:
        """g(x, y, t): concatenated [z_xy, z_xt, z_yt, z_xyt] for each row."""
        coords = np.atleast_2d(coords)
        x, y, t = coords[:, 0], coords[:, 1], coords[:, 2]
        parts = []
        if self.keyframes:
            parts.append(self.keyframes["xy"].lookup(x, y))
            parts.append(self.keyframes["xt"].lookup(x, t))
            parts.append(self.keyframes["yt"].lookup(y, t))
        if self.sparse is not None:
            parts.append(self.sparse.lookup(coords))
        return np.concatenate(parts, axis=1)

    def forward_batch(self, coords: np.ndarray) -> tuple[np.ndarray, NvpTape]:
        coords = np.atleast_2d(coords)
        z = self.latent(coords)
        if self.config.modulated:
            rgb, tape = self.field.forward(z, coords[:, 2])
        else:
            zt = np.concatenate([z, coords[:, 2:3]], axis=1)
            rgb, tape = self.field.forward(zt)
        return rgb, NvpTape(coords, tape)

    def backward_batch(self, tape: NvpTape, upstream: np.ndarray, grads) -> None:
        if self.config.modulated:
            dz = self.field.backward(tape.field_tape, upstream, grads)
        else:
            dzt = self.field.backward(tape.field_tape, upstream, grads)
            dz = dzt[:, : self.config.z_dim]
        coords = tape.coords
        x, y, t = coords[:, 0], coords[:, 1], coords[:, 2]
        offset = 0
        if self.keyframes:
            width = self.keyframes["xy"].out_dim
            self.keyframes["xy"].scatter(x, y, dz[:, offset : offset + width], grads)
            offset += width
            self.keyframes["xt"].scatter(x, t, dz[:, offset : offset + width], grads)
            offset += width
            self.keyframes["yt"].scatter(y, t, dz[:, offset : offset + width], grads)
            offset += width
        if self.sparse is not None:
            self.sparse.scatter(coords, dz[:, offset:], grads)

    def parameters(self) -> list[ParamBlock]:
        out: list[ParamBlock] = []
        for pair in ("xy", "xt", "yt"):
            if pair in self.keyframes:
                out.extend(self.keyframes[pair].parameters())
        if self.sparse is not None:
            out.extend(self.sparse.parameters())
        out.extend(self.field.parameters())
        return out

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every array the model carries, in serialization order."""
        return [(p.name, p.value) for p in self.parameters()]

    def mark_updated(self) -> None:
        if isinstance(self.field, ModulatedField):
            self.field.bump_version()
        else:
            self.field.version += 1

    def new_grad_buffers(self) -> dict[str, np.ndarray]:
        return {p.name: np.zeros_like(p.value) for p in self.parameters()}

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


class SirenModel:
    """Sinusoidal MLP straight on (x, y, t)."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        dims = [3] + [config.hidden] * (config.depth - 1) + [3]
        acts = [("sin", config.siren_omega)] * (config.depth - 1) + [("none",)]
        self.field = Mlp("siren", dims, acts)

    def forward_batch(self, coords):
        return self.field.forward(np.atleast_2d(coords))

    def backward_batch(self, tape, upstream, grads) -> None:
        self.field.backward(tape, upstream, grads)

    def parameters(self):
        return self.field.parameters()

    def arrays(self):
        return [(p.name, p.value) for p in self.parameters()]

    def mark_updated(self) -> None:
        self.field.version += 1

    def new_grad_buffers(self):
        return {p.name: np.zeros_like(p.value) for p in self.parameters()}

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


class FfnModel:
    """Random Fourier embedding of (x, y, t) followed by a ReLU MLP."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.embed = RffEmbedding(3, config.ffn_features)
        dims = [self.embed.out_dim] + [config.hidden] * (config.depth - 1) + [3]
        self.field = Mlp("ffn", dims, [("relu",)] * (config.depth - 1) + [("none",)])

    def forward_batch(self, coords):
        emb = self.embed.forward(np.atleast_2d(coords))
        return self.field.forward(emb)

    def backward_batch(self, tape, upstream, grads) -> None:
        self.field.backward(tape, upstream, grads)

    def parameters(self):
        return self.field.parameters()

    def arrays(self):
        # The embedding matrix is fixed but required for decoding.
        return [(self.embed.name, self.embed.weights)] + [
            (p.name, p.value) for p in self.parameters()
        ]

    def mark_updated(self) -> None:
        self.field.version += 1

    def new_grad_buffers(self):
        return {p.name: np.zeros_like(p.value) for p in self.parameters()}

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters()) + self.embed.weights.size


def build_model(config: ModelConfig):
    config.validate()
    if config.kind == "nvp":
        return NvpModel(config)
    if config.kind == "siren":
        return SirenModel(config)
    return FfnModel(config)


def render_video(
    model, dims: tuple[int, int, int], t_range=(0.0, 1.0), clamp: bool = True,
    chunk: int = 1 << 16,
) -> np.ndarray:
    """Evaluate the model over a full center-of-cell lattice.

    Returns (T, H, W, 3); clamped to [0, 1] unless clamp=False (metrics want
    the raw values).
    """
    from .video import coord_lattice

    T, H, W = dims
    coords = coord_lattice(T, H, W, t_range)
    out = np.empty((coords.shape[0], 3), dtype=precision.dtype())
    for start in range(0, coords.shape[0], chunk):
        rgb, _ = model.forward_batch(coords[start : start + chunk])
        out[start : start + chunk] = rgb
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out.reshape(T, H, W, 3)
