"""End-to-end fitting: initialization, the MSE batch loop, and evaluation.

The batch is always processed in fixed-size chunks whose gradients are
reduced in chunk order, so runs with one worker and with several are
bitwise identical in 64-bit mode (the chunk grid depends only on the batch
size, never on the worker count).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .field import Mlp, ModulatedField, RffEmbedding
from .grids import KeyframeGrid, SparseGrid3D
from .metrics import mse_to_psnr
from .model import FfnModel, ModelConfig, NvpModel, SirenModel, build_model, render_video
from .optim import adamw_step, cosine_lr
from .rng import STREAM_BATCH, STREAM_INIT, Rng
from .video import VideoTensor, sample_batch

GRID_INIT_SCALE = 1e-4
CHUNK = 16384
FULL_BATCH_PIXELS = 1_245_184  # production batch size; tiny videos use all pixels


@dataclass
class TrainConfig:
    total_iters: int = 100_000
    batch_pixels: int | None = None  # None: min(FULL_BATCH_PIXELS, T*H*W)
    lr: float = 0.01
    lr_min: float = 0.00001
    weight_decay: float = 0.001
    seed: int = 0
    eval_every: int = 0  # 0: evaluate only at the end
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    mask: np.ndarray | None = None  # (T, H, W) bools; True = excluded pixel
    workers: int = 1
    target_psnr: float | None = None  # stop once an eval reaches this

    def validate(self) -> None:
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")
        if not self.lr >= self.lr_min > 0:
            raise ValueError("need lr >= lr_min > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class EvalRecord:
    iteration: int
    seconds: float
    mse: float
    psnr: float


@dataclass
class TrainReport:
    records: list[EvalRecord] = field(default_factory=list)

    def add(self, rec: EvalRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("eval iterations must be strictly increasing")
        self.records.append(rec)

    def final_psnr(self) -> float:
        return self.records[-1].psnr if self.records else float("nan")

    def to_csv(self) -> str:
        lines = ["iteration,seconds,mse,psnr"]
        for r in self.records:
            lines.append(f"{r.iteration},{r.seconds:.6g},{r.mse:.6g},{r.psnr:.6g}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_csv())


def _init_uniform(rng: Rng, arr: np.ndarray, bound: float) -> None:
    arr[...] = rng.uniform(-bound, bound, arr.shape)


def _init_sine_stack(rng: Rng, layers, freqs) -> None:
    """First layer U(-1/n, 1/n); layer k U(+-sqrt(6/n)/freq_k); biases U(+-1/sqrt(n))."""
    for k, layer in enumerate(layers):
        n = layer.in_dim
        bound = (1.0 / n) if k == 0 else math.sqrt(6.0 / n) / freqs[k]
        _init_uniform(rng, layer.A.value, bound)
        _init_uniform(rng, layer.b.value, 1.0 / math.sqrt(n))


def _init_kaiming(rng: Rng, mlp: Mlp) -> None:
    """Kaiming-normal fan-in weights, zero biases."""
    for layer in mlp.layers:
        layer.A.value[...] = rng.normal(0.0, math.sqrt(2.0 / layer.in_dim), layer.A.value.shape)
        layer.b.value[...] = 0.0


def init_model(config: ModelConfig, seed: int):
    """Build and deterministically initialize a model from its seed."""
    model = build_model(config)
    rng = Rng(seed, STREAM_INIT)
    if isinstance(model, NvpModel):
        for pair in ("xy", "xt", "yt"):
            if pair in model.keyframes:
                for block in model.keyframes[pair].parameters():
                    _init_uniform(rng, block.value, GRID_INIT_SCALE)
        if model.sparse is not None:
            _init_uniform(rng, model.sparse.codes.value, GRID_INIT_SCALE)
        if isinstance(model.field, ModulatedField):
            freqs = list(model.field.sigmas) + [1.0]
            _init_sine_stack(rng, model.field.synth, freqs)
            _init_kaiming(rng, model.field.modulator)
        else:
            _init_kaiming(rng, model.field)
    elif isinstance(model, SirenModel):
        freqs = [config.siren_omega] * (config.depth - 1) + [1.0]
        _init_sine_stack(rng, model.field.layers, freqs)
    elif isinstance(model, FfnModel):
        model.embed.weights = rng.normal(0.0, config.ffn_sigma, model.embed.weights.shape)
        _init_kaiming(rng, model.field)
    return model


def _chunk_slices(n: int) -> list[slice]:
    return [slice(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def _chunk_pass(model, coords, targets, inv_count):
    rgb, tape = model.forward_batch(coords)
    diff = rgb - targets
    grads = model.new_grad_buffers()
    model.backward_batch(tape, 2.0 * inv_count * diff, grads)
    return float(np.sum(diff * diff)), grads


def train(model, video: VideoTensor, cfg: TrainConfig, time_fn=time.perf_counter):
    """Fit the model to the video; returns (model, TrainReport).

    Loss is the mean squared error over the batch and the 3 channels. The
    report gets one row per eval point plus a final row; wall seconds come
    from time_fn, injectable for reproducible telemetry.
    """
    cfg.validate()
    n_batch = cfg.batch_pixels or min(FULL_BATCH_PIXELS, video.num_pixels)
    rng = Rng(cfg.seed, STREAM_BATCH)
    params = model.parameters()
    report = TrainReport()
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    start = time_fn()
    try:
        for it in range(cfg.total_iters):
            lr_t = cosine_lr(it, cfg.total_iters, cfg.lr, cfg.lr_min)
            batch = sample_batch(video, n_batch, rng, cfg.mask)
            slices = _chunk_slices(len(batch))
            inv_count = 1.0 / (len(batch) * 3)
            jobs = [
                (batch.coords[sl], batch.targets[sl]) for sl in slices
            ]
            if pool is not None:
                results = list(
                    pool.map(lambda args: _chunk_pass(model, *args, inv_count), jobs)
                )
            else:
                results = [_chunk_pass(model, c, t, inv_count) for c, t in jobs]
            loss = 0.0
            for sq_sum, grads in results:  # fixed chunk order
                loss += sq_sum
                for p in params:
                    p.grad += grads[p.name]
            loss *= inv_count
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at iteration {it}")
            for p in params:
                adamw_step(p, lr_t, cfg.weight_decay)
                p.zero_grad()
            model.mark_updated()

            done = it + 1
            is_last = done == cfg.total_iters
            if cfg.checkpoint_every and cfg.checkpoint_dir and (
                done % cfg.checkpoint_every == 0 or is_last
            ):
                from .serialization import save_model

                save_model(model, f"{cfg.checkpoint_dir}/ckpt_{done:07d}.nvpm")
            if is_last or (cfg.eval_every and done % cfg.eval_every == 0):
                psnr = evaluate(model, video)
                report.add(EvalRecord(done, time_fn() - start, loss, psnr))
                if cfg.target_psnr is not None and psnr >= cfg.target_psnr:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return model, report


def evaluate(model, video: VideoTensor) -> float:
    """Mean over frames of per-frame PSNR of the raw (unclamped) reconstruction."""
    recon = render_video(model, video.dims, clamp=False)
    err = recon - video.data.astype(recon.dtype, copy=False)
    frame_mse = np.mean(np.square(err), axis=(1, 2, 3))
    return float(np.mean([mse_to_psnr(m) for m in frame_mse]))
