"""Command-line interface.

Commands: encode, decode, compress, decompress, metrics, inpaint, ablate,
export-keyframes. Settings resolve in three layers -- built-in defaults,
then a `key = value` config file, then explicit flags -- and every run
echoes the fully resolved configuration to stderr and a run log file.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import codec, metrics, precision, serialization
from .model import ModelConfig, matched_variant
from .trainer import TrainConfig, evaluate, init_model, train
from .model import render_video
from .video import VideoTensor, load_video, save_frames


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(","))


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(","))


MODEL_KEYS = {
    "kind": str, "levels": int, "gamma": float, "kf_base": _parse_ints,
    "kf_channels": int, "sparse_shape": _parse_ints, "sparse_channels": int,
    "window": _parse_ints, "upsample": _parse_bool, "hidden": int, "depth": int,
    "sigmas": _parse_floats, "ffn_features": int, "ffn_sigma": float,
    "siren_omega": float, "use_keyframes": _parse_bool, "use_sparse": _parse_bool,
    "modulated": _parse_bool,
}
TRAIN_KEYS = {
    "total_iters": int, "batch_pixels": int, "lr": float, "lr_min": float,
    "weight_decay": float, "seed": int, "eval_every": int,
    "checkpoint_every": int, "checkpoint_dir": str, "workers": int,
    "target_psnr": float,
}
META_KEYS = {"preset": str, "precision": str, "timer": str}
CONFIG_SCHEMA = {**MODEL_KEYS, **TRAIN_KEYS, **META_KEYS}


def parse_config_file(path) -> dict:
    """One `key = value` per line; `#` starts a comment; unknown keys rejected."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_SCHEMA:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_SCHEMA[key](val)
        except ValueError as e:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {e}")
    return values


def _resolve_settings(args) -> dict:
    """defaults < config file < CLI flags."""
    settings = {}
    if getattr(args, "config", None):
        settings.update(parse_config_file(args.config))
    for key in CONFIG_SCHEMA:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def _emit_run_log(settings: dict, resolved: dict, log_path: Path) -> None:
    lines = [f"{k} = {v}" for k, v in sorted(resolved.items())]
    text = "\n".join(lines) + "\n"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text(text)
    print(f"resolved configuration ({log_path}):", file=sys.stderr)
    sys.stderr.write(text)


def _flatten_config(mc: ModelConfig, tc: TrainConfig, meta: dict) -> dict:
    out = dict(meta)
    out.update(mc.to_dict())
    for key in TRAIN_KEYS:
        if key == "target_psnr":
            continue
        out[key] = getattr(tc, key)
    return out


def _apply_precision(settings: dict) -> None:
    precision.set_mode(settings.get("precision", "f32"))


def _timer(settings: dict):
    if settings.get("timer", "wall") == "deterministic":
        return lambda: 0.0
    return time.perf_counter


def _build_configs(settings: dict, video: VideoTensor):
    overrides = {k: v for k, v in settings.items() if k in MODEL_KEYS}
    mc = ModelConfig.for_video(*video.dims, preset=settings.get("preset", "S"), **overrides)
    tc = TrainConfig(**{k: v for k, v in settings.items() if k in TRAIN_KEYS})
    return mc, tc


def _run_log_path(args, default_anchor: Path) -> Path:
    if getattr(args, "run_log", None):
        return Path(args.run_log)
    return default_anchor.with_name(default_anchor.name + ".log")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--iters", type=int, dest="total_iters")
    p.add_argument("--batch", type=int, dest="batch_pixels")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=["S", "L"])
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--precision", choices=["f32", "f64"])
    p.add_argument("--timer", choices=["wall", "deterministic"],
                   help="deterministic zeroes the telemetry clock for reproducibility checks")
    p.add_argument("--run-log", dest="run_log")


def _train_and_save(args, mask=None) -> int:
    video = load_video(args.input)
    if mask is not None and mask.shape != video.dims:
        raise ValueError(f"mask dims {mask.shape} do not match video {video.dims}")
    settings = _resolve_settings(args)
    _apply_precision(settings)
    mc, tc = _build_configs(settings, video)
    tc.mask = mask
    out = Path(args.out)
    meta = {k: settings.get(k, d) for k, d in
            (("preset", "S"), ("precision", "f32"), ("timer", "wall"))}
    _emit_run_log(settings, _flatten_config(mc, tc, meta), _run_log_path(args, out))
    model = init_model(mc, tc.seed)
    model, report = train(model, video, tc, time_fn=_timer(settings))
    out.parent.mkdir(parents=True, exist_ok=True)
    serialization.save_model(model, out)
    telemetry = Path(args.telemetry) if args.telemetry else out.with_suffix(out.suffix + ".telemetry.csv")
    report.write_csv(telemetry)
    last = report.records[-1]
    print(f"model={out} psnr={last.psnr:.6g} seconds={last.seconds:.6g}")
    if getattr(args, "out_frames", None):
        recon = render_video(model, video.dims)
        save_frames(VideoTensor(recon), args.out_frames)
        print(f"frames={args.out_frames}")
    return 0


def cmd_encode(args) -> int:
    return _train_and_save(args)


def cmd_inpaint(args) -> int:
    mask_video = load_video(args.mask)
    mask = np.any(mask_video.data >= 0.5, axis=3)
    return _train_and_save(args, mask=mask)


def cmd_decode(args) -> int:
    model = serialization.load_model(args.model)
    T, H, W = model.config.video_dims
    new_dims = (
        max(1, round(T * args.scale_t)),
        max(1, round(H * args.scale_xy)),
        max(1, round(W * args.scale_xy)),
    )
    t_range = tuple(args.t_range)
    if not 0.0 <= t_range[0] < t_range[1] <= 1.0:
        raise UsageError(f"--t-range must satisfy 0 <= a < b <= 1, got {t_range}")
    recon = render_video(model, new_dims, t_range=t_range)
    save_frames(VideoTensor(recon), args.out)
    print(f"frames={args.out} dims={new_dims[0]}x{new_dims[1]}x{new_dims[2]}")
    return 0


def cmd_compress(args) -> int:
    model = serialization.load_model(args.model)
    backend = dataclasses.replace(codec.BACKEND_PRESETS[args.preset])
    backend.kind = args.backend
    for attr, flag in (
        ("scale_xy", args.scale_xy), ("scale_xt", args.scale_xt),
        ("scale_yt", args.scale_yt), ("crf", args.crf), ("fr", args.fr),
        ("vcodec", args.vcodec),
    ):
        if flag is not None:
            setattr(backend, attr, flag)
    backend.fallback_lossless = args.fallback_lossless
    cm = codec.compress(model, backend)
    codec.save_compressed(cm, args.out)
    rate = codec.bpp(cm)
    if args.verify:
        truth = load_video(args.verify)
        rebuilt = codec.decompress(cm)
        quality = evaluate(rebuilt, truth)
        print("bpp,psnr")
        print(f"{rate:.6g},{quality:.6g}")
    else:
        print(f"bpp={rate:.6g}")
    return 0


def cmd_decompress(args) -> int:
    cm = codec.load_compressed(args.model)
    model = codec.decompress(cm)
    serialization.save_model(model, args.out)
    print(f"model={args.out}")
    return 0


def cmd_metrics(args) -> int:
    recon = load_video(args.recon)
    truth = load_video(args.truth)
    records = metrics.per_frame_curve(recon.data, truth.data)
    csv_text = metrics.frame_curve_csv(records)
    if args.out:
        Path(args.out).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    mean_psnr = float(np.mean([r.psnr for r in records]))
    mean_ssim = float(np.mean([r.ssim for r in records]))
    print(f"mean_psnr={mean_psnr:.6g} mean_ssim={mean_ssim:.6g}", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    video = load_video(args.input)
    settings = _resolve_settings(args)
    _apply_precision(settings)
    mc, tc = _build_configs(settings, video)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    names = ["full"] + [v for v in variants if v != "full"]
    early_at = max(1, tc.total_iters // 10)
    rows = ["variant,params,sec_per_iter,psnr_early,psnr_final"]
    for name in names:
        vc = matched_variant(mc, name)
        vtc = TrainConfig(**{k: getattr(tc, k) for k in TRAIN_KEYS if k != "target_psnr"})
        vtc.eval_every = early_at
        model = init_model(vc, vtc.seed)
        t0 = time.perf_counter()
        model, report = train(model, video, vtc, time_fn=_timer(settings))
        dt = time.perf_counter() - t0
        early = next((r.psnr for r in report.records if r.iteration >= early_at), float("nan"))
        rows.append(
            f"{name},{model.param_count()},{dt / vtc.total_iters:.6g},"
            f"{early:.6g},{report.final_psnr():.6g}"
        )
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_export_keyframes(args) -> int:
    model = serialization.load_model(args.model)
    if not getattr(model, "keyframes", None):
        raise ValueError("model has no keyframe grids to export")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for pair, grid in model.keyframes.items():
        for level, block in enumerate(grid.planes):
            plane = block.value
            for ch in range(plane.shape[2]):
                img = _normalize_to_bytes(plane[:, :, ch])
                Image.fromarray(img, mode="L").save(out / f"kf_{pair}_l{level:02d}_c{ch}.png")
                count += 1
    print(f"wrote {count} images to {out}")
    return 0


def _normalize_to_bytes(plane: np.ndarray) -> np.ndarray:
    lo = float(plane.min())
    hi = float(plane.max())
    if hi <= lo:
        return np.full(plane.shape, 128, dtype=np.uint8)
    return np.clip(
        np.floor((plane.astype(np.float64) - lo) / (hi - lo) * 255.0 + 0.5), 0, 255
    ).astype(np.uint8)


def build_parser() -> _Parser:
    p = _Parser(prog="vidfield", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="fit a model to a video")
    enc.add_argument("--input", required=True, help="frame directory or .nvpv file")
    enc.add_argument("--out", required=True, help="output .nvpm model path")
    enc.add_argument("--telemetry", help="telemetry CSV path (default <out>.telemetry.csv)")
    enc.add_argument("--out-frames", dest="out_frames", help="also decode frames here")
    _add_train_flags(enc)
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="render frames from a model")
    dec.add_argument("--model", required=True)
    dec.add_argument("--out", required=True, help="output frame directory")
    dec.add_argument("--scale-xy", type=float, default=1.0, dest="scale_xy")
    dec.add_argument("--scale-t", type=float, default=1.0, dest="scale_t")
    dec.add_argument("--t-range", type=float, nargs=2, default=(0.0, 1.0), dest="t_range")
    dec.set_defaults(func=cmd_decode)

    comp = sub.add_parser("compress", help="quantize and codec-compress a model")
    comp.add_argument("--model", required=True)
    comp.add_argument("--out", required=True, help="output .nvpc path")
    comp.add_argument("--backend", choices=["lossless", "external"], default="lossless")
    comp.add_argument("--preset", choices=["S", "L"], default="S")
    comp.add_argument("--scale-xy", type=int, dest="scale_xy")
    comp.add_argument("--scale-xt", type=int, dest="scale_xt")
    comp.add_argument("--scale-yt", type=int, dest="scale_yt")
    comp.add_argument("--crf", type=int)
    comp.add_argument("--fr", type=int)
    comp.add_argument("--vcodec")
    comp.add_argument("--fallback-lossless", action="store_true", dest="fallback_lossless")
    comp.add_argument("--verify", help="frame dir; print bpp and PSNR after roundtrip")
    comp.set_defaults(func=cmd_compress)

    dcmp = sub.add_parser("decompress", help="rebuild an .nvpm from an .nvpc")
    dcmp.add_argument("--model", required=True, help=".nvpc path")
    dcmp.add_argument("--out", required=True, help="output .nvpm path")
    dcmp.set_defaults(func=cmd_decompress)

    met = sub.add_parser("metrics", help="per-frame PSNR/SSIM between two videos")
    met.add_argument("--recon", required=True)
    met.add_argument("--truth", required=True)
    met.add_argument("--out", help="CSV path (default stdout)")
    met.set_defaults(func=cmd_metrics)

    inp = sub.add_parser("inpaint", help="fit while excluding masked pixels")
    inp.add_argument("--input", required=True)
    inp.add_argument("--mask", required=True, help="frame dir of 0/255 masks (255 = remove)")
    inp.add_argument("--out", required=True, help="output .nvpm model path")
    inp.add_argument("--telemetry")
    inp.add_argument("--out-frames", dest="out_frames", help="decode full frames here")
    _add_train_flags(inp)
    inp.set_defaults(func=cmd_inpaint)

    abl = sub.add_parser("ablate", help="train matched-parameter variants, emit CSV")
    abl.add_argument("--input", required=True)
    abl.add_argument(
        "--variants",
        default="no_keyframes,no_sparse,no_modulation,no_concat,upsample",
        help="comma list; 'full' always runs first",
    )
    abl.add_argument("--out", help="CSV path (also printed)")
    _add_train_flags(abl)
    abl.set_defaults(func=cmd_ablate)

    exp = sub.add_parser("export-keyframes", help="write keyframe planes as images")
    exp.add_argument("--model", required=True)
    exp.add_argument("--out", required=True, help="output image directory")
    exp.set_defaults(func=cmd_export_keyframes)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args) or 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
