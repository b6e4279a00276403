"""``fgasr`` command line: spectral metrics, upsampling and toy experiments.

Every command that writes files also writes a run manifest (command, argv,
resolved configuration, input/output hashes, version and seed). ``fgasr
replay MANIFEST`` re-runs it. Exit codes: 0 success, 1 I/O failure,
2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, fga, io, metrics, schemas, train
from .errors import FgaError
from .fga import FgaConfig

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2
METHOD_ALIASES = {"interp": "interp_conv"}


class UsageError(FgaError, ValueError):
    """Bad flag values or inputs that cannot go together."""


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _seed(args) -> int:
    env = os.environ.get("FGA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FGA_SEED must be an integer, got {env!r}") from None
    return args.seed


def _config_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "argv")}


def _write_manifest(path: Path, args, inputs, outputs, seed=None, extra=None) -> None:
    config = _config_of(args)
    if extra:
        config.update(extra)
    doc = {
        "command": args.command,
        "argv": list(args.argv),
        "config": config,
        "inputs": {str(p): io.file_sha256(p) for p in inputs},
        "outputs": {Path(p).name: io.file_sha256(p) for p in outputs},
        "version": __version__,
        "seed": seed,
    }
    schemas.validate_json(doc, "manifest")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _as_chw(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return x[None]
    if x.ndim == 4 and x.shape[0] == 1:
        return x[0]
    if x.ndim != 3:
        raise UsageError(f"expected an image or a C x H x W tensor, got shape {x.shape}")
    return x


def _save_image(path: Path, img: np.ndarray) -> None:
    if path.suffix.lower() == ".fgat":
        io.save_fgat(path, img)
    else:
        io.save_png(path, img)


def _fga_config(args, scale: int, seed: int) -> FgaConfig:
    return FgaConfig(channels=args.channels, scale=scale, seed=seed)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_frc(args) -> int:
    a = metrics.to_luminance(_as_chw(io.load_image_or_tensor(args.img_a)))
    b = metrics.to_luminance(_as_chw(io.load_image_or_tensor(args.img_b)))
    if a.shape != b.shape:
        raise UsageError(f"image sizes differ: {a.shape} vs {b.shape}")
    curve = metrics.frc(a, b, metrics.ring_index_map(*a.shape, args.rings))
    out = Path(args.output or f"frc.{args.out}")
    out.write_text(curve.to_csv() if args.out == "csv" else curve.to_json() + "\n")
    _write_manifest(out.with_name(out.name + ".manifest.json"), args, [args.img_a, args.img_b], [out])
    print(f"{curve.frc_auc:.12g}")
    return EXIT_OK


def _spectrum_one(path: Path, out_dir: Path) -> tuple[Path, Path]:
    x = _as_chw(io.load_image_or_tensor(path))
    stem = path.name.rsplit(".", 1)[0]
    png = out_dir / f"{stem}.spectrum.png"
    raw = out_dir / f"{stem}.spectrum.fgat"
    io.save_png(png, metrics.spectrum_dump(x))
    spec = np.fft.fft2(x)
    io.save_fgat(raw, np.stack([spec.real, spec.imag], axis=-1))
    return png, raw


def cmd_spectrum(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in args.inputs]
    stems = [p.name.rsplit(".", 1)[0] for p in paths]
    if len(set(stems)) != len(stems):
        raise UsageError("input files must have distinct names")
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            written = list(pool.map(lambda p: _spectrum_one(p, out_dir), paths))
    else:
        written = [_spectrum_one(p, out_dir) for p in paths]
    outputs = [f for pair in written for f in pair]
    _write_manifest(out_dir / "spectrum.manifest.json", args, paths, outputs)
    for png, raw in written:
        print(png)
        print(raw)
    return EXIT_OK


def _check_weights(params: dict, expected: dict) -> None:
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise UsageError(f"weights do not match the model: missing {missing[:4]}, unexpected {extra[:4]}")
    for name, arr in expected.items():
        if params[name].shape != arr.shape:
            raise UsageError(f"weight {name!r} has shape {params[name].shape}, model needs {arr.shape}")


def cmd_upsample(args) -> int:
    method = METHOD_ALIASES.get(args.method, args.method)
    seed = _seed(args)
    img = _as_chw(io.load_image_or_tensor(args.input))
    if args.weights:
        params, index = io.load_params(args.weights)
        schemas.validate_json(index, "params")
        if index.get("method", method) != method:
            raise UsageError(f"weights were saved for method {index['method']!r}, not {method!r}")
        if "fga_config" in index:
            cfg = FgaConfig.from_dict(index["fga_config"])
        else:
            cfg = FgaConfig(channels=args.channels, scale=args.scale)
        if cfg.scale != args.scale:
            raise UsageError(f"weights are for scale {cfg.scale}, not {args.scale}")
        _check_weights(params, train.init_model(method, cfg, in_channels=img.shape[0]))
        inputs = [args.input, Path(args.weights) / io.PARAMS_INDEX]
    else:
        cfg = _fga_config(args, args.scale, seed)
        params = train.init_model(method, cfg, in_channels=img.shape[0])
        inputs = [args.input]
    out, feats = train.model_forward(method, img[None], params, cfg, return_features=True)
    out_path = Path(args.output)
    _save_image(out_path, out[0])
    outputs = [out_path]
    if args.features:
        fdir = Path(args.features)
        fdir.mkdir(parents=True, exist_ok=True)
        for name, arr in feats.items():
            io.save_fgat(fdir / f"{name}.fgat", arr[0])
            outputs.append(fdir / f"{name}.fgat")
    _write_manifest(out_path.with_name(out_path.name + ".manifest.json"), args, inputs, outputs, seed)
    print(out_path)
    return EXIT_OK


def _load_target(args) -> np.ndarray:
    if args.target == "texture":
        return train.texture_target(args.size, seed=args.target_seed)
    if args.target == "sinusoid":
        return train.sinusoid_target(args.size)
    img = _as_chw(io.load_image_or_tensor(args.target))
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    return img


def cmd_train_toy(args) -> int:
    method = METHOD_ALIASES.get(args.method, args.method)
    seed = _seed(args)
    target = _load_target(args)
    if target.shape[1] % args.scale or target.shape[2] % args.scale:
        raise UsageError(f"target size {target.shape[1:]} is not divisible by {args.scale}")
    fcfg = _fga_config(args, args.scale, seed)
    tcfg = train.TrainConfig(
        iterations=args.iterations,
        lr=args.lr,
        loss=args.loss,
        seed=seed,
        method=method,
        schedule=args.schedule,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        res = train.train_toy(target, args.scale, tcfg, fcfg)
    except train.TrainingDiverged as exc:
        (out_dir / "log.csv").write_text(train.metric_log_csv(exc.log))
        raise
    log = out_dir / "log.csv"
    log.write_text(res.log_csv())
    weights = io.save_params(out_dir / "weights", res.params, {"method": method, "fga_config": fcfg.to_dict()})
    image = out_dir / "output.png"
    io.save_png(image, np.clip(res.output, 0, 1))
    inputs = [] if args.target in ("texture", "sinusoid") else [args.target]
    _write_manifest(
        out_dir / "manifest.json", args, inputs, [log, weights, image], seed,
        extra={"fga_config": fcfg.to_dict(), "train_config": vars(tcfg)},
    )
    last = res.log[-1]
    print(f"iter={last['iter']} l1={last['l1']:.6g} fl1={last['fl1']:.6g} psnr={last['psnr']:.4f}")
    return EXIT_OK


def _json_safe(rec: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in rec.items()}


def cmd_ablate(args) -> int:
    seed = _seed(args)
    targets = train.texture_suite(args.count, size=args.size, seed=args.target_seed)
    fcfg = _fga_config(args, args.scale, seed)
    tcfg = train.TrainConfig(iterations=args.iterations, lr=args.lr, seed=seed, schedule=args.schedule)
    records, _ = train.ablate(targets, r=args.scale, train_cfg=tcfg, fga_cfg=fcfg, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    csv_path.write_text(train.report_csv(records))
    doc = [_json_safe(r) for r in records]
    schemas.validate_json(doc, "ablation")
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(doc, indent=2) + "\n")
    _write_manifest(
        out_dir / "manifest.json", args, [], [csv_path, json_path], seed,
        extra={"fga_config": fcfg.to_dict(), "train_config": vars(tcfg)},
    )
    sys.stdout.write(train.report_csv(records))
    return EXIT_OK


def cmd_flops(args) -> int:
    vals = {
        "sa": fga.flops_estimate("sa", args.H, args.W, args.C, args.M),
        "ca": fga.flops_estimate("ca", args.H, args.W, args.C, args.M, args.r),
        "owca": fga.flops_estimate("owca", args.H, args.W, args.C, args.M, args.r, args.alpha),
    }
    if args.json:
        print(json.dumps(vals))
    else:
        for k, v in vals.items():
            print(f"{k}={v:.17g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    text = Path(args.file).read_text()
    if args.kind in schemas.CSV_LAYOUTS and not args.file.endswith(".json"):
        rows = schemas.validate_csv(text, args.kind)
        print(f"ok: {len(rows)} rows")
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise schemas.SchemaError(f"invalid JSON: {exc}") from exc
        schemas.validate_json(doc, args.kind)
        print("ok")
    return EXIT_OK


def cmd_replay(args) -> int:
    doc = json.loads(Path(args.manifest).read_text())
    schemas.validate_json(doc, "manifest")
    # the recorded seed wins unless FGA_SEED is set for this run
    env = dict(os.environ)
    if doc["seed"] is not None and "FGA_SEED" not in env:
        os.environ["FGA_SEED"] = str(doc["seed"])
    try:
        return main(doc["argv"])
    finally:
        os.environ.clear()
        os.environ.update(env)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fgasr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fgasr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("frc", help="Fourier ring correlation of two images")
    s.add_argument("img_a")
    s.add_argument("img_b")
    s.add_argument("--rings", type=_positive, default=64)
    s.add_argument("--out", choices=("csv", "json"), default="csv")
    s.add_argument("-o", "--output", help="output file (default frc.csv / frc.json)")
    s.set_defaults(func=cmd_frc)

    s = sub.add_parser("spectrum", help="centred log-magnitude spectrum (PNG) and raw spectrum (FGAT)")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--jobs", type=_positive, default=1)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("upsample", help="run an upsampler on an image")
    s.add_argument("input")
    s.add_argument("output", help=".png or .fgat")
    s.add_argument("--method", choices=("fga", "spc", "deconv", "interp", "interp_conv"), default="fga")
    s.add_argument("--scale", type=_positive, default=4)
    s.add_argument("--weights", help="parameter directory written by train-toy")
    s.add_argument("--channels", type=int, default=16, help="feature channels when no weights are given")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--features", help="directory for pre/post feature FGAT dumps")
    s.set_defaults(func=cmd_upsample)

    s = sub.add_parser("train-toy", help="fit encoder + upsampler to one target")
    s.add_argument("--method", choices=("fga", "spc", "deconv", "interp", "interp_conv"), default="fga")
    s.add_argument("--scale", type=_positive, default=4)
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--iterations", type=_positive, default=200)
    s.add_argument("--lr", type=float, default=2e-3)
    s.add_argument("--loss", choices=train.LOSS_CHOICES, default="l1")
    s.add_argument("--schedule", choices=train.SCHEDULES, default="constant")
    s.add_argument("--target", default="texture", help="texture, sinusoid, or an image/FGAT path")
    s.add_argument("--target-seed", type=int, default=0)
    s.add_argument("--size", type=_positive, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default="train-toy")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("ablate", help="five-row component ablation on a texture suite")
    s.add_argument("--scale", type=_positive, default=4)
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--count", type=int, default=5, help="number of texture targets")
    s.add_argument("--size", type=_positive, default=32)
    s.add_argument("--iterations", type=_positive, default=200)
    s.add_argument("--lr", type=float, default=2e-3)
    s.add_argument("--schedule", choices=train.SCHEDULES, default="constant")
    s.add_argument("--target-seed", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=_positive, default=1)
    s.add_argument("--out-dir", default="ablate")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("flops", help="closed-form attention FLOPs")
    s.add_argument("--H", type=_positive, default=64)
    s.add_argument("--W", type=_positive, default=64)
    s.add_argument("--C", type=_positive, default=64)
    s.add_argument("--M", type=_positive, default=16)
    s.add_argument("--r", type=_positive, default=4)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_flops)

    s = sub.add_parser("validate", help="check an output file against its schema")
    s.add_argument("file")
    s.add_argument("--kind", required=True, choices=sorted(set(schemas.CSV_LAYOUTS) | set(schemas.JSON_SCHEMAS)))
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        return args.func(args)
    except (OSError, io.FormatError) as exc:
        # Pillow's UnidentifiedImageError is an OSError too
        print(f"fgasr: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FgaError, ValueError) as exc:
        print(f"fgasr: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
