"""Command-line interface.

Commands: train, denoise, sample, evaluate, verify, import, export-png,
degrade.  Exit codes: 0 success, 2 config error, 3 data error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import io as hio
from . import report, worker_threads
from .config import load_run_config, serialize_run_config
from .degradation import NoiseSpec, degrade
from .errors import ConfigError, DataError, HidflowError, VerificationError
from .metrics import report as metric_report
from .model import DenoiserModel
from .synthetic import bump_dataset
from .training import train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERIFY = 4

log = logging.getLogger("hidflow.cli")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hidflow",
                                description="Conditional-flow hyperspectral denoiser")
    p.add_argument("--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None, help="override config seed")
    t.add_argument("--out", default=None, help="override output directory")
    t.add_argument("--synthetic", type=int, default=0, metavar="N",
                   help="train on N synthetic bump cubes instead of data_dir")
    t.add_argument("--synthetic-shape", default="32x32x8",
                   help="HxWxB for --synthetic cubes")

    d = sub.add_parser("denoise", help="restore a cube (point estimate + samples)")
    d.add_argument("cube")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--samples", type=int, default=0)
    d.add_argument("--temperature", type=float, default=1.0)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--dump-features", default=None, metavar="DIR")

    s = sub.add_parser("sample", help="draw diverse restorations of a cube")
    s.add_argument("cube")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--samples", type=int, default=3)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("evaluate", help="PSNR/SSIM/SAM for reference/restored pairs")
    e.add_argument("pairs", nargs="+",
                   help="alternating REFERENCE RESTORED cube paths")
    e.add_argument("--out", required=True, help="output directory for csv + figure")

    v = sub.add_parser("verify", help="run the self-verification suites")
    v.add_argument("--level", choices=("quick", "full"), default="quick")
    v.add_argument("--seed", type=int, default=0)

    i = sub.add_parser("import", help="convert a flat binary raster to a cube file")
    i.add_argument("raw")
    i.add_argument("--height", type=int, required=True)
    i.add_argument("--width", type=int, required=True)
    i.add_argument("--bands", type=int, required=True)
    i.add_argument("--dtype", choices=("u8", "u16", "f32", "f64"), default="u16")
    i.add_argument("--scale", type=float, default=None,
                   help="value mapping to 1.0 (default: dtype max)")
    i.add_argument("--order", choices=("hwb", "bhw"), default="hwb")
    i.add_argument("--out", required=True)

    x = sub.add_parser("export-png", help="false-color PNG from three bands")
    x.add_argument("cube")
    x.add_argument("--bands", default="0,1,2", help="comma-separated r,g,b indices")
    x.add_argument("--out", required=True)

    g = sub.add_parser("degrade", help="apply a synthetic degradation to a cube")
    g.add_argument("cube")
    g.add_argument("--sigma", type=float, default=None,
                   help="Gaussian noise std on the 0-255 scale")
    g.add_argument("--mixture", action="store_true", help="mixture degradation")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    return p


def _load_cubes(directory: str) -> list:
    paths = sorted(glob.glob(os.path.join(directory, "*.hsic")))
    if not paths:
        raise DataError(f"no .hsic cubes found in {directory}")
    return [hio.read_cube(p)[0] for p in paths]


def _cmd_train(args) -> int:
    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.seed = args.seed
        rc.train.seed = args.seed
    out_dir = args.out or rc.paths.get("out_dir", "runs/latest")
    os.makedirs(out_dir, exist_ok=True)

    if args.synthetic:
        h, w, b = (int(v) for v in args.synthetic_shape.split("x"))
        if b != rc.model.bands:
            raise ConfigError(f"synthetic bands {b} != model bands {rc.model.bands}")
        cubes = bump_dataset(args.synthetic, h, w, b, rc.seed)
        val = cubes[: max(1, args.synthetic // 8)]
        data = cubes[max(1, args.synthetic // 8):]
    else:
        if "data_dir" not in rc.paths:
            raise ConfigError("config: [paths] data_dir required (or use --synthetic)")
        data = _load_cubes(rc.paths["data_dir"])
        val = _load_cubes(rc.paths["val_dir"]) if "val_dir" in rc.paths else []

    model = DenoiserModel(rc.model, seed=rc.seed, dtype=rc.numpy_dtype())
    result = train(model, data, rc.train, val_cubes=val, out_dir=out_dir)

    final = os.path.join(out_dir, "checkpoint_final.hfck")
    hio.save_checkpoint(final, model, result.store,
                        config_text=serialize_run_config(rc))
    report.write_csv(os.path.join(out_dir, "train_log.csv"), result.history,
                     ["phase", "epoch", "step", "total", "nll", "rec", "val_psnr"])
    report.training_figure(result.history, os.path.join(out_dir, "train_curves.png"))
    print(f"checkpoint: {final}")
    print(f"log: {os.path.join(out_dir, 'train_log.csv')}")
    return EXIT_OK


def _restore(path: str) -> DenoiserModel:
    model, _store, _manifest = hio.restore_model(path)
    return model


def _cmd_denoise(args, want_point: bool = True) -> int:
    model = _restore(args.checkpoint)
    cube, _meta = hio.read_cube(args.cube)
    sink = None
    if getattr(args, "dump_features", None):
        sink = hio.feature_dump_sink(args.dump_features)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.cube))[0]
    point, samples = model.denoise(cube, temperature=args.temperature,
                                   seed=args.seed, num_samples=args.samples,
                                   sink=sink)
    written = []
    if want_point:
        path = os.path.join(args.out, f"{stem}_denoised.hsic")
        hio.write_cube(path, point, meta=json.dumps({"temperature": 0.0}))
        written.append(path)
    for k, s in enumerate(samples):
        path = os.path.join(args.out, f"{stem}_sample{k}.hsic")
        hio.write_cube(path, s, meta=json.dumps({"temperature": args.temperature,
                                                 "seed": args.seed, "index": k}))
        written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    if len(args.pairs) % 2:
        raise DataError("evaluate: expected an even number of paths "
                        "(REFERENCE RESTORED ...)")
    rows = []
    for i in range(0, len(args.pairs), 2):
        ref, _ = hio.read_cube(args.pairs[i])
        res, _ = hio.read_cube(args.pairs[i + 1])
        rep = metric_report(res, ref)
        row = {"name": os.path.basename(args.pairs[i + 1]), **rep.row()}
        rows.append(row)
        print(f"{row['name']}: psnr={rep.psnr:.3f} dB ssim={rep.ssim:.4f} "
              f"sam={rep.sam:.4f} rad")
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "metrics.csv")
    report.write_csv(csv_path, rows, ["name", "psnr", "ssim", "sam", "sam_skipped"])
    report.metrics_figure(rows, os.path.join(args.out, "metrics.png"))
    print(f"report: {csv_path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(level=args.level, seed=args.seed)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.detail} ({r.seconds:.1f}s)")
        failed += 0 if r.passed else 1
    if failed:
        raise VerificationError(f"{failed} verification check(s) failed")
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _cmd_import(args) -> int:
    cube = hio.import_raw(args.raw, args.height, args.width, args.bands,
                          args.dtype, scale=args.scale, order=args.order)
    hio.write_cube(args.out, cube, meta=json.dumps({"source": os.path.basename(args.raw)}))
    print(args.out)
    return EXIT_OK


def _cmd_export_png(args) -> int:
    cube, _ = hio.read_cube(args.cube)
    try:
        bands = tuple(int(v) for v in args.bands.split(","))
    except ValueError as err:
        raise ConfigError(f"--bands must be three comma-separated ints: {err}") from err
    hio.export_falsecolor(cube, bands, args.out)
    print(args.out)
    return EXIT_OK


def _cmd_degrade(args) -> int:
    cube, _ = hio.read_cube(args.cube)
    if args.mixture:
        spec = NoiseSpec(kind="mixture")
    elif args.sigma is not None:
        spec = NoiseSpec(kind="gaussian", sigma=args.sigma)
    else:
        raise ConfigError("degrade: pass --sigma or --mixture")
    noisy, prov = degrade(cube, spec, args.seed)
    hio.write_cube(args.out, noisy.astype(np.float32),
                   meta=json.dumps({"degradation": spec.kind, "seed": args.seed}))
    prov_path = args.out + ".provenance.json"
    with open(prov_path + ".tmp", "w") as fh:
        json.dump(prov, fh, indent=1, sort_keys=True)
    os.replace(prov_path + ".tmp", prov_path)
    print(args.out)
    print(prov_path)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("worker threads: %d", worker_threads())
    handlers = {
        "train": _cmd_train,
        "denoise": _cmd_denoise,
        "sample": lambda a: _cmd_denoise(a, want_point=False),
        "evaluate": _cmd_evaluate,
        "verify": _cmd_verify,
        "import": _cmd_import,
        "export-png": _cmd_export_png,
        "degrade": _cmd_degrade,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationError as err:
        print(f"verification failed: {err}", file=sys.stderr)
        return EXIT_VERIFY
    except (DataError, HidflowError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
