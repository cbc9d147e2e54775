"""Command-line interface for the enhancement pipeline.

One executable with subcommands: voxelize, simulate-events, lightup,
snr-map, enhance, train, eval, align-match, fixtures. Every run prints
the resolved configuration; the EVLIGHT_LOG environment variable
(error|info|debug) controls verbosity; exit status is zero only when no
row-level errors occurred.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import alignment
from .fixtures import fixtures as make_fixtures
from .events import read_events, simulate_events, voxelize, write_events, VoxelGrid
from .image import pad_reflect, psnr, psnr_star, read_image, ssim, write_image
from .lightup import light_up, snr_map
from .model import EvLightModel, enhance_file, infer_architecture
from .module import load_checkpoint
from .tensor import Tensor
from .training import TrainConfig, parse_config, parse_manifest, train

log = logging.getLogger("evlight")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("EVLIGHT_LOG", "error"),
                                         logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _print_config(args: argparse.Namespace, resolved: dict | None = None) -> None:
    # overlay the post-merge values so file-config keys do not echo as None
    skip = {"func", "command"}
    merged = {k: v for k, v in vars(args).items() if k not in skip}
    if resolved:
        merged.update(resolved)
    print("resolved config:")
    for key in sorted(merged):
        print(f"  {key} = {merged[key]}")


def _train_config(args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        cfg = parse_config(args.config, cfg)
    overrides = {}
    for key, attr in (("lr", "lr"), ("epochs", "epochs"), ("steps", "steps"),
                      ("batch", "batch"), ("crop", "crop"), ("lam", "lam"),
                      ("seed", "seed"), ("bins", "bins"), ("tau", "tau")):
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_voxelize(args) -> int:
    stream = read_events(args.events)
    grid = voxelize(stream, args.bins or 32, args.t0, args.t1)
    np.save(args.out, grid.data)
    log.info("voxelized %d events into %d bins, mass %.6f",
             len(stream), grid.bins, grid.total_mass())
    print(f"wrote {args.out} mass={grid.total_mass():.6f}")
    return 0


def _cmd_simulate_events(args) -> int:
    a = read_image(args.frame_a)
    b = read_image(args.frame_b)
    stream = simulate_events(a, b, args.t_a, args.t_b, args.theta)
    write_events(stream, args.out)
    print(f"wrote {args.out} events={len(stream)}")
    return 0


def _cmd_lightup(args) -> int:
    img = read_image(args.image)
    if args.ckpt:
        state = load_checkpoint(args.ckpt)
        base_channels, heads, bins = infer_architecture(state)
        model = EvLightModel(np.random.default_rng(args.seed or 0),
                             base_channels=base_channels, heads=heads,
                             bins=bins, tau=args.tau)
        model.load_state(state)
    else:
        model = EvLightModel(np.random.default_rng(args.seed or 0),
                             bins=args.bins or 32, tau=args.tau)
    i_lu, _ = light_up(Tensor(img), model.estimator)
    write_image(args.out, np.clip(i_lu.data, 0.0, 1.0))
    print(f"wrote {args.out} mean {img.mean():.4f} -> {i_lu.data.mean():.4f}")
    return 0


def _cmd_snr_map(args) -> int:
    img = read_image(args.image)
    smap = snr_map(img, args.kernel, args.tau)
    write_image(args.out_norm, smap.norm[:, :, None])
    write_image(args.out_binary, smap.binary[:, :, None])
    frac = float(smap.binary.mean())
    print(f"wrote {args.out_norm}, {args.out_binary}; trusted fraction {frac:.4f}")
    return 0


def _cmd_enhance(args) -> int:
    enhance_file(args.image, args.events, args.ckpt, args.out,
                 bins=args.bins, tau=args.tau)
    print(f"wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _train_config(args)
    ckpt, curve = train(args.manifest, cfg, args.out_dir,
                        log=log.info if log.isEnabledFor(logging.INFO) else None)
    print(f"wrote {ckpt} and {curve}")
    return 0


def _cmd_eval(args) -> int:
    pairs = parse_manifest(args.manifest)
    if not pairs:
        raise ValueError(f"{args.manifest}: manifest lists no sample pairs")
    state = load_checkpoint(args.ckpt)
    base_channels, heads, bins = infer_architecture(state)
    if args.bins is not None and args.bins != bins:
        raise ValueError(f"checkpoint was trained with {bins} bins, "
                         f"not {args.bins}")
    model = EvLightModel(np.random.default_rng(0), base_channels=base_channels,
                         heads=heads, bins=bins, tau=args.tau)
    model.load_state(state)
    rows = []
    failed = False
    sums = np.zeros(3)
    n_ok = 0
    for pair in pairs:
        try:
            low = read_image(pair.low)
            gt = read_image(pair.gt)
            stream = read_events(pair.events)
            grid = voxelize(stream, bins, pair.t0, pair.t1)
            padded, h, w = pad_reflect(low, 4)
            gdata = grid.data
            ph, pw = padded.shape[0] - h, padded.shape[1] - w
            if ph or pw:
                gdata = np.pad(gdata, ((0, 0), (0, ph), (0, pw)), mode="reflect")
            pgrid = VoxelGrid(gdata, bins, padded.shape[1], padded.shape[0])
            i_en, _, _ = model.forward(padded, pgrid)
            en = np.clip(i_en.data[:h, :w, :], 0.0, 1.0)
            vals = (psnr(en, gt), psnr_star(en, gt), ssim(en, gt))
            sums += np.asarray(vals)
            n_ok += 1
            rows.append([pair.low, f"{vals[0]:.6f}", f"{vals[1]:.6f}",
                         f"{vals[2]:.6f}"])
        except (OSError, ValueError) as exc:
            failed = True
            rows.append([pair.low, "error", "error", str(exc)])
            log.error("eval failed for %s: %s", pair.low, exc)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "psnr", "psnr_star", "ssim"])
        writer.writerows(rows)
        if n_ok:
            m = sums / n_ok
            writer.writerow(["mean", f"{m[0]:.6f}", f"{m[1]:.6f}", f"{m[2]:.6f}"])
    print(f"wrote {args.out} ({n_ok}/{len(pairs)} rows ok)")
    return 1 if failed else 0


def _cmd_align_match(args) -> int:
    lows, normals = [], []
    with open(args.meta, "r", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            meta = alignment.SequenceMeta(
                row["id"], row["condition"].strip(),
                int(row["trajectory_start"]), int(row["first_frame"]),
                int(row.get("frame_interval") or 0))
            (lows if meta.condition == "low" else normals).append(meta)
    result = alignment.match(lows, normals)
    report = alignment.align_report(result, args.threshold)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["low", "normal", "abs_error_us"])
        for low_id, normal_id, err in result.pairs:
            writer.writerow([low_id, normal_id, err])
    print(f"wrote {args.out} max_error_us={result.max_error} "
          f"fraction_below={report.fraction_below:.3f}")
    return 0


def _cmd_fixtures(args) -> int:
    manifest = make_fixtures(args.out_dir, args.seed or 0,
                             count=args.count, size=args.size)
    print(f"wrote {manifest}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key = value file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--bins", type=int, default=None)
    common.add_argument("--tau", type=float, default=0.5)
    common.add_argument("--crop", type=int, default=None)
    common.add_argument("--lambda", dest="lam", type=float, default=None)

    parser = argparse.ArgumentParser(
        prog="evlight",
        description="Event-guided low-light image enhancement pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", parents=[common],
                       help="accumulate an event file into a voxel grid (.npy)")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t0", type=int, default=None)
    p.add_argument("--t1", type=int, default=None)
    p.set_defaults(func=_cmd_voxelize)

    p = sub.add_parser("simulate-events", parents=[common],
                       help="emit events from a frame pair's log changes")
    p.add_argument("--frame-a", required=True)
    p.add_argument("--frame-b", required=True)
    p.add_argument("--t-a", type=int, default=0)
    p.add_argument("--t-b", type=int, default=100_000)
    p.add_argument("--theta", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate_events)

    p = sub.add_parser("lightup", parents=[common],
                       help="write the light-up image for an input")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lightup)

    p = sub.add_parser("snr-map", parents=[common],
                       help="write SNR norm (PFM) and binary mask (PGM)")
    p.add_argument("--image", required=True)
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--out-norm", required=True)
    p.add_argument("--out-binary", required=True)
    p.set_defaults(func=_cmd_snr_map)

    p = sub.add_parser("enhance", parents=[common],
                       help="enhance one image with its event file")
    p.add_argument("--image", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("train", parents=[common], help="run the training loop")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="score a checkpoint over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("align-match", parents=[common],
                       help="pair low/normal sequences by interval error")
    p.add_argument("--meta", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=int, default=10_000)
    p.set_defaults(func=_cmd_align_match)

    p = sub.add_parser("fixtures", parents=[common],
                       help="generate a synthetic paired corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=2)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=_cmd_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = asdict(_train_config(args)) if args.command == "train" else None
        _print_config(args, resolved)
        return args.func(args)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
