"""Command-line frontend for the full pipeline.

Subcommands: synth, forward, train, infer, baseline, eval, slice, bench.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
Every run echoes its effective configuration as JSON for reproducibility.
"""

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import baselines, dipole as dp, metrics, synth, trainer, volio
from .bgnet import BgNetConfig
from .errors import ConfigError, DataError, NumericalError, QsmError
from .varnet import VarNetConfig
from .volume import KGrid, Mask3D, Volume3D

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _echo_config(args):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    print(json.dumps({"effective_config": cfg}, sort_keys=True, default=str))


def _parse_dims(text):
    try:
        dims = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"bad dims {text!r}, expected e.g. 32,32,32")
    if len(dims) != 3:
        raise ConfigError(f"dims must have 3 components, got {text!r}")
    return dims


def _parse_axis(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"b0 axis must have 3 components, got {text!r}")
    v = np.array(parts)
    n = np.linalg.norm(v)
    if n == 0:
        raise ConfigError("b0 axis must be nonzero")
    return tuple(v / n)


def _load_volume(path):
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    return volio.read_volume(path)


def _load_mask(path):
    m = _load_volume(path)
    if isinstance(m, Volume3D):
        m = Mask3D(m.data != 0, m.voxel_size)
    return m


def _train_cfg(args):
    overrides = {}
    if args.config:
        with open(args.config) as f:
            overrides.update(json.load(f))
    for key in ("epochs", "batch_size", "lr", "steps", "seed", "depth",
                "base_channels", "pretrain_epochs"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "no_pretrain", False):
        overrides["pretrain"] = False
    bg = BgNetConfig(depth=overrides.pop("depth", 2),
                     base_channels=overrides.pop("base_channels", 8))
    vn = VarNetConfig(steps=overrides.pop("steps", 4))
    return trainer.TrainConfig(bgnet=bg, varnet=vn, **overrides)


def _samples_from_manifest(path):
    doc = volio.read_manifest(path)
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for e in doc["samples"]:
        out.append(synth.TrainingSample(
            chi=volio.read_volume(os.path.join(base, e["chi"])),
            local_field=volio.read_volume(os.path.join(base, e["local_field"])),
            total_field=volio.read_volume(os.path.join(base, e["total_field"])),
            mask=_load_mask(os.path.join(base, e["mask"])),
            seed=e["seed"],
        ))
    return out


def _checkpoint_meta_cfg(meta):
    bg = BgNetConfig(**meta.get("bgnet", {}))
    vn = VarNetConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                         for k, v in meta.get("varnet", {}).items()})
    b0 = tuple(meta.get("b0_axis", (0.0, 0.0, 1.0)))
    return trainer.TrainConfig(bgnet=bg, varnet=vn, b0_axis=b0)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    dims = _parse_dims(args.dims)
    spec = synth.BackgroundSourceSpec()
    os.makedirs(args.out, exist_ok=True)
    entries = []
    gen = synth.generate_dataset(args.subjects, args.deformations, dims, spec,
                                 args.seed, n_classes=args.classes)
    for i, s in enumerate(gen):
        entry = {"seed": s.seed}
        for key, vol in (("chi", s.chi), ("local_field", s.local_field),
                         ("total_field", s.total_field), ("mask", s.mask)):
            fname = f"sample{i:04d}_{key}.nxqv"
            volio.write_volume(os.path.join(args.out, fname), vol)
            entry[key] = fname
        entries.append(entry)
        print(f"sample {i}: seed={s.seed} mask_voxels={s.mask.count}")
    volio.write_manifest(os.path.join(args.out, "manifest.json"), args.seed,
                         {"subjects": args.subjects, "deformations": args.deformations,
                          "dims": list(dims), "n_classes": args.classes,
                          "source_spec": asdict(spec)}, entries)
    print(f"wrote {len(entries)} samples to {args.out}")


def cmd_forward(args):
    b0 = _parse_axis(args.b0)
    chi = _load_volume(args.chi)
    if args.pad:
        out = dp.forward_padded(chi, b0)
    else:
        op = dp.build_dipole(KGrid(chi.dims, chi.voxel_size), b0)
        out = dp.forward(op, chi)
    volio.write_volume(args.out, out)
    print(f"wrote field to {args.out}")


def cmd_train(args):
    cfg = _train_cfg(args)
    samples = _samples_from_manifest(args.manifest)
    params = None
    if args.init_checkpoint:
        params, _, _ = volio.read_checkpoint(args.init_checkpoint)
    params, report = trainer.train_end_to_end(cfg, samples, params)
    meta = {"bgnet": asdict(cfg.bgnet), "varnet": asdict(cfg.varnet),
            "b0_axis": list(cfg.b0_axis)}
    volio.write_checkpoint(args.out, params, meta=meta)
    report.checkpoint_path = args.out
    if args.report:
        with open(args.report, "w") as f:
            for entry in report.epochs:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
    first, last = report.epochs[0]["loss"], report.epochs[-1]["loss"]
    print(f"trained {cfg.epochs} epochs: loss {first:.6f} -> {last:.6f}; "
          f"checkpoint at {args.out}")


def cmd_infer(args):
    params, _, meta = volio.read_checkpoint(args.checkpoint)
    cfg = _checkpoint_meta_cfg(meta)
    tf = _load_volume(args.tf)
    if args.phase_scale != 1.0:
        tf = tf.like(tf.data * args.phase_scale)
    mask = _load_mask(args.mask)
    t0 = time.perf_counter()
    chi_hat, lf_pred, residual = trainer.run_inference(params, cfg, tf, mask)
    wall = time.perf_counter() - t0
    volio.write_volume(args.out_chi, chi_hat)
    if args.out_lf:
        volio.write_volume(args.out_lf, lf_pred)
    rep = {"consistency_residual": residual, "wall_time_s": wall,
           "chi": args.out_chi, "lf_pred": args.out_lf}
    if args.report:
        with open(args.report, "w") as f:
            json.dump(rep, f, indent=2, sort_keys=True)
    print(json.dumps(rep, sort_keys=True))


def cmd_baseline(args):
    fieldv = _load_volume(args.field)
    b0 = _parse_axis(args.b0)
    op = dp.build_dipole(KGrid(fieldv.dims, fieldv.voxel_size), b0)
    if args.method == "tkd":
        out = baselines.tkd_invert(op, fieldv, baselines.TkdConfig(args.threshold))
        print(f"tkd: threshold={args.threshold}")
    else:
        res = baselines.cg_tikhonov_invert(
            op, fieldv, baselines.CgConfig(mu=args.mu, max_iters=args.max_iters,
                                           tol=args.tol))
        out = res.x
        print(f"cg: iterations={res.iterations} residual={res.relative_residual:.3e} "
              f"converged={res.converged}")
    volio.write_volume(args.out, out)


def cmd_eval(args):
    pred = _load_volume(args.pred)
    gt = _load_volume(args.gt)
    mask = _load_mask(args.mask)
    rep = metrics.evaluate(args.label, pred, gt, mask)
    row = {"Method": rep.method, "NRMSE": f"{rep.nrmse:.4f}",
           "ddNRMSE": f"{rep.ddnrmse:.4f}", "SSIM": f"{rep.ssim:.4f}"}
    if args.out:
        exists = os.path.exists(args.out)
        with open(args.out, "a", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(row))
            if not exists:
                w.writeheader()
            w.writerow(row)
    print(json.dumps(rep.as_dict(), sort_keys=True))


def cmd_slice(args):
    vol = _load_volume(args.volume)
    if isinstance(vol, Mask3D):
        data = vol.data.astype(np.float64)
    else:
        data = vol.data
    axis = "xyz".index(args.axis)
    idx = args.index if args.index >= 0 else data.shape[axis] // 2
    if not 0 <= idx < data.shape[axis]:
        raise DataError(f"slice index {idx} out of range for axis {args.axis}")
    img = np.take(data, idx, axis=axis)
    if args.mask:
        m = np.take(_load_mask(args.mask).data, idx, axis=axis)
        ref = img[m] if m.any() else img.ravel()
    else:
        ref = img.ravel()
    lo, hi = np.percentile(ref, [1, 99])
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.clip((img - lo) / (hi - lo) * 255.0, 0, 255).astype(np.uint8)
    with open(args.out, "wb") as f:
        f.write(f"P5\n{scaled.shape[1]} {scaled.shape[0]}\n255\n".encode())
        f.write(scaled.tobytes())
    print(f"wrote slice {args.axis}={idx} to {args.out}")


def cmd_bench(args):
    params, _, meta = volio.read_checkpoint(args.checkpoint)
    cfg = _checkpoint_meta_cfg(meta)
    tf = _load_volume(args.tf)
    mask = _load_mask(args.mask)
    op = dp.build_dipole(KGrid(tf.dims, tf.voxel_size), cfg.b0_axis)
    rows = []
    t0 = time.perf_counter()
    trainer.run_inference(params, cfg, tf, mask)
    rows.append(("learned_pipeline", time.perf_counter() - t0))
    t0 = time.perf_counter()
    baselines.cg_tikhonov_invert(op, tf, baselines.CgConfig(mu=args.mu, tol=args.tol))
    rows.append(("cg_tikhonov", time.perf_counter() - t0))
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["Method", "WallTimeSeconds"])
        for name, t in rows:
            w.writerow([name, f"{t:.4f}"])
    for name, t in rows:
        print(f"{name}: {t:.4f}s")


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="qsmkit",
        description="Susceptibility-mapping pipeline: data synthesis, training, "
                    "inference, baselines and evaluation.",
    )
    p.add_argument("--threads", type=int, default=0,
                   help="advisory parallelism hint (0 = library default)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic training dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--subjects", type=int, default=2)
    s.add_argument("--deformations", type=int, default=3)
    s.add_argument("--dims", default="32,32,32", help="grid dims, e.g. 32,32,32")
    s.add_argument("--classes", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("forward", help="apply the dipole forward model")
    s.add_argument("--chi", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--b0", default="0,0,1")
    s.add_argument("--pad", action="store_true", help="zero-pad to suppress wrap-around")
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("train", help="train the networks end-to-end")
    s.add_argument("--manifest", required=True, help="dataset manifest.json")
    s.add_argument("--out", required=True, help="checkpoint output path")
    s.add_argument("--config", help="JSON config file (flags override)")
    s.add_argument("--report", help="JSON-lines training report path")
    s.add_argument("--init-checkpoint", help="resume from this checkpoint")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--steps", type=int, help="unrolled variational steps")
    s.add_argument("--depth", type=int, help="U-Net depth")
    s.add_argument("--base-channels", dest="base_channels", type=int)
    s.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    s.add_argument("--no-pretrain", action="store_true")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="total field -> susceptibility map")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--tf", required=True, help="total-field volume")
    s.add_argument("--mask", required=True)
    s.add_argument("--out-chi", dest="out_chi", required=True)
    s.add_argument("--out-lf", dest="out_lf", help="also write the predicted local field")
    s.add_argument("--report", help="JSON report path")
    s.add_argument("--phase-scale", dest="phase_scale", type=float, default=1.0,
                   help="constant multiplier converting input phase to field units")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("baseline", help="classical inversion of a local field")
    s.add_argument("--method", choices=["tkd", "cg"], required=True)
    s.add_argument("--field", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--b0", default="0,0,1")
    s.add_argument("--threshold", type=float, default=0.2, help="TKD kernel threshold")
    s.add_argument("--mu", type=float, default=0.1, help="Tikhonov weight")
    s.add_argument("--max-iters", dest="max_iters", type=int, default=200)
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("eval", help="metrics of a reconstruction vs ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--label", default="method")
    s.add_argument("--out", help="append a CSV row here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("slice", help="export a grayscale PGM slice")
    s.add_argument("--volume", required=True)
    s.add_argument("--axis", choices=["x", "y", "z"], default="z")
    s.add_argument("--index", type=int, default=-1, help="-1 = middle slice")
    s.add_argument("--mask", help="window by in-mask percentiles 1-99")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_slice)

    s = sub.add_parser("bench", help="wall-time comparison: learned vs CG")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--tf", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--mu", type=float, default=0.1)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--out", required=True, help="CSV output path")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _echo_config(args)
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except QsmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
