"""Train the reference model used by the evaluation tests.

Staged recipe:

1. Pretrain the background remover on total fields. This is the
   accuracy bottleneck of the whole pipeline, so it gets a large
   synthetic cohort (synthetic data is free) and a higher learning
   rate.
2. Pretrain the inversion network on noise-augmented local fields.
   Training it on exact local fields looks attractive but leaves the
   unrolled recurrence violently unstable on slightly-off inputs; the
   added noise matches the background remover's prediction error and
   keeps the network well-conditioned off the exact dipole manifold.
3. Fine-tune both end to end at a lower learning rate, so the
   inversion network adapts to the background remover's actual
   predictions.

After each stage the script scores the pipeline on a held-out cohort
against the TKD baseline and keeps the checkpoint with the most wins.
Pass --resume to continue from an existing checkpoint and --skip N to
drop the first N stages.

Single-core runtime is a few hours. Output: tests/data/reference.nxqc.
"""

import argparse
import dataclasses
import os
import time

from qsmkit import baselines, dipole as dp, metrics, synth, trainer, volio
from qsmkit.autodiff import Tensor
from qsmkit.bgnet import BgNetConfig
from qsmkit.varnet import VarNetConfig
from qsmkit.volume import KGrid

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, os.pardir, "tests", "data", "reference.nxqc")

DIMS = (16, 16, 16)
N_SUBJECTS = 64          # x5 deformations = 320 training samples
TRAIN_SEED = 50          # held-out cohort uses seed 777; keep these distinct
HELD_SEED = 777
INPUT_NOISE_VAR = 0.004  # approximately the background remover's error power


def score(params, cfg, held):
    """Count held-out samples where the pipeline beats TKD, clean and noisy."""
    clean = noisy = 0
    details = []
    for k, s in enumerate(held):
        op = dp.build_dipole(KGrid(s.chi.dims, s.chi.voxel_size))
        chi_hat, _, _ = trainer.run_inference(params, cfg, s.total_field, s.mask)
        tkd = baselines.tkd_invert(op, s.local_field, baselines.TkdConfig(threshold=0.2))
        ours = metrics.nrmse(chi_hat, s.chi, s.mask)
        theirs = metrics.nrmse(tkd, s.chi, s.mask)
        clean += ours < theirs
        details.append((ours, theirs))

        noisy_tf = dp.add_gaussian_noise(s.total_field, 0.0, 0.005, seed=1000 + k)
        noisy_tf = noisy_tf.like(noisy_tf.data * s.mask.data)
        noisy_lf = dp.add_gaussian_noise(s.local_field, 0.0, 0.005, seed=2000 + k)
        chi_n, _, _ = trainer.run_inference(params, cfg, noisy_tf, s.mask)
        tkd_n = baselines.tkd_invert(op, noisy_lf, baselines.TkdConfig(threshold=0.2))
        noisy += metrics.ddnrmse(chi_n, s.chi, s.mask) < metrics.ddnrmse(tkd_n, s.chi, s.mask)
    for ours, theirs in details:
        print(f"  nrmse ours {ours:5.1f}  tkd {theirs:5.1f}")
    print(f"  wins: clean {clean}/10, noisy {noisy}/10", flush=True)
    return clean + noisy


def noisy_lf_copy(sample, seed):
    """Sample with Gaussian noise added to the local field (varnet input)."""
    lf = dp.add_gaussian_noise(sample.local_field, 0.0, INPUT_NOISE_VAR, seed)
    lf = lf.like(lf.data * sample.mask.data)
    return dataclasses.replace(sample, local_field=lf)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--resume", action="store_true",
                    help="start from the existing checkpoint")
    ap.add_argument("--skip", type=int, default=0,
                    help="number of leading stages to skip")
    args = ap.parse_args()

    spec = synth.BackgroundSourceSpec()
    train = list(synth.generate_dataset(N_SUBJECTS, 5, DIMS, spec, seed=TRAIN_SEED))
    held = list(synth.generate_dataset(5, 2, DIMS, spec, seed=HELD_SEED))
    print(f"{len(train)} training samples, {len(held)} held out", flush=True)

    cfg = trainer.TrainConfig(
        epochs=15, batch_size=2, lr=4e-4, seed=0,
        bgnet=BgNetConfig(depth=2, base_channels=16),
        varnet=VarNetConfig(steps=6, reg_channels=16),
        pretrain=False,
    )
    meta = {
        "bgnet": {"depth": cfg.bgnet.depth, "base_channels": cfg.bgnet.base_channels},
        "varnet": {"steps": cfg.varnet.steps, "reg_channels": cfg.varnet.reg_channels},
        "b0_axis": list(cfg.b0_axis),
    }
    if args.resume:
        params, _, _ = volio.read_checkpoint(OUT)
        params = {k: Tensor(v.data) for k, v in params.items()}
        print("resumed from", OUT, flush=True)
    else:
        params = trainer.init_params(cfg)
    best = -1

    def stage(label, fn):
        nonlocal params, best
        t0 = time.time()
        params, rep = fn(params)
        losses = [e["loss"] for e in rep.epochs]
        print(f"{label}: loss {losses[0]:.4f} -> {losses[-1]:.4f} "
              f"({time.time() - t0:.0f}s)", flush=True)
        s = score(params, cfg, held)
        if s > best:
            best = s
            volio.write_checkpoint(OUT, params, meta=meta)
            print(f"  saved checkpoint (score {s}/20)", flush=True)

    fast = dataclasses.replace(cfg, lr=1e-3, pretrain_epochs=30)
    fast_short = dataclasses.replace(fast, pretrain_epochs=20)
    noisy_train = [noisy_lf_copy(s, 10_000 + i) for i, s in enumerate(train)]
    stages = [
        ("bgnet pretrain",
         lambda p: trainer.pretrain_stage("bgnet", fast, train, p)),
        ("varnet pretrain (noisy inputs)",
         lambda p: trainer.pretrain_stage("varnet", fast_short, noisy_train, p)),
    ] + [
        (f"joint round {r}",
         lambda p: trainer.train_end_to_end(cfg, train, p))
        for r in range(3)
    ]
    for label, fn in stages[args.skip:]:
        stage(label, fn)
        if best >= 20:
            break
    print("done; best score", best, flush=True)


if __name__ == "__main__":
    main()
