"""Joint training of the background-removal U-Net and the variational
network, plus inference and noise-robustness evaluation.

One training step follows the end-to-end scheme: predict the local field
from the total field, initialize the unrolled reconstruction at that
prediction, run the S variational steps, and minimize the in-mask L1
reconstruction error of both the susceptibility map and the predicted
local field, backpropagating through the whole unrolled graph.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dipole as dp
from .bgnet import BgNetConfig, bgnet_forward, init_bgnet_params
from .errors import ConfigError, DataError, NumericalError
from .varnet import VarNetConfig, init_varnet_params, varnet_reconstruct
from .volume import KGrid, Mask3D, Volume3D

__all__ = [
    "TrainConfig",
    "TrainReport",
    "loss_recon",
    "init_params",
    "pretrain_stage",
    "train_end_to_end",
    "run_inference",
    "evaluate_noise_robustness",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 2
    lr: float = 4e-4
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    bgnet: BgNetConfig = field(default_factory=BgNetConfig)
    varnet: VarNetConfig = field(default_factory=VarNetConfig)
    b0_axis: tuple = (0.0, 0.0, 1.0)
    pretrain: bool = True
    pretrain_epochs: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError(f"invalid training config: {self}")


@dataclass
class TrainReport:
    """Per-epoch telemetry of one training run."""

    epochs: list = field(default_factory=list)
    checkpoint_path: str = None

    def log(self, epoch, loss, loss_chi, loss_lf, wall, pnorm):
        for v in (loss, loss_chi, loss_lf):
            if not np.isfinite(v):
                raise NumericalError(f"non-finite loss at epoch {epoch}: {v}")
        self.epochs.append({
            "epoch": epoch,
            "loss": float(loss),
            "loss_chi": float(loss_chi),
            "loss_lf": float(loss_lf),
            "wall_time_s": float(wall),
            "param_norm": float(pnorm),
        })


def loss_recon(x_hat: Volume3D, chi_gt: Volume3D, lf_pred: Volume3D,
               lf_gt: Volume3D, mask: Mask3D) -> float:
    """In-mask L1 reconstruction error:
    mean|x_hat - chi| + mean|lf_pred - lf|, both over brain voxels."""
    for v in (x_hat, chi_gt, lf_pred, lf_gt):
        if v.dims != mask.dims:
            raise DataError(f"dims mismatch: {v.dims} vs mask {mask.dims}")
    m = mask.data
    if mask.count == 0:
        raise DataError("empty mask")
    t1 = np.abs(x_hat.data[m] - chi_gt.data[m]).mean()
    t2 = np.abs(lf_pred.data[m] - lf_gt.data[m]).mean()
    return float(t1 + t2)


def _masked_l1(pred: ad.Tensor, target: np.ndarray, mask: np.ndarray) -> ad.Tensor:
    """Differentiable in-mask mean absolute error; `pred` is (1,1,X,Y,Z)."""
    diff = ad.sub(pred, ad.Tensor(target[None, None]))
    masked = ad.scale(diff, mask[None, None].astype(np.float64))
    return ad.scale(ad.sum_(ad.abs_(masked)), 1.0 / mask.sum())


def init_params(cfg: TrainConfig, seed: int = None) -> dict:
    s = cfg.seed if seed is None else seed
    params = init_bgnet_params(cfg.bgnet, seed=s)
    params.update(init_varnet_params(cfg.varnet, seed=s + 1))
    return params


def _operator_cache():
    cache = {}

    def get(dims, voxel_size, b0):
        key = (dims, voxel_size, b0)
        if key not in cache:
            cache[key] = dp.build_dipole(KGrid(dims, voxel_size), b0)
        return cache[key]

    return get


def _collect_grads(params: dict) -> dict:
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def _sample_losses(params, cfg, sample, op, stage: str):
    """Forward pass + tape for one sample. Returns (tape, loss, chi_l1, lf_l1)."""
    tf, lf, chi, mask = sample.total_field, sample.local_field, sample.chi, sample.mask
    with ad.Tape() as tape:
        if stage == "varnet":
            lf_pred = ad.Tensor(lf.data[None, None])
        else:
            lf_pred = bgnet_forward(params, cfg.bgnet, tf, mask)
        loss_lf = _masked_l1(lf_pred, lf.data, mask.data)
        if stage == "bgnet":
            loss = loss_lf
            loss_chi = ad.Tensor(0.0)
        else:
            x_hat = varnet_reconstruct(params, cfg.varnet, op, lf_pred)
            loss_chi = _masked_l1(x_hat, chi.data, mask.data)
            loss = ad.add(loss_chi, loss_lf) if stage == "joint" else loss_chi
    return tape, loss, float(loss_chi.data), float(loss_lf.data)


def _run_epochs(params, cfg, samples, stage, epochs, state, report):
    rng = np.random.default_rng(cfg.seed)
    n = len(samples)
    if cfg.batch_size > n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    get_op = _operator_cache()
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        tot = tot_chi = tot_lf = 0.0
        for start in range(0, n - n % cfg.batch_size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = None
            for idx in batch:
                s = samples[idx]
                op = get_op(s.chi.dims, s.chi.voxel_size, cfg.b0_axis)
                tape, loss, lc, ll = _sample_losses(params, cfg, s, op, stage)
                tape.backward(loss)
                g = _collect_grads(params)
                if acc is None:
                    acc = g
                else:
                    for k in acc:
                        acc[k] += g[k]
                tot += float(loss.data)
                tot_chi += lc
                tot_lf += ll
            for k in acc:
                acc[k] /= len(batch)
            ad.adam_step(params, acc, state)
        steps = (n // cfg.batch_size) * cfg.batch_size
        pnorm = np.sqrt(sum(float((p.data**2).sum()) for p in params.values()))
        report.log(epoch, tot / steps, tot_chi / steps, tot_lf / steps,
                   time.perf_counter() - t0, pnorm)
    return report


def pretrain_stage(which: str, cfg: TrainConfig, samples, params: dict = None):
    """Train one component in isolation.

    'bgnet': local-field prediction loss only. 'varnet': reconstruction
    loss with the ground-truth local field as input.
    """
    if which not in ("bgnet", "varnet"):
        raise ConfigError(f"unknown pretrain stage {which!r}")
    if params is None:
        params = init_params(cfg)
    state = ad.AdamState(lr=cfg.lr, beta1=cfg.betas[0], beta2=cfg.betas[1])
    report = TrainReport()
    _run_epochs(params, cfg, list(samples), which, cfg.pretrain_epochs, state, report)
    return params, report


def train_end_to_end(cfg: TrainConfig, samples, params: dict = None):
    """Joint training of both networks; returns (params, TrainReport)."""
    samples = list(samples)
    if params is None:
        params = init_params(cfg)
        if cfg.pretrain:
            pretrain_stage("bgnet", cfg, samples, params)
            pretrain_stage("varnet", cfg, samples, params)
    state = ad.AdamState(lr=cfg.lr, beta1=cfg.betas[0], beta2=cfg.betas[1])
    report = TrainReport()
    _run_epochs(params, cfg, samples, "joint", cfg.epochs, state, report)
    return params, report


def run_inference(params: dict, cfg: TrainConfig, tf: Volume3D, mask: Mask3D):
    """Full pipeline on one volume: (chi_hat, lf_pred, consistency residual)."""
    op = dp.build_dipole(KGrid(tf.dims, tf.voxel_size), cfg.b0_axis)
    lf_pred_t = bgnet_forward(params, cfg.bgnet, tf, mask)
    x_hat_t = varnet_reconstruct(params, cfg.varnet, op, lf_pred_t)
    lf_pred = tf.like(lf_pred_t.data[0, 0])
    chi_hat = tf.like(x_hat_t.data[0, 0])
    num = np.linalg.norm(dp.forward(op, chi_hat).data - lf_pred.data)
    den = np.linalg.norm(lf_pred.data)
    residual = float(num / den) if den > 0 else 0.0
    return chi_hat, lf_pred, residual


def evaluate_noise_robustness(params: dict, cfg: TrainConfig, sample,
                              variance: float, seed: int = 0) -> dict:
    """NRMSE and data-consistency residual with and without input noise."""
    from .metrics import nrmse  # local import: metrics depends on nothing here

    clean_chi, _, clean_res = run_inference(params, cfg, sample.total_field, sample.mask)
    noisy_tf = dp.add_gaussian_noise(sample.total_field, 0.0, variance, seed)
    noisy_tf = noisy_tf.like(noisy_tf.data * sample.mask.data)
    noisy_chi, _, noisy_res = run_inference(params, cfg, noisy_tf, sample.mask)
    return {
        "variance": float(variance),
        "nrmse_clean": float(nrmse(clean_chi, sample.chi, sample.mask)),
        "nrmse_noisy": float(nrmse(noisy_chi, sample.chi, sample.mask)),
        "residual_clean": clean_res,
        "residual_noisy": noisy_res,
    }
