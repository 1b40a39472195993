"""Composite physics-aware loss and the joint training loop.

The loss combines per-channel MSE restricted to each channel's home
subdomain (weighted to balance gradient magnitudes across channels) with a
latent-linearity penalty tying consecutive encoded snapshots to one step of
the generator exponential. Training is full batch: the few-shot datasets
hold 5-21 snapshots, so an epoch is a single optimizer step over all of
them. Optimization uses decoupled weight decay with adaptive moments and a
warmup + cosine-annealing schedule.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from .dataio import _atomic_write, read_blob, write_blob
from .errors import CheckpointError, ConfigError
from .fields import Example, TrajectoryDataset, make_domain
from .models import EncoderConfig, FlowModel, GENERATOR_MODES, assemble_inputs

CKPT_FORMAT_VERSION = 1
LOG_COLUMNS = ("epoch", "lr", "total", "loss_u1", "loss_u2", "loss_p",
               "loss_phi", "loss_lin")


@dataclass(frozen=True)
class LossWeights:
    w_u1: float = 3.0
    w_u2: float = 5.0
    w_p: float = 0.05
    w_phi: float = 1.0
    lambda_lin: float = 1.0
    huber_pressure: bool = False   # robust pressure loss, off by default
    w_grad: float = 0.0            # spatial-gradient penalty, off by default

    def __post_init__(self):
        for name in ("w_u1", "w_u2", "w_p", "w_phi", "lambda_lin", "w_grad"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")

    @classmethod
    def for_example(cls, example) -> "LossWeights":
        """Per-benchmark channel weights."""
        if Example(example) is Example.SD:
            return cls(w_u1=3.0, w_u2=5.0, w_p=0.05, w_phi=1.0)
        return cls(w_u1=3.0, w_u2=3.0, w_p=1.0, w_phi=1.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    peak_lr: float = 5e-4
    weight_decay: float = 2e-5
    warmup_epochs: int = 10
    seed: int = 0
    dt: float | None = None        # defaults to the dataset spacing
    rollout_mode: str = "direct"
    generator_mode: str = "dissipative"
    deterministic: bool = True
    dtype: str = "float64"         # float32 roughly halves CPU epoch time
    generator_lr_mult: float = 20.0  # decay/frequency params need longer strides

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.epochs > 0 and self.warmup_epochs > self.epochs:
            raise ConfigError("warmup_epochs must not exceed epochs")
        if self.rollout_mode not in ("direct", "recursive"):
            raise ConfigError(f"unknown rollout mode {self.rollout_mode!r}")
        if self.generator_mode not in GENERATOR_MODES:
            raise ConfigError(f"unknown generator mode {self.generator_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")


def _region_mse(pred, target, region, huber=False):
    p, t = pred[:, region], target[:, region]
    if huber:
        return F.huber_loss(p, t, delta=1.0)
    return ((p - t) ** 2).mean()


def _grad_penalty(err, region):
    # forward differences of the error field, counted where both cells are home
    dy = (err[:, 1:, :] - err[:, :-1, :]) ** 2
    dx = (err[:, :, 1:] - err[:, :, :-1]) ** 2
    ry = region[1:, :] & region[:-1, :]
    rx = region[:, 1:] & region[:, :-1]
    total = dy[:, ry].sum() + dx[:, rx].sum()
    count = err.shape[0] * (int(ry.sum()) + int(rx.sum()))
    return total / max(count, 1)


def composite_loss(preds, targets, mask, latents, gen, dt, w: LossWeights,
                   forcing=None, times=None):
    """Weighted subdomain reconstruction MSE plus the linearity penalty.

    preds/targets are [T, 4, H, W] aligned in time; latents are the encoded
    snapshots [T, d] used for the linearity term
    mean_k || g_{k+1} - exp(dt*A) g_k ||^2. With a forcing head the forced
    contribution is removed before the step and re-added at the target time.
    Returns (total, components) with detached float components for logging.
    """
    if preds.shape != targets.shape:
        raise ConfigError(
            f"prediction shape {tuple(preds.shape)} != target {tuple(targets.shape)}")
    free = torch.as_tensor(np.asarray(mask) > 0.5)
    porous = ~free
    terms = {
        "loss_u1": w.w_u1 * _region_mse(preds[:, 0], targets[:, 0], free),
        "loss_u2": w.w_u2 * _region_mse(preds[:, 1], targets[:, 1], free),
        "loss_p": w.w_p * _region_mse(preds[:, 2], targets[:, 2], free,
                                      huber=w.huber_pressure),
        "loss_phi": w.w_phi * _region_mse(preds[:, 3], targets[:, 3], porous),
    }
    if w.w_grad > 0:
        gp = sum(_grad_penalty(preds[:, c] - targets[:, c],
                               free if c < 3 else porous) for c in range(4))
        terms["loss_grad"] = w.w_grad * gp
    if latents.shape[0] >= 2:
        if forcing is not None:
            if times is None:
                raise ConfigError("forced linearity term needs snapshot times")
            times = torch.as_tensor(np.asarray(times, dtype=float))
            drive = forcing(times)
            stepped = gen.evolve(latents[:-1] - drive[:-1], dt) + drive[1:]
        else:
            stepped = gen.evolve(latents[:-1], dt)
        lin = ((latents[1:] - stepped) ** 2).sum(dim=-1).mean()
    else:
        lin = torch.zeros((), dtype=preds.dtype)
    terms["loss_lin"] = w.lambda_lin * lin
    total = sum(terms.values())
    components = {k: float(v.detach()) for k, v in terms.items()}
    components["total"] = float(total.detach())
    return total, components


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak_lr, then cosine decay to peak_lr/100."""
    if not 0 <= epoch < cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.peak_lr * epoch / cfg.warmup_epochs
    eta_min = cfg.peak_lr / 100.0
    span = max(cfg.epochs - 1 - cfg.warmup_epochs, 1)
    phase = (epoch - cfg.warmup_epochs) / span
    return eta_min + 0.5 * (cfg.peak_lr - eta_min) * (1.0 + math.cos(math.pi * phase))


def train(ds: TrajectoryDataset, enc_cfg: EncoderConfig, cfg: TrainConfig,
          w: LossWeights | None = None) -> "Checkpoint":
    """Jointly fit encoder, generator, forcing head, and decoder.

    Each epoch encodes every training snapshot, evolves the first latent to
    all training times, decodes, and steps on the composite loss.
    """
    if not ds.is_normalized:
        raise ConfigError("train expects a normalized dataset")
    n_train = ds.n_train
    if n_train < 1:
        raise ConfigError("training window contains no snapshots")
    if cfg.dt is not None and abs(cfg.dt - ds.dt) > 1e-12:
        raise ConfigError(f"config dt {cfg.dt} != dataset dt {ds.dt}")
    if w is None:
        w = LossWeights.for_example(ds.domain.example)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)

    domain = ds.domain
    dtype = getattr(torch, cfg.dtype)
    model = FlowModel(enc_cfg, domain.grid_h, domain.grid_w, domain.mask,
                      cfg.generator_mode, ds.forcing_freq).to(dtype)
    inputs = assemble_inputs(ds, enc_cfg)[:n_train].to(dtype)
    targets = torch.as_tensor(ds.data[:n_train]).to(dtype)
    times = ds.times[:n_train]
    t0, dt = float(times[0]), float(ds.dt)

    gen_ids = {id(p) for p in model.generator.parameters()}
    groups = [
        {"params": [p for p in model.parameters() if id(p) not in gen_ids],
         "lr_mult": 1.0},
        {"params": [p for p in model.parameters() if id(p) in gen_ids],
         "lr_mult": cfg.generator_lr_mult},
    ]
    opt = torch.optim.AdamW(groups, lr=cfg.peak_lr, betas=(0.9, 0.999),
                            eps=1e-8, weight_decay=cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr * group["lr_mult"]
        opt.zero_grad()
        latents = model.encoder(inputs)
        evolved = model.latent_rollout(latents[0], times, t0, dt, cfg.rollout_mode)
        preds = model.decoder(evolved)
        total, comps = composite_loss(
            preds, targets, domain.mask, latents, model.generator, dt, w,
            forcing=model.forcing, times=times)
        if not math.isfinite(comps["total"]):
            raise RuntimeError(
                f"non-finite loss at epoch {epoch}; components: {comps}")
        total.backward()
        opt.step()
        history.append({"epoch": epoch, "lr": lr, **comps})

    params = {k: v.detach().numpy().copy() for k, v in model.state_dict().items()}
    return Checkpoint(
        params=params, enc_cfg=enc_cfg, train_cfg=cfg, weights=w,
        example=domain.example.value, grid=(domain.grid_h, domain.grid_w),
        t0=t0, dt=dt, train_horizon=ds.train_horizon,
        forcing_freq=ds.forcing_freq, history=history)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Named-parameter blob plus a self-describing manifest."""

    params: dict[str, np.ndarray]
    enc_cfg: EncoderConfig
    train_cfg: TrainConfig
    weights: LossWeights
    example: str
    grid: tuple[int, int]
    t0: float
    dt: float
    train_horizon: float
    forcing_freq: float | None = None
    history: list[dict] = field(default_factory=list)


def save_checkpoint(ckpt: Checkpoint, outdir: str):
    """Write ckpt.json (index + configs) and ckpt.f32 (raw blob) atomically."""
    os.makedirs(outdir, exist_ok=True)
    index = write_blob(os.path.join(outdir, "ckpt.f32"), ckpt.params)
    manifest = {
        "format_version": CKPT_FORMAT_VERSION,
        "encoder_config": asdict(ckpt.enc_cfg),
        "train_config": asdict(ckpt.train_cfg),
        "loss_weights": asdict(ckpt.weights),
        "example_id": ckpt.example,
        "grid": list(ckpt.grid),
        "t0": ckpt.t0,
        "dt": ckpt.dt,
        "train_horizon": ckpt.train_horizon,
        "forcing_freq": ckpt.forcing_freq,
        "tensors": index,
        "history": ckpt.history,
    }
    _atomic_write(os.path.join(outdir, "ckpt.json"),
                  json.dumps(manifest, indent=2).encode())


def load_checkpoint(path: str) -> Checkpoint:
    mpath = os.path.join(path, "ckpt.json")
    if not os.path.isfile(mpath):
        raise ConfigError(f"no checkpoint index at {mpath}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CKPT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {manifest.get('format_version')}")
    params = read_blob(os.path.join(path, "ckpt.f32"), manifest["tensors"])
    return Checkpoint(
        params=params,
        enc_cfg=EncoderConfig(**manifest["encoder_config"]),
        train_cfg=TrainConfig(**manifest["train_config"]),
        weights=LossWeights(**manifest["loss_weights"]),
        example=manifest["example_id"],
        grid=tuple(manifest["grid"]),
        t0=manifest["t0"],
        dt=manifest["dt"],
        train_horizon=manifest["train_horizon"],
        forcing_freq=manifest.get("forcing_freq"),
        history=manifest.get("history", []),
    )


def restore_model(ckpt: Checkpoint) -> FlowModel:
    """Rebuild the model graph described by the checkpoint and load weights."""
    H, W = ckpt.grid
    domain = make_domain(Example(ckpt.example), H, W)
    model = FlowModel(ckpt.enc_cfg, H, W, domain.mask,
                      ckpt.train_cfg.generator_mode, ckpt.forcing_freq)
    state = {k: torch.as_tensor(v) for k, v in ckpt.params.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint does not match its manifest: {exc}")
    return model


def write_train_log(history: list[dict], path: str):
    """Per-epoch CSV: epoch,lr,total,loss_u1,loss_u2,loss_p,loss_phi,loss_lin."""
    lines = [",".join(LOG_COLUMNS)]
    for row in history:
        lines.append(",".join(
            f"{row[c]:.10g}" if c != "epoch" else str(row[c]) for c in LOG_COLUMNS))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def finite_difference_check(loss_fn, parameters, n_samples: int = 20,
                            step: float = 1e-4, seed: int = 0):
    """Compare autograd derivatives of loss_fn() against central differences.

    Samples n_samples random scalar entries across the parameter list and
    returns (analytic, numeric, relative_error) triples. Run under float64
    parameters; the FD truncation error would swamp float32.
    """
    params = [p for p in parameters if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_samples):
        i = int(rng.integers(len(params)))
        p = params[i]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = 0.0 if grads[i] is None else float(grads[i][idx])
        with torch.no_grad():
            orig = float(p[idx])
            p[idx] = orig + step
        plus = float(loss_fn())
        with torch.no_grad():
            p[idx] = orig - step
        minus = float(loss_fn())
        with torch.no_grad():
            p[idx] = orig
        numeric = (plus - minus) / (2.0 * step)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        rows.append((analytic, numeric, rel))
    return rows
