"""Metrics, rollout prediction, error-growth and robustness experiments.

All metrics are computed on the normalized fields over each channel's home
subdomain, mirroring how the training data is scaled. The relative L2
error is left undefined (None, "-" in CSV) when the reference channel is
identically zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import torch

from .errors import ConfigError
from .fields import CHANNELS, FieldSnapshot, TrajectoryDataset, channel_region
from .generators import edmd_fit
from .models import assemble_inputs
from .training import Checkpoint, restore_model

UNDEFINED = "-"


@dataclass(frozen=True)
class MetricsRow:
    time: float
    channel: str
    mse: float
    mae: float
    max_err: float
    rel_l2: float | None  # None when the reference norm vanishes
    rmse: float


def metrics(pred: np.ndarray, truth: np.ndarray, region: np.ndarray,
            time: float = math.nan, channel: str = "") -> MetricsRow:
    """Pointwise error statistics over one channel's home region."""
    if pred.shape != truth.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {truth.shape}")
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ConfigError("empty evaluation region")
    err = pred[region] - truth[region]
    ref = truth[region]
    mse = float(np.mean(err**2))
    ref_norm = float(np.linalg.norm(ref))
    rel = float(np.linalg.norm(err) / ref_norm) if ref_norm > 0 else None
    return MetricsRow(
        time=time, channel=channel, mse=mse, mae=float(np.mean(np.abs(err))),
        max_err=float(np.max(np.abs(err))), rel_l2=rel, rmse=math.sqrt(mse))


def _lookup_truth(ds: TrajectoryDataset, t: float) -> np.ndarray:
    hits = np.nonzero(np.abs(ds.times - t) <= 1e-9)[0]
    if len(hits) == 0:
        raise ConfigError(f"dataset holds no ground truth at t={t}")
    return ds.data[hits[0]]


def rollout(ckpt: Checkpoint, ds: TrajectoryDataset, times,
            mode: str = "direct") -> list[FieldSnapshot]:
    """Encode the dataset's first snapshot, evolve to each time, decode."""
    if not ds.is_normalized:
        raise ConfigError("rollout expects a normalized dataset")
    if ds.domain.example.value != ckpt.example or ds.domain.shape != tuple(ckpt.grid):
        raise ConfigError("checkpoint was trained on a different dataset geometry")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    t0 = float(ds.times[0])
    if np.any(times < t0 - 1e-12):
        raise ValueError(f"rollout times must be >= t0 = {t0}")
    model = restore_model(ckpt)
    model.eval()
    x0 = assemble_inputs(ds, ckpt.enc_cfg)[0]
    with torch.no_grad():
        preds = model.predict(x0, times, t0, ckpt.dt, mode).numpy()
    return [FieldSnapshot(float(t), preds[i], ds.domain.mask)
            for i, t in enumerate(times)]


def evaluate(ckpt: Checkpoint, ds: TrajectoryDataset, times,
             mode: str = "direct") -> list[MetricsRow]:
    """Metric rows (4 channels per time) for rollout against ground truth."""
    snaps = rollout(ckpt, ds, times, mode)
    rows = []
    for snap in snaps:
        truth = _lookup_truth(ds, snap.t)
        for c, name in enumerate(CHANNELS):
            region = channel_region(ds.domain.mask, name)
            rows.append(metrics(snap.fields[c], truth[c], region, snap.t, name))
    return rows


def rollout_rmse(ckpt: Checkpoint, ds: TrajectoryDataset, times,
                 mode: str = "direct") -> np.ndarray:
    """Aggregate RMSE per time over every channel's home region."""
    snaps = rollout(ckpt, ds, times, mode)
    out = np.empty(len(snaps))
    regions = [channel_region(ds.domain.mask, c) for c in CHANNELS]
    for i, snap in enumerate(snaps):
        truth = _lookup_truth(ds, snap.t)
        sq, n = 0.0, 0
        for c, region in enumerate(regions):
            err = snap.fields[c][region] - truth[c][region]
            sq += float(np.sum(err**2))
            n += err.size
        out[i] = math.sqrt(sq / n)
    return out


# ---------------------------------------------------------------------------
# Error growth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    slope: float
    intercept: float
    r2_linear: float
    exp_ratio: float  # rmse(t_end) / rmse(t_mid); divergence indicator


def error_growth_fit(series) -> GrowthFit:
    """Ordinary least-squares line through an (t, rmse) series."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ConfigError("error-growth fit needs >= 3 (t, rmse) points")
    t, r = arr[:, 0], arr[:, 1]
    if np.ptp(t) == 0:
        raise ConfigError("degenerate series: all times equal")
    slope, intercept = np.polyfit(t, r, 1)
    resid = r - (slope * t + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((r - r.mean()) ** 2))
    if ss_tot < 1e-300:
        r2 = 1.0 if ss_res < 1e-300 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    mid = r[len(r) // 2]
    ratio = float(r[-1] / mid) if mid > 0 else math.inf
    return GrowthFit(float(slope), float(intercept), float(r2), ratio)


def phase_average(times, values, period: float):
    """Average a series over consecutive whole-period bins.

    Returns (bin_centers, bin_means); trailing bins shorter than the fullest
    one are dropped so every mean covers the same phase span.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.floor((times - times[0]) / period + 1e-9).astype(int)
    counts = np.bincount(idx)
    full = counts.max()
    centers, means = [], []
    for k in np.unique(idx):
        sel = idx == k
        if counts[k] == full:
            centers.append(times[sel].mean())
            means.append(values[sel].mean())
    return np.asarray(centers), np.asarray(means)


# ---------------------------------------------------------------------------
# Noise robustness
# ---------------------------------------------------------------------------

def inject_noise(fieldarr: np.ndarray, delta: float, seed: int) -> np.ndarray:
    """Additive white Gaussian noise scaled by delta * max|field|."""
    if delta < 0:
        raise ConfigError("noise level delta must be >= 0")
    fieldarr = np.asarray(fieldarr, dtype=float)
    if delta == 0:
        return fieldarr.copy()
    amp = delta * np.max(np.abs(fieldarr))
    xi = np.random.default_rng(seed).standard_normal(fieldarr.shape)
    return fieldarr + amp * xi


def r2_score(pred, ref) -> float:
    """Coefficient of determination of pred against a non-constant ref."""
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ConfigError("r2_score needs equal-length inputs")
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0:
        raise ConfigError("r2_score is undefined for a constant reference")
    return 1.0 - float(np.sum((pred - ref) ** 2)) / ss_tot


def denoise_r2(ckpt: Checkpoint, ds: TrajectoryDataset, times, delta: float,
               seed: int) -> list[dict]:
    """Reconstruct noise-corrupted snapshots through the latent bottleneck.

    For each time, perturbs the physical channels of the clean snapshot,
    encodes and decodes them, and reports R^2 against the clean snapshot
    for both the noisy input and the model output (home regions only).
    """
    model = restore_model(ckpt)
    model.eval()
    clean_inputs = assemble_inputs(ds, ckpt.enc_cfg)
    regions = [channel_region(ds.domain.mask, c) for c in CHANNELS]
    master = np.random.default_rng(seed)
    rows = []
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        i = int(np.nonzero(np.abs(ds.times - t) <= 1e-9)[0][0])
        clean = ds.data[i]
        noisy = np.stack([
            inject_noise(clean[c], delta, int(master.integers(2**63)))
            for c in range(len(CHANNELS))])
        x = clean_inputs[i].clone()
        x[:len(CHANNELS)] = torch.as_tensor(noisy)
        with torch.no_grad():
            out = model.decoder(model.encoder(x.unsqueeze(0))[0]).numpy()
        ref = np.concatenate([clean[c][r] for c, r in enumerate(regions)])
        noisy_v = np.concatenate([noisy[c][r] for c, r in enumerate(regions)])
        model_v = np.concatenate([out[c][r] for c, r in enumerate(regions)])
        rows.append({
            "time": float(t),
            "r2_noisy": r2_score(noisy_v, ref),
            "r2_model": r2_score(model_v, ref),
        })
    return rows


# ---------------------------------------------------------------------------
# CSV emission (schemas are part of the external contract)
# ---------------------------------------------------------------------------

def write_metrics_csv(rows: list[MetricsRow], path: str):
    """time,channel,mse,mae,max_err,rel_l2,rmse with '-' for undefined rel_l2."""
    from .dataio import _atomic_write
    lines = ["time,channel,mse,mae,max_err,rel_l2,rmse"]
    for r in rows:
        rel = UNDEFINED if r.rel_l2 is None else f"{r.rel_l2:.10g}"
        lines.append(f"{r.time:.10g},{r.channel},{r.mse:.10g},{r.mae:.10g},"
                     f"{r.max_err:.10g},{rel},{r.rmse:.10g}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def write_rmse_csv(times, rmse, path: str):
    from .dataio import _atomic_write
    lines = ["t,rmse"]
    lines += [f"{t:.10g},{r:.10g}" for t, r in zip(times, rmse)]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def write_noise_csv(rows: list[dict], path: str):
    from .dataio import _atomic_write
    lines = ["time,r2_noisy,r2_model"]
    lines += [f"{r['time']:.10g},{r['r2_noisy']:.10g},{r['r2_model']:.10g}"
              for r in rows]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


# ---------------------------------------------------------------------------
# Estimator sample-complexity study
# ---------------------------------------------------------------------------

def convergence_study(d: int, sample_sizes, noise_sigma: float, seed: int,
                      n_repeats: int = 20, dt: float = 0.1) -> dict:
    """Frobenius error of the latent-operator fit versus sample count.

    Draws one random stable generator, then for each sample size M fits the
    operator from M noisy latent pairs and records the recovery error;
    reports the log-log slope across sample sizes (the estimation error of
    a least-squares fit shrinks like M^(-1/2)).
    """
    sizes = [int(m) for m in sample_sizes]
    if sorted(sizes) != sizes:
        raise ConfigError("sample_sizes must be increasing")
    rng = np.random.default_rng(seed)
    tri = np.tril(rng.standard_normal((d, d))) / math.sqrt(d)
    skew = rng.standard_normal((d, d)) / math.sqrt(d)
    A_true = -(tri @ tri.T) + 0.5 * (skew - skew.T)
    K_true = scipy.linalg.expm(dt * A_true)
    errors = np.empty((len(sizes), n_repeats))
    for j, M in enumerate(sizes):
        for r in range(n_repeats):
            G = rng.standard_normal((M, d))
            Gp = G @ K_true.T
            G_noisy = G + noise_sigma * rng.standard_normal(G.shape)
            Gp_noisy = Gp + noise_sigma * rng.standard_normal(Gp.shape)
            A_hat = edmd_fit((G_noisy, Gp_noisy), dt)
            errors[j, r] = np.linalg.norm(A_hat - A_true, "fro")
    mean_err = errors.mean(axis=1)
    slope = float(np.polyfit(np.log(sizes), np.log(mean_err), 1)[0]) \
        if noise_sigma > 0 else math.nan
    return {
        "sample_sizes": sizes,
        "errors": errors,
        "mean_errors": mean_err,
        "loglog_slope": slope,
    }
