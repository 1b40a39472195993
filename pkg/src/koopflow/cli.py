"""Command-line front end: reproducible dataset/train/predict/eval runs.

Every writing subcommand serializes its resolved configuration into the
output directory, so a run can be reproduced from its artifacts alone.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np
import torch

from . import evaluation, fields, generators, training
from .dataio import _atomic_write, load_dataset, save_dataset
from .errors import ConfigError
from .fields import Example
from .models import EncoderConfig
from .training import Checkpoint, LossWeights, TrainConfig


def _write_json(path: str, payload: dict):
    _atomic_write(path, json.dumps(payload, indent=2, default=str).encode())


def _resolved_config(ns: argparse.Namespace) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(ns).items()) if k not in skip}


def _outdir(ns) -> str:
    os.makedirs(ns.out, exist_ok=True)
    return ns.out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(ns) -> int:
    domain = fields.make_domain(Example(ns.example), ns.grid_h or ns.grid, ns.grid)
    ds = fields.generate_dataset(domain, ns.t0, ns.t_end, ns.dt, ns.train_horizon,
                                 forcing_freq=ns.freq, ramp_T=ns.ramp)
    if not ns.raw:
        ds = fields.normalize(ds)
    save_dataset(ds, ns.out, force=ns.force)
    _write_json(os.path.join(ns.out, "config.json"), _resolved_config(ns))
    print(f"wrote {len(ds)} snapshots ({ds.n_train} in the training window) "
          f"to {ns.out}")
    return 0


def _loss_weights(ns, example) -> LossWeights:
    base = LossWeights.for_example(example)
    return LossWeights(
        w_u1=base.w_u1 if ns.w_u1 is None else ns.w_u1,
        w_u2=base.w_u2 if ns.w_u2 is None else ns.w_u2,
        w_p=base.w_p if ns.w_p is None else ns.w_p,
        w_phi=base.w_phi if ns.w_phi is None else ns.w_phi,
        lambda_lin=ns.lambda_lin,
        huber_pressure=ns.huber_pressure,
        w_grad=ns.w_grad,
    )


_DEFAULT_GENERATOR = {
    Example.SD: "dissipative",
    Example.NSD: "conservative",
    Example.FORCED: "forced",
}


def cmd_train(ns) -> int:
    ds = load_dataset(ns.data)
    enc_cfg = EncoderConfig(
        patch_size=ns.patch, embed_dim=ns.embed_dim, depth=ns.depth,
        heads=ns.heads, latent_dim=ns.latent_dim or ns.embed_dim,
        harmonic_freqs=ns.harmonics)
    gen_mode = ns.generator or _DEFAULT_GENERATOR[ds.domain.example]
    cfg = TrainConfig(
        epochs=ns.epochs, peak_lr=ns.lr, weight_decay=ns.weight_decay,
        warmup_epochs=ns.warmup, seed=ns.seed, rollout_mode=ns.rollout,
        generator_mode=gen_mode, deterministic=ns.deterministic)
    w = _loss_weights(ns, ds.domain.example)
    ckpt = training.train(ds, enc_cfg, cfg, w)
    out = _outdir(ns)
    training.save_checkpoint(ckpt, out)
    training.write_train_log(ckpt.history, os.path.join(out, "train_log.csv"))
    _write_json(os.path.join(out, "config.json"),
                {**_resolved_config(ns), **asdict(cfg), **asdict(w),
                 **asdict(enc_cfg)})
    final = ckpt.history[-1]["total"] if ckpt.history else float("nan")
    print(f"trained {cfg.epochs} epochs (generator={gen_mode}); "
          f"final loss {final:.6g}; checkpoint in {out}")
    return 0


def _parse_times(ns, ds) -> np.ndarray:
    if ns.times:
        return np.asarray(ns.times, dtype=float)
    return np.asarray(ds.times, dtype=float)


def cmd_predict(ns) -> int:
    ckpt = training.load_checkpoint(ns.ckpt)
    ds = load_dataset(ns.data)
    times = _parse_times(ns, ds)
    snaps = evaluation.rollout(ckpt, ds, times, ns.rollout)
    out = _outdir(ns)
    pred = np.stack([s.fields for s in snaps])
    pred_ds = fields.TrajectoryDataset(
        domain=ds.domain, times=times, data=pred, dt=ckpt.dt,
        train_horizon=ckpt.train_horizon, norm_scale=ds.norm_scale,
        zero_channels=ds.zero_channels, forcing_freq=ds.forcing_freq,
        ramp_T=ds.ramp_T)
    save_dataset(pred_ds, out, force=ns.force)
    _write_json(os.path.join(out, "config.json"), _resolved_config(ns))
    print(f"wrote {len(snaps)} predicted snapshots to {out}")
    return 0


def cmd_eval(ns) -> int:
    ckpt = training.load_checkpoint(ns.ckpt)
    ds = load_dataset(ns.data)
    times = _parse_times(ns, ds)
    rows = evaluation.evaluate(ckpt, ds, times, ns.rollout)
    out = _outdir(ns)
    evaluation.write_metrics_csv(rows, os.path.join(out, "metrics.csv"))
    for row in rows:
        rel = UNDEF if row.rel_l2 is None else f"{100 * row.rel_l2:.2f}%"
        print(f"t={row.time:g} {row.channel}: mse={row.mse:.3e} "
              f"mae={row.mae:.3e} max={row.max_err:.3e} rel_l2={rel}")
    if ns.error_growth:
        rmse = evaluation.rollout_rmse(ckpt, ds, times, ns.rollout)
        evaluation.write_rmse_csv(times, rmse, os.path.join(out, "error_growth.csv"))
        fit = evaluation.error_growth_fit(np.column_stack([times, rmse]))
        _write_json(os.path.join(out, "error_growth.json"), asdict(fit))
        print(f"error growth: slope={fit.slope:.3e} r2={fit.r2_linear:.4f} "
              f"exp_ratio={fit.exp_ratio:.2f}")
    if ns.noise is not None:
        noise_rows = evaluation.denoise_r2(ckpt, ds, times, ns.noise, ns.seed)
        evaluation.write_noise_csv(noise_rows, os.path.join(out, "noise_r2.csv"))
        for row in noise_rows:
            print(f"t={row['time']:g}: r2_noisy={row['r2_noisy']:.5f} "
                  f"r2_model={row['r2_model']:.5f}")
    _write_json(os.path.join(out, "config.json"), _resolved_config(ns))
    return 0


def cmd_noise(ns) -> int:
    ckpt = training.load_checkpoint(ns.ckpt)
    ds = load_dataset(ns.data)
    times = _parse_times(ns, ds)
    rows = evaluation.denoise_r2(ckpt, ds, times, ns.delta, ns.seed)
    out = _outdir(ns)
    evaluation.write_noise_csv(rows, os.path.join(out, "noise_r2.csv"))
    _write_json(os.path.join(out, "config.json"), _resolved_config(ns))
    wins = sum(r["r2_model"] > r["r2_noisy"] for r in rows)
    print(f"model beats the noisy input in {wins}/{len(rows)} cases "
          f"(delta={ns.delta})")
    return 0


def cmd_spectrum(ns) -> int:
    ckpt = training.load_checkpoint(ns.ckpt)
    model = training.restore_model(ckpt)
    lines = ["block,gamma,omega,re_lambda,im_lambda"]
    gen = model.generator
    lam = generators.spectrum(gen)
    if isinstance(gen, generators.BlockDiagGenerator):
        g = gen.gamma.detach().numpy()
        w = gen.omega.detach().numpy()
        for i in range(len(lam)):
            b = i // 2
            lines.append(f"{b},{g[b]:.12g},{w[b]:.12g},"
                         f"{lam[i].real:.12g},{lam[i].imag:.12g}")
    else:
        for i, v in enumerate(lam):
            lines.append(f"{i},,,{v.real:.12g},{v.imag:.12g}")
    out = _outdir(ns)
    path = os.path.join(out, "spectrum.csv")
    _atomic_write(path, ("\n".join(lines) + "\n").encode())
    print(f"wrote {len(lam)} eigenvalues to {path}")
    return 0


def cmd_convergence(ns) -> int:
    result = evaluation.convergence_study(
        ns.d, ns.sizes, ns.sigma, ns.seed, n_repeats=ns.repeats, dt=ns.dt)
    out = _outdir(ns)
    lines = ["M,mean_frobenius_error,std_frobenius_error"]
    for m, mean, std in zip(result["sample_sizes"], result["mean_errors"],
                            result["errors"].std(axis=1)):
        lines.append(f"{m},{mean:.12g},{std:.12g}")
    _atomic_write(os.path.join(out, "convergence.csv"),
                  ("\n".join(lines) + "\n").encode())
    _write_json(os.path.join(out, "config.json"), _resolved_config(ns))
    print(f"log-log slope: {result['loglog_slope']:.3f}")
    return 0


UNDEF = evaluation.UNDEFINED


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="koopflow",
        description="Few-shot coupled-flow forecasting with contractive "
                    "linear latent dynamics")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a benchmark dataset")
    g.add_argument("--example", required=True, choices=[e.value for e in Example])
    g.add_argument("--grid", type=int, default=96, help="grid width (and height)")
    g.add_argument("--grid-h", type=int, default=None, help="override grid height")
    g.add_argument("--t0", type=float, default=0.0)
    g.add_argument("--dt", type=float, default=0.1)
    g.add_argument("--t-end", type=float, default=2.0)
    g.add_argument("--train-horizon", type=float, default=1.0)
    g.add_argument("--freq", type=float, default=2.5, help="driver frequency")
    g.add_argument("--ramp", type=float, default=0.4, help="driver ramp-up span")
    g.add_argument("--raw", action="store_true", help="skip normalization")
    g.add_argument("--force", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=1200)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--weight-decay", type=float, default=2e-5)
    t.add_argument("--warmup", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--patch", type=int, default=16)
    t.add_argument("--embed-dim", type=int, default=192)
    t.add_argument("--depth", type=int, default=6)
    t.add_argument("--heads", type=int, default=6)
    t.add_argument("--latent-dim", type=int, default=None)
    t.add_argument("--harmonics", type=int, default=4)
    t.add_argument("--generator", choices=list(_DEFAULT_GENERATOR.values()) + ["dense"],
                   default=None, help="default picked per example")
    t.add_argument("--rollout", choices=["direct", "recursive"], default="direct")
    t.add_argument("--w-u1", type=float, default=None)
    t.add_argument("--w-u2", type=float, default=None)
    t.add_argument("--w-p", type=float, default=None)
    t.add_argument("--w-phi", type=float, default=None)
    t.add_argument("--lambda-lin", type=float, default=1.0)
    t.add_argument("--huber-pressure", action="store_true")
    t.add_argument("--w-grad", type=float, default=0.0)
    t.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="roll a checkpoint out to target times")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--times", type=float, nargs="+", default=None)
    pr.add_argument("--rollout", choices=["direct", "recursive"], default="direct")
    pr.add_argument("--force", action="store_true")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="metrics of rollout against ground truth")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--times", type=float, nargs="+", default=None)
    e.add_argument("--rollout", choices=["direct", "recursive"], default="direct")
    e.add_argument("--error-growth", action="store_true")
    e.add_argument("--noise", type=float, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("noise", help="noise-robustness experiment")
    n.add_argument("--ckpt", required=True)
    n.add_argument("--data", required=True)
    n.add_argument("--delta", type=float, default=0.1)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--times", type=float, nargs="+", default=None)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_noise)

    s = sub.add_parser("spectrum", help="dump generator eigenvalues as CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    c = sub.add_parser("convergence", help="operator-fit sample-complexity study")
    c.add_argument("--d", type=int, default=8)
    c.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024, 4096])
    c.add_argument("--sigma", type=float, default=0.01)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--repeats", type=int, default=20)
    c.add_argument("--dt", type=float, default=0.1)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convergence)
    return p


def main(argv=None) -> int:
    threads = os.environ.get("KOOPFLOW_NUM_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
