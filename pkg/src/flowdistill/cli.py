"""Command-line harness: data generation, training, distillation, studies.

    flowdistill <command> --config <file> [--override section.key=value ...]

Commands: gen-data, train, distill, sample, evaluate, sweep-tau,
seed-sensitivity, bench.  All outputs land under --out-dir together with a
manifest recording inputs, the config hash, and the source revision.
Every error contract exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, thread_cap
from .ddpm import DDPMTrainer
from .fm import FMTrainer, TrainingDiverged
from .kolmogorov import (FieldDataset, GRFConfig, generate_dataset, save_fields,
                         simulate_trajectory)
from .metrics import radial_spectrum
from .nn import init_unet
from .pipeline import (SAMPLER_KINDS, evaluate_fields, evaluate_rmse,
                       frame_noise, lr_baseline, reconstruct, val_frames)
from .samplers import NFE_PER_STEP
from .trig import SCDTrainer, TangentDiverged


def _git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def write_manifest(out_dir, name, cfg, inputs, outputs, extra=None):
    man = {
        "command": name,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "config_hash": cfg.config_hash() if cfg else "",
        "git": _git_describe(),
    }
    if extra:
        man.update(extra)
    path = Path(out_dir) / f"{name}.manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(args, cfg):
    d = Path(args.out_dir or cfg.get("run", "out_dir", "runs/out"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dataset_path(cfg, out_dir):
    p = cfg.get("data", "path")
    return Path(p) if p else out_dir / "dataset.ffd"


# ---------------------------------------------------------------------------
# gen-data

def cmd_gen_data(args):
    cfg = load_config(args.config, args.override)
    out_dir = _out_dir(args, cfg)
    scfg = cfg.solver_config()
    grf = cfg.grf_config()
    n_traj = cfg.get("data", "n_traj", 8)
    stride = cfg.get("data", "stride_s", 4)
    workers = thread_cap()

    def one(j):
        rng = np.random.default_rng(np.random.SeedSequence(scfg.seed, spawn_key=(j,)))
        return simulate_trajectory(scfg, grf, rng)

    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            snaps = list(pool.map(one, range(n_traj)))
    else:
        snaps = [one(j) for j in range(n_traj)]
    hr = np.concatenate(snaps, axis=0)
    ds = FieldDataset.from_snapshots(hr, stride, seed=cfg.get("data", "split_seed", 0))
    ds.validate()
    path = _dataset_path(cfg, out_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.save(path)
    dt = time.perf_counter() - t0
    print(f"wrote {path}: {ds.count} snapshots {ds.hr.shape[1]}x{ds.hr.shape[2]} "
          f"(stride {stride}, {n_traj} trajectories) in {dt:.1f}s")
    print(f"  channel mean {ds.mean}, std {ds.std}, "
          f"split {len(ds.train_idx)}/{len(ds.val_idx)}")
    write_manifest(out_dir, "gen-data", cfg, [args.config], [path],
                   {"snapshots": int(ds.count), "seconds": dt})
    return path


# ---------------------------------------------------------------------------
# training loops

def _resolve_steps(tcfg, n_train):
    if tcfg.steps > 0:
        return tcfg.steps
    per_epoch = max(1, n_train // tcfg.batch)
    return tcfg.epochs * per_epoch


def _batch_stream(train_idx, batch, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xBA7C4,)))
    while True:
        perm = rng.permutation(train_idx)
        for k in range(0, len(perm) - batch + 1, batch):
            yield perm[k:k + batch]


def _run_training(trainer, step_fn, data_norm, train_idx, tcfg, steps, out_dir,
                  tag, params, opt, rng_for_ckpt, ckpt_every, log_cols=()):
    loss_csv = Path(out_dir) / f"{tag}_loss.csv"
    last_good = None
    mode = "a" if trainer.iteration > 0 and loss_csv.exists() else "w"
    with open(loss_csv, mode, newline="") as f:
        w = csv.writer(f)
        if mode == "w":
            w.writerow(["step", "loss", *log_cols])
        stream = _batch_stream(train_idx, tcfg.batch, tcfg.seed)
        t0 = time.perf_counter()
        while trainer.iteration < steps:
            batch_idx = next(stream)
            try:
                loss = step_fn(data_norm[batch_idx])
            except (TrainingDiverged, TangentDiverged, FloatingPointError) as e:
                print(f"error: {e}", file=sys.stderr)
                if last_good:
                    print(f"last good checkpoint: {last_good}", file=sys.stderr)
                raise SystemExit(1)
            extras = [f"{trainer.last_warmup_factor:.6g}"] if log_cols else []
            w.writerow([trainer.iteration - 1, f"{loss:.8g}", *extras])
            it = trainer.iteration
            if ckpt_every and it % ckpt_every == 0 and it < steps:
                last_good = Path(out_dir) / f"{tag}_step{it}.fdck"
                save_checkpoint(last_good, params, opt, trainer.rng, it)
            if it % max(1, steps // 10) == 0 or it == steps:
                rate = it / (time.perf_counter() - t0)
                print(f"[{tag}] step {it}/{steps} loss {loss:.5f} ({rate:.2f} it/s)")
    return loss_csv


def cmd_train(args):
    cfg = load_config(args.config, args.override)
    out_dir = _out_dir(args, cfg)
    ds = FieldDataset.load(_dataset_path(cfg, out_dir))
    data_norm = ds.normalize(ds.hr)
    role = args.role

    if role == "fm":
        tcfg = cfg.fm_config()
        net_cfg = cfg.unet_config("teacher")
        if tcfg.condition_channel:
            net_cfg.cond_channels = net_cfg.in_channels
        steps = _resolve_steps(tcfg, len(ds.train_idx))
        if args.resume:
            ck = load_checkpoint(args.resume, expected_role="teacher")
            params = ck.params
            trainer = FMTrainer(params, tcfg, total_steps=steps)
            ck.restore_optimizer(trainer.opt)
            trainer.rng = ck.make_rng()
            trainer.iteration = ck.iteration
        else:
            params = init_unet(net_cfg, np.random.default_rng(
                np.random.SeedSequence(tcfg.seed, spawn_key=(0xF1,))), role="teacher")
            trainer = FMTrainer(params, tcfg, total_steps=steps)
        step_fn = trainer.train_step
        opt = trainer.opt
        final = Path(out_dir) / "teacher.fdck"
    elif role == "ddpm":
        tcfg = cfg.ddpm_config()
        steps = _resolve_steps(tcfg, len(ds.train_idx))
        params = init_unet(cfg.unet_config("ddpm"), np.random.default_rng(
            np.random.SeedSequence(tcfg.seed, spawn_key=(0xDD,))), role="ddpm")
        trainer = DDPMTrainer(params, tcfg)
        step_fn = trainer.train_step
        opt = trainer.opt
        final = Path(out_dir) / "ddpm.fdck"
    elif role == "scm-scratch":
        tcfg = cfg.scd_config()
        steps = _resolve_steps(tcfg, len(ds.train_idx))
        params = init_unet(cfg.unet_config("student"), np.random.default_rng(
            np.random.SeedSequence(tcfg.seed, spawn_key=(0x5C,))), role="student")
        trainer = SCDTrainer(params, None, tcfg)
        step_fn = trainer.distill_step
        opt = trainer.opt
        final = Path(out_dir) / "scratch_student.fdck"
    else:
        raise SystemExit(f"unknown training role '{role}'")

    trainer.last_warmup_factor = getattr(trainer, "last_warmup_factor", 0.0)
    loss_csv = _run_training(trainer, step_fn, data_norm, ds.train_idx, tcfg,
                             steps, out_dir, role, params, opt, trainer.rng,
                             args.checkpoint_every)
    save_checkpoint(final, params, opt, trainer.rng, trainer.iteration)
    if role == "scm-scratch":
        ema_path = Path(out_dir) / "scratch_student_ema.fdck"
        save_checkpoint(ema_path, trainer.ema, None, trainer.rng, trainer.iteration)
    print(f"saved {final}")
    write_manifest(out_dir, f"train-{role}", cfg, [args.config], [final, loss_csv],
                   {"steps": int(trainer.iteration)})
    return final


def cmd_distill(args):
    cfg = load_config(args.config, args.override)
    out_dir = _out_dir(args, cfg)
    ds = FieldDataset.load(_dataset_path(cfg, out_dir))
    data_norm = ds.normalize(ds.hr)
    tcfg = cfg.scd_config()
    teacher = load_checkpoint(args.teacher, expected_role="teacher",
                              requires_grad=False).params
    steps = _resolve_steps(tcfg, len(ds.train_idx))
    if args.resume:
        ck = load_checkpoint(args.resume, expected_role="student")
        student = ck.params
        trainer = SCDTrainer(student, teacher, tcfg)
        ck.restore_optimizer(trainer.opt)
        trainer.rng = ck.make_rng()
        trainer.iteration = ck.iteration
    else:
        student = init_unet(cfg.unet_config("student"), np.random.default_rng(
            np.random.SeedSequence(tcfg.seed, spawn_key=(0x57,))), role="student")
        trainer = SCDTrainer(student, teacher, tcfg)
    loss_csv = _run_training(trainer, trainer.distill_step, data_norm, ds.train_idx,
                             tcfg, steps, out_dir, "distill", student, trainer.opt,
                             trainer.rng, args.checkpoint_every,
                             log_cols=("warmup_factor",))
    s_path = Path(out_dir) / "student.fdck"
    e_path = Path(out_dir) / "student_ema.fdck"
    save_checkpoint(s_path, student, trainer.opt, trainer.rng, trainer.iteration)
    trainer.ema.role = "ema_student"
    save_checkpoint(e_path, trainer.ema, None, trainer.rng, trainer.iteration)
    print(f"saved {s_path} and {e_path}")
    write_manifest(out_dir, "distill", cfg, [args.config, args.teacher],
                   [s_path, e_path, loss_csv], {"steps": int(trainer.iteration)})
    return s_path, e_path


# ---------------------------------------------------------------------------
# sampling / evaluation

def _default_tau(cfg, role):
    if role in ("student", "ema_student"):
        return cfg.get("sample", "tau_student", 0.3)
    return cfg.get("sample", "tau_teacher", 0.6)


def cmd_sample(args):
    cfg = load_config(args.config, args.override)
    out_dir = _out_dir(args, cfg)
    ds = FieldDataset.load(_dataset_path(cfg, out_dir))
    ck = load_checkpoint(args.ckpt, requires_grad=False)
    sampler = args.sampler
    if sampler not in SAMPLER_KINDS:
        raise SystemExit(f"unknown sampler '{sampler}'")
    tau = args.tau if args.tau is not None else _default_tau(cfg, ck.params.role)
    if not 0 < tau <= 1 or (sampler == "consistency" and tau >= 1):
        raise SystemExit(f"invalid injection time {tau}")
    frames = val_frames(ds, args.frames or cfg.get("eval", "frames", 32))
    seed = cfg.get("eval", "seed", 123)
    pred, nfe, elapsed = reconstruct(
        ck.params, ds, frames, sampler, tau, K=args.K,
        noise_seed=seed, schedule_kind=cfg.get("ddpm", "schedule", "cosine"),
        T_steps=cfg.get("ddpm", "t_steps", 1000))
    name = args.name or f"{ck.params.role}_{sampler}"
    out = Path(out_dir) / f"pred_{name}.ffd"
    save_fields(out, pred)
    man = {
        "model": ck.params.role, "sampler": sampler, "K": args.K, "tau": tau,
        "nfe": int(nfe), "frames": [int(i) for i in frames],
        "noise_seed": int(seed), "seconds": elapsed,
        "dataset": str(_dataset_path(cfg, out_dir)),
    }
    Path(str(out) + ".json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} (NFE {nfe}, {elapsed:.2f}s for {len(frames)} frames)")
    write_manifest(out_dir, f"sample-{name}", cfg, [args.config, args.ckpt],
                   [out], man)
    return out


def cmd_evaluate(args):
    cfg = load_config(args.config, args.override)
    out_dir = _out_dir(args, cfg)
    ds = FieldDataset.load(_dataset_path(cfg, out_dir))
    rows = []
    spectra = {}

    frames_ref = None
    for pred_path in args.preds:
        man = json.loads(Path(str(pred_path) + ".json").read_text())
        frames = np.asarray(man["frames"], int)
        if frames_ref is None:
            frames_ref = frames
        elif not np.array_equal(frames, frames_ref):
            raise SystemExit(f"{pred_path}: frame list differs from the first file")
        from .kolmogorov import load_fields
        pred = load_fields(pred_path)
        truth = ds.hr[frames]
        if pred.shape != truth.shape:
            raise SystemExit(f"{pred_path}: {pred.shape} does not match truth "
                             f"{truth.shape}")
        m = evaluate_fields(pred, truth)
        label = Path(pred_path).stem.replace("pred_", "")
        rows.append([man.get("model", label), man.get("sampler", ""),
                     man.get("nfe", ""), f"{m['rel_l2']:.6g}", f"{m['ssim']:.6g}",
                     f"{m['psdd']:.6g}", "", ""])
        spectra[label] = radial_spectrum(pred[..., 0])[1]

    if frames_ref is None:
        frames_ref = val_frames(ds, cfg.get("eval", "frames", 32))
    truth = ds.hr[frames_ref]
    base = lr_baseline(ds, frames_ref)
    mb = evaluate_fields(base, truth)
    rows.insert(0, ["lr_baseline", "nearest", 0, f"{mb['rel_l2']:.6g}",
                    f"{mb['ssim']:.6g}", f"{mb['psdd']:.6g}", "", ""])
    radii, truth_spec = radial_spectrum(truth[..., 0])
    spectra = {"truth": truth_spec, "lr_baseline": radial_spectrum(base[..., 0])[1],
               **spectra}

    metrics_csv = Path(out_dir) / (args.name or "metrics.csv")
    with open(metrics_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "solver", "NFE", "rel_l2", "ssim", "psdd",
                    "wall_clock_mean", "wall_clock_std"])
        w.writerows(rows)
    spec_csv = Path(out_dir) / "radial_spectra.csv"
    with open(spec_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["radius", *spectra.keys()])
        for i, r in enumerate(radii):
            w.writerow([int(r), *(f"{spectra[k][i]:.8g}" for k in spectra)])
    print(f"wrote {metrics_csv} and {spec_csv}")
    for r in rows:
        print("  " + " ".join(str(v) for v in r[:6]))
    write_manifest(out_dir, "evaluate", cfg, list(args.preds), [metrics_csv, spec_csv])
    return metrics_csv


# ---------------------------------------------------------------------------
# studies

def cmd_sweep_tau(args):
    cfg = load_config(args.config, args.override)
    out_dir = _out_dir(args, cfg)
    ds = FieldDataset.load(_dataset_path(cfg, out_dir))
    ck = load_checkpoint(args.ckpt, requires_grad=False)
    frames = val_frames(ds, args.n_samples)
    truth = ds.hr[frames]
    out = Path(out_dir) / (args.name or "tau_sweep.csv")

    done = set()
    if out.exists():
        with open(out) as f:
            done = {row["tau"] for row in csv.DictReader(f)}
    mode = "a" if done else "w"
    seed = cfg.get("eval", "seed", 123)
    with open(out, mode, newline="") as f:
        w = csv.writer(f)
        if mode == "w":
            w.writerow(["tau", "rmse"])
        for k in range(1, args.grid_size + 1):
            tau = k / args.grid_size
            key = f"{tau:.6g}"
            if key in done:
                continue
            tau_eff = min(tau, 1.0 - 1e-6)   # consistency time map needs tau < 1
            pred, _, _ = reconstruct(ck.params, ds, frames, "consistency", tau_eff,
                                     noise_seed=seed, trial=k)
            w.writerow([key, f"{evaluate_rmse(pred, truth):.8g}"])
            f.flush()
    print(f"wrote {out}")
    write_manifest(out_dir, "sweep-tau", cfg, [args.config, args.ckpt], [out])
    return out


def cmd_seed_sensitivity(args):
    cfg = load_config(args.config, args.override)
    out_dir = _out_dir(args, cfg)
    ds = FieldDataset.load(_dataset_path(cfg, out_dir))
    ck = load_checkpoint(args.ckpt, requires_grad=False)
    tau = args.tau if args.tau is not None else _default_tau(cfg, ck.params.role)
    frames = val_frames(ds, args.frames)
    truth = ds.hr[frames]

    per_seed = Path(out_dir) / "seed_sensitivity_runs.csv"
    results = {"rel_l2": [], "ssim": [], "psdd": []}
    with open(per_seed, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "rel_l2", "ssim", "psdd"])
        for k in range(args.seeds):
            pred, _, _ = reconstruct(ck.params, ds, frames, "consistency", tau,
                                     noise_seed=args.noise_seed, trial=k)
            m = evaluate_fields(pred, truth)
            for key in results:
                results[key].append(m[key])
            w.writerow([k, f"{m['rel_l2']:.8g}", f"{m['ssim']:.8g}",
                        f"{m['psdd']:.8g}"])

    stats_csv = Path(out_dir) / (args.name or "seed_sensitivity.csv")
    with open(stats_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean", "sd", "p5", "p95", "min", "max", "cv"])
        for key, vals in results.items():
            v = np.asarray(vals)
            sd = v.std(ddof=1) if len(v) > 1 else 0.0
            w.writerow([key, f"{v.mean():.8g}", f"{sd:.8g}",
                        f"{np.percentile(v, 5):.8g}", f"{np.percentile(v, 95):.8g}",
                        f"{v.min():.8g}", f"{v.max():.8g}",
                        f"{sd / abs(v.mean()):.8g}" if v.mean() else ""])
    print(f"wrote {stats_csv} ({args.seeds} seeds, tau {tau})")
    write_manifest(out_dir, "seed-sensitivity", cfg, [args.config, args.ckpt],
                   [stats_csv, per_seed])
    return stats_csv


def cmd_bench(args):
    cfg = load_config(args.config, args.override)
    out_dir = _out_dir(args, cfg)
    ds = FieldDataset.load(_dataset_path(cfg, out_dir))
    backbones = {}
    if args.student:
        backbones["consistency"] = load_checkpoint(args.student, requires_grad=False).params
    if args.teacher:
        for k in ("euler", "heun", "rk5"):
            backbones[k] = load_checkpoint(args.teacher, requires_grad=False).params
    if args.ddpm:
        for k in ("ddim", "dpmpp"):
            backbones[k] = load_checkpoint(args.ddpm, requires_grad=False).params
    if args.share_backbone:
        first = next(iter(backbones.values()))
        backbones = {k: first for k in args.samplers}

    frames = val_frames(ds, args.batch)
    rows = []
    for sampler in args.samplers:
        if sampler not in backbones:
            raise SystemExit(f"no checkpoint provided for sampler '{sampler}'")
        params = backbones[sampler]
        tau = _default_tau(cfg, params.role) if sampler == "consistency" \
            else cfg.get("sample", "tau_teacher", 0.6)
        K = args.K
        times = []
        nfe = 0
        for it in range(args.warmup + args.timed):
            _, nfe, elapsed = reconstruct(
                params, ds, frames, sampler, tau, K=K,
                noise_seed=cfg.get("eval", "seed", 123), trial=it,
                schedule_kind=cfg.get("ddpm", "schedule", "cosine"),
                T_steps=cfg.get("ddpm", "t_steps", 1000))
            if it >= args.warmup:
                times.append(elapsed / len(frames))
        t = np.asarray(times)
        rows.append([sampler, nfe, f"{t.mean():.6g}", f"{t.std(ddof=1):.6g}",
                     len(frames)])
        print(f"  {sampler}: NFE {nfe}, {t.mean() * 1e3:.2f} +- {t.std(ddof=1) * 1e3:.2f} ms/frame")

    out = Path(out_dir) / (args.name or "bench.csv")
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sampler", "NFE", "wall_clock_mean", "wall_clock_std", "batch"])
        w.writerows(rows)
    print(f"wrote {out}")
    write_manifest(out_dir, "bench", cfg,
                   [p for p in (args.teacher, args.student, args.ddpm) if p], [out])
    return out


# ---------------------------------------------------------------------------
# entry point

def build_parser():
    p = argparse.ArgumentParser(prog="flowdistill", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--override", action="append", default=[],
                        metavar="section.key=value")
        sp.add_argument("--out-dir", default=None)

    sp = sub.add_parser("gen-data", help="simulate and pack the dataset")
    common(sp)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model from scratch")
    common(sp)
    sp.add_argument("role", choices=["fm", "ddpm", "scm-scratch"])
    sp.add_argument("--resume", default=None)
    sp.add_argument("--checkpoint-every", type=int, default=200)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("distill", help="distill a trained teacher into a student")
    common(sp)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--resume", default=None)
    sp.add_argument("--checkpoint-every", type=int, default=200)
    sp.set_defaults(fn=cmd_distill)

    sp = sub.add_parser("sample", help="super-resolve validation frames")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--sampler", required=True, choices=SAMPLER_KINDS)
    sp.add_argument("--K", type=int, default=5)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--frames", type=int, default=None)
    sp.add_argument("--name", default=None)
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("evaluate", help="metric table for prediction files")
    common(sp)
    sp.add_argument("--preds", nargs="+", required=True)
    sp.add_argument("--name", default=None)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("sweep-tau", help="injection-time sweep (RMSE per tau)")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--grid-size", type=int, default=50)
    sp.add_argument("--n-samples", type=int, default=30)
    sp.add_argument("--name", default=None)
    sp.set_defaults(fn=cmd_sweep_tau)

    sp = sub.add_parser("seed-sensitivity", help="metric spread across noise seeds")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--seeds", type=int, default=100)
    sp.add_argument("--frames", type=int, default=32)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--noise-seed", type=int, default=1234)
    sp.add_argument("--name", default=None)
    sp.set_defaults(fn=cmd_seed_sensitivity)

    sp = sub.add_parser("bench", help="wall-clock per frame per sampler")
    common(sp)
    sp.add_argument("--teacher", default=None)
    sp.add_argument("--student", default=None)
    sp.add_argument("--ddpm", default=None)
    sp.add_argument("--samplers", nargs="+", default=["consistency", "euler",
                                                      "heun", "rk5"])
    sp.add_argument("--K", type=int, default=5)
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--warmup", type=int, default=10)
    sp.add_argument("--timed", type=int, default=100)
    sp.add_argument("--share-backbone", action="store_true")
    sp.add_argument("--name", default=None)
    sp.set_defaults(fn=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except SystemExit:
        raise
    except (ValueError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
