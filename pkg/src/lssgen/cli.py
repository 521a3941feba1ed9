"""Command line: ``lssgen <command> [--config FILE] [key=value ...]``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import costmodel, pipeline
from .autoencoder import train_ae
from .backbone import AnalyticBackbone, fit_stationary_gaussian, heldout_set, train_backbone
from .grf import MAX_DENSE_SIZE, mmse_upsample_map, radial_power_spectrum
from .runconfig import ConfigError, RunConfig, RunReport, load_config, parse_pairs
from .sampler import baseline_config, sample_lssgen
from .tensorkit.io import FormatError, load_tensor, save_tensor
from .tensorkit.ops import ShapeError
from .tensorkit.rng import Rng
from .training import TrainingDiverged
from .upsampler import train_upsampler

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


# ---- image files -----------------------------------------------------------

def write_pgm(path: str, image: np.ndarray, lo: float, hi: float) -> None:
    """8-bit binary PGM; pixel ``v`` stands for ``lo + v / 255 * (hi - lo)``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"PGM needs a 2D image, got {img.shape}")
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    q = np.clip(np.rint((img - lo) * scale), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n# lssgen min={lo!r} max={hi!r}\n{w} {h}\n255\n".encode())
        f.write(q.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comments.append(data[pos + 1:end].decode().strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode())
    if tokens[0] != "P5" or tokens[3] != "255":
        raise FormatError(f"{path}: only 8-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"{path}: truncated pixel data")
    lo, hi = 0.0, 255.0
    for c in comments:
        if c.startswith("lssgen"):
            kv = dict(p.split("=") for p in c.split()[1:])
            lo, hi = float(kv["min"]), float(kv["max"])
    return lo + pixels.reshape(h, w).astype(np.float64) / 255.0 * (hi - lo)


def load_images(paths) -> np.ndarray:
    batch = []
    for p in paths:
        if p.endswith(".pgm"):
            batch.append(read_pgm(p)[None])
        else:
            t = load_tensor(p)
            batch.extend(t.reshape(-1, *t.shape[-2:])[:, None])
    if not batch:
        raise ConfigError("no images given")
    shapes = {b.shape for b in batch}
    if len(shapes) != 1:
        raise ShapeError(f"images differ in size: {sorted(shapes)}")
    return np.stack(batch)


# ---- helpers -----------------------------------------------------------------

def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def _checkpoint_path(cfg: RunConfig, key: str, default_name: str) -> str:
    path = cfg.path(key, default_name)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    return path


def _report(cmd: str, cfg: RunConfig) -> RunReport:
    return RunReport(cmd, cfg, [])


def _out(cfg: RunConfig, *parts: str) -> str:
    path = os.path.join(cfg.out_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _load_dataset(cfg: RunConfig) -> np.ndarray:
    return load_tensor(pipeline.require(cfg.path("data_path", "data.lst"), "dataset"))


def _heldout_split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n_held = max(1, len(x) // 8)
    if len(x) - n_held < 1:
        raise ConfigError("dataset too small to hold out a validation split")
    return x[:-n_held], x[-n_held:]


# ---- commands ----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, args) -> int:
    from .grf import grf_sample
    spec = pipeline.data_spec(cfg, cfg.size)
    x = grf_sample(spec, Rng(cfg.seed), cfg.count)
    path = cfg.path("data_path", "data.lst")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_tensor(path, x)
    prof = radial_power_spectrum(x)
    _write(_out(cfg, "data_spectrum.csv"), prof.to_csv())
    rep = _report("gen-data", cfg)
    rep.add("spec", spec.label)
    rep.add("dataset", f"{path} shape={'x'.join(map(str, x.shape))}")
    _write(_out(cfg, "gen-data.report.txt"), rep.to_text())
    print(f"wrote {cfg.count} fields of size {cfg.size} to {path}")
    return EXIT_OK


def cmd_train_ae(cfg: RunConfig, args) -> int:
    train, held = _heldout_split(_load_dataset(cfg))
    model, report = train_ae(train, cfg.epochs, cfg.lr, Rng(cfg.seed), heldout=held)
    path = _checkpoint_path(cfg, "ae_path", "ae.lst")
    model.save(path)
    _write(_out(cfg, "ae_report.csv"), report.to_csv())
    rep = _report("train-ae", cfg)
    rep.add("checkpoint", path)
    rep.add("heldout_mse", f"{report.heldout_mse:.6g}")
    rep.add("input_variance", f"{report.input_variance:.6g}")
    _write(_out(cfg, "train-ae.report.txt"), rep.to_text())
    print(f"held-out reconstruction MSE {report.heldout_mse:.6g} (input variance {report.input_variance:.6g})")
    return EXIT_OK


def cmd_train_backbone(cfg: RunConfig, args) -> int:
    x = _load_dataset(cfg)
    codec = pipeline.load_codec(cfg)
    z = codec.encode(x)
    train, held = _heldout_split(z)
    mode = "velocity" if cfg.mode == "fm" else "epsilon"
    if cfg.codec == "identity":
        oracle = AnalyticBackbone({x.shape[-1]: pipeline.data_spec(cfg, x.shape[-1])}, mode)
    else:
        oracle = AnalyticBackbone({z.shape[-1]: fit_stationary_gaussian(train)}, mode)
    rng = Rng(cfg.seed)
    hold = heldout_set(held, rng.child(99))
    model, report = train_backbone(mode, train, cfg.epochs, cfg.lr, rng, width=cfg.width,
                                   heldout=hold, oracle=oracle)
    path = _checkpoint_path(cfg, "backbone_path", "backbone.lst")
    model.save(path)
    _write(_out(cfg, "backbone_report.csv"), report.to_csv())
    rep = _report("train-backbone", cfg)
    rep.add("checkpoint", path)
    rep.add("heldout_loss", f"{report.heldout_loss:.6g}")
    rep.add("oracle_loss", f"{report.oracle_loss:.6g}")
    rep.add("oracle_gap", f"{report.oracle_gap:.6g}")
    _write(_out(cfg, "train-backbone.report.txt"), rep.to_text())
    print(f"held-out loss {report.heldout_loss:.6g}, analytic minimum {report.oracle_loss:.6g}")
    return EXIT_OK


def cmd_train_upsampler(cfg: RunConfig, args) -> int:
    codec = pipeline.load_codec(cfg)
    spec = pipeline.data_spec(cfg, cfg.size)
    oracle = None
    if cfg.codec == "identity" and spec.size <= MAX_DENSE_SIZE:
        oracle = mmse_upsample_map(spec)[1]
    model, report = train_upsampler(codec, spec, cfg.pairs, cfg.epochs, cfg.lr, Rng(cfg.seed),
                                    cfg.width, cfg.blocks, oracle_mse=oracle)
    path = _checkpoint_path(cfg, "upsampler_path", "upsampler.lst")
    model.save(path)
    _write(_out(cfg, "upsampler_report.csv"), report.to_csv())
    rep = _report("train-upsampler", cfg)
    rep.add("checkpoint", path)
    rep.add("parameters", model.num_params())
    for key in ("heldout_mse", "bilinear_mse", "nearest_mse", "oracle_mse", "win_rate_vs_bilinear"):
        rep.add(key, f"{getattr(report, key):.6g}")
    _write(_out(cfg, "train-upsampler.report.txt"), rep.to_text())
    msg = f"held-out MSE {report.heldout_mse:.6g}, bilinear {report.bilinear_mse:.6g}"
    if oracle is not None:
        msg += f", oracle {oracle:.6g}"
    print(msg)
    return EXIT_OK


def _save_sample(cfg: RunConfig, res: pipeline.SampleResult, folder: str, command: str) -> RunReport:
    os.makedirs(folder, exist_ok=True)
    imgs = res.images[:, 0]
    lo, hi = float(imgs.min()), float(imgs.max())
    names = []
    for i, img in enumerate(imgs):
        name = os.path.join(folder, f"img_{i:03d}.pgm")
        write_pgm(name, img, lo, hi)
        names.append(name)
    save_tensor(os.path.join(folder, "latents.lst"), res.trajectory.stage_latents[-1])
    _write(os.path.join(folder, "trajectory.csv"), res.trajectory.to_csv())
    _write(os.path.join(folder, "cost.csv"), res.cost.to_csv())
    rep = _report(command, cfg)
    for st in res.plan.stages:
        rep.add("stage", f"resolution={st.resolution} steps={st.steps} sigma_init={st.sigma_init:g} "
                         f"resume_index={st.resume_index} executed={st.executed_steps}")
    rep.add("stage_steps", res.plan.describe())
    rep.add("executed_steps", ", ".join(map(str, res.trajectory.executed())))
    rep.add("planned_cost", f"{res.cost.total:.10g} {res.cost.unit}")
    rep.add("baseline_cost", f"{res.cost.baseline_total:.10g} {res.cost.unit}")
    rep.add("speedup", f"{res.cost.speedup:.6g}")
    for var_up, var_blend in res.trajectory.blend_variance:
        rep.add("blend_variance", f"upscaled={var_up:.6g} blended={var_blend:.6g}")
    for k, v in res.metrics.items():
        rep.add(k, f"{v:.6g}")
    rep.add("pgm_range", f"min={lo!r} max={hi!r}")
    rep.add("images", " ".join(names))
    _write(os.path.join(folder, "report.txt"), rep.to_text())
    return rep


def cmd_sample(cfg: RunConfig, args) -> int:
    baseline = bool(args.baseline)
    res = pipeline.run_sample(cfg, baseline)
    kind = "baseline" if baseline else "lssgen"
    folder = os.path.join(cfg.out_dir, f"sample-{kind}")
    _save_sample(cfg, res, folder, f"sample --{kind}")
    print(f"stage steps: {res.plan.describe()}")
    print(f"planned cost {res.cost.total:.6g} vs baseline {res.cost.baseline_total:.6g} "
          f"(speedup {res.cost.speedup:.3f}x)")
    print(f"spectral error {res.metrics['total_spectral_error']:.4f}, "
          f"high-band error {res.metrics['high_band_error']:.4f}")
    print(f"wrote {len(res.images)} images to {folder}")
    return EXIT_OK


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("LSS_THREADS", "1")))
    except ValueError:
        raise ConfigError("LSS_THREADS must be an integer") from None


def cmd_sweep(cfg: RunConfig, args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    configs = [replace(cfg, **parse_pairs([f"{args.param}={v}"], "--values")) for v in values]
    plans = [pipeline.sampler_config(c).plan() for c in configs]
    deepest = max(range(len(plans)), key=lambda i: plans[i].n_stages)
    need_up = any(c.scaling_method == "resnet_upsampler" for c in configs)
    models = pipeline.build_models(replace(configs[deepest], scaling_method="resnet_upsampler")
                                   if need_up else configs[deepest], plans[deepest])

    def run(c):
        return pipeline.run_sample(c, False, models)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, configs))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([args.param, "stage_steps", "planned_cost", "speedup", "total_spectral_error",
                "high_band_error"])
    root = os.path.join(cfg.out_dir, f"sweep-{args.param}")
    for v, c, res in zip(values, configs, results):
        _save_sample(c, res, os.path.join(root, f"{args.param}={v}"), f"sweep {args.param}={v}")
        w.writerow([v, res.plan.describe(), f"{res.cost.total:.10g}", f"{res.cost.speedup:.6g}",
                    f"{res.metrics['total_spectral_error']:.6g}", f"{res.metrics['high_band_error']:.6g}"])
    _write(os.path.join(root, "summary.csv"), buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, args) -> int:
    if not args.spectrum:
        raise ConfigError("analyze needs --spectrum with at least one image file")
    images = load_images(args.spectrum)
    text = radial_power_spectrum(images).to_csv()
    if args.out:
        _write(args.out, text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig, args) -> int:
    if args.calibrate is None and not args.measure:
        raise ConfigError("benchmark needs --calibrate [TABLE] and/or --measure")
    if args.calibrate is not None:
        rows = costmodel.load_reference_table(args.calibrate or None)
        models = sorted({r.model for r in rows})
        cals = [costmodel.calibrate(rows, m) for m in models]
        text = costmodel.calibration_csv(cals)
        if args.out:
            _write(args.out, text)
        print(text, end="")
        for cal in cals:
            steps = ", ".join(f"{res}: {c:.4g}" for res, c in sorted(cal.step_costs.items()))
            note = " (b clamped to 0, near-linear)" if cal.params.clamped else ""
            print(f"{cal.model}: per-step TFLOPs {steps}{note}")
            for r in cal.rows():
                if r["method"] != "single-stage":
                    print(f"  {r['method']:>15} [{r['steps']}] predicted {r['predicted']:.1f} "
                          f"vs reported {r['reported']:g} ({r['error_pct']:+.2f}%)")
    if args.measure:
        # wall times are printed, never written into artifacts
        timing = measure_speedup(cfg, args.repeats)
        plan_cost = costmodel.predict_plan_cost(costmodel.desk_params(pipeline.load_codec(cfg).factor),
                                                pipeline.sampler_config(cfg).plan())
        print(f"baseline {timing['baseline'].mean:.4f}s +- {timing['baseline'].std:.4f}, "
              f"lssgen {timing['lssgen'].mean:.4f}s +- {timing['lssgen'].std:.4f}")
        print(f"measured speedup {timing['measured']:.3f}x, predicted {plan_cost.speedup:.3f}x "
              f"(desk units), {timing['predicted']:.3f}x (local per-step times)")
    return EXIT_OK


def measure_speedup(cfg: RunConfig, repeats: int = 3) -> dict:
    """Time baseline and progressive runs, and predict their ratio from per-step times.

    Per-step time at each stage resolution comes from a single-stage run there,
    so the prediction uses costs measured on this machine.
    """
    sc = pipeline.sampler_config(cfg)
    plan = sc.plan()
    models = pipeline.build_models(cfg, plan)

    def timed(c):
        return costmodel.measure_wall_time(
            lambda: sample_lssgen(c, models.backbone, models.upsampler, models.codec, models.oracle_specs),
            repeats)

    base, lss = timed(baseline_config(sc)), timed(sc)
    per_step = {plan.target_resolution: base.mean / cfg.base_steps}
    for st in plan.stages[:-1]:
        at = replace(baseline_config(sc), min_resolution=st.resolution, target_resolution=st.resolution)
        per_step[st.resolution] = timed(at).mean / cfg.base_steps
    predicted_time = sum(st.executed_steps * per_step[st.resolution] for st in plan.stages)
    return {"baseline": base, "lssgen": lss, "measured": base.mean / lss.mean,
            "predicted": cfg.base_steps * per_step[plan.target_resolution] / predicted_time}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-ae": cmd_train_ae,
    "train-backbone": cmd_train_backbone,
    "train-upsampler": cmd_train_upsampler,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lssgen", description="Progressive latent-scaling sampling at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key = value config file (a previous report works too)")
        sp.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
        return sp

    add("gen-data", "sample a GRF dataset")
    add("train-ae", "train the autoencoder on a dataset")
    add("train-backbone", "train the learned backbone")
    add("train-upsampler", "train the latent upsampler on GRF pairs")
    sp = add("sample", "generate images")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--baseline", action="store_true", help="single stage at the target resolution")
    g.add_argument("--lssgen", action="store_true", help="progressive stages (default)")
    sp = add("sweep", "run one progressive sample per parameter value")
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp = add("analyze", "radial power spectrum of images")
    sp.add_argument("--spectrum", nargs="+", metavar="IMAGE", default=[])
    sp.add_argument("--out")
    sp = add("benchmark", "cost-model calibration and timing")
    sp.add_argument("--calibrate", nargs="?", const="", default=None, metavar="TABLE",
                    help="reference cost table (bundled table if omitted)")
    sp.add_argument("--measure", action="store_true", help="time baseline and progressive runs")
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg, args)
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FileNotFoundError, FormatError, ShapeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
