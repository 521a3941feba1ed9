"""Spectral error and planned cost as the re-noising level of later stages varies."""
import argparse
from dataclasses import replace

import numpy as np

from lssgen.pipeline import build_models, run_sample, sampler_config
from lssgen.runconfig import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigmas", default="0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--method", default="mmse_oracle")
    ap.add_argument("--shorten", action="store_true")
    args = ap.parse_args()

    base = RunConfig(scaling_method=args.method, batch=args.batch, shorten_steps=args.shorten)
    models = build_models(base, sampler_config(base).plan())
    print("sigma,stage_steps,planned_cost,speedup,total_error,high_band_error")
    for sigma in map(float, args.sigmas.split(",")):
        cfg = replace(base, init_noise_level=sigma)
        runs = [run_sample(replace(cfg, seed=s), models=models) for s in range(args.seeds)]
        total = np.mean([r.metrics["total_spectral_error"] for r in runs])
        high = np.mean([r.metrics["high_band_error"] for r in runs])
        plan, cost = runs[0].plan, runs[0].cost
        print(f"{sigma:g},\"{plan.describe()}\",{cost.total:g},{cost.speedup:.3f},{total:.4f},{high:.4f}")


if __name__ == "__main__":
    main()
