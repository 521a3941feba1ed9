"""Where to start the progression: fewer, larger stages against many cheap ones."""
import argparse
from dataclasses import replace

import numpy as np

from lssgen.pipeline import build_models, run_sample, sampler_config
from lssgen.runconfig import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--target-res", type=int, default=64)
    ap.add_argument("--mins", default="8,16,32,64")
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--method", default="mmse_oracle")
    args = ap.parse_args()

    mins = [int(m) for m in args.mins.split(",")]
    base = RunConfig(min_resolution=min(mins), target_resolution=args.target_res, scaling_method=args.method,
                     shorten_steps=True, batch=8)
    models = build_models(base, sampler_config(base).plan())
    print("min_resolution,stage_steps,planned_cost,speedup,total_error,high_band_error")
    for m in mins:
        cfg = replace(base, min_resolution=m)
        runs = [run_sample(replace(cfg, seed=s), models=models) for s in range(args.seeds)]
        total = np.mean([r.metrics["total_spectral_error"] for r in runs])
        high = np.mean([r.metrics["high_band_error"] for r in runs])
        print(f"{m},\"{runs[0].plan.describe()}\",{runs[0].cost.total:g},{runs[0].cost.speedup:.3f},"
              f"{total:.4f},{high:.4f}")


if __name__ == "__main__":
    main()
