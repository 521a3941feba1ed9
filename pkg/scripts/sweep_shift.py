"""Timestep shift on and off, for both shift-factor conventions."""
import argparse
from dataclasses import replace

import numpy as np

from lssgen.pipeline import build_models, run_sample, sampler_config
from lssgen.runconfig import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--min-res", type=int, default=8)
    ap.add_argument("--target-res", type=int, default=32)
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--steps", type=int, default=32)
    args = ap.parse_args()

    base = RunConfig(min_resolution=args.min_res, target_resolution=args.target_res, base_steps=args.steps,
                     scaling_method="mmse_oracle", batch=16)
    models = build_models(base, sampler_config(base).plan())
    print("shift,shift_mode,stage_steps,planned_cost,total_error,high_band_error")
    for shift, mode in ((False, "pixels"), (True, "pixels"), (True, "sides")):
        cfg = replace(base, shift=shift, shift_mode=mode)
        runs = [run_sample(replace(cfg, seed=s), models=models) for s in range(args.seeds)]
        total = np.mean([r.metrics["total_spectral_error"] for r in runs])
        high = np.mean([r.metrics["high_band_error"] for r in runs])
        print(f"{'on' if shift else 'off'},{mode},\"{runs[0].plan.describe()}\",{runs[0].cost.total:g},"
              f"{total:.4f},{high:.4f}")


if __name__ == "__main__":
    main()
