"""Upscaling methods between stages with a trained autoencoder codec.

Trains the codec and the latent upsampler into --workdir (skipped when the
checkpoints exist), then compares spectral errors against the encoded data."""
import argparse
import os
from dataclasses import replace

import numpy as np

from lssgen.cli import main as cli
from lssgen.pipeline import build_models, run_sample, sampler_config
from lssgen.runconfig import RunConfig

METHODS = ("resnet_upsampler", "pixel_roundtrip", "latent_bilinear", "latent_nearest")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/compare-scaling")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=15)
    args = ap.parse_args()

    common = [f"out_dir={args.workdir}", "codec=autoencoder"]
    if not os.path.exists(os.path.join(args.workdir, "ae.lst")):
        assert cli(["gen-data", "count=2048"] + common) == 0
        assert cli(["train-ae", f"epochs={args.epochs}", "lr=3e-3"] + common) == 0
    if not os.path.exists(os.path.join(args.workdir, "upsampler.lst")):
        assert cli(["train-upsampler", "epochs=8"] + common) == 0

    base = RunConfig(out_dir=args.workdir, codec="autoencoder", shorten_steps=True)
    models = build_models(base, sampler_config(base).plan())
    print("method,total_error,high_band_error,band_errors")
    for method in METHODS + ("baseline",):
        cfg = replace(base, scaling_method="resnet_upsampler" if method == "baseline" else method)
        runs = [run_sample(replace(cfg, seed=s), baseline=method == "baseline", models=models)
                for s in range(args.seeds)]
        bands = np.mean([[r.metrics[k] for k in sorted(r.metrics) if k.startswith("band")] for r in runs], 0)
        print(f"{method},{np.mean([r.metrics['total_spectral_error'] for r in runs]):.4f},"
              f"{np.mean([r.metrics['high_band_error'] for r in runs]):.4f},"
              f"\"{' '.join(f'{b:.3f}' for b in bands)}\"")


if __name__ == "__main__":
    main()
