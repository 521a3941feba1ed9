"""Glue between a :class:`RunConfig` and the library: data specs, codecs,
multi-resolution priors, sampling runs with cost and spectrum metrics."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .autoencoder import AutoencoderModel, IdentityCodec
from .backbone import AnalyticBackbone, Backbone, LearnedBackbone, fit_stationary_gaussian
from .costmodel import CostReport, desk_params, predict_plan_cost
from .grf import GrfSpec, SpectralProfile, grf_sample, pool, pooled_spec, radial_power_spectrum, spec_profile
from .runconfig import ConfigError, RunConfig
from .sampler import (SamplerConfig, Trajectory, baseline_config, high_band_error, sample_lssgen,
                      spectral_errors, total_spectral_error)
from .schedule import StagePlan
from .tensorkit.rng import Rng
from .upsampler import UpsamplerModel


def data_spec(cfg: RunConfig, size: int) -> GrfSpec:
    if cfg.field == "white":
        return GrfSpec.white(size)
    if cfg.field == "dc":
        return GrfSpec.dc_only(size)
    return GrfSpec.power_law(size, cfg.alpha, cfg.c)


def spec_chain(top: GrfSpec, resolutions) -> dict[int, GrfSpec]:
    """``top`` and its repeated poolings, keyed by side length."""
    out = {top.size: top}
    spec = top
    while spec.size > min(resolutions):
        spec = pooled_spec(spec)
        out[spec.size] = spec
    return {r: out[r] for r in resolutions}


def require(path: str, what: str) -> str:
    if not path or not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path or '(no path configured)'}")
    return path


def load_codec(cfg: RunConfig):
    if cfg.codec == "identity":
        return IdentityCodec()
    return AutoencoderModel.load(require(cfg.path("ae_path", "ae.lst"), "autoencoder checkpoint"))


def sampler_config(cfg: RunConfig, baseline: bool = False) -> SamplerConfig:
    sc = SamplerConfig(cfg.min_resolution, cfg.target_resolution, cfg.resolved_base, cfg.base_steps,
                       cfg.init_noise_level, cfg.shorten_steps, cfg.shift, cfg.shift_mode,
                       cfg.scaling_method, cfg.seed, cfg.batch, cfg.solver)
    return baseline_config(sc) if baseline else sc


@dataclass
class Models:
    codec: object
    backbone: Backbone
    upsampler: UpsamplerModel | None
    oracle_specs: dict[int, GrfSpec] | None
    reference: SpectralProfile  # latent spectrum of real data at the target resolution
    pixel_reference: SpectralProfile


def reference_latents(cfg: RunConfig, codec, resolutions) -> dict[int, np.ndarray]:
    """Encoded real data at every stage resolution, from one batch of target-size fields."""
    x = grf_sample(data_spec(cfg, cfg.target_resolution), Rng(cfg.prior_seed), cfg.prior_samples)
    out = {}
    res = cfg.target_resolution
    while True:
        if res in resolutions:
            out[res] = np.concatenate([codec.encode(x[i:i + 256]) for i in range(0, len(x), 256)])
        if res <= min(resolutions):
            return out
        x, res = pool(x), res // 2


def build_models(cfg: RunConfig, plan: StagePlan, need_upsampler: bool = True) -> Models:
    codec = load_codec(cfg)
    resolutions = [s.resolution for s in plan.stages]
    for r in resolutions:
        if r % codec.factor:
            raise ConfigError(f"resolution {r} is not divisible by the codec factor {codec.factor}")
    top = data_spec(cfg, cfg.target_resolution)
    pixel_ref = spec_profile(top)
    oracle_specs = None
    if cfg.codec == "identity":
        chain = spec_chain(top, resolutions)
        oracle_specs = chain
        reference = pixel_ref
        priors = {r: s for r, s in chain.items()}
    else:
        latents = reference_latents(cfg, codec, resolutions)
        reference = radial_power_spectrum(latents[cfg.target_resolution])
        priors = {r // codec.factor: fit_stationary_gaussian(z) for r, z in latents.items()}
    mode = "velocity" if cfg.mode == "fm" else "epsilon"
    if cfg.backbone == "analytic":
        backbone = AnalyticBackbone(priors, mode)
    else:
        backbone = LearnedBackbone.load(require(cfg.path("backbone_path", "backbone.lst"), "backbone checkpoint"))
        if backbone.mode != mode:
            raise ConfigError(f"checkpoint is a {backbone.mode} model but mode = {cfg.mode}")
    upsampler = None
    if need_upsampler and plan.n_stages > 1 and cfg.scaling_method == "resnet_upsampler":
        upsampler = UpsamplerModel.load(require(cfg.path("upsampler_path", "upsampler.lst"),
                                                "upsampler checkpoint"))
    return Models(codec, backbone, upsampler, oracle_specs, reference, pixel_ref)


@dataclass
class SampleResult:
    images: np.ndarray
    trajectory: Trajectory
    plan: StagePlan
    cost: CostReport
    metrics: dict[str, float]


def run_sample(cfg: RunConfig, baseline: bool = False, models: Models | None = None) -> SampleResult:
    sc = sampler_config(cfg, baseline)
    plan = sc.plan()
    models = models or build_models(cfg, plan)
    images, traj = sample_lssgen(sc, models.backbone, models.upsampler, models.codec, models.oracle_specs)
    if not np.all(np.isfinite(images)):
        raise FloatingPointError("sampling produced non-finite values")
    if traj.executed() != plan.executed():
        raise RuntimeError(f"executed steps {traj.executed()} differ from plan {plan.executed()}")
    cost = predict_plan_cost(desk_params(models.codec.factor), plan)
    final = traj.stage_latents[-1]
    errs = spectral_errors(final, models.reference)
    metrics = {"total_spectral_error": total_spectral_error(final, models.reference),
               "high_band_error": high_band_error(final, models.reference),
               "pixel_total_spectral_error": total_spectral_error(images, models.pixel_reference)}
    metrics.update({f"band{i}_error": float(e) for i, e in enumerate(errs)})
    return SampleResult(images, traj, plan, cost, metrics)
