"""Deterministic samplers: single-stage baseline and progressive latent scaling.

The progressive run follows the staged recipe: sample the lowest resolution
from pure noise, then for each doubling upscale the clean latent, blend it
with fresh noise at ``init_noise_level`` and denoise the rest of that stage's
grid. Noise streams are per stage (``Rng(seed).child(stage)``), so stage 1
of a progressive run consumes exactly the baseline's noise and sweeps over
``init_noise_level`` reuse identical draws.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import AnalyticBackbone, Backbone
from .grf import GrfSpec, SpectralProfile, mmse_upsample_oracle, radial_power_spectrum
from .schedule import NoiseSchedule, StagePlan, plan_stages
from .tensorkit.rng import Rng
from .upsampler import bilinear_latent, nearest_latent, pixel_roundtrip_upscale

SCALING_METHODS = ("resnet_upsampler", "latent_bilinear", "pixel_roundtrip",
                   "latent_nearest", "mmse_oracle")
SOLVERS = ("auto", "euler", "ddim")


@dataclass
class SamplerConfig:
    """Inputs of a progressive run. Resolutions are pixel side lengths."""

    min_resolution: int = 16
    target_resolution: int = 32
    base_resolution: int | None = None
    base_steps: int = 32
    init_noise_level: float = 0.75
    shorten_steps: bool = False
    shift: bool = False
    shift_mode: str = "pixels"
    scaling_method: str = "resnet_upsampler"
    seed: int = 0
    batch: int = 1
    solver: str = "auto"
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.scaling_method not in SCALING_METHODS:
            raise ValueError(f"scaling_method must be one of {SCALING_METHODS}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if not 0.0 < self.init_noise_level <= 1.0:
            raise ValueError("init_noise_level must lie in (0, 1]")
        if self.batch < 1 or self.snapshot_stride < 0:
            raise ValueError("batch must be >= 1 and snapshot_stride >= 0")

    def plan(self) -> StagePlan:
        return plan_stages(self.min_resolution, self.target_resolution,
                           self.base_resolution or self.target_resolution, self.base_steps,
                           self.init_noise_level, self.shorten_steps, self.shift, self.shift_mode)


@dataclass
class StepRecord:
    stage: int
    resolution: int
    t_hi: float
    t_lo: float
    mean: float
    std: float


@dataclass
class Trajectory:
    steps: list[StepRecord] = field(default_factory=list)
    # per stage: list of (t, x0_hat) pairs, the last being (0.0, final latent)
    snapshots: list[list[tuple[float, np.ndarray]]] = field(default_factory=list)
    stage_latents: list[np.ndarray] = field(default_factory=list)
    # per resumed stage: variance of the upscaled latent and of the blend
    blend_variance: list[tuple[float, float]] = field(default_factory=list)

    def executed(self) -> list[int]:
        counts: dict[int, int] = {}
        for r in self.steps:
            counts[r.stage] = counts.get(r.stage, 0) + 1
        return [counts.get(k, 0) for k in range(len(self.stage_latents))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "resolution", "t_hi", "t_lo", "sigma", "mean", "std"])
        for r in self.steps:
            w.writerow([r.stage, r.resolution, f"{r.t_hi:.12g}", f"{r.t_lo:.12g}",
                        f"{r.t_hi:.12g}", f"{r.mean:.10g}", f"{r.std:.10g}"])
        return buf.getvalue()


def _check_times(t_hi: float, t_lo: float) -> None:
    if not 1.0 >= t_hi >= t_lo >= 0.0:
        raise ValueError(f"need 1 >= t_hi >= t_lo >= 0, got t_hi={t_hi}, t_lo={t_lo}")


def _velocity_and_x0(backbone: Backbone, z, t: float) -> tuple[np.ndarray, np.ndarray]:
    """One backbone evaluation, returned as ``(v, x0_hat)``."""
    if isinstance(backbone, AnalyticBackbone):
        x0, eps = backbone.denoise(z, t)
        return eps - x0, x0
    out = backbone.predict(z, t)
    if backbone.mode == "velocity":
        return out, z - t * out
    if t >= 1.0:
        x0 = backbone.data_mean(z)
        return z - x0, x0
    x0 = (z - t * out) / (1.0 - t)
    return out - x0, x0


def fm_euler_step(z, t_hi: float, t_lo: float, backbone: Backbone) -> np.ndarray:
    """``z + (t_lo - t_hi) v(z, t_hi)``."""
    _check_times(t_hi, t_lo)
    if t_hi == t_lo:
        raise ValueError("times must strictly decrease")
    return z + (t_lo - t_hi) * backbone.velocity(z, t_hi)


def ddim_step(z, t_hi: float, t_lo: float, backbone: Backbone) -> np.ndarray:
    """Estimate ``x0`` and ``eps`` at ``t_hi``, re-noise to ``t_lo``.

    At ``t_hi = 1`` an eps prediction cannot give ``x0``; the velocity form
    (``x0`` = data mean) is used instead. ``t_lo == t_hi`` returns ``z``.
    """
    _check_times(t_hi, t_lo)
    if t_lo == t_hi:
        return np.array(z, dtype=np.float64, copy=True)
    v, x0 = _velocity_and_x0(backbone, z, t_hi)
    eps = x0 + v
    return (1.0 - t_lo) * x0 + t_lo * eps


def _step(z, t_hi, t_lo, backbone, solver):
    v, x0 = _velocity_and_x0(backbone, z, t_hi)
    if solver == "euler":
        return z + (t_lo - t_hi) * v, x0
    return (1.0 - t_lo) * x0 + t_lo * (x0 + v), x0


def _solver_for(backbone: Backbone, solver: str) -> str:
    if solver != "auto":
        return solver
    return "euler" if backbone.mode == "velocity" else "ddim"


def denoise(z, schedule: NoiseSchedule, start: int, backbone: Backbone, solver: str = "auto",
            trajectory: Trajectory | None = None, stage: int = 0, snapshot_stride: int = 1):
    """Integrate from ``schedule.times[start]`` to 0."""
    solver = _solver_for(backbone, solver)
    times = schedule.times
    snaps = []
    for i in range(start, schedule.steps):
        t_hi, t_lo = times[i], times[i + 1]
        z, x0 = _step(z, t_hi, t_lo, backbone, solver)
        if trajectory is not None:
            trajectory.steps.append(StepRecord(stage, schedule.resolution, t_hi, t_lo,
                                               float(z.mean()), float(z.std())))
            if snapshot_stride and (i - start) % snapshot_stride == 0:
                snaps.append((t_hi, x0))
    if trajectory is not None:
        snaps.append((0.0, z))
        trajectory.snapshots.append(snaps)
        trajectory.stage_latents.append(z)
    return z


def sample_single_stage(backbone: Backbone, schedule: NoiseSchedule, shape, rng: Rng,
                        solver: str = "auto", trajectory: Trajectory | None = None,
                        snapshot_stride: int = 1) -> np.ndarray:
    """Pure noise at ``t = 1`` integrated to ``t = 0``."""
    z = rng.normal(tuple(shape))
    return denoise(z, schedule, 0, backbone, solver, trajectory, 0, snapshot_stride)


def compensate(z_up, sigma_init: float, rng: Rng | None = None, noise=None) -> np.ndarray:
    """``(1 - sigma) z_up + sigma eps`` with fresh ``eps`` unless ``noise`` is given."""
    if not 0.0 <= sigma_init <= 1.0:
        raise ValueError(f"sigma_init must lie in [0, 1], got {sigma_init}")
    z_up = np.asarray(z_up, dtype=np.float64)
    if noise is None:
        if rng is None:
            raise ValueError("need an rng or explicit noise")
        noise = rng.normal(z_up.shape)
    return (1.0 - sigma_init) * z_up + sigma_init * np.asarray(noise, dtype=np.float64)


def stage_rng(seed: int, stage: int) -> Rng:
    return Rng(seed).child(stage)


def latent_shape(cfg: SamplerConfig, resolution: int, codec) -> tuple[int, ...]:
    return (cfg.batch, codec.latent_channels, resolution // codec.factor, resolution // codec.factor)


def _upscale(method: str, z, upsampler, codec, oracle_specs):
    if method == "resnet_upsampler":
        return upsampler.apply(z)
    if method == "latent_bilinear":
        return bilinear_latent(z)
    if method == "latent_nearest":
        return nearest_latent(z)
    if method == "pixel_roundtrip":
        return pixel_roundtrip_upscale(codec, z)
    spec = oracle_specs[2 * z.shape[-1]]
    return mmse_upsample_oracle(z, spec)[0]


def validate(cfg: SamplerConfig, backbone: Backbone, upsampler, codec, oracle_specs=None) -> StagePlan:
    """Check every resolution, channel count and model reference; returns the plan."""
    plan = cfg.plan()
    for st in plan.stages:
        if st.resolution % codec.factor:
            raise ValueError(f"resolution {st.resolution} is not divisible by the codec factor {codec.factor}")
        if isinstance(backbone, AnalyticBackbone):
            backbone.prior(np.empty((1, st.resolution // codec.factor)))
    if plan.n_stages > 1:
        if cfg.scaling_method == "resnet_upsampler":
            if upsampler is None:
                raise ValueError("scaling_method resnet_upsampler needs an upsampler")
            if upsampler.channels != codec.latent_channels:
                raise ValueError(f"upsampler has {upsampler.channels} channels, codec latents have "
                                 f"{codec.latent_channels}")
        if cfg.scaling_method == "mmse_oracle":
            if codec.kind != "identity" or not oracle_specs:
                raise ValueError("mmse_oracle scaling needs the identity codec and GRF specs")
            for st in plan.stages[1:]:
                if st.resolution not in oracle_specs:
                    raise ValueError(f"no GRF spec for resolution {st.resolution}")
    return plan


def sample_lssgen(cfg: SamplerConfig, backbone: Backbone, upsampler=None, codec=None,
                  oracle_specs: dict[int, GrfSpec] | None = None) -> tuple[np.ndarray, Trajectory]:
    """Progressive sampling; returns decoded pixels ``[batch, 1, H, W]`` and the trajectory."""
    from .autoencoder import IdentityCodec

    codec = codec or IdentityCodec()
    plan = validate(cfg, backbone, upsampler, codec, oracle_specs)
    traj = Trajectory()
    z = None
    for k, st in enumerate(plan.stages):
        rng = stage_rng(cfg.seed, k)
        shape = latent_shape(cfg, st.resolution, codec)
        if k == 0:
            z = rng.normal(shape)
        else:
            up = _upscale(cfg.scaling_method, z, upsampler, codec, oracle_specs)
            z = compensate(up, cfg.init_noise_level, rng)
            traj.blend_variance.append((float(up.var()), float(z.var())))
        z = denoise(z, st.schedule, st.resume_index, backbone, cfg.solver, traj, k,
                    cfg.snapshot_stride)
    return codec.decode(z), traj


def baseline_config(cfg: SamplerConfig) -> SamplerConfig:
    """Single stage at the target resolution with the base step count."""
    d = asdict(cfg)
    d.update(min_resolution=cfg.target_resolution, shorten_steps=False, shift=False)
    return SamplerConfig(**d)


@dataclass
class BandEnergySeries:
    """Per-step band energies of ``x0_hat`` for one stage; the last row is the final latent."""

    times: np.ndarray
    energy: np.ndarray  # [n_steps + 1, n_bands]

    def crossing_time(self, band: int, fraction: float = 0.9) -> float:
        """Largest ``t`` from which the band's energy stays at or above ``fraction`` of its final value."""
        e = self.energy[:, band]
        ok = e >= fraction * e[-1]
        # the final row always qualifies; walk back while it keeps qualifying
        i = len(e) - 1
        while i > 0 and ok[i - 1]:
            i -= 1
        return float(self.times[i])


def trajectory_band_energy(traj: Trajectory, stage: int = -1) -> BandEnergySeries:
    if not traj.snapshots or not traj.snapshots[stage]:
        raise ValueError("trajectory has no snapshots")
    snaps = traj.snapshots[stage]
    times = np.array([t for t, _ in snaps])
    energy = np.stack([radial_power_spectrum(x).power for _, x in snaps])
    return BandEnergySeries(times, energy)


def spectral_errors(samples, reference: SpectralProfile) -> np.ndarray:
    """Signed relative band error of the samples' spectrum against ``reference``."""
    prof = radial_power_spectrum(samples)
    return (prof.power - reference.power) / reference.power


def high_band_slice(n_bands: int) -> slice:
    """Upper half of the bands (the top band alone when there are fewer than two)."""
    return slice(n_bands // 2, n_bands) if n_bands > 1 else slice(0, 1)


def high_band_error(samples, reference: SpectralProfile) -> float:
    """Relative error of the total energy in the upper half of the bands."""
    prof = radial_power_spectrum(samples)
    hb = high_band_slice(reference.n_bands)
    got = prof.power[hb].sum()
    want = reference.power[hb].sum()
    return float(abs(got - want) / want)


def total_spectral_error(samples, reference: SpectralProfile) -> float:
    """Mean absolute relative band error."""
    return float(np.mean(np.abs(spectral_errors(samples, reference))))

