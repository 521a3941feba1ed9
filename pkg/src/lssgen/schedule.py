"""Noise-schedule arithmetic: SNR/sigma maps, timestep shifting, grids and stage plans.

Time ``t`` runs from 1 (pure noise) to 0 (clean data) and doubles as the
noise coefficient: ``z_t = (1 - t) z_0 + t eps``, so ``sigma(t) = t`` and the
diffusion signal weight is ``sqrt(alpha_bar(t)) = 1 - t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

# grid times within this distance of sigma_init count as <= sigma_init
RESUME_TOL = 1e-12

SHIFT_MODES = ("pixels", "sides")


def snr_of_sigma(sigma: float) -> float:
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    return (1.0 - sigma) ** 2 / sigma**2


def sigma_of_snr(snr: float) -> float:
    if snr < 0:
        raise ValueError(f"snr must be non-negative, got {snr}")
    return 1.0 / (1.0 + math.sqrt(snr))


def shift_time(t, s: float):
    """Resolution-dependent timestep shift ``s t / (1 + (s - 1) t)``.

    A Moebius map fixing 0 and 1; shifting by ``s1`` then ``s2`` equals
    shifting by ``s1 * s2``. Factors below 1 are rejected because stages only
    ever move up in resolution.
    """
    if s < 1.0:
        raise ValueError(f"shift factor must be >= 1, got {s}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any((t_arr < 0.0) | (t_arr > 1.0)):
        raise ValueError("t must lie in [0, 1]")
    out = s * t_arr / (1.0 + (s - 1.0) * t_arr)
    return float(out) if np.ndim(t) == 0 else out


def shift_factor(resolution: int, reference: int, mode: str = "pixels") -> float:
    """Shift factor ``sqrt(m / n)`` between two resolutions.

    ``mode="pixels"`` reads m and n as pixel counts (factor = side ratio);
    ``mode="sides"`` reads them as side lengths (factor = sqrt(side ratio)).
    """
    if mode not in SHIFT_MODES:
        raise ValueError(f"shift mode must be one of {SHIFT_MODES}")
    ratio = resolution / reference
    return ratio if mode == "pixels" else math.sqrt(ratio)


@dataclass(frozen=True)
class NoiseSchedule:
    times: tuple[float, ...]
    resolution: int
    shift: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.times)
        if t.size < 2 or t[0] != 1.0 or t[-1] != 0.0:
            raise ValueError("schedule must run from exactly 1 to exactly 0")
        if np.any(np.diff(t) >= 0):
            raise ValueError("schedule times must be strictly decreasing")

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @staticmethod
    def sigma(t: float) -> float:
        return t

    @staticmethod
    def alpha_bar(t: float) -> float:
        return (1.0 - t) ** 2


def build_schedule(steps: int, resolution: int, base_resolution: int | None = None,
                   apply_shift: bool = False, shift_mode: str = "pixels") -> NoiseSchedule:
    """Uniform grid ``t_i = 1 - i/steps``, optionally shifted pointwise.

    The shift factor is taken between ``resolution`` and ``base_resolution``
    (the lower, unshifted reference).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    t = 1.0 - np.arange(steps + 1) / steps
    t[-1] = 0.0
    s = 1.0
    if apply_shift:
        s = shift_factor(resolution, base_resolution or resolution, shift_mode)
        t = shift_time(t, s)
        t[0], t[-1] = 1.0, 0.0
    return NoiseSchedule(tuple(float(v) for v in t), resolution, s)


def resume_index(schedule: NoiseSchedule, sigma_init: float) -> int:
    """Index of the first grid time at or below ``sigma_init``."""
    if not 0.0 < sigma_init <= 1.0:
        raise ValueError(f"sigma_init must lie in (0, 1], got {sigma_init}")
    for i, t in enumerate(schedule.times):
        if t <= sigma_init + RESUME_TOL:
            return i
    return schedule.steps  # unreachable: the grid ends at 0


@dataclass(frozen=True)
class Stage:
    resolution: int
    steps: int
    sigma_init: float
    resume_index: int
    schedule: NoiseSchedule = field(repr=False, compare=False)

    @property
    def executed_steps(self) -> int:
        return self.steps - self.resume_index


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]
    base_steps: int
    base_resolution: int
    shorten_steps: bool
    shift: bool = False

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def target_resolution(self) -> int:
        return self.stages[-1].resolution

    def executed(self) -> list[int]:
        return [s.executed_steps for s in self.stages]

    def describe(self) -> str:
        """Stage-step counts in table style, e.g. ``"25, 37"``."""
        return ", ".join(str(n) for n in self.executed())


def stage_count(min_res: int, target_res: int) -> int:
    if min_res < 1 or target_res < min_res:
        raise ValueError("need 1 <= min_resolution <= target_resolution")
    ratio, rem = divmod(target_res, min_res)
    if rem or ratio & (ratio - 1):
        raise ValueError(
            f"target/min resolution ratio must be a power of two, got {target_res}/{min_res}")
    return ratio.bit_length()


def stage_steps(base_steps: int, resolution: int, base_resolution: int, shorten: bool) -> int:
    """Steps for one stage: ``base_steps // (base_res // res)`` when shortened below base."""
    if shorten and resolution < base_resolution:
        return max(1, base_steps // (base_resolution // resolution))
    return base_steps


def plan_stages(min_res: int, target_res: int, base_res: int, base_steps: int,
                sigma_init: float = 0.75, shorten: bool = False, shift: bool = False,
                shift_mode: str = "pixels", step_overrides: dict[int, int] | None = None) -> StagePlan:
    """Build the progressive plan ``min_res, 2 min_res, ..., target_res``.

    Stage 1 starts from pure noise; later stages re-enter their grid at the
    first time at or below ``sigma_init``. With ``shift`` each stage's grid is
    shifted by the factor between its resolution and ``min_res``.
    ``step_overrides`` maps a stage resolution to an explicit grid size.
    """
    if base_steps < 1:
        raise ValueError("base_steps must be >= 1")
    n = stage_count(min_res, target_res)
    stages = []
    for k in range(n):
        res = min_res * 2**k
        steps = stage_steps(base_steps, res, base_res, shorten)
        if step_overrides and res in step_overrides:
            steps = int(step_overrides[res])
        sched = build_schedule(steps, res, min_res, apply_shift=shift, shift_mode=shift_mode)
        sig = 1.0 if k == 0 else float(sigma_init)
        stages.append(Stage(res, steps, sig, resume_index(sched, sig), sched))
    return StagePlan(tuple(stages), base_steps, base_res, shorten, shift)


class UpscaledSigma(NamedTuple):
    linear: float
    exact: float


def sigma_after_upscale(sigma: float, s: float = 2.0) -> UpscaledSigma:
    """Noise coefficient after upscaling by ``s``, from the SNR dropping to SNR/s^2.

    ``linear`` is the 3/4-per-doubling rule, ``sigma * (3/4) ** log2(s)``;
    ``exact`` maps through the SNR, ``1 / (1 + sqrt(SNR) / s)``.
    """
    if not 0.0 < sigma <= 1.0:
        raise ValueError(f"sigma must lie in (0, 1], got {sigma}")
    if s < 1.0:
        raise ValueError("scale factor must be >= 1")
    linear = sigma * 0.75 ** math.log2(s)
    snr = (1.0 - sigma) ** 2 / sigma**2
    return UpscaledSigma(linear, 1.0 / (1.0 + math.sqrt(snr) / s))
