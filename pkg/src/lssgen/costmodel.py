"""Inference cost arithmetic: ``cost(L) = a L + b L^2`` per step for ``L`` tokens.

``L = (side / patch)^2 + context``. The linear term covers per-token work
(MLPs, convolutions), the quadratic one attention. Plan costs are sums of
executed steps times per-step cost, so speedups follow directly from a
:class:`~lssgen.schedule.StagePlan`.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .schedule import StagePlan

DEFAULT_PATCH = 16
DEFAULT_CONTEXT = 512


@dataclass(frozen=True)
class CostParams:
    a: float
    b: float
    patch: int = DEFAULT_PATCH
    context: int = DEFAULT_CONTEXT
    clamped: bool = False
    unit: str = "flops"

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("cost coefficients must be non-negative")
        if self.a == 0 and self.b == 0:
            raise ValueError("at least one cost coefficient must be positive")
        if self.patch < 1 or self.context < 0:
            raise ValueError("patch must be >= 1 and context >= 0")

    def tokens_of(self, resolution: int) -> float:
        return (resolution / self.patch) ** 2 + self.context

    def step_cost(self, resolution: int) -> float:
        n = self.tokens_of(resolution)
        return self.a * n + self.b * n * n


def tokens_of(resolution: int, patch: int = DEFAULT_PATCH, context: int = DEFAULT_CONTEXT) -> float:
    return (resolution / patch) ** 2 + context


def fit_cost(observations, patch: int = DEFAULT_PATCH, context: int = DEFAULT_CONTEXT,
             unit: str = "flops") -> CostParams:
    """Least-squares ``(a, b)`` from ``(tokens, cost)`` pairs.

    A negative coefficient is clamped to 0 and the other refitted alone; the
    result is flagged ``clamped``.
    """
    obs = np.asarray(list(observations), dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != 2:
        raise ValueError("observations must be (tokens, cost) pairs")
    if len(np.unique(obs[:, 0])) < 2:
        raise ValueError("need at least two distinct token counts")
    if np.any(obs[:, 0] <= 0) or np.any(obs[:, 1] <= 0):
        raise ValueError("token counts and costs must be positive")
    L, c = obs[:, 0], obs[:, 1]
    design = np.stack([L, L * L], axis=1)
    (a, b), *_ = np.linalg.lstsq(design, c, rcond=None)
    # round-off sized negatives are zeros, not a sign of model misfit
    noise = 1e-9 * c.max()
    if b < 0:
        return CostParams(float(L @ c / (L @ L)), 0.0, patch, context, b * L.max() ** 2 < -noise, unit)
    if a < 0:
        L2 = L * L
        return CostParams(0.0, float(L2 @ c / (L2 @ L2)), patch, context, a * L.max() < -noise, unit)
    return CostParams(float(a), float(b), patch, context, False, unit)


@dataclass
class CostReport:
    stages: list[tuple[int, int, float]]  # (resolution, executed steps, cost)
    baseline_total: float
    unit: str = "flops"
    wall_time: float | None = None
    baseline_wall_time: float | None = None

    @property
    def total(self) -> float:
        return math.fsum(c for _, _, c in self.stages)

    @property
    def speedup(self) -> float:
        return self.baseline_total / self.total

    @property
    def measured_speedup(self) -> float | None:
        if self.wall_time is None or self.baseline_wall_time is None:
            return None
        return self.baseline_wall_time / self.wall_time

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "resolution", "steps", "cost"])
        for i, (res, steps, cost) in enumerate(self.stages):
            w.writerow([i + 1, res, steps, f"{cost:.10g}"])
        w.writerow(["total", "", sum(s for _, s, _ in self.stages), f"{self.total:.10g}"])
        w.writerow(["baseline", "", "", f"{self.baseline_total:.10g}"])
        w.writerow(["speedup", "", "", f"{self.speedup:.6g}"])
        return buf.getvalue()

    def table(self) -> str:
        steps = ", ".join(str(s) for _, s, _ in self.stages)
        res = self.stages[-1][0]
        return (f"{'Resolution':>10} | {'Stage Steps':>12} | {'Speed':>6} | {self.unit:>10}\n"
                f"{res:>10} | {steps:>12} | {self.speedup:>5.2f}x | {self.total:>10.4g}")


def steps_cost(params: CostParams, stages) -> list[tuple[int, int, float]]:
    """Per-stage ``(resolution, steps, steps * step_cost)`` for ``(resolution, steps)`` pairs."""
    out = []
    for res, steps in stages:
        if steps < 0:
            raise ValueError("step counts must be non-negative")
        out.append((int(res), int(steps), steps * params.step_cost(res)))
    return out


def predict_plan_cost(params: CostParams, plan: StagePlan, baseline_steps: int | None = None) -> CostReport:
    """Executed-step cost of ``plan`` against ``baseline_steps`` (default ``base_steps``) at the target."""
    stages = steps_cost(params, [(s.resolution, s.executed_steps) for s in plan.stages])
    base = (baseline_steps or plan.base_steps) * params.step_cost(plan.target_resolution)
    return CostReport(stages, base, params.unit)


@dataclass
class WallTime:
    samples: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def std(self) -> float:
        return float(np.std(self.samples, ddof=1)) if len(self.samples) > 1 else 0.0


def measure_wall_time(fn, repeats: int = 1) -> WallTime:
    """Monotonic-clock timing of ``fn()`` over ``repeats`` calls."""
    out = WallTime()
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        fn()
        out.samples.append(time.perf_counter() - start)
    return out


@dataclass(frozen=True)
class ReferenceRow:
    model: str
    method: str
    resolutions: tuple[int, ...]
    steps: tuple[int, ...]
    tflops: float
    role: str
    provenance: str


def load_reference_table(path=None) -> list[ReferenceRow]:
    """Rows of the bundled reference cost table, or of a CSV with the same columns."""
    if path is None:
        text = resources.files("lssgen").joinpath("data/reference_costs.csv").read_text()
    else:
        with open(path) as f:
            text = f.read()
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        res = tuple(int(v) for v in r["resolutions"].split(";"))
        steps = tuple(int(v) for v in r["steps"].split(";"))
        if len(res) != len(steps):
            raise ValueError(f"row {r['model']}/{r['method']}: resolutions and steps differ in length")
        rows.append(ReferenceRow(r["model"], r["method"], res, steps, float(r["tflops"]),
                                 r["role"], r.get("provenance", "")))
    if not rows:
        raise ValueError("reference table is empty")
    return rows


def per_step_costs(rows: list[ReferenceRow]) -> dict[int, float]:
    """Per-step cost by resolution from a single-stage row and a two-stage row.

    The single-stage row gives the top resolution directly; the two-stage
    calibration row's remaining budget gives the lower one.
    """
    single = [r for r in rows if r.role == "calibrate" and len(r.resolutions) == 1]
    multi = [r for r in rows if r.role == "calibrate" and len(r.resolutions) == 2]
    if len(single) != 1 or len(multi) != 1:
        raise ValueError("need exactly one single-stage and one two-stage calibration row")
    top, = single[0].resolutions
    costs = {top: single[0].tflops / single[0].steps[0]}
    (lo, hi), (n_lo, n_hi) = multi[0].resolutions, multi[0].steps
    if hi != top:
        raise ValueError("two-stage calibration row must end at the single-stage resolution")
    costs[lo] = (multi[0].tflops - n_hi * costs[top]) / n_lo
    return costs


@dataclass
class Calibration:
    model: str
    step_costs: dict[int, float]
    params: CostParams
    predictions: list[tuple[ReferenceRow, float]]

    def rows(self) -> list[dict]:
        out = []
        for row, pred in self.predictions:
            out.append({"model": self.model, "method": row.method,
                        "steps": ", ".join(map(str, row.steps)), "reported": row.tflops,
                        "predicted": pred, "error_pct": 100.0 * (pred - row.tflops) / row.tflops})
        return out


def calibrate(rows: list[ReferenceRow], model: str, patch: int = DEFAULT_PATCH,
              context: int = DEFAULT_CONTEXT) -> Calibration:
    """Fit ``(a, b)`` to one model's calibration rows and predict all of its rows."""
    mine = [r for r in rows if r.model == model]
    if not mine:
        raise ValueError(f"no rows for model {model!r}")
    costs = per_step_costs(mine)
    params = fit_cost([(tokens_of(res, patch, context), c) for res, c in costs.items()],
                      patch, context, unit="TFLOPs")
    preds = [(r, math.fsum(c for *_, c in steps_cost(params, zip(r.resolutions, r.steps))))
             for r in mine]
    return Calibration(model, costs, params, preds)


def calibration_csv(calibrations: list[Calibration]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "method", "steps", "reported_tflops", "predicted_tflops", "error_pct",
                "a", "b", "clamped"])
    for cal in calibrations:
        for r in cal.rows():
            w.writerow([r["model"], r["method"], r["steps"], f"{r['reported']:g}",
                        f"{r['predicted']:.6g}", f"{r['error_pct']:.3f}", f"{cal.params.a:.6g}",
                        f"{cal.params.b:.6g}", int(cal.params.clamped)])
    return buf.getvalue()


def desk_params(latent_factor: int = 1, a: float = 1.0, b: float = 0.0) -> CostParams:
    """Cost units for the desk models: one token per latent pixel, no context tokens."""
    return CostParams(a, b, patch=latent_factor, context=0, unit="latent-pixel-steps")
