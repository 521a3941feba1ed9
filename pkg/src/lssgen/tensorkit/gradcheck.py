"""Central finite-difference verification of analytic layer gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng


@dataclass
class GradCheckReport:
    tolerance: float
    max_error: dict[str, float] = field(default_factory=dict)
    failures: dict[str, list[tuple[int, ...]]] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.failures.values())

    @property
    def worst(self) -> float:
        return max(self.max_error.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"grad_check tol={self.tolerance:g} ok={self.ok}"]
        for name, err in self.max_error.items():
            bad = self.failures.get(name, [])
            lines.append(f"  {name}: max_rel={err:.3e} checked={self.checked[name]} failing={bad[:5]}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor_frac: float = 1e-3) -> np.ndarray:
    """Element-wise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` is ``floor_frac`` times the largest gradient magnitude in the
    tensor, so entries that are tiny relative to the tensor are not judged on
    round-off alone.
    """
    a, n = np.abs(analytic), np.abs(numeric)
    scale = max(a.max(initial=0.0), n.max(initial=0.0))
    denom = np.maximum(np.maximum(a, n), max(floor_frac * scale, 1e-300))
    diff = np.abs(analytic - numeric)
    return np.where(diff == 0.0, 0.0, diff / denom)


def grad_check(layer, x, tolerance: float = 1e-6, step: float = 1e-5, args=(),
               rng: Rng | None = None, max_entries: int | None = None,
               check_input: bool = True) -> GradCheckReport:
    """Compare ``layer.backward`` against central differences of ``<forward, g>``.

    ``g`` is a fixed random projection of the output. The finite difference is
    formed on outputs before projecting, which keeps round-off from outputs the
    perturbed entry does not touch out of the estimate.
    """
    rng = rng or Rng(0)
    x = np.array(x, dtype=np.float64)
    y = layer.forward(x, *args)
    g = rng.normal(y.shape)
    gx = layer.backward(g)
    analytic = {k: v.copy() for k, v in layer.gradients().items()}
    targets = dict(layer.state())
    if check_input:
        targets["input"] = x
        analytic["input"] = np.array(gx)

    report = GradCheckReport(tolerance)
    for name, arr in targets.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.permutation(flat.size)[:max_entries])
        numeric = np.zeros(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            y_plus = layer.forward(x, *args)
            flat[i] = orig - step
            y_minus = layer.forward(x, *args)
            flat[i] = orig
            numeric[j] = np.sum((y_plus - y_minus) * g) / (2.0 * step)
        a = analytic[name].reshape(-1)[idx]
        err = relative_error(a, numeric)
        report.max_error[name] = float(err.max(initial=0.0))
        report.checked[name] = int(idx.size)
        report.failures[name] = [np.unravel_index(i, arr.shape) for i in idx[err >= tolerance]]
    layer.forward(x, *args)
    return report
