"""Stationary periodic Gaussian random fields and their exact predictors.

A field on an ``n x n`` torus is described by its DFT eigenvalues ``lam[f]``:
the covariance is diagonal in the unitary Fourier basis, so every Gaussian
conditional expectation used here (denoisers, poolings, MMSE upsampling) is a
per-frequency gain or a small dense solve.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass

import numpy as np

from .tensorkit import avg_pool2x, fft2, ifft2
from .tensorkit.ops import frequency_grid
from .tensorkit.rng import Rng

MAX_DENSE_SIZE = 64


@dataclass(frozen=True, eq=False)
class GrfSpec:
    """Eigenvalues of a periodic stationary field (numpy FFT ordering)."""

    size: int
    eigenvalues: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        if lam.shape != (self.size, self.size):
            raise ValueError(f"eigenvalues must be {self.size}x{self.size}, got {lam.shape}")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite and non-negative")
        if not np.allclose(lam, _reflect(lam), rtol=1e-9, atol=1e-12):
            raise ValueError("eigenvalues must satisfy lam[f] == lam[-f] for a real field")
        object.__setattr__(self, "eigenvalues", lam)
        lam.flags.writeable = False

    @classmethod
    def power_law(cls, size: int, alpha: float = 2.0, c: float = 1.0) -> "GrfSpec":
        """``lam_f ~ 1 / (|f|^alpha + c)`` scaled to unit mean pixel variance."""
        if alpha < 0 or c <= 0:
            raise ValueError("need alpha >= 0 and c > 0")
        fy, fx = frequency_grid(size, size)
        lam = 1.0 / (np.hypot(fy, fx) ** alpha + c)
        lam *= size * size / lam.sum()
        return cls(size, lam, f"powerlaw(alpha={alpha:g},c={c:g})")

    @classmethod
    def white(cls, size: int) -> "GrfSpec":
        return cls(size, np.ones((size, size)), "white")

    @classmethod
    def dc_only(cls, size: int) -> "GrfSpec":
        lam = np.zeros((size, size))
        lam[0, 0] = size * size
        return cls(size, lam, "dc")

    @property
    def pixel_variance(self) -> float:
        return float(self.eigenvalues.sum() / self.size**2)

    @property
    def key(self) -> str:
        return hashlib.sha1(self.eigenvalues.tobytes()).hexdigest()


def _reflect(lam: np.ndarray) -> np.ndarray:
    """``lam[-f]`` for every ``f``."""
    return np.roll(lam[::-1, ::-1], 1, axis=(0, 1))


def grf_sample(spec: GrfSpec, rng: Rng, count: int | None = None) -> np.ndarray:
    """Spectral synthesis: filter real white noise by ``sqrt(lam)``.

    The DFT of real white noise is a conjugate-symmetric complex Gaussian
    field with unit variance per frequency, so the result has covariance
    exactly ``F^H diag(lam) F``. Returns ``[1, n, n]`` or ``[count, 1, n, n]``.
    """
    shape = (1 if count is None else count, 1, spec.size, spec.size)
    white = rng.normal(shape)
    field = ifft2(fft2(white) * np.sqrt(spec.eigenvalues)).real
    return field[0] if count is None else field


def _check_t(t: float) -> None:
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")


def predictor_gains(lam: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-frequency ``(x0, eps)`` gains of ``E[. | z_t]`` for ``z_t = (1-t) x0 + t eps``.

    ``t = 1`` is the continuous limit: ``x0`` gain 0, ``eps`` gain 1.
    """
    _check_t(t)
    denom = (1.0 - t) ** 2 * lam + t * t
    return (1.0 - t) * lam / denom, t / denom


def _apply_gain(z, gain: np.ndarray) -> np.ndarray:
    return ifft2(fft2(z) * gain).real


def _check_shape(z, spec: GrfSpec) -> None:
    if np.shape(z)[-2:] != (spec.size, spec.size):
        raise ValueError(f"input spatial shape {np.shape(z)[-2:]} does not match spec size {spec.size}")


def analytic_x0(z, t: float, spec: GrfSpec) -> np.ndarray:
    _check_shape(z, spec)
    return _apply_gain(z, predictor_gains(spec.eigenvalues, t)[0])


def analytic_eps(z, t: float, spec: GrfSpec) -> np.ndarray:
    _check_shape(z, spec)
    return _apply_gain(z, predictor_gains(spec.eigenvalues, t)[1])


def analytic_velocity(z, t: float, spec: GrfSpec) -> np.ndarray:
    """``E[eps - x0 | z_t]``: gain ``(t - (1-t) lam) / ((1-t)^2 lam + t^2)``."""
    _check_shape(z, spec)
    g_x0, g_eps = predictor_gains(spec.eigenvalues, t)
    return _apply_gain(z, g_eps - g_x0)


def circulant_covariance(spec: GrfSpec) -> np.ndarray:
    """Dense ``n^2 x n^2`` covariance of the flattened field."""
    n = spec.size
    if n > MAX_DENSE_SIZE:
        raise ValueError(f"dense covariance limited to {MAX_DENSE_SIZE}x{MAX_DENSE_SIZE} fields")
    r = ifft2(spec.eigenvalues).real
    iy, ix = np.divmod(np.arange(n * n), n)
    return r[(iy[:, None] - iy[None, :]) % n, (ix[:, None] - ix[None, :]) % n]


def pooled_spec(spec: GrfSpec) -> GrfSpec:
    """Spectrum of the 2x2 average-pooled field.

    The pooled autocovariance is ``r_p(d) = sum_e w(e) r(2d + e)`` with the
    triangle weights of two overlapping 2-boxes, ``w = [1, 2, 1] x [1, 2, 1] / 16``.
    """
    n = spec.size
    if n % 2:
        raise ValueError(f"pooling needs an even size, got {n}")
    r = ifft2(spec.eigenvalues).real
    tri = {-1: 1.0, 0: 2.0, 1: 1.0}
    m = n // 2
    d = 2 * np.arange(m)
    rp = np.zeros((m, m))
    for ey, wy in tri.items():
        for ex, wx in tri.items():
            rp += wy * wx / 16.0 * r[np.ix_((d + ey) % n, (d + ex) % n)]
    lam = fft2(rp).real
    lam = 0.5 * (lam + _reflect(lam))
    lam[np.abs(lam) < 1e-12 * max(1.0, np.abs(lam).max())] = 0.0
    return GrfSpec(m, np.maximum(lam, 0.0), f"pooled[{spec.label}]")


def pooling_matrix(n: int) -> np.ndarray:
    """``(n/2)^2 x n^2`` matrix of 2x2 average pooling on flattened fields."""
    m = n // 2
    iy, ix = np.divmod(np.arange(n * n), n)
    p = np.zeros((m * m, n * n))
    p[(iy // 2) * m + ix // 2, np.arange(n * n)] = 0.25
    return p


_ORACLE_CACHE: dict[str, tuple[np.ndarray, float]] = {}


def mmse_upsample_map(spec: GrfSpec) -> tuple[np.ndarray, float]:
    """Linear map ``E[z_high | pool(z_high)]`` and its per-pixel MSE."""
    if spec.size > MAX_DENSE_SIZE:
        raise ValueError(f"MMSE oracle limited to {MAX_DENSE_SIZE}x{MAX_DENSE_SIZE} high-res fields")
    if spec.key not in _ORACLE_CACHE:
        c = circulant_covariance(spec)
        p = pooling_matrix(spec.size)
        cp = c @ p.T
        gain = cp @ np.linalg.pinv(p @ cp, rcond=1e-10, hermitian=True)
        mse = float(np.trace(c - gain @ cp.T)) / c.shape[0]
        _ORACLE_CACHE[spec.key] = (gain, max(mse, 0.0))
    return _ORACLE_CACHE[spec.key]


def mmse_upsample_oracle(z_low, spec: GrfSpec) -> tuple[np.ndarray, float]:
    """Conditional mean of the high-res field given its pooled version.

    ``spec`` describes the high-resolution field. ``z_low`` is ``[..., n/2, n/2]``.
    """
    z_low = np.asarray(z_low, dtype=np.float64)
    m = spec.size // 2
    if z_low.shape[-2:] != (m, m):
        raise ValueError(f"expected low-res fields of size {m}, got {z_low.shape[-2:]}")
    gain, mse = mmse_upsample_map(spec)
    lead = z_low.shape[:-2]
    flat = z_low.reshape(-1, m * m) @ gain.T
    return flat.reshape(*lead, spec.size, spec.size), mse


def pool(x) -> np.ndarray:
    return avg_pool2x(x)


@dataclass
class SpectralProfile:
    """Mean power ``|DFT|^2 / (h w)`` per radial frequency band."""

    edges: np.ndarray
    power: np.ndarray
    count: int

    @property
    def n_bands(self) -> int:
        return len(self.power)

    def relative_error(self, reference: "SpectralProfile") -> np.ndarray:
        return np.abs(self.power - reference.power) / reference.power

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["band_low", "band_high", "power"])
        for lo, hi, p in zip(self.edges[:-1], self.edges[1:], self.power):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", f"{p:.10g}"])
        return buf.getvalue()


def band_index(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Band id per DFT bin and the band edges; ``ceil(size/4)`` bands over ``[0, size/2]``.

    Corner frequencies beyond Nyquist fold into the top band.
    """
    n_bands = max(1, math.ceil(size / 4))
    nyquist = size / 2
    edges = np.linspace(0.0, nyquist, n_bands + 1)
    fy, fx = frequency_grid(size, size)
    radius = np.minimum(np.hypot(fy, fx), nyquist)
    idx = np.minimum(np.searchsorted(edges, radius, side="right") - 1, n_bands - 1)
    return idx, edges


def _profile_from_power(power: np.ndarray, count: int) -> SpectralProfile:
    idx, edges = band_index(power.shape[-1])
    sums = np.bincount(idx.ravel(), weights=power.ravel(), minlength=len(edges) - 1)
    bins = np.bincount(idx.ravel(), minlength=len(edges) - 1)
    return SpectralProfile(edges, sums / bins, count)


def radial_power_spectrum(images) -> SpectralProfile:
    """Band-averaged power of a batch of square images, ``[B, h, w]`` or ``[B, C, h, w]``.

    Channels are treated as extra samples.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim < 2 or x.size == 0:
        raise ValueError("need a non-empty batch of images")
    h, w = x.shape[-2:]
    if h != w:
        raise ValueError(f"images must be square, got {h}x{w}")
    x = x.reshape(-1, h, w)
    power = (np.abs(fft2(x)) ** 2).mean(axis=0) / (h * w)
    return _profile_from_power(power, x.shape[0])


def spec_profile(spec: GrfSpec) -> SpectralProfile:
    """Expected :func:`radial_power_spectrum` of samples from ``spec``."""
    return _profile_from_power(spec.eigenvalues, 0)
