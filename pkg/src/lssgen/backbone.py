"""Generative predictors: velocity (flow matching) or noise (diffusion).

Two families share one interface. :class:`AnalyticBackbone` evaluates exact
Gaussian conditional expectations, either for scalar GRFs (:class:`GrfSpec`)
or for multichannel stationary Gaussians fitted to codec latents
(:class:`StationaryGaussian`). :class:`LearnedBackbone` is a small fully
convolutional network trained on ``||target - prediction||^2``.

Conversions follow from ``z_t = (1 - t) x0 + t eps`` and ``v = eps - x0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grf
from .grf import GrfSpec
from .tensorkit import Adam, Conv2d, Layer, Linear, SiLU, fft2, ifft2
from .tensorkit.io import load_checkpoint, save_checkpoint
from .tensorkit.optim import cosine_lr
from .tensorkit.rng import Rng
from .training import check_loss, minibatches

MODES = ("velocity", "epsilon")
T_TRAIN = (0.01, 0.99)


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def x0_from_velocity(z, v, t):
    return z - t * v


def eps_from_velocity(z, v, t):
    return z + (1.0 - t) * v


def velocity_from_eps(z, eps, t):
    """``v = eps - x0`` with ``x0 = (z - t eps) / (1 - t)``; undefined at ``t = 1``."""
    if t >= 1.0:
        raise ValueError("x0 is not recoverable from an eps prediction at t = 1")
    return eps - (z - t * eps) / (1.0 - t)


class Backbone:
    """Base class: subclasses implement :meth:`predict` in their native mode."""

    mode = "velocity"

    def predict(self, z, t: float) -> np.ndarray:
        raise NotImplementedError

    def data_mean(self, z) -> np.ndarray:
        """``E[x0]`` broadcast to ``z``, the x0 estimate when ``z`` is pure noise."""
        return np.zeros_like(z)

    def velocity(self, z, t: float) -> np.ndarray:
        out = self.predict(z, t)
        if self.mode == "velocity":
            return out
        if t >= 1.0:
            return z - self.data_mean(z)
        return velocity_from_eps(z, out, t)

    def eps(self, z, t: float) -> np.ndarray:
        out = self.predict(z, t)
        return out if self.mode == "epsilon" else eps_from_velocity(z, out, t)

    def x0(self, z, t: float) -> np.ndarray:
        out = self.predict(z, t)
        if self.mode == "velocity":
            return x0_from_velocity(z, out, t)
        if t >= 1.0:
            return self.data_mean(z)
        return (z - t * out) / (1.0 - t)


@dataclass(frozen=True, eq=False)
class StationaryGaussian:
    """Multichannel stationary Gaussian on a torus.

    Per frequency the channel covariance is ``V diag(mu) V^H``; ``mean`` is a
    per-channel constant.
    """

    size: int
    mean: np.ndarray          # [d]
    eigvals: np.ndarray       # [n, n, d]
    eigvecs: np.ndarray       # [n, n, d, d], columns are eigenvectors

    @property
    def channels(self) -> int:
        return len(self.mean)

    def channel_spectra(self) -> np.ndarray:
        """Per-channel power ``[d, n, n]`` (diagonal of the covariance)."""
        return np.einsum("yxck,yxk->cyx", np.abs(self.eigvecs) ** 2, self.eigvals)

    def sample(self, rng: Rng, count: int) -> np.ndarray:
        d, n = self.channels, self.size
        white = fft2(rng.normal((count, d, n, n)))
        coef = np.einsum("yxck,bcyx->bkyx", self.eigvecs.conj(), white)
        coef *= np.sqrt(self.eigvals).transpose(2, 0, 1)[None]
        field = np.einsum("yxck,bkyx->bcyx", self.eigvecs, coef)
        return ifft2(field).real + self.mean[None, :, None, None]


def fit_stationary_gaussian(latents) -> StationaryGaussian:
    """Estimate mean and per-frequency channel covariance from ``[B, d, n, n]`` samples."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 4 or z.shape[-1] != z.shape[-2]:
        raise ValueError(f"expected [B, d, n, n] latents, got {z.shape}")
    b, d, n, _ = z.shape
    mean = z.mean(axis=(0, 2, 3))
    spec = fft2(z - mean[None, :, None, None])
    cov = np.einsum("byxc,byxk->yxck", spec.transpose(0, 2, 3, 1),
                    spec.conj().transpose(0, 2, 3, 1)) / (b * n * n)
    # a real field needs cov[-f] == conj(cov[f])
    mirrored = np.roll(cov[::-1, ::-1], 1, axis=(0, 1)).conj()
    cov = 0.5 * (cov + mirrored)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2).conj())
    mu, vec = np.linalg.eigh(cov)
    return StationaryGaussian(n, mean, np.maximum(mu, 0.0), vec)


Prior = GrfSpec | StationaryGaussian


class AnalyticBackbone(Backbone):
    """Exact conditional expectations under a Gaussian prior per grid size."""

    kind = "analytic"

    def __init__(self, priors: dict[int, Prior] | list[Prior], mode: str = "velocity"):
        self.mode = _check_mode(mode)
        if not isinstance(priors, dict):
            priors = {p.size: p for p in priors}
        self.priors = dict(priors)

    def prior(self, z) -> Prior:
        n = np.shape(z)[-1]
        if n not in self.priors:
            raise KeyError(f"no prior registered for grid size {n}; have {sorted(self.priors)}")
        return self.priors[n]

    def data_mean(self, z):
        p = self.prior(z)
        if isinstance(p, GrfSpec):
            return np.zeros_like(z)
        return np.broadcast_to(p.mean[:, None, None], np.shape(z)).copy()

    def denoise(self, z, t: float) -> tuple[np.ndarray, np.ndarray]:
        """``(E[x0 | z_t], E[eps | z_t])``; well defined on ``(0, 1]``."""
        p = self.prior(z)
        z = np.asarray(z, dtype=np.float64)
        if isinstance(p, GrfSpec):
            return grf.analytic_x0(z, t, p), grf.analytic_eps(z, t, p)
        if z.shape[-3] != p.channels:
            raise ValueError(f"prior has {p.channels} channels, input has {z.shape[-3]}")
        g_x0, g_eps = grf.predictor_gains(p.eigvals, t)  # [n, n, d]
        m = p.mean[:, None, None]
        centred = fft2(z - (1.0 - t) * m)
        coef = np.einsum("yxck,...cyx->...kyx", p.eigvecs.conj(), centred)

        def back(gain):
            return ifft2(np.einsum("yxck,...kyx->...cyx", p.eigvecs,
                                   coef * gain.transpose(2, 0, 1))).real

        return m + back(g_x0), back(g_eps)

    def x0(self, z, t):
        return self.denoise(z, t)[0]

    def eps(self, z, t):
        return self.denoise(z, t)[1]

    def velocity(self, z, t):
        x0, eps = self.denoise(z, t)
        return eps - x0

    def predict(self, z, t):
        return self.velocity(z, t) if self.mode == "velocity" else self.eps(z, t)


def time_features(t, n_freq: int) -> np.ndarray:
    """Sinusoidal embedding ``[sin(pi 2^k t), cos(pi 2^k t)]`` for ``k < n_freq``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    arg = np.pi * t[:, None] * 2.0 ** np.arange(n_freq)[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class BackboneNet(Layer):
    """Four 3x3 convs with SiLU; a time embedding is added channel-wise after the first.

    The input is pre-scaled by ``1 / sqrt((1-t)^2 v + t^2)`` (``v`` the data
    variance) so its scale is the same at every ``t``.
    """

    def __init__(self, channels: int, rng: Rng, width: int = 32, n_freq: int = 6,
                 data_var: float = 1.0):
        super().__init__()
        self.n_freq = n_freq
        self.data_var = data_var
        self.conv1 = Conv2d(channels, width, 3, rng)
        self.embed = Linear(2 * n_freq, width, rng)
        self.act1, self.act2, self.act3 = SiLU(), SiLU(), SiLU()
        self.conv2 = Conv2d(width, width, 3, rng)
        self.conv3 = Conv2d(width, width, 3, rng)
        self.conv4 = Conv2d(width, channels, 3, rng, zero_init=True)

    def children(self):
        return [("conv1", self.conv1), ("embed", self.embed), ("conv2", self.conv2),
                ("conv3", self.conv3), ("conv4", self.conv4)]

    def input_scale(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return 1.0 / np.sqrt((1.0 - t) ** 2 * self.data_var + t * t)

    def forward(self, z, t):
        z = np.asarray(z, dtype=np.float64)
        batch = z.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        self._scale = self.input_scale(t)[:, None, None, None]
        h = self.conv1.forward(z * self._scale)
        h = h + self.embed.forward(time_features(t, self.n_freq))[:, :, None, None]
        h = self.act1.forward(h)
        h = self.act2.forward(self.conv2.forward(h))
        h = self.act3.forward(self.conv3.forward(h))
        return self.conv4.forward(h)

    def backward(self, grad):
        g = self.act3.backward(self.conv4.backward(grad))
        g = self.act2.backward(self.conv3.backward(g))
        g = self.act1.backward(self.conv2.backward(g))
        self.embed.backward(g.sum(axis=(2, 3)))
        return self.conv1.backward(g) * self._scale


class LearnedBackbone(Backbone):
    kind = "learned"

    def __init__(self, channels: int, mode: str = "velocity", width: int = 32,
                 seed: int = 0, data_var: float = 1.0, mean: np.ndarray | None = None):
        self.mode = _check_mode(mode)
        self.channels = channels
        self.width = width
        self.net = BackboneNet(channels, Rng(seed), width, data_var=data_var)
        self.mean = np.zeros(channels) if mean is None else np.asarray(mean, dtype=np.float64)

    def data_mean(self, z):
        return np.broadcast_to(self.mean[:, None, None], np.shape(z)).copy()

    def predict(self, z, t):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-3] != self.channels:
            raise ValueError(f"backbone expects {self.channels} channels, got {z.shape[-3]}")
        if z.ndim == 3:
            return self.net.forward(z[None], t)[0]
        return self.net.forward(z, t)

    def num_params(self) -> int:
        return self.net.num_params()

    def save(self, path) -> None:
        header = {"kind": "learned-backbone", "mode": self.mode, "channels": self.channels,
                  "width": self.width, "data_var": repr(self.net.data_var)}
        save_checkpoint(path, {**self.net.state(), "data_mean": self.mean}, header)

    @classmethod
    def load(cls, path) -> "LearnedBackbone":
        tensors, header = load_checkpoint(path)
        if header.get("kind") != "learned-backbone":
            raise ValueError(f"{path} is not a learned backbone checkpoint")
        model = cls(int(header["channels"]), header["mode"], int(header["width"]),
                    data_var=float(header["data_var"]), mean=tensors.pop("data_mean"))
        model.net.load_state(tensors)
        return model


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    heldout_loss: float = float("nan")
    oracle_loss: float = float("nan")
    baseline_loss: float = float("nan")

    @property
    def oracle_gap(self) -> float:
        """Relative excess of the held-out loss over the analytic minimum."""
        return self.heldout_loss / self.oracle_loss - 1.0

    def to_csv(self) -> str:
        rows = ["epoch,loss"] + [f"{i},{v:.10g}" for i, v in enumerate(self.epoch_loss)]
        rows += [f"heldout,{self.heldout_loss:.10g}", f"oracle,{self.oracle_loss:.10g}",
                 f"baseline,{self.baseline_loss:.10g}"]
        return "\n".join(rows) + "\n"


def training_target(mode: str, x0, eps):
    return eps if mode == "epsilon" else eps - x0


def noisy_batch(x0, rng: Rng):
    """Draw ``t ~ U(0.01, 0.99)`` and ``eps``, return ``(z_t, t, eps)``."""
    lo, hi = T_TRAIN
    t = lo + (hi - lo) * rng.uniform(x0.shape[0])
    eps = rng.normal(x0.shape)
    tb = t[:, None, None, None]
    return (1.0 - tb) * x0 + tb * eps, t, eps


def heldout_set(x0, rng: Rng):
    z, t, eps = noisy_batch(x0, rng)
    return x0, z, t, eps


def backbone_loss(backbone: Backbone, x0, z, t, eps, batch_size: int = 64) -> float:
    target = training_target(backbone.mode, x0, eps)
    total = 0.0
    for i in range(len(z)):
        pred = backbone.predict(z[i], float(t[i]))
        total += float(np.sum((pred - target[i]) ** 2))
    return total / target.size


def train_backbone(mode: str, data, epochs: int = 30, lr: float = 2e-3, rng: Rng | None = None,
                   batch_size: int = 32, width: int = 32, heldout=None,
                   oracle: Backbone | None = None) -> tuple[LearnedBackbone, TrainReport]:
    """Minimise ``E ||target - net(z_t, t)||^2`` with fresh ``(t, eps)`` each epoch.

    ``data`` holds clean samples ``[B, d, n, n]``. ``heldout`` is a tuple from
    :func:`heldout_set`; with an ``oracle`` backbone its loss on the same
    triples is reported as the attainable minimum.
    """
    rng = rng or Rng(0)
    _check_mode(mode)
    x = np.asarray(data, dtype=np.float64)
    model = LearnedBackbone(x.shape[1], mode, width, seed=int(rng.integers(0, 2**31)),
                            data_var=float(x.var()), mean=x.mean(axis=(0, 2, 3)))
    opt = Adam(model.net.state(), lr)
    report = TrainReport()
    if heldout is not None:
        report.baseline_loss = float(np.mean(training_target(mode, heldout[0], heldout[3]) ** 2))
    total = max(1, epochs * -(-len(x) // batch_size))
    step = 0
    for _ in range(epochs):
        losses = []
        for idx in minibatches(len(x), batch_size, rng):
            x0 = x[idx]
            z, t, eps = noisy_batch(x0, rng)
            target = training_target(mode, x0, eps)
            pred = model.net.forward(z, t)
            diff = pred - target
            loss = check_loss(float(np.mean(diff * diff)), "train_backbone", step)
            model.net.backward(2.0 * diff / diff.size)
            opt.step(model.net.gradients(), cosine_lr(lr, step, total, warmup=20))
            losses.append(loss)
            step += 1
        report.epoch_loss.append(float(np.mean(losses)))
    if heldout is not None:
        x0, z, t, eps = heldout
        report.heldout_loss = backbone_loss(model, x0, z, t, eps)
        if oracle is not None:
            report.oracle_loss = backbone_loss(_with_mode(oracle, mode), x0, z, t, eps)
    return model, report


def _with_mode(backbone: Backbone, mode: str) -> Backbone:
    if isinstance(backbone, AnalyticBackbone) and backbone.mode != mode:
        return AnalyticBackbone(backbone.priors, mode)
    return backbone
