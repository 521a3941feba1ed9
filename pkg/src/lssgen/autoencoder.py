"""A small convolutional autoencoder giving the pipeline a real latent space.

Encoder: two stride-2 convs (1 -> 8 -> d channels, SiLU between), 4x spatial
compression. Decoder mirrors it with stride-2 transposed convs. All padding
is circular because the training fields are periodic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensorkit import Adam, Conv2d, ConvTranspose2d, Sequential, SiLU
from .tensorkit.io import load_checkpoint, save_checkpoint
from .tensorkit.optim import cosine_lr
from .tensorkit.rng import Rng
from .training import check_loss, minibatches, mse_grad


class IdentityCodec:
    """Latent == pixels. For debugging and for upsampler checks against the GRF oracle."""

    kind = "identity"
    latent_channels = 1
    factor = 1

    def encode(self, x):
        return np.asarray(x, dtype=np.float64)

    def decode(self, z):
        return np.asarray(z, dtype=np.float64)


class AutoencoderModel:
    kind = "autoencoder"
    factor = 4

    def __init__(self, latent_channels: int = 4, hidden: int = 8, seed: int = 0):
        rng = Rng(seed)
        self.latent_channels = latent_channels
        self.hidden = hidden
        self.encoder = Sequential(
            Conv2d(1, hidden, 4, rng, stride=2, padding=1),
            SiLU(),
            Conv2d(hidden, latent_channels, 4, rng, stride=2, padding=1),
        )
        self.decoder = Sequential(
            ConvTranspose2d(latent_channels, hidden, 4, 2, rng),
            SiLU(),
            ConvTranspose2d(hidden, 1, 4, 2, rng, gain=1e-2),
        )

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-3] != 1 or x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValueError(f"expected [..., 1, H, W] with H, W divisible by 4, got {x.shape}")
        return x

    def encode(self, x):
        return self.encoder.forward(self._check(x))

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-3] != self.latent_channels:
            raise ValueError(f"expected {self.latent_channels} latent channels, got {z.shape[-3]}")
        return self.decoder.forward(z)

    def state(self) -> dict[str, np.ndarray]:
        return {**self.encoder.state("encoder."), **self.decoder.state("decoder.")}

    def gradients(self) -> dict[str, np.ndarray]:
        return {**self.encoder.gradients("encoder."), **self.decoder.gradients("decoder.")}

    def num_params(self) -> int:
        return sum(a.size for a in self.state().values())

    def save(self, path) -> None:
        header = {"kind": self.kind, "latent_channels": self.latent_channels, "hidden": self.hidden}
        save_checkpoint(path, self.state(), header)

    @classmethod
    def load(cls, path) -> "AutoencoderModel":
        tensors, header = load_checkpoint(path)
        if header.get("kind") != cls.kind:
            raise ValueError(f"{path} is not an autoencoder checkpoint")
        model = cls(int(header["latent_channels"]), int(header["hidden"]))
        model.encoder.load_state({k[8:]: v for k, v in tensors.items() if k.startswith("encoder.")})
        model.decoder.load_state({k[8:]: v for k, v in tensors.items() if k.startswith("decoder.")})
        return model


@dataclass
class AeReport:
    epoch_loss: list[float] = field(default_factory=list)
    heldout_mse: float = float("nan")
    input_variance: float = float("nan")

    def to_csv(self) -> str:
        rows = ["epoch,train_mse"] + [f"{i},{v:.10g}" for i, v in enumerate(self.epoch_loss)]
        rows.append(f"heldout,{self.heldout_mse:.10g}")
        return "\n".join(rows) + "\n"


def reconstruction_mse(codec, x) -> float:
    return float(np.mean((codec.decode(codec.encode(x)) - x) ** 2))


def train_ae(dataset: np.ndarray, epochs: int = 20, lr: float = 3e-3, rng: Rng | None = None,
             batch_size: int = 32, heldout: np.ndarray | None = None,
             model: AutoencoderModel | None = None) -> tuple[AutoencoderModel, AeReport]:
    """Fit encoder and decoder to minimise mean squared reconstruction error."""
    rng = rng or Rng(0)
    x = np.asarray(dataset, dtype=np.float64)
    model = model or AutoencoderModel(seed=int(rng.integers(0, 2**31)))
    model._check(x)
    params = model.state()
    opt = Adam(params, lr)
    report = AeReport(input_variance=float(x.var()))
    total = epochs * -(-len(x) // batch_size)
    step = 0
    for _ in range(epochs):
        losses = []
        for idx in minibatches(len(x), batch_size, rng):
            xb = x[idx]
            recon = model.decoder.forward(model.encoder.forward(xb))
            loss, g = mse_grad(recon, xb)
            check_loss(loss, "train_ae", step)
            model.encoder.backward(model.decoder.backward(g))
            opt.step(model.gradients(), cosine_lr(lr, step, total, warmup=20))
            losses.append(loss)
            step += 1
        report.epoch_loss.append(float(np.mean(losses)))
    report.heldout_mse = reconstruction_mse(model, heldout if heldout is not None else x)
    return model, report
