"""2x latent upsampler: residual conv blocks around a stride-2 transposed conv.

Graph: in-conv (d -> C), K residual blocks, ConvTranspose (C -> C, k=4, s=2),
SiLU, out-conv (C -> d, zero-initialised), plus a global nearest-neighbour
skip from the input. With the skip on, the untrained model is nearest
replication; with ``skip="none"`` it outputs the out-conv bias.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .grf import GrfSpec, grf_sample, pool, radial_power_spectrum
from .tensorkit import (Adam, Conv2d, ConvTranspose2d, Layer, ResBlock, SiLU, bilinear_up2x,
                        nearest_up2x)
from .tensorkit.io import load_checkpoint, save_checkpoint
from .tensorkit.optim import cosine_lr
from .tensorkit.rng import Rng
from .training import check_loss, minibatches, mse_grad

SKIPS = ("nearest", "none")


class UpsamplerNet(Layer):
    def __init__(self, channels: int, width: int, blocks: int, rng: Rng, skip: str = "nearest"):
        super().__init__()
        if skip not in SKIPS:
            raise ValueError(f"skip must be one of {SKIPS}")
        self.skip = skip
        self.inp = Conv2d(channels, width, 3, rng)
        self.blocks = [ResBlock(width, rng) for _ in range(blocks)]
        self.up = ConvTranspose2d(width, width, 4, 2, rng)
        self.act = SiLU()
        self.out = Conv2d(width, channels, 3, rng, zero_init=True)

    def children(self):
        named = [("inp", self.inp)] + [(f"block{i}", b) for i, b in enumerate(self.blocks)]
        return named + [("up", self.up), ("out", self.out)]

    def forward(self, x):
        h = self.inp.forward(x)
        for b in self.blocks:
            h = b.forward(h)
        y = self.out.forward(self.act.forward(self.up.forward(h)))
        return y + nearest_up2x(x) if self.skip == "nearest" else y

    def backward(self, grad):
        g = self.up.backward(self.act.backward(self.out.backward(grad)))
        for b in reversed(self.blocks):
            g = b.backward(g)
        gx = self.inp.backward(g)
        if self.skip == "nearest":
            # adjoint of 2x replication is 2x2 sum pooling
            s = grad.shape
            gx = gx + grad.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1))
        return gx


class UpsamplerModel:
    kind = "upsampler"

    def __init__(self, channels: int = 4, width: int = 32, blocks: int = 3, seed: int = 0,
                 skip: str = "nearest"):
        self.channels = channels
        self.width = width
        self.n_blocks = blocks
        self.net = UpsamplerNet(channels, width, blocks, Rng(seed), skip)

    @property
    def skip(self) -> str:
        return self.net.skip

    def apply(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim not in (3, 4) or z.shape[-3] != self.channels:
            raise ValueError(f"upsampler expects [..., {self.channels}, h, w], got {z.shape}")
        return self.net.forward(z)

    __call__ = apply

    def num_params(self) -> int:
        return self.net.num_params()

    def manifest(self) -> dict:
        return {"kind": self.kind, "channels": self.channels, "width": self.width,
                "blocks": self.n_blocks, "skip": self.skip, "activation": "silu",
                "normalization": "none", "deconv": "k4s2"}

    def save(self, path) -> None:
        save_checkpoint(path, self.net.state(), self.manifest())

    @classmethod
    def load(cls, path) -> "UpsamplerModel":
        tensors, header = load_checkpoint(path)
        if header.get("kind") != cls.kind:
            raise ValueError(f"{path} is not an upsampler checkpoint")
        model = cls(int(header["channels"]), int(header["width"]), int(header["blocks"]),
                    skip=header.get("skip", "nearest"))
        model.net.load_state(tensors)
        return model


def bilinear_latent(z) -> np.ndarray:
    """Channel-wise 2x bilinear interpolation (periodic boundary)."""
    return bilinear_up2x(z, boundary="wrap")


def nearest_latent(z) -> np.ndarray:
    return nearest_up2x(z)


def pixel_roundtrip_upscale(codec, z) -> np.ndarray:
    """Decode, upscale 2x bilinearly in pixel space, re-encode."""
    return codec.encode(bilinear_up2x(codec.decode(z), boundary="wrap"))


def make_pairs(codec, spec: GrfSpec, count: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """``(encode(pool(x)), encode(x))`` for ``count`` fresh GRF images ``x``."""
    x = grf_sample(spec, rng, count)
    return codec.encode(pool(x)), codec.encode(x)


@dataclass
class UpsamplerReport:
    epoch_loss: list[float] = field(default_factory=list)
    heldout_mse: float = float("nan")
    bilinear_mse: float = float("nan")
    nearest_mse: float = float("nan")
    oracle_mse: float = float("nan")
    win_rate_vs_bilinear: float = float("nan")

    def to_csv(self) -> str:
        rows = ["epoch,loss"] + [f"{i},{v:.10g}" for i, v in enumerate(self.epoch_loss)]
        for name in ("heldout_mse", "bilinear_mse", "nearest_mse", "oracle_mse", "win_rate_vs_bilinear"):
            rows.append(f"{name},{getattr(self, name):.10g}")
        return "\n".join(rows) + "\n"


def per_pair_mse(pred, target) -> np.ndarray:
    return ((pred - target) ** 2).reshape(len(pred), -1).mean(axis=1)


def apply_batched(model: UpsamplerModel, z, batch: int = 64) -> np.ndarray:
    return np.concatenate([model.apply(z[i:i + batch]) for i in range(0, len(z), batch)])


def evaluate(model: UpsamplerModel, low, high, codec=None) -> dict[str, np.ndarray]:
    """Per-pair MSE for the learned and fixed upscaling methods."""
    out = {"resnet_upsampler": per_pair_mse(apply_batched(model, low), high),
           "latent_bilinear": per_pair_mse(bilinear_latent(low), high),
           "latent_nearest": per_pair_mse(nearest_latent(low), high)}
    if codec is not None and getattr(codec, "kind", "") != "identity":
        out["pixel_roundtrip"] = per_pair_mse(pixel_roundtrip_upscale(codec, low), high)
    return out


def evaluation_csv(methods: dict[str, np.ndarray], outputs: dict[str, np.ndarray],
                   target: np.ndarray) -> str:
    """Rows of (method, MSE, PSNR, band energies) for upscaled latents against ``target``."""
    peak = float(np.max(np.abs(target)))
    ref = radial_power_spectrum(target)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "mse", "psnr_db"] + [f"band{i}" for i in range(ref.n_bands)])
    w.writerow(["target", "0", "inf"] + [f"{p:.6g}" for p in ref.power])
    for name, mse in methods.items():
        m = float(np.mean(mse))
        psnr = 10.0 * np.log10(peak**2 / m) if m > 0 else float("inf")
        prof = radial_power_spectrum(outputs[name])
        w.writerow([name, f"{m:.6g}", f"{psnr:.4f}"] + [f"{p:.6g}" for p in prof.power])
    return buf.getvalue()


def train_upsampler(codec, spec: GrfSpec, pairs: int = 2048, epochs: int = 10, lr: float = 2e-3,
                    rng: Rng | None = None, width: int = 32, blocks: int = 3, batch_size: int = 32,
                    heldout: int = 256, skip: str = "nearest", oracle_mse: float | None = None
                    ) -> tuple[UpsamplerModel, UpsamplerReport]:
    """L2 regression of ``encode(x)`` on ``encode(pool(x))`` over fresh GRF images.

    ``spec`` describes the high-resolution pixel field.
    """
    rng = rng or Rng(0)
    low, high = make_pairs(codec, spec, pairs, rng.child(1))
    model = UpsamplerModel(low.shape[1], width, blocks, seed=int(rng.integers(0, 2**31)), skip=skip)
    opt = Adam(model.net.state(), lr)
    total = max(1, epochs * -(-pairs // batch_size))
    report = UpsamplerReport()
    step = 0
    for _ in range(epochs):
        losses = []
        for idx in minibatches(pairs, batch_size, rng):
            pred = model.net.forward(low[idx])
            loss, grad = mse_grad(pred, high[idx])
            check_loss(loss, "train_upsampler", step)
            model.net.backward(grad)
            opt.step(model.net.gradients(), cosine_lr(lr, step, total, warmup=20))
            losses.append(loss)
            step += 1
        report.epoch_loss.append(float(np.mean(losses)))
    if heldout:
        h_low, h_high = make_pairs(codec, spec, heldout, rng.child(2))
        scores = evaluate(model, h_low, h_high)
        report.heldout_mse = float(scores["resnet_upsampler"].mean())
        report.bilinear_mse = float(scores["latent_bilinear"].mean())
        report.nearest_mse = float(scores["latent_nearest"].mean())
        report.win_rate_vs_bilinear = float(np.mean(scores["resnet_upsampler"] < scores["latent_bilinear"]))
    if oracle_mse is not None:
        report.oracle_mse = oracle_mse
    return model, report
