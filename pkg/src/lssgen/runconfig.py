"""Flat ``key = value`` run configuration and the report format built on it.

A report is itself a loadable config: everything that is not a config key
is written on ``#`` lines.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

from . import __version__
from .tensorkit.rng import ALGORITHM


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


CHOICES = {
    "mode": ("fm", "dm"),
    "scaling_method": ("resnet_upsampler", "latent_bilinear", "pixel_roundtrip",
                       "latent_nearest", "mmse_oracle"),
    "shift_mode": ("pixels", "sides"),
    "solver": ("auto", "euler", "ddim"),
    "field": ("powerlaw", "white", "dc"),
    "codec": ("identity", "autoencoder"),
    "backbone": ("analytic", "learned"),
}


@dataclass
class RunConfig:
    # staged sampling
    min_resolution: int = 16
    target_resolution: int = 32
    base_resolution: int = 0  # 0 means target_resolution
    base_steps: int = 32
    init_noise_level: float = 0.75
    shorten_steps: bool = False
    shift: bool = False
    shift_mode: str = "pixels"
    scaling_method: str = "resnet_upsampler"
    solver: str = "auto"
    mode: str = "fm"
    seed: int = 0
    batch: int = 8
    # data
    field: str = "powerlaw"
    alpha: float = 2.0
    c: float = 1.0
    size: int = 32
    count: int = 1024
    prior_samples: int = 2048
    prior_seed: int = 1234
    # models and training
    codec: str = "identity"
    backbone: str = "analytic"
    epochs: int = 10
    lr: float = 2e-3
    pairs: int = 1024
    width: int = 32
    blocks: int = 3
    # paths
    out_dir: str = "runs"
    data_path: str = ""
    ae_path: str = ""
    backbone_path: str = ""
    upsampler_path: str = ""

    def __post_init__(self):
        for key, allowed in CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")

    @property
    def resolved_base(self) -> int:
        return self.base_resolution or self.target_resolution

    def path(self, key: str, default_name: str) -> str:
        import os
        return getattr(self, key) or os.path.join(self.out_dir, default_name)

    def lines(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = ("on" if v else "off") if f.name == "shift" else ("true" if v else "false")
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return out

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, text: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            return _bool(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return text


def parse_pairs(lines, source: str = "<config>") -> dict:
    values = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def load_config(path: str | None = None, overrides=()) -> RunConfig:
    values = {}
    if path:
        try:
            with open(path) as f:
                values.update(parse_pairs(f, path))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
    values.update(parse_pairs(overrides, "<command line>"))
    return RunConfig(**values)


@dataclass
class RunReport:
    command: str
    config: RunConfig
    notes: list[tuple[str, str]]

    def add(self, key: str, value) -> None:
        self.notes.append((key, str(value)))

    def to_text(self) -> str:
        head = [f"# lssgen run report", f"# version = {__version__}", f"# rng = {ALGORITHM}",
                f"# command = {self.command}"]
        body = []
        for key, value in self.notes:
            for i, part in enumerate(value.splitlines() or [""]):
                body.append(f"# {key} = {part}" if i == 0 else f"#   {part}")
        return "\n".join(head + body + self.config.lines()) + "\n"
