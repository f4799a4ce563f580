"""Network / training configuration and the flat ``key=value`` run-config format.

Run-config files hold one ``key=value`` per line; ``#`` starts a comment.
Keys are the field names of :class:`NetConfig`, :class:`TrainConfig` and the
data paths of :class:`RunConfig`. Tuples are written comma-separated, nested
tuples (discriminator widths) with ``/`` between groups. Unknown keys and
out-of-range values are rejected.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ContractError, FormatError
from .losses import ChamferVariant


@dataclass
class NetConfig:
    n_input: int = 256
    n_coarse: int = 64
    feat_dim: int = 128
    encoder_stage1: tuple[int, ...] = (64, 128)
    encoder_stage2: tuple[int, ...] = (256,)
    coarse_hidden: tuple[int, ...] = (256, 256)
    lift_pre: tuple[int, ...] = (128, 64)
    contraction: tuple[int, ...] = (64, 128)
    expansion: tuple[int, ...] = (64,)
    head_hidden: tuple[int, ...] = (64,)
    iterations: int = 2
    mirror: bool = True
    contraction_expansion: bool = True
    discriminator: bool = True
    grid_lo: float = -1.0
    grid_hi: float = 1.0
    mirror_plane: str = "xy"
    disc_seeds: int = 32
    disc_radii: tuple[float, ...] = (0.1, 0.2, 0.4)
    disc_k: tuple[int, ...] = (8, 12, 24)
    disc_widths: tuple[tuple[int, ...], ...] = ((16, 16, 32), (32, 32, 64), (32, 48, 64))
    init_seed: int = 0

    def __post_init__(self):
        if self.n_coarse < 2:
            raise ContractError(f"n_coarse must be >= 2, got {self.n_coarse}")
        if self.iterations not in (1, 2, 3, 4):
            raise ContractError(f"iterations must be in 1..4, got {self.iterations}")
        if not self.grid_lo < self.grid_hi:
            raise ContractError("grid_lo must be below grid_hi")
        if self.mirror_plane not in ("xy", "yz", "xz"):
            raise ContractError(f"unknown mirror_plane {self.mirror_plane!r}")
        if not len(self.disc_radii) == len(self.disc_k) == len(self.disc_widths):
            raise ContractError("disc_radii, disc_k and disc_widths must have equal length")
        if self.n_input < 1 or self.feat_dim < 1 or self.disc_seeds < 1:
            raise ContractError("n_input, feat_dim and disc_seeds must be positive")

    @property
    def synthesis_size(self) -> int:
        return 2 * self.n_coarse

    @property
    def output_size(self) -> int:
        return self.synthesis_size * 2**self.iterations

    @classmethod
    def full_scale(cls, **overrides) -> "NetConfig":
        """Full-size network: 2048-point input, 512 coarse points, 16384 output."""
        base = dict(
            n_input=2048, n_coarse=512, feat_dim=1024,
            encoder_stage1=(128, 256), encoder_stage2=(512,),
            coarse_hidden=(1024, 1024), iterations=4,
            disc_seeds=256, disc_k=(16, 32, 128),
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 5e-5
    lr_decay: float = 0.7
    decay_period: int = 40
    lr_floor: float = 1e-6
    lambda_gan: float = 1.0
    lambda_ae: float = 100.0
    beta_rec: float = 200.0
    lambda_f_start: float = 0.01
    lambda_f_end: float = 1.0
    ramp_iters: int = 50000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    max_iters: int = 0
    batch_size: int = 8
    seed: int = 0
    chamfer: str = "CD2"
    labeled_ratio: float = 1.0
    resampling: bool = False
    mixup: bool = False
    partial_ae: bool = True
    mixup_alpha: float = 1.0
    mixup_beta: float = 1.0
    removal_fraction: float = 0.25
    regenerate: bool = True
    d_steps: int = 1
    n_target: int = 0
    mean_shape_refresh: int = 0
    eval_every: int = 1

    def __post_init__(self):
        self.chamfer = ChamferVariant.parse(self.chamfer).value
        if self.lr_g <= 0 or self.lr_d <= 0 or self.lr_floor <= 0:
            raise ContractError("learning rates must be > 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ContractError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if not (0.0 < self.lambda_f_start <= 1.0 and 0.0 < self.lambda_f_end <= 1.0):
            raise ContractError("lambda_f ramp endpoints must lie in (0, 1]")
        if not 0.0 <= self.labeled_ratio <= 1.0:
            raise ContractError(f"labeled_ratio must lie in [0, 1], got {self.labeled_ratio}")
        if self.batch_size < 1 or self.decay_period < 1 or self.epochs < 0 or self.d_steps < 0:
            raise ContractError("batch_size and decay_period must be >= 1; epochs, d_steps >= 0")
        if not 0.0 <= self.removal_fraction < 1.0:
            raise ContractError("removal_fraction must lie in [0, 1)")

    def lr_at(self, base: float, epoch: int) -> float:
        return max(base * self.lr_decay ** (epoch // self.decay_period), self.lr_floor)

    def lambda_f_at(self, iteration: int) -> float:
        if self.ramp_iters <= 0 or iteration >= self.ramp_iters:
            return self.lambda_f_end
        frac = iteration / self.ramp_iters
        return self.lambda_f_start + (self.lambda_f_end - self.lambda_f_start) * frac


@dataclass
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str = ""
    test_data: str = ""
    out_dir: str = "runs"


_PATH_KEYS = ("data", "test_data", "out_dir")


def _key_table() -> dict[str, tuple[str | None, dataclasses.Field]]:
    table = {}
    for section, cls in (("net", NetConfig), ("train", TrainConfig)):
        for f in fields(cls):
            table[f.name] = (section, f)
    for f in fields(RunConfig):
        if f.name in _PATH_KEYS:
            table[f.name] = (None, f)
    return table


def _convert(text: str, default):
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        if default and isinstance(default[0], tuple):
            return tuple(_convert(group, default[0]) for group in text.split("/"))
        item = default[0] if default else 0
        return tuple(_convert(part.strip(), item) for part in text.split(",") if part.strip())
    return text


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "/".join(_format(v) for v in value)
        return ",".join(_format(v) for v in value)
    return str(value)


def parse_config_text(text: str, env: dict | None = None) -> RunConfig:
    table = _key_table()
    net_kw, train_kw, paths = {}, {}, {}
    defaults = {"net": NetConfig(), "train": TrainConfig()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in table:
            raise ContractError(f"config line {lineno}: unknown key {key!r}")
        section, f = table[key]
        if section is None:
            paths[key] = value
            continue
        try:
            parsed = _convert(value, getattr(defaults[section], f.name))
        except ValueError as exc:
            raise ContractError(f"config line {lineno}: bad value for {key}: {exc}") from None
        (net_kw if section == "net" else train_kw)[key] = parsed
    env = os.environ if env is None else env
    if env.get("CRN_SEED"):
        train_kw["seed"] = int(env["CRN_SEED"])
    return RunConfig(NetConfig(**net_kw), TrainConfig(**train_kw), **paths)


def parse_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    """Every key with its applied value, in a form ``parse_config_text`` accepts."""
    lines = []
    for f in fields(NetConfig):
        lines.append(f"{f.name}={_format(getattr(cfg.net, f.name))}")
    for f in fields(TrainConfig):
        lines.append(f"{f.name}={_format(getattr(cfg.train, f.name))}")
    for key in _PATH_KEYS:
        lines.append(f"{key}={getattr(cfg, key)}")
    return "\n".join(lines) + "\n"
