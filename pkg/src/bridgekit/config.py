"""Run configuration, presets and the flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .denoiser import DenoiserConfig
from .guidance import GuidanceConfig


@dataclass
class RunConfig:
    dataset: str = ""
    vocab_out: str = ""
    out_dir: str = "runs/default"
    teacher_cache: str = ""  # optional cache written by ``cache-teacher``
    N_cap: int = 64
    T: int = 500
    # denoiser
    layers: int = 6
    d_x: int = 64
    d_e: int = 32
    d_y: int = 64
    heads: int = 4
    align_layer: int = 4
    token_dim: int = 16
    # guidance
    scheme: str = "none"
    endpoints: str = "R"
    lam_align: float = 0.5
    lam_z: float = 1.0
    gin_rounds: int = 2
    d_T: int = 64
    # optimizer
    lr: float = 2e-4
    weight_decay: float = 1e-12
    beta1: float = 0.9
    beta2: float = 0.999
    amsgrad: bool = True
    batch_size: int = 128
    epochs: int = 100
    seed: int = 42
    # validation and sampling
    val_size: int = 0
    val_every: int = 1
    val_n: int = 10
    n_samples: int = 100
    window: int = 10
    fusion_f: float = 0.85
    fusion_s: float = 0.15

    def __post_init__(self):
        for name in ("N_cap", "T", "layers", "d_x", "d_e", "d_y", "heads", "batch_size", "epochs",
                     "n_samples", "val_n", "d_T", "token_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.T < 2:
            raise ValueError("T must be >= 2")
        for name in ("lr", "weight_decay", "lam_align", "lam_z", "fusion_f", "fusion_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def denoiser_config(self, K_a: int, K_b: int = 5) -> DenoiserConfig:
        return DenoiserConfig(K_a=K_a, K_b=K_b, layers=self.layers, d_x=self.d_x, d_e=self.d_e, d_y=self.d_y,
                              heads=self.heads, align_layer=self.align_layer,
                              token_mode=self.guidance_config().token_mode, token_dim=self.token_dim)

    def guidance_config(self) -> GuidanceConfig:
        eps = tuple(e.strip() for e in self.endpoints.replace(",", " ").split() if e.strip())
        return GuidanceConfig(scheme=self.scheme, endpoints=eps, align_layer=self.align_layer,
                              lam_align=self.lam_align, lam_z=self.lam_z, gin_rounds=self.gin_rounds, d_T=self.d_T)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


PRESETS = {
    "full": {},
    "desk": dict(N_cap=24, T=100, layers=3, d_x=32, d_e=8, d_y=32, heads=4, align_layer=2,
                 batch_size=16, epochs=30, n_samples=10, val_size=50, val_every=5, val_n=5),
}


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig(**{**PRESETS[name], **overrides})


def _coerce(field_type, text: str):
    t = field_type if isinstance(field_type, str) else field_type.__name__
    if t == "bool":
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if t == "int":
        return int(text)
    if t == "float":
        return float(text)
    return text.strip()


def parse_overrides(pairs) -> dict:
    """``key=value`` strings (or lines) to typed field values."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(pairs, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _coerce(types[key], value)
    return out


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    values = parse_overrides(Path(path).read_text(encoding="utf-8").splitlines())
    base = base or RunConfig()
    return base.replace(**values)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
