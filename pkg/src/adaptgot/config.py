"""Run configuration: one flat namespace of knobs shared by library and CLI."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass


class ConfigError(ValueError):
    """Unknown key, unparsable value, or inconsistent setting."""


STRATEGY_ORDER = ("knn", "density", "importance", "category")
N_EXPERTS = 4


@dataclass
class RunConfig:
    seed: int = 0
    k: int = 5                      # neighbors kept per sampling strategy
    heads: int = 2                  # attention heads
    d_k: int = 16                   # per-head key width
    d_model: int = 32               # node embedding width, must equal heads * d_k
    d_txt: int = 256                # hashed bag-of-words width
    d_hidden: int = 32              # hidden width of the 2-layer encoders/decoders
    dropout: float = 0.1
    lr: float = 0.001
    epochs: int = 100
    gamma: float = 1e-6             # sampler score smoothing
    bandwidth_km: float = 0.5       # KDE bandwidth
    density_pool_mult: int = 4      # density sampler scans mult*k nearest candidates
    k_experts: int = 2              # experts kept by the gate (of 4)
    mask_ratio: float = 0.2
    fusion_activation: str = "sigmoid"   # sigmoid | tanh | identity
    literal_sign_sampling: bool = False  # rank by the negated score ratio instead
    plain_attention: bool = False        # drop edge terms from the attention scores
    gate_input: str = "enh"              # enh | zfinal
    cooccur_window_secs: float = math.inf
    s_scale_km: float = 10.0        # distance normalizer for edge geometry features
    ln_eps: float = 1e-12
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    probe_lambda: float = 0.5       # cosine weight in the Markov-blend probe
    materialize_distance: bool = False
    text_salt: str = "got-text-v1"
    lexicon: str = ""               # optional sentiment lexicon path

    def validate(self) -> "RunConfig":
        if self.heads * self.d_k != self.d_model:
            raise ConfigError(
                f"d_model must equal heads*d_k, got {self.d_model} != {self.heads}*{self.d_k}"
            )
        if self.fusion_activation not in ("sigmoid", "tanh", "identity"):
            raise ConfigError(f"unknown fusion_activation {self.fusion_activation!r}")
        if self.gate_input not in ("enh", "zfinal"):
            raise ConfigError(f"unknown gate_input {self.gate_input!r}")
        if not 1 <= self.k_experts <= 4:
            raise ConfigError(f"k_experts must be in 1..4, got {self.k_experts}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in (0,1), got {self.mask_ratio}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.density_pool_mult < 1:
            raise ConfigError(f"density_pool_mult must be >= 1, got {self.density_pool_mult}")
        if self.bandwidth_km <= 0:
            raise ConfigError(f"bandwidth_km must be > 0, got {self.bandwidth_km}")
        if self.cooccur_window_secs < 0:
            raise ConfigError("cooccur_window_secs must be >= 0")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        return self


def _parse_value(name: str, raw, target_type):
    if isinstance(raw, str):
        s = raw.strip()
        if target_type is bool:
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"cannot parse boolean {name}={raw!r}")
        if target_type is int:
            try:
                return int(s)
            except ValueError as exc:
                raise ConfigError(f"cannot parse integer {name}={raw!r}") from exc
        if target_type is float:
            try:
                return float(s)  # accepts "inf"
            except ValueError as exc:
                raise ConfigError(f"cannot parse float {name}={raw!r}") from exc
        return s
    if target_type is bool:
        if isinstance(raw, bool):
            return raw
        raise ConfigError(f"cannot parse boolean {name}={raw!r}")
    if target_type is float and isinstance(raw, (int, float)):
        return float(raw)
    if target_type is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"cannot parse integer {name}={raw!r}")
        return raw
    if target_type is str and not isinstance(raw, str):
        raise ConfigError(f"cannot parse string {name}={raw!r}")
    return raw


def apply_settings(cfg: RunConfig, settings: dict) -> RunConfig:
    """Overlay a {key: value} mapping onto cfg, rejecting unknown keys."""
    for name, raw in settings.items():
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {name!r}")
        setattr(cfg, name, _parse_value(name, raw, _FIELD_TYPES[name]))
    return cfg


# dataclasses stores annotations as strings under `from __future__ import
# annotations`; resolve them once here.
_FIELD_TYPES = {"seed": int, "k": int, "heads": int, "d_k": int, "d_model": int,
                "d_txt": int, "d_hidden": int, "dropout": float, "lr": float,
                "epochs": int, "gamma": float, "bandwidth_km": float,
                "density_pool_mult": int, "k_experts": int, "mask_ratio": float,
                "fusion_activation": str, "literal_sign_sampling": bool,
                "plain_attention": bool, "gate_input": str,
                "cooccur_window_secs": float, "s_scale_km": float,
                "ln_eps": float, "beta1": float, "beta2": float,
                "adam_eps": float, "probe_lambda": float,
                "materialize_distance": bool, "text_salt": str, "lexicon": str}


def load_config(path: str | None = None, overrides: list[str] | None = None,
                seed: int | None = None) -> RunConfig:
    """Build a config from an optional file plus key=value overrides.

    The file may be JSON (an object) or plain "key=value" lines with ``#``
    comments.  Overrides are "key=value" strings from the command line and
    win over the file; an explicit seed wins over both.
    """
    cfg = RunConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            body = fh.read()
        stripped = body.lstrip()
        if stripped.startswith("{"):
            try:
                settings = json.loads(body)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
            if not isinstance(settings, dict):
                raise ConfigError("config JSON must be an object")
            apply_settings(cfg, settings)
        else:
            settings = {}
            for ln, line in enumerate(body.splitlines(), start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"config line {ln}: expected key=value, got {line!r}")
                key, val = line.split("=", 1)
                settings[key.strip()] = val.strip()
            apply_settings(cfg, settings)
    if overrides:
        settings = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, val = item.split("=", 1)
            settings[key.strip()] = val.strip()
        apply_settings(cfg, settings)
    if seed is not None:
        cfg.seed = seed
    return cfg.validate()


def config_lock_text(cfg: RunConfig) -> str:
    """Canonical echo of the effective config, stable across runs."""
    lines = []
    for name in sorted(_FIELD_TYPES):
        val = getattr(cfg, name)
        if isinstance(val, bool):
            out = "true" if val else "false"
        elif isinstance(val, float):
            out = repr(val)
        else:
            out = str(val)
        lines.append(f"{name}={out}")
    return "\n".join(lines) + "\n"
