"""Model configuration: dataclass, named presets, and the text config format.

Config files are plain ``key = value`` lines (``#`` starts a comment).  A
``preset`` key seeds the named configuration and any further keys override
single fields, e.g.::

    preset = dat-s
    scale = 2
    window = 8x16

Recognised keys: preset, n_groups, n_pairs, channels, heads, window (HxW),
sgfn_expansion, scale, r1, r2, shift_policy.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .tensor import ConfigError

SHIFT_POLICIES = ("alternating", "always", "never")


@dataclass(frozen=True)
class ModelConfig:
    n_groups: int
    n_pairs: int
    channels: int
    heads: int
    window: tuple[int, int]
    sgfn_expansion: int
    scale: int
    r1: int = 8
    r2: int = 8
    shift_policy: str = "alternating"

    def __post_init__(self):
        if min(self.n_groups, self.n_pairs, self.channels, self.heads) < 1:
            raise ConfigError("group/pair/channel/head counts must be positive")
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels={self.channels} not divisible by heads={self.heads}")
        if self.window[0] < 1 or self.window[1] < 1:
            raise ConfigError("window extents must be positive")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"unsupported scale {self.scale} (reconstruction head handles 2, 3, 4)")
        if self.sgfn_expansion < 1 or (self.channels * self.sgfn_expansion) % 2 != 0:
            raise ConfigError("hidden width channels*expansion must be even")
        if self.r1 < 1 or self.r2 < 1:
            raise ConfigError("reduction ratios must be positive")
        if self.shift_policy not in SHIFT_POLICIES:
            raise ConfigError(f"shift_policy must be one of {SHIFT_POLICIES}")


# Scale defaults to 4 so `params`/`flops` reproduce the x4 complexity numbers.
PRESETS: dict[str, ModelConfig] = {
    "dat": ModelConfig(n_groups=6, n_pairs=3, channels=180, heads=6,
                       window=(8, 32), sgfn_expansion=4, scale=4),
    "dat-s": ModelConfig(n_groups=6, n_pairs=3, channels=180, heads=6,
                         window=(8, 16), sgfn_expansion=2, scale=4),
    "tiny": ModelConfig(n_groups=1, n_pairs=1, channels=16, heads=2,
                        window=(4, 4), sgfn_expansion=2, scale=2),
}

_INT_KEYS = ("n_groups", "n_pairs", "channels", "heads", "sgfn_expansion", "scale", "r1", "r2")


def _parse_window(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"window must look like '8x16', got {text!r}")
    return int(parts[0]), int(parts[1])


def parse_config_text(text: str) -> ModelConfig:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value

    if "preset" in pairs:
        name = pairs.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
        cfg = PRESETS[name]
    else:
        required = {"n_groups", "n_pairs", "channels", "heads", "window", "sgfn_expansion", "scale"}
        missing = required - pairs.keys()
        if missing:
            raise ConfigError(f"config without preset must set {sorted(missing)}")
        cfg = ModelConfig(
            n_groups=1, n_pairs=1, channels=1, heads=1, window=(1, 1),
            sgfn_expansion=2, scale=2,
        )

    updates: dict[str, object] = {}
    for key, value in pairs.items():
        if key in _INT_KEYS:
            updates[key] = int(value)
        elif key == "window":
            updates[key] = _parse_window(value)
        elif key == "shift_policy":
            updates[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return replace(cfg, **updates) if updates else cfg


def resolve_config(spec: str) -> ModelConfig:
    """Accept a preset name or a path to a key-value config file."""
    if spec in PRESETS:
        return PRESETS[spec]
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"config {spec!r} is neither a preset {sorted(PRESETS)} nor a file")
    return parse_config_text(path.read_text())
