"""``key = value`` run configuration.

Lines are ``key = value`` with ``#`` comments. A ``[section]`` header prefixes
following bare keys, so ``[aug]`` then ``crop_px = 64`` is the same as
``aug.crop_px = 64``. Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Dict, Tuple, Union

import numpy as np

from ..augment import AugmentConfig
from ..chipper import ChipConfig
from ..nn import DESK_CONFIG, FULL_CONFIG, NetworkConfig
from ..optim import OptimizerConfig
from ..segment import SegmentConfig
from .synth import SynthConfig

AUX_MODES = ("off", "baseline_egfr")


class ConfigError(ValueError):
    pass


def _groups(text: str) -> Tuple[Tuple[int, int], ...]:
    out = []
    for part in text.split(","):
        filters, _, convs = part.strip().partition("x")
        out.append((int(filters), int(convs)))
    return tuple(out)


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _aux(text: str) -> str:
    if text not in AUX_MODES:
        raise ValueError(f"aux must be one of {AUX_MODES}")
    return text


def _precision(text: str) -> str:
    if text not in ("float32", "float64"):
        raise ValueError("precision must be float32 or float64")
    return text


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs. Defaults are the desk-scale preset."""
    net: NetworkConfig = DESK_CONFIG
    opt: OptimizerConfig = OptimizerConfig(lr0=1e-3, epochs=10, batch_size=4)
    aug: AugmentConfig = AugmentConfig(crop_px=64, load_downsample=2)
    chip: ChipConfig = ChipConfig(window_px=320, overlap_frac=0.5, downsample_factor=2)
    seg: SegmentConfig = SegmentConfig()
    synth: SynthConfig = SynthConfig()
    aux: str = "baseline_egfr"
    precision: str = "float32"
    seg_downsample: int = 1

    def __post_init__(self):
        if self.aug.crop_px != self.net.input_side:
            raise ConfigError(f"aug.crop_px ({self.aug.crop_px}) must equal net.input_side "
                              f"({self.net.input_side})")
        if self.aux not in AUX_MODES:
            raise ConfigError(f"aux must be one of {AUX_MODES}")

    def network(self) -> NetworkConfig:
        """Network config with the aux width implied by the aux mode."""
        return replace(self.net, aux_dim=0 if self.aux == "off" else 1)

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def with_overrides(self, **kv) -> "RunConfig":
        return replace(self, **kv)


def desk_config() -> RunConfig:
    """64 px inputs cropped from 160 px chips, short schedule."""
    return RunConfig()


def full_config() -> RunConfig:
    """Full-size geometry: 2000 px windows, 400 px inputs, RMSProp at lr 1e-4."""
    # synthetic ROIs scaled up so 2000 px windows fit
    synth = SynthConfig(chip_px=2000, blob_radius_min=62.5, blob_radius_max=125.0)
    return RunConfig(net=FULL_CONFIG, opt=OptimizerConfig(epochs=50), aug=AugmentConfig(),
                     chip=ChipConfig(), synth=synth, precision="float32")


# key -> (sub-config attribute or None for top level, field name, parser)
_SCHEMA: Dict[str, Tuple[Union[str, None], str, Callable]] = {
    "net.input_side": ("net", "input_side", int),
    "net.conv_groups": ("net", "conv_groups", _groups),
    "net.dense_widths": ("net", "dense_widths", _ints),
    "net.precision": (None, "precision", _precision),
    "train.aux": (None, "aux", _aux),
    "seg.downsample": (None, "seg_downsample", int),
}
_SCALARS = {"int": int, "float": float, "str": str, "bool": _bool}
for _sect, _cls, _skip in (("opt", OptimizerConfig, ()), ("aug", AugmentConfig, ()),
                           ("chip", ChipConfig, ()), ("seg", SegmentConfig, ("structuring_element",)),
                           ("synth", SynthConfig, ())):
    for _f in fields(_cls):
        if _f.name in _skip:
            continue
        _parse = _SCALARS[_f.type if isinstance(_f.type, str) else _f.type.__name__]
        _SCHEMA[f"{_sect}.{_f.name}"] = (_sect, _f.name, _parse)


def known_keys():
    return sorted(_SCHEMA)


def parse_config_text(text: str, base: RunConfig = None) -> RunConfig:
    base = base if base is not None else desk_config()
    section = ""
    updates: Dict[Union[str, None], dict] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if section and "." not in key:
            key = f"{section}.{key}"
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        target, name, parse = _SCHEMA[key]
        try:
            updates.setdefault(target, {})[name] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    top = updates.pop(None, {})
    try:
        for target, kv in updates.items():
            top[target] = replace(getattr(base, target), **kv)
        return replace(base, **top)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Union[str, Path, None], base: RunConfig = None) -> RunConfig:
    if path is None:
        return base if base is not None else desk_config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base)


def dump_config(cfg: RunConfig) -> str:
    """Render every key, so the output parses back to ``cfg``."""
    lines = []
    for key in known_keys():
        target, name, _ = _SCHEMA[key]
        value = getattr(cfg if target is None else getattr(cfg, target), name)
        if key == "net.conv_groups":
            value = ",".join(f"{f}x{n}" for f, n in value)
        elif key == "net.dense_widths":
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
