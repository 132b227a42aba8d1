"""Run configuration: defaults, dataset-group presets and ``key = value`` files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from ..augment import CgaConfig
from ..errors import InvalidArgumentError, ParseError


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    cga: CgaConfig = field(default_factory=CgaConfig)
    occupancy_voxel: float = 1.0
    knn_k: int = 3
    eps: float = 1e-8
    patch: float = 32.0
    overlap: float = 0.5
    seg_voxel: float = 0.25
    hidden: int = 16
    label_map: Optional[str] = None
    format: Optional[str] = None

    def __post_init__(self):
        for name in ("occupancy_voxel", "eps", "patch", "seg_voxel"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 <= self.overlap < 1:
            raise InvalidArgumentError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.knn_k < 1 or self.hidden < 1:
            raise InvalidArgumentError("knn_k and hidden must be >= 1")


PRESETS = {
    "group1": {},
    "group2": {"patch": 50.0, "seg_voxel": 0.3},
}

_CGA_FIELDS = {f.name: f for f in dataclasses.fields(CgaConfig)}
_RUN_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "cga"}


def _floats(text):
    return tuple(float(t) for t in str(text).replace(",", " ").split())


def _coerce(name, value):
    if name in ("spacing_range", "view_heights"):
        return value if isinstance(value, tuple) else _floats(value)
    if name in ("seed", "knn_k", "hidden", "normal_k"):
        return int(value)
    if name == "ground_class":
        return None if value in (None, "", "none") else int(value)
    if name == "mode":
        return str(value)
    if name in ("label_map", "format"):
        return None if value in (None, "", "none") else str(value)
    return float(value)


def make_config(preset: str = "group1", **overrides) -> RunConfig:
    """Build a config from a preset plus flat overrides.

    Override keys are RunConfig field names or CgaConfig field names
    (``mode``, ``angular_resolution``, ``view_heights``, ...).
    """
    if preset not in PRESETS:
        raise InvalidArgumentError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    run, cga = dict(PRESETS[preset]), {}
    for key, value in overrides.items():
        if value is None:
            continue
        try:
            if key in _RUN_FIELDS:
                run[key] = _coerce(key, value)
            elif key in _CGA_FIELDS:
                cga[key] = _coerce(key, value)
            else:
                raise InvalidArgumentError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, InvalidArgumentError):
                raise
            raise InvalidArgumentError(f"bad value for {key}: {value!r}") from None
    return RunConfig(cga=CgaConfig(**cga), **run)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into a dict of strings."""
    out = {}
    with open(path) as fh:
        for no, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ParseError(f"expected 'key = value', got {s!r}", no)
            key, value = (t.strip() for t in s.split("=", 1))
            if key not in _RUN_FIELDS and key not in _CGA_FIELDS and key != "preset":
                raise ParseError(f"unknown config key {key!r}", no)
            out[key] = value
    return out


def snapshot(cfg: RunConfig) -> dict:
    """Flat dict of every setting, for display and comparison."""
    flat = {k: getattr(cfg, k) for k in _RUN_FIELDS}
    flat.update({k: getattr(cfg.cga, k) for k in _CGA_FIELDS})
    return flat
