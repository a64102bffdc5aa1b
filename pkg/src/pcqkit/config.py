"""Layered run configuration: built-in defaults, an INI file, CLI overrides.

Every knob that changes metric values is a semantic field and feeds the
config hash; operational fields (worker count, cache location, seed) do
not. Feature tables and saved models carry the hash so mismatched
settings are caught instead of silently mixed.
"""

import configparser
import dataclasses
import hashlib
import os
import typing
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigMismatch

__all__ = ["Config", "load_config", "config_hash", "ENV_VAR"]

ENV_VAR = "PCQKIT_CONFIG"

# fields that do not alter computed values: excluded from the hash
_OPERATIONAL = {"pipeline_jobs", "pipeline_cache_dir", "pipeline_seed"}


@dataclass
class Config:
    # field names are <section>_<key> in the INI file
    cloud_bit_depth: Optional[int] = None      # None: infer per cloud
    psnr_cap_db: float = 100.0
    psnr_ycbcr_matrix: str = "bt709"
    psnr_yuv_symmetric: str = "mse"
    psnr_normal_radius: float = 20.0
    pointssim_k: int = 12
    pointssim_estimator: str = "variance"
    pointssim_pooling_exponent: float = 1.0
    pcqm_radius_factor: float = 0.02   # times the bounding-box diagonal
    pcqm_k1: float = 1e-8
    pcqm_k2: float = 1e-8
    pcqm_k3: float = 1e-8
    pcqm_k4: float = 0.002
    pcqm_k5: float = 1e-8
    pcqm_k6: float = 1e-8
    pcqm_k7: float = 0.002
    pcqm_k8: float = 0.002
    pcqm_lab_table: Optional[str] = None       # lightness/chroma remap table
    graphsim_keypoint_fraction: float = 0.1
    graphsim_k: int = 10
    graphsim_radius_factor: float = 2.0
    graphsim_n_scales: int = 3
    graphsim_smoothing: bool = True
    graphsim_t_mag: float = 0.001
    graphsim_t_mean: float = 0.001
    graphsim_t_cov: float = 0.001
    pipeline_jobs: int = 0                     # 0: one worker per CPU
    pipeline_cache_dir: Optional[str] = None
    pipeline_seed: int = 0

    def semantic_items(self):
        """(name, value) pairs that affect computed feature values."""
        return [(f.name, getattr(self, f.name))
                for f in dataclasses.fields(self)
                if f.name not in _OPERATIONAL]

    @property
    def hash(self) -> str:
        return config_hash(self)


def config_hash(config: Config) -> str:
    payload = "\n".join(f"{k}={v!r}" for k, v in config.semantic_items())
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _convert(name: str, raw: str, target_type):
    raw = raw.strip()
    if raw.lower() in ("", "none"):
        return None
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigMismatch(f"{name}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError:
        raise ConfigMismatch(
            f"{name}: expected {target_type.__name__}, got {raw!r}") from None


def _base_type(annotation):
    # Optional[T] parses like T; None is spelled "none" in the file
    if typing.get_origin(annotation) is typing.Union:
        annotation = next(a for a in typing.get_args(annotation)
                          if a is not type(None))
    return annotation


_FIELD_TYPES = {name: _base_type(hint)
                for name, hint in typing.get_type_hints(Config).items()}


def load_config(path: Optional[str] = None, overrides: dict = None) -> Config:
    """Build a Config from defaults, an optional INI file, and overrides.

    When path is None the PCQKIT_CONFIG environment variable is
    consulted. Unknown sections or keys in the file are an error; the
    overrides dict uses field names directly.
    """
    config = Config()
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigMismatch(f"cannot read config file {path!r}")
        known = {f.name for f in dataclasses.fields(Config)}
        for section in parser.sections():
            for key, raw in parser.items(section):
                name = f"{section}_{key}"
                if name not in known:
                    raise ConfigMismatch(
                        f"unknown config entry [{section}] {key}")
                setattr(config, name, _convert(name, raw, _FIELD_TYPES[name]))
    for name, value in (overrides or {}).items():
        if not hasattr(config, name):
            raise ConfigMismatch(f"unknown config field {name!r}")
        if value is not None:
            setattr(config, name, value)
    return config
