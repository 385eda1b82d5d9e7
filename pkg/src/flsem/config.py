"""``key=value`` run configuration.

Blank lines and ``#`` comments are ignored.  Unknown keys are rejected; a
repeated key keeps its last value and logs a warning.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional, Union

from .datagen import SimConfig
from .numerics import KernelSpec, default_kernel

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data generation
    design: str = "example1_1d"
    n: int = 200
    p: int = 20
    rho1: float = 0.3
    rho2: float = 0.0
    b: float = 0.0
    m: int = 100
    m1: int = 20
    m2: int = 30
    seed: int = 0
    n_terms: Optional[int] = None
    full_grid: bool = False
    # estimation
    kernel: str = "gaussian"  # 2-D grids wrap this in a product kernel
    bandwidth: float = 0.2
    j_z: Union[int, str] = 10  # int or "auto" (HBIC over 1..j_z_max)
    j_z_max: int = 10
    lambda_k: Union[float, str] = "gcv"
    j_y: Union[int, str] = "auto"  # int or "auto" (HBIC over 1..j_y_max)
    j_y_max: int = 10
    lam: Union[float, str] = "default"  # float, "default" or "gcv"
    screen: str = "auto"  # auto (when p > n), on, off
    k_y: Optional[int] = None
    k_z: Optional[int] = None
    split: bool = False
    sigma2_source: str = "full"
    charge_b_df: bool = False
    dc_blocks: int = 1
    window_width: Optional[float] = None
    window_stride: Optional[float] = None
    # testing and Monte Carlo
    level: float = 0.05
    reps: int = 30
    n_test: int = 200
    threads: Optional[int] = None  # None: FLSEM_THREADS, then 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            self.sim_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.screen not in ("auto", "on", "off"):
            raise ConfigError("screen must be auto, on or off")
        if self.sigma2_source not in ("full", "null"):
            raise ConfigError("sigma2_source must be full or null")
        for key in ("j_z", "j_y"):
            v = getattr(self, key)
            if isinstance(v, str) and v != "auto":
                raise ConfigError(f"{key} must be an integer or 'auto'")
            if not isinstance(v, str) and v < 0:
                raise ConfigError(f"{key} must be nonnegative")
        if isinstance(self.lambda_k, str) and self.lambda_k != "gcv":
            raise ConfigError("lambda_k must be positive or 'gcv'")
        if not isinstance(self.lambda_k, str) and not self.lambda_k > 0:
            raise ConfigError("lambda_k must be positive or 'gcv'")
        if isinstance(self.lam, str) and self.lam not in ("default", "gcv"):
            raise ConfigError("lam must be positive, 'default' or 'gcv'")
        if not isinstance(self.lam, str) and not self.lam > 0:
            raise ConfigError("lam must be positive, 'default' or 'gcv'")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.reps < 1 or (self.threads is not None and self.threads < 1) or self.dc_blocks < 1 or self.n_test < 1:
            raise ConfigError("reps, threads, dc_blocks and n_test must be positive")
        if not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        try:
            self.kernel_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sim_config(self) -> SimConfig:
        return SimConfig(design=self.design, n=self.n, p=self.p, rho1=self.rho1,
                         rho2=self.rho2, b=self.b, m=self.m, m1=self.m1, m2=self.m2,
                         seed=self.seed, n_terms=self.n_terms)

    def kernel_spec(self, ndim: Optional[int] = None) -> KernelSpec:
        if ndim is None:
            ndim = 2 if self.design == "example2_2d" else 1
        spec = KernelSpec.parse(self.kernel, self.bandwidth)
        if ndim == 2 and spec.family != "product_2d":
            spec = KernelSpec("product_2d", inner=spec)
        if spec.ndim != ndim:
            raise ValueError(f"kernel {spec} does not fit a {ndim}-D grid")
        return spec

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(key: str, text: str):
    """Convert the string ``text`` to the type declared for ``key``."""
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            return _parse_bool(text)
        if kind == "str":
            return text
        if kind.startswith("Optional"):
            if text.lower() in ("", "none"):
                return None
            return int(text) if "int" in kind else float(text)
        if kind.startswith("Union"):
            try:
                return int(text) if "int" in kind else float(text)
            except ValueError:
                return text
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"malformed value for {key}: {text!r}") from exc
    raise ConfigError(f"unsupported field type for {key}")


def parse_config_text(text: str, overrides: Optional[dict] = None) -> RunConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "lambda":
            key = "lam"
        if key not in FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            log.warning("duplicate key %r on line %d; last value wins", key, lineno)
        values[key] = coerce(key, val)
    values.update(overrides or {})
    return RunConfig(**values)


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    text = ""
    if path:
        with open(path) as fh:
            text = fh.read()
    return parse_config_text(text, overrides)
