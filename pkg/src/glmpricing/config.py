"""Experiment configuration: TOML files with [experiment], [demand], [prices],
[covariates] and [policy] sections."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

POLICY_KINDS = ("ucb", "ucb_approx", "ts", "ts_approx", "ce", "cils", "oracle")

# section -> {toml key: attribute name}
SCHEMA = {
    "experiment": {"name": "name", "d": "d", "T": "T", "trials": "trials", "seed": "seed"},
    "demand": {
        "link": "link", "noise": "noise", "sigma": "sigma", "sigma_bar": "sigma_bar",
        "theta_bar": "theta_bar", "beta_gen": "beta_gen", "gamma_gen": "gamma_gen",
    },
    "prices": {"min": "p_min", "max": "p_max"},
    "covariates": {
        "mode": "cov_mode", "phases": "phases", "blocks": "blocks", "file": "cov_file",
        "normalize": "normalize", "scale": "scale",
    },
    "policy": {
        "kind": "policy", "lambda": "lam", "K": "K", "kappa": "kappa", "radius_mode": "radius_mode",
        "radius_value": "radius_value", "ts_scale_mode": "ts_scale_mode",
        "ts_scale_value": "ts_scale_value", "refit_every": "refit_every", "tol": "tol",
    },
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    d: int = 6
    T: int = 1500
    trials: int = 100
    seed: int = 0
    link: str = "identity"
    noise: str = "gaussian"
    sigma: float = 0.25
    sigma_bar: Optional[float] = None
    theta_bar: float = 3.0
    beta_gen: Union[str, tuple] = "uniform"
    gamma_gen: Union[str, tuple] = "uniform"
    p_min: float = 0.1
    p_max: float = 5.0
    cov_mode: str = "iid"
    phases: int = 2
    blocks: Optional[int] = None
    cov_file: Optional[str] = None
    normalize: str = "none"
    scale: Optional[float] = None
    policy: str = "ucb"
    lam: float = 1.0
    K: int = 100
    kappa: Optional[float] = None
    radius_mode: str = "fixed"
    radius_value: Optional[float] = None
    ts_scale_mode: str = "fixed"
    ts_scale_value: Optional[float] = None
    refit_every: int = 1
    tol: float = 1e-8

    def __post_init__(self):
        validate(self)

    # tuned defaults scale with d
    @property
    def kappa_value(self) -> float:
        return self.d / 10 if self.kappa is None else self.kappa

    @property
    def radius_sq(self) -> float:
        return self.d / 10 if self.radius_value is None else self.radius_value

    @property
    def ts_scale(self) -> float:
        return math.sqrt(self.d) / 25 if self.ts_scale_value is None else self.ts_scale_value

    @property
    def sigma_bar_value(self) -> float:
        if self.sigma_bar is not None:
            return self.sigma_bar
        return 0.5 if self.noise == "bernoulli" else self.sigma

    def replace(self, **changes) -> "ExperimentConfig":
        data = asdict(self)
        data.update(changes)
        return ExperimentConfig(**data)

    def to_dict(self) -> dict:
        """Nested section dict; ``from_dict`` of the result gives back an equal config."""
        out = {}
        for section, keys in SCHEMA.items():
            sec = {}
            for key, attr in keys.items():
                value = getattr(self, attr)
                if value is None:
                    continue
                sec[key] = list(value) if isinstance(value, tuple) else value
            out[section] = sec
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        kwargs = {}
        for section, body in data.items():
            if section not in SCHEMA:
                raise ConfigError(section, "unknown section")
            if not isinstance(body, dict):
                raise ConfigError(section, "expected a table")
            for key, value in body.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                kwargs[SCHEMA[section][key]] = tuple(value) if isinstance(value, list) else value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from None


_FIELD_NAMES = {attr: f"{section}.{key}" for section, keys in SCHEMA.items() for key, attr in keys.items()}


def _fail(attr: str, message: str):
    raise ConfigError(_FIELD_NAMES.get(attr, attr), message)


def validate(cfg: ExperimentConfig) -> None:
    types = {f.name: f.type for f in fields(cfg)}
    for attr in ("d", "T", "trials", "seed", "phases", "K", "refit_every"):
        v = getattr(cfg, attr)
        if not isinstance(v, int) or isinstance(v, bool):
            _fail(attr, f"expected an integer, got {v!r}")
    for attr, typ in types.items():
        v = getattr(cfg, attr)
        if "float" in str(typ) and v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
            _fail(attr, f"expected a number, got {v!r}")
    if cfg.d < 1:
        _fail("d", "must be >= 1")
    if cfg.T < 1:
        _fail("T", "must be >= 1")
    if cfg.trials < 1:
        _fail("trials", "must be >= 1")
    if cfg.seed < 0:
        _fail("seed", "must be non-negative")
    if cfg.link not in ("identity", "logistic"):
        _fail("link", "must be 'identity' or 'logistic'")
    if cfg.noise not in ("gaussian", "bernoulli", "uniform"):
        _fail("noise", "must be 'gaussian', 'bernoulli' or 'uniform'")
    if cfg.sigma < 0:
        _fail("sigma", "must be non-negative")
    if cfg.sigma_bar is not None and cfg.sigma_bar <= 0:
        _fail("sigma_bar", "must be positive")
    if cfg.theta_bar <= 0:
        _fail("theta_bar", "must be positive")
    for attr in ("beta_gen", "gamma_gen"):
        v = getattr(cfg, attr)
        if isinstance(v, str):
            if v != "uniform":
                _fail(attr, "must be 'uniform' or a list of numbers")
        elif len(v) != cfg.d or not all(isinstance(e, (int, float)) for e in v):
            _fail(attr, f"explicit values need {cfg.d} numbers")
    if not 0 < cfg.p_min < cfg.p_max:
        _fail("p_min" if cfg.p_min <= 0 else "p_max", "need 0 < min < max")
    if cfg.cov_mode not in ("iid", "phased", "file"):
        _fail("cov_mode", "must be 'iid', 'phased' or 'file'")
    if cfg.cov_mode == "phased" and cfg.phases < 2:
        _fail("phases", "must be >= 2")
    if cfg.blocks is not None and (not isinstance(cfg.blocks, int) or cfg.blocks < 1):
        _fail("blocks", "must be a positive integer")
    if cfg.cov_mode == "file" and not cfg.cov_file:
        _fail("cov_file", "required in file mode")
    if cfg.normalize not in ("none", "unit", "feature"):
        _fail("normalize", "must be 'none', 'unit' or 'feature'")
    if cfg.scale is not None and cfg.scale <= 0:
        _fail("scale", "must be positive")
    if cfg.policy not in POLICY_KINDS:
        _fail("policy", f"must be one of {', '.join(POLICY_KINDS)}")
    if cfg.lam <= 0:
        _fail("lam", "must be positive")
    if cfg.K < 1:
        _fail("K", "must be >= 1")
    if cfg.kappa is not None and cfg.kappa <= 0:
        _fail("kappa", "must be positive")
    for attr in ("radius_mode", "ts_scale_mode"):
        if getattr(cfg, attr) not in ("corollary1", "fixed"):
            _fail(attr, "must be 'corollary1' or 'fixed'")
    for attr in ("radius_value", "ts_scale_value"):
        v = getattr(cfg, attr)
        if v is not None and v <= 0:
            _fail(attr, "must be positive")
    if cfg.refit_every < 1:
        _fail("refit_every", "must be >= 1")
    if cfg.tol <= 0:
        _fail("tol", "must be positive")


def parse_config(text: str, name: Optional[str] = None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("syntax", str(exc)) from None
    cfg = ExperimentConfig.from_dict(data)
    if name is not None and "name" not in data.get("experiment", {}):
        cfg = cfg.replace(name=name)
    return cfg


def bundled_configs() -> list[str]:
    files = resources.files("glmpricing").joinpath("configs").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".toml"))


def load_config(path_or_name: Union[str, Path]) -> ExperimentConfig:
    """Load a config file, or a bundled config by name (e.g. ``expA_d6``)."""
    path = Path(path_or_name)
    if path.is_file():
        return parse_config(path.read_text(), name=path.stem)
    name = str(path_or_name)
    bundled = resources.files("glmpricing").joinpath("configs", f"{name}.toml")
    if bundled.is_file():
        return parse_config(bundled.read_text(), name=name)
    raise ConfigError("path", f"no config file or bundled config named {name!r}")
