"""Run configuration: JSON file plus command-line overrides, validated up front.

Precedence, lowest first: built-in defaults, the ``--config`` JSON file,
explicit command-line flags.  ``RunConfig.from_dict(cfg.to_dict()) == cfg``.
"""

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Optional

from .errors import ConfigError
from .fpe import BOUNDARIES
from .integrator import POLICIES
from .models import build_model

__all__ = ["RunConfig", "default_claims_config", "merge_claims_config", "normalize_model", "CLAIM_IDS"]

CLAIM_IDS = (
    "sense_selection",
    "fpe_alpha_independence",
    "spurious_identity",
    "alpha_integral_moments",
    "transformed_asp_zero",
    "drift_projection",
)

CHART_KINDS = ("auto", "analytic", "tabulated", "diagonal", "numeric")

_U64_MAX = (1 << 64) - 1


def default_claims_config():
    """The shipped claims configuration (thresholds, grids, seeds)."""
    text = resources.files("sense_forge").joinpath("data", "claims.json").read_text()
    return json.loads(text)


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def merge_claims_config(overrides=None, seed=None, enabled=None):
    """Defaults deep-merged with ``overrides``; ``seed`` and ``enabled`` win last."""
    cfg = _deep_merge(default_claims_config(), overrides or {})
    if seed is not None:
        cfg["seed"] = _check_seed(seed)
    if enabled is not None:
        cfg["enabled"] = list(enabled)
    unknown = [c for c in cfg["enabled"] if c not in CLAIM_IDS]
    if unknown:
        raise ConfigError("claim", f"unknown claim {unknown[0]!r}; known: {list(CLAIM_IDS)}")
    return cfg


def normalize_model(spec):
    """Registry name or descriptor dict -> descriptor dict (validated by building it)."""
    if isinstance(spec, str):
        spec = {"model": spec, "params": {}}
    if not isinstance(spec, dict):
        raise ConfigError("model", "must be a registry name or a descriptor object")
    spec = copy.deepcopy(spec)
    spec.setdefault("model", "expression")
    if spec["model"] != "expression":
        spec.setdefault("params", {})
    build_model(spec)
    return spec


def _check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= _U64_MAX:
        raise ConfigError("seed", "seed must be an integer in [0, 2^64 - 1]")
    return seed


def _number(name, value, positive=False, lo=None, hi=None, message=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"{name} must be a number")
    value = float(value)
    if value != value or value in (float("inf"), float("-inf")):
        raise ConfigError(name, f"{name} must be finite")
    if positive and not value > 0:
        raise ConfigError(name, message or f"{name} must be positive")
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ConfigError(name, message or f"{name} must lie in [{lo}, {hi}]")
    return value


def _integer(name, value, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(name, f"{name} must be an integer >= {minimum}")
    return value


@dataclass
class RunConfig:
    """Everything a CLI command needs; see the module docstring for precedence."""

    model: dict = field(default_factory=lambda: {"model": "geometric", "params": {}})
    alpha: float = 0.5
    x0: Optional[list] = None
    T: float = 1.0
    dt: float = 1e-3
    n_paths: int = 1000
    seed: int = 7
    record_every: int = 1
    policy: str = "absorb"
    max_exit_fraction: float = 0.01
    x_range: Optional[list] = None
    x_ref: Optional[list] = None
    grid_size: int = 512
    chart_grid_size: int = 1025
    numeric_grid_size: int = 65
    chart: str = "auto"
    signature: bool = False
    boundary: str = "reflecting"
    fpe_dt: Optional[float] = None
    initial_std: float = 0.1
    snapshots: int = 5
    out: str = "out"
    claims: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Checks every field; raises ConfigError naming the first bad one."""
        self.model = normalize_model(self.model)
        self.alpha = _number("alpha", self.alpha, lo=0.0, hi=1.0, message="alpha must lie in [0,1]")
        dim = build_model(self.model).state_dim
        if self.x0 is None:
            self.x0 = [1.0] * dim
        x0 = self.x0 if isinstance(self.x0, (list, tuple)) else [self.x0]
        self.x0 = [_number("x0", v) for v in x0]
        if len(self.x0) != dim:
            raise ConfigError("x0", f"x0 needs {dim} components for this model")
        self.T = _number("T", self.T, positive=True)
        self.dt = _number("dt", self.dt, positive=True)
        if self.dt > self.T:
            raise ConfigError("dt", "dt must not exceed T")
        self.n_paths = _integer("n_paths", self.n_paths, 1)
        self.seed = _check_seed(self.seed)
        self.record_every = _integer("record_every", self.record_every, 1)
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"policy must be one of {list(POLICIES)}")
        self.max_exit_fraction = _number("max_exit_fraction", self.max_exit_fraction, lo=0.0, hi=1.0)
        if self.x_range is not None:
            ranges = self.x_range
            if ranges and not isinstance(ranges[0], (list, tuple)):
                ranges = [ranges]
            checked = []
            for pair in ranges:
                if len(pair) != 2:
                    raise ConfigError("x_range", "each range needs [lower, upper]")
                lo, hi = _number("x_range", pair[0]), _number("x_range", pair[1])
                if not lo < hi:
                    raise ConfigError("x_range", "lower must be below upper")
                checked.append([lo, hi])
            if len(checked) != dim:
                raise ConfigError("x_range", f"x_range needs {dim} [lower, upper] pairs for this model")
            self.x_range = checked
        if self.x_ref is not None:
            ref = self.x_ref if isinstance(self.x_ref, (list, tuple)) else [self.x_ref]
            self.x_ref = [_number("x_ref", v) for v in ref]
            if len(self.x_ref) != dim:
                raise ConfigError("x_ref", f"x_ref needs {dim} components for this model")
        self.grid_size = _integer("grid_size", self.grid_size, 3)
        self.chart_grid_size = _integer("chart_grid_size", self.chart_grid_size, 3)
        self.numeric_grid_size = _integer("numeric_grid_size", self.numeric_grid_size, 4)
        if self.chart not in CHART_KINDS:
            raise ConfigError("chart", f"chart must be one of {list(CHART_KINDS)}")
        if not isinstance(self.signature, bool):
            raise ConfigError("signature", "signature must be true or false")
        if self.boundary not in BOUNDARIES:
            raise ConfigError("boundary", f"boundary must be one of {list(BOUNDARIES)}")
        if self.fpe_dt is not None:
            self.fpe_dt = _number("fpe_dt", self.fpe_dt, positive=True)
        self.initial_std = _number("initial_std", self.initial_std, positive=True)
        self.snapshots = _integer("snapshots", self.snapshots, 1)
        if not isinstance(self.out, str) or not self.out:
            raise ConfigError("out", "out must be a non-empty path")
        if not isinstance(self.claims, dict):
            raise ConfigError("claims", "claims must be an object")

    @classmethod
    def from_dict(cls, data, overrides=None):
        """Builds a config from ``data`` with ``overrides`` (flag values) applied on top."""
        merged = dict(data or {})
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in fields(cls)}
        for key in merged:
            if key not in known:
                raise ConfigError(key, "unknown configuration field")
        return cls(**copy.deepcopy(merged))

    @classmethod
    def from_json(cls, text, overrides=None):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "the configuration file must hold a JSON object")
        return cls.from_dict(data, overrides)

    @classmethod
    def load(cls, path=None, overrides=None):
        if path is None:
            return cls.from_dict({}, overrides)
        try:
            with open(path) as handle:
                text = handle.read()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
        return cls.from_json(text, overrides)

    def to_dict(self):
        return copy.deepcopy(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def build_model(self, alpha=None):
        return build_model(self.model, self.alpha if alpha is None else alpha)
