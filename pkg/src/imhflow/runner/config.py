"""Run configuration: defaults, YAML loading, overrides and validation."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

import yaml

from ..exceptions import ConfigError
from ..targets import TARGETS

EXPERIMENTS = ("chain", "discrete-exact", "kl-flow", "stationarity", "kde-study")
KERNELS = ("imh", "rwm", "mala", "pmala", "mixture")
LOCAL_KERNELS = ("mala", "pmala", "rwm")
PROPOSALS = ("affine", "realnvp", "gaussian", "discrete", "none")
RULES = ("none", "pseudo-likelihood", "reverse-kl", "exact-kl", "rwm", "kl-flow")
INITS = ("point", "modes", "target", "proposal")

SECTION_DEFAULTS = {
    "target": {"name": "gaussian-1d", "params": {}},
    "proposal": {
        "family": "affine",
        "n_pairs": 2,
        "hidden": 32,
        "n_hidden_layers": 2,
        "activation": "relu",
        "shift": None,
        "log_scale": None,
        "mean": None,
        "std": None,
        "probs": None,
        "mixture": None,
    },
    "kernel": {"type": "imh", "alpha": 0.5, "local": "mala", "step_size": 0.01, "pmala_reg": 0.0},
    "adaptation": {
        "rule": "none",
        "every": 1,
        "batch": 256,
        "eps0": 1e-3,
        "halving_period": 5000,
        "alpha_c": 1.0,
        "alpha_decay": 1e4,
        "max_grad_norm": None,
        "optimizer": "sgd",
        "buffer_capacity": None,
        "n_samples": 64,
        "dt": 1e-3,
        "rwm_init_var": 1.0,
    },
    "walkers": {"count": 1, "init": {"kind": "target"}},
    "diagnostics": {
        "n_proj": 1000,
        "n_reference": 10000,
        "burn_in": 0.5,
        "acceptance_bins": 20,
        "trace_every": 1,
        "checkpoint_every": 0,
        "modes": None,
        "ess_max_len": 100000,
    },
    "params": {},
}


@dataclass
class RunConfig:
    experiment: str = "chain"
    seed: int = 0
    steps: int = 1000
    out: str = "runs/latest"
    preset: str | None = None
    target: dict = field(default_factory=dict)
    proposal: dict = field(default_factory=dict)
    kernel: dict = field(default_factory=dict)
    adaptation: dict = field(default_factory=dict)
    walkers: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    reference_scale: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def from_dict(raw: dict) -> RunConfig:
    """Merge ``raw`` over the defaults and validate."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    _require(not unknown, f"unknown configuration keys: {sorted(unknown)}")
    d = {k: raw[k] for k in raw}
    for section, defaults in SECTION_DEFAULTS.items():
        sub = d.get(section) or {}
        _require(isinstance(sub, dict), f"section {section!r} must be a mapping")
        if section in ("target", "params"):
            d[section] = deep_merge(defaults, sub)
        else:
            extra = set(sub) - set(defaults)
            _require(not extra, f"unknown keys in {section!r}: {sorted(extra)}")
            d[section] = deep_merge(defaults, sub)
    cfg = RunConfig(**d)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    _require(cfg.experiment in EXPERIMENTS, f"unknown experiment {cfg.experiment!r}; known: {EXPERIMENTS}")
    _require(isinstance(cfg.seed, int) and not isinstance(cfg.seed, bool) and cfg.seed >= 0,
             "seed must be a non-negative integer")
    _require(isinstance(cfg.steps, int) and cfg.steps >= 0, "steps must be a non-negative integer")
    _require(cfg.target.get("name") in TARGETS, f"unknown target {cfg.target.get('name')!r}; known: {sorted(TARGETS)}")
    _require(cfg.proposal["family"] in PROPOSALS, f"unknown proposal family {cfg.proposal['family']!r}")
    _require(cfg.kernel["type"] in KERNELS, f"unknown kernel {cfg.kernel['type']!r}; known: {KERNELS}")
    _require(cfg.kernel["local"] in LOCAL_KERNELS, f"unknown local kernel {cfg.kernel['local']!r}")
    _require(0.0 <= float(cfg.kernel["alpha"]) <= 1.0, "kernel.alpha must lie in [0, 1]")
    _require(float(cfg.kernel["step_size"]) > 0, "kernel.step_size must be positive")
    ad = cfg.adaptation
    _require(ad["rule"] in RULES, f"unknown adaptation rule {ad['rule']!r}; known: {RULES}")
    _require(int(ad["every"]) >= 1 and int(ad["batch"]) >= 1, "adaptation.every and batch must be positive")
    _require(float(ad["eps0"]) >= 0, "adaptation.eps0 must be non-negative")
    _require(ad["optimizer"] in ("sgd", "adam"), f"unknown optimizer {ad['optimizer']!r}; known: ('sgd', 'adam')")
    w = cfg.walkers
    _require(isinstance(w["count"], int) and w["count"] >= 1, "walkers.count must be a positive integer")
    _require(w["init"].get("kind") in INITS, f"unknown walker init {w['init'].get('kind')!r}; known: {INITS}")
    diag = cfg.diagnostics
    _require(int(diag["n_proj"]) >= 0 and int(diag["n_reference"]) >= 1, "diagnostics sizes must be positive")
    _require(0.0 <= float(diag["burn_in"]) < 1.0, "diagnostics.burn_in must lie in [0, 1)")
    _require(int(diag["trace_every"]) >= 1, "diagnostics.trace_every must be positive")
    _require(diag["modes"] in (None, "nearest-mean", "sign-of-mean"), f"unknown mode classifier {diag['modes']!r}")
    needs_imh = cfg.kernel["type"] in ("imh", "mixture")
    if cfg.experiment == "chain":
        _require(not needs_imh or cfg.proposal["family"] != "none", "IMH kernels need a proposal")
        if ad["rule"] in ("pseudo-likelihood", "reverse-kl", "exact-kl"):
            _require(cfg.proposal["family"] in ("affine", "realnvp"), f"rule {ad['rule']!r} needs a flow proposal")
        if ad["rule"] == "rwm":
            _require(cfg.kernel["type"] == "rwm" or cfg.kernel["local"] == "rwm", "rule 'rwm' needs a random-walk kernel")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must contain a mapping")
    return raw


def set_path(d: dict, dotted: str, value) -> dict:
    """Set ``a.b.c = value`` in a nested dict (copying)."""
    out = copy.deepcopy(d)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k!r} is not a section")
    node[keys[-1]] = value
    return out
