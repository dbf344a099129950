"""Named experiment presets.

Each preset is a partial configuration merged over the defaults. Budgets are
sized for a single desktop core; ``reference_scale`` records the full-size values
for reference and is never read by the runner.
"""
from __future__ import annotations

import copy

from ..exceptions import ConfigError

_BIMODAL_FLOW = {
    "family": "realnvp", "n_pairs": 2, "hidden": 32,
    "mixture": {"weight": 0.2, "mean": 0.0, "std": 3.0},
}
_BIMODAL_ADAPT = {
    "rule": "pseudo-likelihood", "every": 10, "batch": 256, "eps0": 1e-3,
    "halving_period": 2000, "max_grad_norm": 10.0,
}

PRESETS = {
    "two-state-exact": {
        "description": "Two-state IMH chain with exact TV curve against the Doeblin bound",
        "config": {
            "experiment": "discrete-exact",
            "steps": 2000,
            "target": {"name": "discrete", "params": {"probs": [0.25, 0.75]}},
            "proposal": {"family": "discrete", "probs": [0.6, 0.4]},
            "kernel": {"type": "imh"},
            "walkers": {"count": 4, "init": {"kind": "point", "point": 0.0}},
            "params": {"n_max": 50},
        },
    },
    "gaussian-kl-flow": {
        "description": "IMH on N(0, 1) with the proposal following the closed-form reverse-KL flow from N(1, 4)",
        "config": {
            "experiment": "kl-flow",
            "steps": 3000,
            "target": {"name": "gaussian-1d", "params": {"mean": 0.0, "variance": 1.0}},
            "proposal": {"family": "affine"},
            "kernel": {"type": "imh"},
            "adaptation": {"rule": "kl-flow", "dt": 1e-3},
            "walkers": {"count": 4},
            "params": {"mu0": 1.0, "sigma0": 2.0, "t_max": 3.0, "euler_dt": 1e-4},
        },
    },
    "brownian-bridge": {
        "description": "50-dim Brownian bridge with sinusoidal mean; affine flow trained on the exact KL",
        "config": {
            "steps": 5000,
            "target": {"name": "brownian-bridge", "params": {"n_times": 50}},
            "proposal": {"family": "affine"},
            "kernel": {"type": "imh"},
            "adaptation": {"rule": "exact-kl", "eps0": 0.05, "halving_period": 1000},
            "walkers": {"count": 4, "init": {"kind": "point", "point": 0.0}},
            "diagnostics": {"checkpoint_every": 500},
        },
        "reference_scale": {"steps": 100000},
    },
    "brownian-bridge-pl": {
        "description": "Brownian bridge with the affine flow trained on the pseudo-likelihood",
        "config": {
            "steps": 5000,
            "target": {"name": "brownian-bridge", "params": {"n_times": 50}},
            "proposal": {"family": "affine"},
            "kernel": {"type": "imh"},
            "adaptation": {"rule": "pseudo-likelihood", "every": 1, "batch": 256, "eps0": 1e-2,
                           "halving_period": 1000, "max_grad_norm": 10.0},
            "walkers": {"count": 4, "init": {"kind": "point", "point": 0.0}},
            "diagnostics": {"checkpoint_every": 500},
        },
        "reference_scale": {"steps": 100000},
    },
    "bimodal-2d": {
        "description": "Two-mode Gaussian mixture in 2D; adaptive IMH with a RealNVP proposal",
        "config": {
            "steps": 50000,
            "target": {"name": "bimodal"},
            "proposal": _BIMODAL_FLOW,
            "kernel": {"type": "imh"},
            "adaptation": _BIMODAL_ADAPT,
            "walkers": {"count": 1, "init": {"kind": "point", "point": [-2.0, 2.0]}},
            "diagnostics": {"modes": "nearest-mean", "checkpoint_every": 500, "trace_every": 1},
        },
    },
    "bimodal-2d-rwm": {
        "description": "Two-mode mixture with adaptive random-walk Metropolis",
        "config": {
            "steps": 50000,
            "target": {"name": "bimodal"},
            "proposal": {"family": "none"},
            "kernel": {"type": "rwm"},
            "adaptation": {"rule": "rwm", "rwm_init_var": 0.01},
            "walkers": {"count": 1, "init": {"kind": "point", "point": [-2.0, 2.0]}},
            "diagnostics": {"modes": "nearest-mean"},
        },
    },
    "bimodal-2d-mala": {
        "description": "Two-mode mixture with MALA",
        "config": {
            "steps": 50000,
            "target": {"name": "bimodal"},
            "proposal": {"family": "none"},
            "kernel": {"type": "mala", "step_size": 0.005},
            "walkers": {"count": 1, "init": {"kind": "point", "point": [-2.0, 2.0]}},
            "diagnostics": {"modes": "nearest-mean"},
        },
    },
    "neal-funnel": {
        "description": "Neal's funnel in 2D; adaptive IMH with a RealNVP proposal",
        "config": {
            "steps": 20000,
            "target": {"name": "neal-funnel"},
            "proposal": {"family": "realnvp", "n_pairs": 3, "hidden": 32,
                         "mixture": {"weight": 0.2, "mean": 0.0, "std": 3.0}},
            "kernel": {"type": "imh"},
            "adaptation": dict(_BIMODAL_ADAPT, halving_period=1000),
            "walkers": {"count": 1, "init": {"kind": "point", "point": [0.0, 0.0]}},
            "diagnostics": {"checkpoint_every": 500},
        },
    },
    "phi4-field": {
        "description": "phi^4 field on a reduced grid; 100 walkers started 20/80 in the two modes, "
                       "MALA/flow mixture kernel with pooled pseudo-likelihood adaptation",
        "config": {
            "steps": 4000,
            "target": {"name": "phi4", "params": {"n_sites": 32, "coupling": 0.1, "beta": 20.0}},
            "proposal": {"family": "realnvp", "n_pairs": 3, "hidden": 64},
            "kernel": {"type": "mixture", "alpha": 0.5, "local": "mala", "step_size": 2e-3},
            "adaptation": {"rule": "pseudo-likelihood", "every": 2, "batch": 1000, "buffer_capacity": None,
                           "optimizer": "adam", "eps0": 1e-3, "halving_period": 5000},
            "walkers": {"count": 100, "init": {"kind": "modes", "points": [1.0, -1.0], "fractions": [0.2, 0.8]}},
            "diagnostics": {"modes": "sign-of-mean", "trace_every": 10, "n_proj": 200, "checkpoint_every": 100},
        },
        "reference_scale": {"n_sites": 100, "n_pairs": 5, "hidden": 100, "walkers": 100, "every": 10,
                        "batch": 1000, "buffer_capacity": 1000, "eps0": 1e-3, "halving_period": 5000},
    },
    "phi4-mala": {
        "description": "phi^4 field on the reduced grid with a single MALA walker started at +1",
        "config": {
            "steps": 20000,
            "target": {"name": "phi4", "params": {"n_sites": 32, "coupling": 0.1, "beta": 20.0}},
            "proposal": {"family": "none"},
            "kernel": {"type": "mala", "step_size": 2e-3},
            "walkers": {"count": 1, "init": {"kind": "point", "point": 1.0}},
            "diagnostics": {"modes": "sign-of-mean", "n_proj": 0},
        },
    },
    "stationarity-violation": {
        "description": "Replicas started at exact draws of N(1, 1/2) with MLE-adapted Gaussian IMH proposals",
        "config": {
            "experiment": "stationarity",
            "steps": 10000,
            "target": {"name": "gaussian-1d", "params": {"mean": 1.0, "variance": 0.5}},
            "proposal": {"family": "gaussian"},
            "params": {"rule": "mle", "replicas": 100000, "checkpoints": [10, 100, 1000, 10000], "record": 5},
        },
        "reference_scale": {"replicas": 1000000},
    },
    "kde-bound-study": {
        "description": "Closed-form KDE improvement predicate against brute-force Doeblin constants",
        "config": {
            "experiment": "kde-study",
            "steps": 0,
            "target": {"name": "discrete", "params": {"probs": [1.0]}},
            "params": {"instances": 500, "grid": 40, "radius": 0.1},
        },
    },
}


def list_presets() -> list:
    """(name, description) pairs in registry order."""
    return [(name, p["description"]) for name, p in PRESETS.items()]


def preset_config(name: str) -> dict:
    """Raw configuration mapping for ``name`` (merge-ready, includes ``preset``)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    p = PRESETS[name]
    cfg = copy.deepcopy(p["config"])
    cfg["preset"] = name
    if "reference_scale" in p:
        cfg["reference_scale"] = copy.deepcopy(p["reference_scale"])
    return cfg
