"""scikit-learn style wrapper around the in-memory sampling loop.

``fit`` runs the chain (adapting the proposal if a rule is set) and exposes the
trace and the final proposal; ``sample`` and ``score_samples`` then use the
fitted proposal like a density estimator.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .runner.config import from_dict
from .runner.engine import build_target, run_chain


class AdaptiveIMHSampler(BaseEstimator):
    """Adaptive independent Metropolis-Hastings sampler.

    Parameters
    ----------
    target : str
        Registered target name (``bimodal``, ``neal-funnel``, ``phi4``, ...).
    target_params : dict, optional
        Keyword arguments of the target factory.
    proposal : {"affine", "realnvp", "gaussian"}
        Adaptive proposal family.
    n_pairs, hidden : int
        RealNVP architecture (coupling-layer pairs, hidden width).
    mixture_weight : float, optional
        Weight of a fixed N(0, mixture_std^2 I) component; None for no mixture.
    kernel : {"imh", "mixture", "mala", "rwm", "pmala"}
    alpha : float
        Probability of an IMH move for the mixture kernel.
    step_size : float
        Local kernel step size.
    rule : str
        Adaptation rule (``pseudo-likelihood``, ``reverse-kl``, ``exact-kl``, ``rwm`` or ``none``).
    eps0, halving_period, every, batch, max_grad_norm, optimizer
        Adaptation schedule and update settings.
    n_walkers, n_steps : int
    random_state : int
    """

    def __init__(self, target="bimodal", target_params=None, proposal="realnvp", n_pairs=2, hidden=32,
                 mixture_weight=None, mixture_std=3.0, kernel="imh", alpha=0.5, step_size=1e-2,
                 rule="pseudo-likelihood", eps0=1e-3, halving_period=2000, every=10, batch=256,
                 max_grad_norm=10.0, optimizer="sgd", n_walkers=1, n_steps=1000, random_state=0):
        self.target = target
        self.target_params = target_params
        self.proposal = proposal
        self.n_pairs = n_pairs
        self.hidden = hidden
        self.mixture_weight = mixture_weight
        self.mixture_std = mixture_std
        self.kernel = kernel
        self.alpha = alpha
        self.step_size = step_size
        self.rule = rule
        self.eps0 = eps0
        self.halving_period = halving_period
        self.every = every
        self.batch = batch
        self.max_grad_norm = max_grad_norm
        self.optimizer = optimizer
        self.n_walkers = n_walkers
        self.n_steps = n_steps
        self.random_state = random_state

    def _config(self, n_walkers):
        mixture = None
        if self.mixture_weight is not None:
            mixture = {"weight": self.mixture_weight, "mean": 0.0, "std": self.mixture_std}
        return from_dict({
            "seed": int(self.random_state),
            "steps": int(self.n_steps),
            "target": {"name": self.target, "params": dict(self.target_params or {})},
            "proposal": {"family": self.proposal, "n_pairs": self.n_pairs, "hidden": self.hidden,
                         "mixture": mixture},
            "kernel": {"type": self.kernel, "alpha": self.alpha, "step_size": self.step_size},
            "adaptation": {"rule": self.rule, "eps0": self.eps0, "halving_period": self.halving_period,
                           "every": self.every, "batch": self.batch, "max_grad_norm": self.max_grad_norm,
                           "optimizer": self.optimizer},
            "walkers": {"count": int(n_walkers)},
        })

    def fit(self, X=None, y=None):
        """Run the chain. ``X`` optionally gives the starting points, one row per
        walker; otherwise walkers start at exact target draws."""
        n_walkers = self.n_walkers if X is None else len(np.atleast_2d(X))
        cfg = self._config(n_walkers)
        rec = run_chain(cfg, initial=None if X is None else np.atleast_2d(X))
        self.samples_ = np.stack(rec.trace_x)
        self.log_target_ = np.stack(rec.trace_logp)
        self.accepted_ = np.stack(rec.trace_acc)
        proposed = rec.counts[1:, [0, 2]].sum()
        self.acceptance_rate_ = float(rec.counts[1:, [1, 3]].sum() / proposed) if proposed else 0.0
        self.events_ = rec.events
        self.proposal_ = rec.proposal
        self.n_features_in_ = build_target(cfg).dim
        return self

    def sample(self, n_samples=1, random_state=None):
        """Draws from the fitted proposal."""
        check_is_fitted(self, "proposal_")
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        return self.proposal_.sample(n_samples, rng)

    def score_samples(self, X):
        """Log-density of the fitted proposal at each row of ``X``."""
        check_is_fitted(self, "proposal_")
        return np.atleast_1d(self.proposal_.log_prob(np.atleast_2d(X)))

    def score(self, X, y=None):
        """Mean proposal log-density of ``X`` (the pseudo-likelihood objective)."""
        return float(np.mean(self.score_samples(X)))
