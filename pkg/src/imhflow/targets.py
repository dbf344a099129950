"""Target densities used by the experiments.

Every log-density, gradient and Hessian accepts a single point of shape
``(m,)`` or a batch of shape ``(n, m)`` and returns a scalar/``(n,)``,
``(m,)``/``(n, m)`` or ``(m, m)``/``(n, m, m)`` respectively.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .exceptions import ShapeError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Target:
    """A density on R^m known up to an additive log-constant.

    ``normalized`` is True only when ``log_density`` is the exact log-density;
    the Doeblin and log-ratio diagnostics refuse unnormalized targets.
    """

    name: str
    dim: int
    log_density: Callable
    grad_log_density: Optional[Callable] = None
    hessian_log_density: Optional[Callable] = None
    reference_sampler: Optional[Callable] = None
    normalized: bool = False
    support: str = "R^m"
    info: dict = field(default_factory=dict)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.reference_sampler is None:
            raise NotImplementedError(f"target {self.name!r} has no exact sampler")
        return self.reference_sampler(n, rng)


def _batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise ShapeError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x2, single


def _wrap(fn, dim):
    """Lift a batched function of (n, m) arrays so it also accepts one point."""

    def wrapped(x):
        x2, single = _batch(x, dim)
        out = fn(x2)
        return out[0] if single else out

    return wrapped


def gaussian_target(mean, cov, name="gaussian", info=None) -> Target:
    """Multivariate normal with exact sampler, gradient and Hessian."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    m = mean.size
    if cov.shape != (m, m):
        raise ShapeError(f"covariance shape {cov.shape} does not match mean of length {m}")
    chol = np.linalg.cholesky(cov)
    precision = np.linalg.inv(cov)
    precision = 0.5 * (precision + precision.T)
    log_norm = -0.5 * m * LOG_2PI - np.sum(np.log(np.diag(chol)))

    def log_density(x):
        d = x - mean
        return log_norm - 0.5 * np.einsum("ni,ij,nj->n", d, precision, d)

    def grad(x):
        # einsum keeps rows independent of the batch they arrive in
        return -np.einsum("ni,ij->nj", x - mean, precision)

    def hess(x):
        return np.broadcast_to(-precision, (x.shape[0], m, m)).copy()

    def sampler(n, rng):
        return mean + rng.standard_normal((n, m)) @ chol.T

    return Target(
        name=name,
        dim=m,
        log_density=_wrap(log_density, m),
        grad_log_density=_wrap(grad, m),
        hessian_log_density=_wrap(hess, m),
        reference_sampler=sampler,
        normalized=True,
        info=dict(info or {}, mean=mean, cov=cov),
    )


def brownian_bridge_times(n_times: int) -> np.ndarray:
    return np.arange(1, n_times + 1) / (n_times + 1.0)


def brownian_bridge_target(n_times: int = 50, jitter: float = 1e-10) -> Target:
    """Brownian bridge with sinusoidal mean on the interior grid i/(n_times+1)."""
    if n_times < 2:
        raise ValueError("n_times must be at least 2")
    t = brownian_bridge_times(n_times)
    mean = np.sin(np.pi * t)
    cov = np.minimum.outer(t, t) - np.outer(t, t) + jitter * np.eye(n_times)
    try:
        return gaussian_target(mean, cov, name="brownian-bridge", info={"times": t})
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"bridge covariance not positive definite with jitter {jitter}") from exc


def gaussian_1d_target(mean: float = 1.0, variance: float = 0.5) -> Target:
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    return gaussian_target([mean], [[variance]], name="gaussian-1d")


BIMODAL_MEANS = np.array([[-2.0, 2.0], [2.0, -2.0]])
BIMODAL_VARIANCE = 1.0 / 100.0


def bimodal_target(means=BIMODAL_MEANS, variance: float = BIMODAL_VARIANCE) -> Target:
    """Equal-weight mixture of isotropic Gaussians (defaults: the 2-D two-mode example)."""
    means = np.asarray(means, dtype=np.float64)
    k, m = means.shape
    log_w = -np.log(k)
    log_norm = -0.5 * m * (LOG_2PI + np.log(variance))

    def components(x):
        d = x[:, None, :] - means[None, :, :]
        return log_w + log_norm - 0.5 * np.sum(d * d, axis=2) / variance, d

    def log_density(x):
        return logsumexp(components(x)[0], axis=1)

    def responsibilities(x):
        lc, d = components(x)
        r = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
        return r, d

    def grad(x):
        r, d = responsibilities(x)
        return -np.einsum("nk,nki->ni", r, d) / variance

    def hess(x):
        r, d = responsibilities(x)
        gk = -d / variance
        g = np.einsum("nk,nki->ni", r, gk)
        second = np.einsum("nk,nki,nkj->nij", r, gk, gk)
        return -np.eye(m) / variance + second - np.einsum("ni,nj->nij", g, g)

    def sampler(n, rng):
        idx = rng.integers(k, size=n)
        return means[idx] + np.sqrt(variance) * rng.standard_normal((n, m))

    return Target(
        name="bimodal",
        dim=m,
        log_density=_wrap(log_density, m),
        grad_log_density=_wrap(grad, m),
        hessian_log_density=_wrap(hess, m),
        reference_sampler=sampler,
        normalized=True,
        info={"means": means, "variance": variance},
    )


FUNNEL_V_VARIANCE = 9.0


def funnel_target() -> Target:
    """Neal's funnel: v ~ N(0, 9), x | v ~ N(0, exp(-v)); coordinates (v, x)."""
    s2 = FUNNEL_V_VARIANCE

    def log_density(p):
        v, x = p[:, 0], p[:, 1]
        return (
            -0.5 * (LOG_2PI + np.log(s2)) - 0.5 * v * v / s2
            - 0.5 * LOG_2PI + 0.5 * v - 0.5 * x * x * np.exp(v)
        )

    def grad(p):
        v, x = p[:, 0], p[:, 1]
        ev = np.exp(v)
        return np.stack([-v / s2 + 0.5 - 0.5 * x * x * ev, -x * ev], axis=1)

    def hess(p):
        v, x = p[:, 0], p[:, 1]
        ev = np.exp(v)
        h = np.empty((p.shape[0], 2, 2))
        h[:, 0, 0] = -1.0 / s2 - 0.5 * x * x * ev
        h[:, 0, 1] = h[:, 1, 0] = -x * ev
        h[:, 1, 1] = -ev
        return h

    def sampler(n, rng):
        v = np.sqrt(s2) * rng.standard_normal(n)
        x = np.exp(-0.5 * v) * rng.standard_normal(n)
        return np.stack([v, x], axis=1)

    return Target(
        name="neal-funnel",
        dim=2,
        log_density=_wrap(log_density, 2),
        grad_log_density=_wrap(grad, 2),
        hessian_log_density=_wrap(hess, 2),
        reference_sampler=sampler,
        normalized=True,
    )


@dataclass(frozen=True)
class Phi4Config:
    """Discretised 1-D phi^4 field on [0, 1] with zero Dirichlet boundaries.

    ``n_sites`` interior points at s_i = i h, h = 1/(n_sites + 1).
    """

    n_sites: int = 100
    coupling: float = 0.1
    beta: float = 20.0

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError("n_sites must be at least 2")
        if not (self.coupling > 0 and self.beta > 0):
            raise ValueError("coupling and beta must be positive")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.n_sites + 1)


def phi4_energy(phi, cfg: Phi4Config) -> np.ndarray:
    """Forward-difference energy: sum_{i=0..N} a/2 ((phi_{i+1}-phi_i)/h)^2 h + sum_i (1-phi_i^2)^2 h/(4a)."""
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    a, h = cfg.coupling, cfg.spacing
    padded = np.pad(phi, ((0, 0), (1, 1)))
    diff = np.diff(padded, axis=1)
    kinetic = 0.5 * a / h * np.sum(diff * diff, axis=1)
    potential = h / (4.0 * a) * np.sum((1.0 - phi * phi) ** 2, axis=1)
    return kinetic + potential


def phi4_target(cfg: Phi4Config = Phi4Config()) -> Target:
    """Boltzmann weight exp(-beta U_h) of the discretised field (unnormalized)."""
    n, a, h, beta = cfg.n_sites, cfg.coupling, cfg.spacing, cfg.beta

    def log_density(phi):
        return -beta * phi4_energy(phi, cfg)

    def grad(phi):
        padded = np.pad(phi, ((0, 0), (1, 1)))
        lap = 2.0 * phi - padded[:, :-2] - padded[:, 2:]
        du = a / h * lap - h / a * phi * (1.0 - phi * phi)
        return -beta * du

    off = -a / h * np.ones(n - 1)

    def hess(phi):
        out = np.zeros((phi.shape[0], n, n))
        idx = np.arange(n)
        out[:, idx, idx] = 2.0 * a / h + h / a * (3.0 * phi * phi - 1.0)
        out[:, idx[:-1], idx[1:]] = off
        out[:, idx[1:], idx[:-1]] = off
        return -beta * out

    return Target(
        name="phi4",
        dim=n,
        log_density=_wrap(log_density, n),
        grad_log_density=_wrap(grad, n),
        hessian_log_density=_wrap(hess, n),
        normalized=False,
        info={"config": cfg},
    )


def discrete_target(probs) -> Target:
    """Distribution on states {0, ..., k-1}; a point is the length-1 array ``[i]``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, atol=1e-12):
        raise ValueError("probs must be a probability vector")
    with np.errstate(divide="ignore"):
        logp = np.log(probs)

    def log_density(x):
        return logp[x[:, 0].astype(np.intp)]

    def sampler(n, rng):
        return rng.choice(probs.size, size=(n, 1), p=probs).astype(np.float64)

    return Target(
        name="discrete",
        dim=1,
        log_density=_wrap(log_density, 1),
        reference_sampler=sampler,
        normalized=True,
        support="finite",
        info={"probs": probs},
    )


TARGETS = {
    "brownian-bridge": brownian_bridge_target,
    "bimodal": bimodal_target,
    "neal-funnel": funnel_target,
    "phi4": lambda **kw: phi4_target(Phi4Config(**kw)),
    "gaussian-1d": gaussian_1d_target,
    "discrete": discrete_target,
}


def make_target(name: str, **params) -> Target:
    try:
        factory = TARGETS[name]
    except KeyError:
        raise KeyError(f"unknown target {name!r}; known: {sorted(TARGETS)}") from None
    return factory(**params)
