"""Closed-form ground truth: the 1-D Gaussian KL gradient flow, its ratio
bound, Gaussian KL divergences, and the ball-kernel density proposal.

All Gaussian results are against the standard normal target N(0, 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .exceptions import SupportError


def _require_wide(sigma, name="sigma"):
    if not sigma > 1.0:
        raise ValueError(
            f"{name} must exceed 1: for {name} <= 1 the proposal tails are lighter than "
            "the N(0, 1) target and sup pi/q is infinite"
        )


def gaussian_kl_flow_solution(mu0: float, sigma0: float, t: float) -> tuple:
    """Solution of mu' = -mu, sigma' = 1/sigma - sigma from (mu0, sigma0) at time t."""
    _require_wide(sigma0, "sigma0")
    if t < 0:
        raise ValueError("t must be non-negative")
    e = math.exp(-t)
    return mu0 * e, math.sqrt(e * e * (sigma0 * sigma0 - 1.0) + 1.0)


def gaussian_ratio_bound(mu: float, sigma: float) -> float:
    """sigma * exp(mu^2 / (2 (sigma^2 - 1))), an upper bound on sup N(0,1)/N(mu, sigma^2)."""
    _require_wide(sigma)
    return sigma * math.exp(mu * mu / (2.0 * (sigma - 1.0) * (sigma + 1.0)))


def gaussian_ratio_sup(mu: float, sigma: float) -> float:
    """Exact sup_x N(x; 0, 1) / N(x; mu, sigma^2) for sigma > 1."""
    _require_wide(sigma)
    s2 = sigma * sigma
    x = -mu / (s2 - 1.0)
    return sigma * math.exp(-0.5 * x * x + 0.5 * (x - mu) ** 2 / s2)


def gaussian_kl(mu: float, sigma: float, direction: str = "reverse") -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) for ``reverse``, KL(N(0, 1) || N(mu, sigma^2)) for ``forward``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if direction == "reverse":
        return -math.log(sigma) + 0.5 * (sigma * sigma + mu * mu) - 0.5
    if direction == "forward":
        return math.log(sigma) + (1.0 + mu * mu) / (2.0 * sigma * sigma) - 0.5
    raise ValueError(f"direction must be 'reverse' or 'forward', got {direction!r}")


# ---------------------------------------------------------------- ball-kernel density


def ball_volume(dim: int, radius: float) -> float:
    return math.exp(0.5 * dim * math.log(math.pi) - gammaln(0.5 * dim + 1.0) + dim * math.log(radius))


@dataclass(frozen=True, eq=False)
class KdeProposal:
    """Uniform-ball kernel density m_n(x) / (n V) with closed balls of radius ``radius``."""

    centers: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or len(c) < 1:
            raise ValueError("need at least one center")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "centers", c)

    @property
    def n(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def volume(self) -> float:
        return ball_volume(self.dim, self.radius)

    def counts(self, x) -> np.ndarray:
        """m_n(x): how many balls contain each point."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.dim)
        return np.sum(in_ball(x[:, None, :], self.centers[None, :, :], self.radius), axis=1)

    def with_center(self, point) -> "KdeProposal":
        return KdeProposal(np.vstack([self.centers, np.reshape(point, (1, self.dim))]), self.radius)


def in_ball(x, center, radius) -> np.ndarray:
    d = np.asarray(x) - np.asarray(center)
    return np.sum(d * d, axis=-1) <= radius * radius


def kde_density(kde: KdeProposal, x):
    x = np.asarray(x, dtype=np.float64)
    out = kde.counts(x) / (kde.n * kde.volume)
    return out[0] if x.ndim <= 1 and out.size == 1 else out


def _density_values(target, probes):
    if hasattr(target, "log_density"):
        return np.exp(np.atleast_1d(target.log_density(probes)))
    return np.asarray(target(probes), dtype=np.float64).ravel()


def _sup_ratio(pi, m):
    inside = pi > 0
    if np.any(m[inside] == 0):
        raise SupportError("kernel density vanishes at a probe inside the target support")
    return float(np.max(pi[inside] / m[inside])) if inside.any() else 0.0


def kde_bound_components(kde: KdeProposal, target, new_point, probe_points) -> tuple:
    """(M', M''): sup of pi / m_n over support probes inside and outside the ball at
    ``new_point``. An empty region reports 0."""
    probes = np.asarray(probe_points, dtype=np.float64).reshape(-1, kde.dim)
    pi = _density_values(target, probes)
    m = kde.counts(probes)
    near = in_ball(probes, np.reshape(new_point, (1, kde.dim)), kde.radius)
    return _sup_ratio(pi[near], m[near]), _sup_ratio(pi[~near], m[~near])


def kde_doeblin(kde: KdeProposal, target, probe_points) -> float:
    """M_n = n V sup pi / m_n over the probes (brute force)."""
    probes = np.asarray(probe_points, dtype=np.float64).reshape(-1, kde.dim)
    return kde.n * kde.volume * _sup_ratio(_density_values(target, probes), kde.counts(probes))


def kde_update_improves(M_inner: float, M_outer: float, n: int) -> bool:
    """True iff (1 + 1/n) M'' <= M', i.e. adding the new center does not raise M."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if M_inner < 0 or M_outer < 0:
        raise ValueError("bounds must be non-negative")
    return (1.0 + 1.0 / n) * M_outer <= M_inner
