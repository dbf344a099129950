"""Parameter updates for adaptive proposals, with diminishing adaptation.

Every update returns a fresh parameter snapshot; nothing handed to walkers
is mutated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import NonFiniteError
from .flows import add_scaled, ravel, trainable, unravel_like, with_trainable

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class Schedule:
    """Step sizes eps_n = eps0 * 0.5**floor(n / halving_period) and
    adaptation probabilities alpha_n = min(1, alpha_c / (1 + n / alpha_decay)).

    Both families are non-increasing in n and alpha_n -> 0 whenever
    ``alpha_c`` is finite. ``halving_period=None`` keeps eps constant.
    """

    eps0: float = 1e-3
    halving_period: Optional[int] = 5000
    alpha_c: float = 1.0
    alpha_decay: float = 1e4

    def __post_init__(self):
        if self.eps0 < 0 or self.alpha_c < 0 or self.alpha_decay <= 0:
            raise ValueError("schedule constants must be non-negative (decay positive)")
        if self.halving_period is not None and self.halving_period < 1:
            raise ValueError("halving_period must be a positive integer")

    def eps(self, n: int) -> float:
        if self.halving_period is None:
            return self.eps0
        return self.eps0 * 0.5 ** (n // self.halving_period)

    def alpha(self, n: int) -> float:
        return min(1.0, self.alpha_c / (1.0 + n / self.alpha_decay))

    def eps_array(self, n) -> np.ndarray:
        n = np.asarray(n)
        if self.halving_period is None:
            return np.full(n.shape, self.eps0)
        return self.eps0 * 0.5 ** (n // self.halving_period)

    def alpha_array(self, n) -> np.ndarray:
        return np.minimum(1.0, self.alpha_c / (1.0 + np.asarray(n) / self.alpha_decay))


def harmonic_schedule(eps0: float = 1e-3) -> Schedule:
    """alpha_n = 1 / (n + 1), constant eps."""
    return Schedule(eps0=eps0, halving_period=None, alpha_c=1.0, alpha_decay=1.0)


class HistoryBuffer:
    """Chain states seen so far, pooled over walkers.

    ``capacity=None`` keeps everything; otherwise the oldest entries are
    overwritten ring-style. ``inserted`` counts every state ever added.
    """

    def __init__(self, dim: int, capacity: Optional[int] = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive")
        self.dim = dim
        self.capacity = capacity
        self._data = np.empty((capacity or 1024, dim))
        self._size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self._size

    def add(self, points) -> None:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        if self.capacity is None:
            need = self._size + len(points)
            if need > len(self._data):
                grown = np.empty((max(need, 2 * len(self._data)), self.dim))
                grown[: self._size] = self._data[: self._size]
                self._data = grown
            self._data[self._size:need] = points
            self._size = need
        else:
            if len(points) > self.capacity:
                self.inserted += len(points) - self.capacity
                points = points[-self.capacity:]
            slots = (self.inserted + np.arange(len(points))) % self.capacity
            self._data[slots] = points
            self.inserted += len(points)
            self._size = min(self.inserted, self.capacity)
            return
        self.inserted += len(points)

    def states(self) -> np.ndarray:
        """Read-only view of the stored states."""
        view = self._data[: self._size]
        view.flags.writeable = False
        return view

    def sample(self, k: int, rng) -> np.ndarray:
        if self._size == 0:
            raise ValueError("history buffer is empty")
        if k >= self._size:
            return self._data[: self._size].copy()
        return self._data[rng.integers(self._size, size=k)]


def _finite(params) -> bool:
    return all(np.all(np.isfinite(a)) for a in params.arrays())


class Adam:
    """Adam direction for ascent on flat parameter vectors.

    ``direction(g)`` returns m_hat / (sqrt(v_hat) + delta); the caller scales it
    by the scheduled step size, so a vanishing schedule still freezes the
    parameters. Each coordinate of the direction is bounded by roughly
    sqrt(1 - beta2) / (1 - beta1) in magnitude.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, delta: float = 1e-8):
        self.beta1, self.beta2, self.delta = beta1, beta2, delta
        self.m = self.v = None
        self.t = 0

    def direction(self, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m, self.v = np.zeros_like(g), np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + self.delta)


def pseudo_likelihood_update(params, buffer: HistoryBuffer, schedule: Schedule, n: int,
                             batch: int, rng, return_event: bool = False,
                             max_grad_norm: Optional[float] = None, optimizer: Optional[Adam] = None):
    """With probability alpha_n take the ascent step
    theta + eps_n * mean_k grad log q_theta(x_k) over ``batch`` buffered states.

    For a mixture proposal only the adaptive component is trained, on its
    own log-density. A batch at least as large as the buffer uses the whole
    buffer in storage order. A non-finite gradient skips the update; the
    returned event records why. ``max_grad_norm`` rescales the mean
    gradient to at most that Euclidean norm. With an ``optimizer`` the step is
    eps_n times its direction for the (clipped) mean gradient.
    """
    if len(buffer) == 0:
        raise ValueError("history buffer is empty")
    eps, alpha = schedule.eps(n), schedule.alpha(n)
    event = {"step": int(n), "eps": eps, "alpha": alpha, "fired": False, "skipped": None}
    fired = alpha > 0 and (alpha >= 1.0 or rng.random() < alpha)
    if fired:
        event["fired"] = True
        xs = buffer.sample(batch, rng)
        flow = trainable(params)
        try:
            grad = flow.log_prob_param_grad(xs)
            ok = _finite(grad)
        except (NonFiniteError, FloatingPointError):
            ok = False
        if not ok:
            event["skipped"] = "non-finite gradient"
        elif eps > 0:
            norm = float(np.linalg.norm(ravel(grad))) / len(xs)
            scale = eps / len(xs)
            if max_grad_norm is not None and norm > max_grad_norm:
                scale *= max_grad_norm / norm
                event["clipped"] = True
            if optimizer is None:
                new_flow = add_scaled(flow, grad, scale)
            else:
                step = optimizer.direction(ravel(grad) * (scale / eps))
                new_flow = unravel_like(flow, ravel(flow) + eps * step)
            if _finite(new_flow):
                params = with_trainable(params, new_flow)
                event["grad_norm"] = norm
            else:
                event["skipped"] = "non-finite parameters after step"
    return (params, event) if return_event else params


def reverse_kl_update(params, target, n_samples: int, eps: float, rng, z=None):
    """One reparameterised descent step on the Monte-Carlo reverse KL,
    theta - eps * grad (1/s) sum_s [log q_theta(x_s) - log pi(x_s)], x_s = T_theta(z_s).
    """
    flow = trainable(params)
    if z is None:
        z = rng.standard_normal((n_samples, flow.noise_dim))
    z = np.atleast_2d(z)
    grad = flow.sample_path_grad(z, target, 1.0 / len(z))
    if not _finite(grad):
        raise NonFiniteError("non-finite reverse-KL gradient")
    return with_trainable(params, add_scaled(flow, grad, -eps))


def gaussian_exact_kl_step(mu: float, sigma: float, dt: float) -> tuple:
    """Explicit Euler step of mu' = -mu, sigma' = 1/sigma - sigma."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    return mu - dt * mu, sigma + dt * (1.0 / sigma - sigma)


def mle_gaussian_adapt(trace_states) -> tuple:
    """Maximum-likelihood mean and population standard deviation, sigma floored."""
    x = np.asarray(trace_states, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("at least one state is required")
    mu = math.fsum(x) / x.size
    sigma = math.sqrt(math.fsum((x - mu) ** 2) / x.size)
    return mu, max(sigma, SIGMA_FLOOR)


def coin_flip_adapt(current, candidate, alpha_n: float, rng):
    """``candidate`` with probability alpha_n, else ``current``."""
    if not 0.0 <= alpha_n <= 1.0:
        raise ValueError("alpha_n must lie in [0, 1]")
    return candidate if rng.random() < alpha_n else current


def flat_gradient_step(params, grad_vector, eps: float):
    """params + eps * grad for a flat gradient vector."""
    return unravel_like(params, ravel(params) + eps * np.asarray(grad_vector))
