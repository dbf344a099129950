"""Transition kernels: independent Metropolis-Hastings, adaptive random walk,
(preconditioned) MALA, their mixtures, and exact finite-state kernels.

All acceptance ratios are evaluated in log space and clamped at zero, so
large energy differences never overflow.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import NonFiniteError, NormalizationError, ShapeError, SupportError

HAARIO_SCALE = 2.38 ** 2
WORKERS_ENV = "IMHFLOW_WORKERS"


@dataclass(frozen=True)
class ChainState:
    x: np.ndarray
    log_target: float
    log_proposal: float = float("nan")
    grad_log_target: Optional[np.ndarray] = None
    step: int = 0


@dataclass(frozen=True)
class StepOutcome:
    state: ChainState
    proposal: np.ndarray
    accept_prob: float
    accepted: bool
    kernel: str


def init_state(x, target, proposal=None) -> ChainState:
    x = np.asarray(x, dtype=np.float64)
    logq = float(proposal.log_prob(x)) if proposal is not None else float("nan")
    grad = target.grad_log_density(x) if target.grad_log_density is not None else None
    return ChainState(x, float(target.log_density(x)), logq, grad)


def accept_decision(log_ratio, u):
    """Metropolis decision from a log acceptance ratio and a uniform draw in [0, 1)."""
    log_ratio = np.asarray(log_ratio, dtype=np.float64)
    log_a = np.minimum(0.0, np.where(np.isnan(log_ratio), -np.inf, log_ratio))
    prob = np.exp(log_a)
    return prob, np.asarray(u) < prob


# ---------------------------------------------------------------- IMH


def imh_core(logp, logq, logp_new, logq_new, u):
    """Batched IMH acceptance given cached current and proposed log-densities."""
    if np.any(np.isneginf(logq) & np.isfinite(logp)):
        raise SupportError("proposal density is zero at a current state with target mass")
    return accept_decision((logp_new - logp) + (logq - logq_new), u)


def imh_step(state: ChainState, target, proposal, rng) -> StepOutcome:
    """One independent Metropolis-Hastings step; the proposal is drawn from ``proposal``.

    ``state.log_proposal`` must be the log-density of ``state.x`` under this
    same proposal; NaN means "recompute".
    """
    logq = state.log_proposal
    if math.isnan(logq):
        logq = float(proposal.log_prob(state.x))
    z = rng.standard_normal((1, proposal.noise_dim))
    u_comp = rng.random(1)
    x_new, logq_new = proposal.from_noise(z, u_comp)
    x_new, logq_new = x_new[0], float(logq_new[0])
    logp_new = float(target.log_density(x_new))
    prob, accepted = imh_core(
        np.array([state.log_target]), np.array([logq]),
        np.array([logp_new]), np.array([logq_new]), rng.random(1),
    )
    accepted = bool(accepted[0])
    if accepted:
        grad = target.grad_log_density(x_new) if state.grad_log_target is not None else None
        new = ChainState(x_new, logp_new, logq_new, grad, state.step + 1)
    else:
        new = replace(state, log_proposal=logq, step=state.step + 1)
    return StepOutcome(new, x_new, float(prob[0]), accepted, "imh")


@dataclass(frozen=True)
class DiscreteKernel:
    """Row-stochastic matrix on a finite state set with its stationary target."""

    matrix: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        k = self.target.size
        if self.matrix.shape != (k, k):
            raise ShapeError(f"kernel of shape {self.matrix.shape} for {k} states")
        if np.any(self.matrix < 0) or not np.allclose(self.matrix.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("kernel rows must be non-negative and sum to one")


def _simplex(p, name):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-9):
        raise ValueError(f"{name} is not a probability vector")
    return p


def mh_discrete_kernel(target_probs, proposal_matrix) -> DiscreteKernel:
    """Metropolis-Hastings kernel for an arbitrary proposal matrix Q(x, y)."""
    pi = _simplex(target_probs, "target")
    q = np.asarray(proposal_matrix, dtype=np.float64)
    if np.any(pi <= 0):
        raise ValueError("target must be strictly positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (pi[None, :] * q.T) / (pi[:, None] * q)
    accept = np.where(q > 0, np.minimum(1.0, np.nan_to_num(ratio, nan=0.0, posinf=1.0)), 0.0)
    k = accept * q
    np.fill_diagonal(k, 0.0)
    np.fill_diagonal(k, 1.0 - k.sum(axis=1))
    return DiscreteKernel(k, pi)


def imh_discrete_kernel(target_probs, proposal_probs) -> DiscreteKernel:
    """Exact IMH transition matrix; the diagonal carries the rejection mass."""
    pi = _simplex(target_probs, "target")
    q = _simplex(proposal_probs, "proposal")
    if np.any(q <= 0):
        raise SupportError("proposal has zero mass on some state")
    return mh_discrete_kernel(pi, np.broadcast_to(q, (q.size, q.size)))


def mixture_discrete_kernel(k1: DiscreteKernel, k2: DiscreteKernel, alpha: float) -> DiscreteKernel:
    """alpha * k1 + (1 - alpha) * k2."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if k1.matrix.shape != k2.matrix.shape:
        raise ShapeError("kernels act on different state sets")
    return DiscreteKernel(alpha * k1.matrix + (1.0 - alpha) * k2.matrix, k1.target)


# ---------------------------------------------------------------- random walk


class RunningCovariance:
    """Welford running mean/covariance; updates return a new object.

    Until more than ``warmup`` points have been seen the ``initial`` covariance is reported.
    """

    def __init__(self, dim, initial=None, warmup=None, count=0, mean=None, m2=None):
        self.dim = dim
        self.initial = np.eye(dim) if initial is None else np.asarray(initial, dtype=np.float64)
        self.warmup = dim + 1 if warmup is None else warmup
        self.count = count
        self.mean = np.zeros(dim) if mean is None else mean
        self.m2 = np.zeros((dim, dim)) if m2 is None else m2

    def update(self, points) -> "RunningCovariance":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.dim:
            raise ShapeError(f"expected points of dimension {self.dim}")
        k = len(points)
        if k == 0:
            return self
        # pairwise merge of the stored moments with those of the new batch
        mean_b = points.mean(axis=0)
        d = points - mean_b
        m2_b = d.T @ d
        count = self.count + k
        delta = mean_b - self.mean
        mean = self.mean + delta * (k / count)
        m2 = self.m2 + m2_b + np.outer(delta, delta) * (self.count * k / count)
        return RunningCovariance(self.dim, self.initial, self.warmup, count, mean, m2)

    def covariance(self) -> np.ndarray:
        if self.count <= max(self.warmup, 1):
            return self.initial
        c = self.m2 / (self.count - 1)
        return 0.5 * (c + c.T)

    def proposal_factor(self) -> np.ndarray:
        """Cholesky factor of (2.38^2 / m) (C + lambda I), lambda = 1e-6 trace(C) / m."""
        c = self.covariance()
        lam = 1e-6 * max(np.trace(c), 1e-12) / self.dim
        try:
            return np.linalg.cholesky(HAARIO_SCALE / self.dim * (c + lam * np.eye(self.dim)))
        except np.linalg.LinAlgError as exc:
            raise NonFiniteError("random-walk covariance not positive definite") from exc


def rwm_core(x, logp, target, factor, xi, u):
    x_new = x + np.einsum("nj,ij->ni", xi, factor)
    logp_new = target.log_density(x_new)
    prob, accepted = accept_decision(logp_new - logp, u)
    return x_new, logp_new, prob, accepted


def rwm_adaptive_step(state: ChainState, target, running_cov: RunningCovariance, rng) -> StepOutcome:
    """Symmetric Gaussian random-walk step with the adaptive covariance scaling."""
    factor = running_cov.proposal_factor()
    xi = rng.standard_normal((1, target.dim))
    x_new, logp_new, prob, accepted = rwm_core(
        state.x[None, :], np.array([state.log_target]), target, factor, xi, rng.random(1)
    )
    return _finish_local(state, target, x_new[0], float(logp_new[0]), float(prob[0]), bool(accepted[0]), "rwm")


def _finish_local(state, target, x_new, logp_new, prob, accepted, tag, grad_new=None):
    if accepted:
        if grad_new is None and state.grad_log_target is not None:
            grad_new = target.grad_log_density(x_new)
        new = ChainState(x_new, logp_new, float("nan"), grad_new, state.step + 1)
    else:
        new = replace(state, step=state.step + 1)
    return StepOutcome(new, x_new, prob, accepted, tag)


# ---------------------------------------------------------------- Langevin


def _mala_log_q(x_to, x_from, grad_from, h):
    d = x_to - x_from - 0.5 * h * grad_from
    return -0.5 * np.sum(d * d, axis=-1) / h


def mala_core(x, logp, grad, target, h, xi, u):
    """Batched MALA move; returns (x', log pi(x'), grad(x'), prob, accepted)."""
    x_new = x + 0.5 * h * grad + np.sqrt(h) * xi
    logp_new = target.log_density(x_new)
    grad_new = target.grad_log_density(x_new)
    if not np.all(np.isfinite(grad_new[np.isfinite(logp_new)])):
        raise NonFiniteError("non-finite target gradient at a MALA proposal")
    log_ratio = (logp_new - logp) + _mala_log_q(x, x_new, grad_new, h) - _mala_log_q(x_new, x, grad, h)
    prob, accepted = accept_decision(log_ratio, u)
    return x_new, logp_new, grad_new, prob, accepted


def _require_grad(state, target):
    if target.grad_log_density is None:
        raise ValueError(f"target {target.name!r} has no gradient; MALA needs one")
    grad = state.grad_log_target
    if grad is None:
        grad = target.grad_log_density(state.x)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite target gradient at the current state")
    return grad


def mala_step(state: ChainState, target, step_size: float, rng) -> StepOutcome:
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    grad = _require_grad(state, target)
    xi = rng.standard_normal((1, target.dim))
    x_new, logp_new, grad_new, prob, accepted = mala_core(
        state.x[None, :], np.array([state.log_target]), grad[None, :], target, step_size, xi, rng.random(1)
    )
    state = replace(state, grad_log_target=grad)
    return _finish_local(state, target, x_new[0], float(logp_new[0]), float(prob[0]), bool(accepted[0]),
                         "mala", grad_new[0])


def _precision_factor(target, x, reg):
    """Lower Cholesky factor C of A = -H(x) + reg I, eigenvalue-clipped if A is indefinite."""
    if target.hessian_log_density is None:
        raise ValueError(f"target {target.name!r} has no Hessian")
    a = -target.hessian_log_density(x) + reg * np.eye(x.size)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("non-finite Hessian")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (a + a.T))
        floor = 1e-8 * max(1.0, np.max(np.abs(w)))
        w = np.maximum(np.abs(w), floor)
        try:
            return np.linalg.cholesky((v * w) @ v.T)
        except np.linalg.LinAlgError as exc:
            raise NonFiniteError("preconditioner not positive definite after regularisation") from exc


def _pmala_mean_and_logq(x_from, grad_from, chol, h, x_to):
    """Proposal mean x + h/2 G grad with G = (C C^T)^{-1}, and log q(x_to | x_from)."""
    from scipy.linalg import cho_solve

    mean = x_from + 0.5 * h * cho_solve((chol, True), grad_from)
    if x_to is None:
        return mean, None
    std_noise = chol.T @ (x_to - mean) / np.sqrt(h)
    logq = -0.5 * std_noise @ std_noise + np.sum(np.log(np.diag(chol)))
    return mean, logq


def precond_mala_core(x, logp, grad, target, h, xi, u, reg=0.0):
    """Single preconditioned MALA move from explicit noise ``xi`` and uniform ``u``.

    Returns (x', log pi(x'), grad(x'), prob, accepted).
    """
    from scipy.linalg import solve_triangular

    chol = _precision_factor(target, x, reg)
    mean, _ = _pmala_mean_and_logq(x, grad, chol, h, None)
    x_new = mean + np.sqrt(h) * solve_triangular(chol.T, xi, lower=False)
    logp_new = float(target.log_density(x_new))
    grad_new = target.grad_log_density(x_new)
    if np.isfinite(logp_new):
        chol_new = _precision_factor(target, x_new, reg)
        _, logq_fwd = _pmala_mean_and_logq(x, grad, chol, h, x_new)
        _, logq_rev = _pmala_mean_and_logq(x_new, grad_new, chol_new, h, x)
        log_ratio = logp_new - logp + logq_rev - logq_fwd
    else:
        log_ratio = -np.inf
    prob, accepted = accept_decision(log_ratio, u)
    return x_new, logp_new, grad_new, float(prob), bool(accepted)


def precond_mala_step(state: ChainState, target, step_size: float, rng, reg: float = 0.0) -> StepOutcome:
    """MALA with position-dependent metric G(x) = (-H(x) + reg I)^{-1} and full MH correction."""
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    grad = _require_grad(state, target)
    xi = rng.standard_normal(target.dim)
    x_new, logp_new, grad_new, prob, accepted = precond_mala_core(
        state.x, state.log_target, grad, target, step_size, xi, rng.random(), reg
    )
    state = replace(state, grad_log_target=grad)
    return _finish_local(state, target, x_new, logp_new, prob, accepted, "pmala", grad_new)


# ---------------------------------------------------------------- mixtures and walkers


def mixture_kernel_step(state: ChainState, target, proposal, alpha: float, rng,
                        step_size: float = 1e-2, local: str = "mala") -> StepOutcome:
    """With probability ``alpha`` an IMH step, otherwise a local step.

    For alpha in {0, 1} no selection draw is made, so the degenerate mixtures
    consume exactly the same random stream as the pure kernels.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        use_imh = True
    elif alpha == 0.0:
        use_imh = False
    else:
        use_imh = rng.random() < alpha
    if use_imh:
        return imh_step(state, target, proposal, rng)
    if local == "mala":
        out = mala_step(state, target, step_size, rng)
    elif local == "pmala":
        out = precond_mala_step(state, target, step_size, rng)
    else:
        raise ValueError(f"unknown local kernel {local!r}")
    # a local move invalidates the cached proposal density
    if out.accepted:
        out = replace(out, state=replace(out.state, log_proposal=float(proposal.log_prob(out.state.x))))
    return out


def walker_rng(seed: int, walker: int, step: int) -> np.random.Generator:
    """Independent generator for (seed, walker, step): SeedSequence(seed, spawn_key=(walker, step))."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(walker, step)))


@dataclass(frozen=True)
class WalkerFailure:
    walker: int
    error: Exception


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, default)))
    except ValueError:
        return default


def parallel_walkers_step(states: Sequence[ChainState], step_fn: Callable, seed: int,
                          step_index: int, walker_ids: Optional[Sequence[int]] = None,
                          workers: Optional[int] = None) -> list:
    """Advance each walker with ``step_fn(state, rng)`` on its own RNG stream.

    Walker ``i`` always gets ``walker_rng(seed, walker_ids[i], step_index)``,
    so results do not depend on execution order or on which other walkers
    are present. A failing walker yields a :class:`WalkerFailure` in its slot.
    """
    ids = list(range(len(states))) if walker_ids is None else list(walker_ids)
    if len(ids) != len(states):
        raise ShapeError("one walker id per state is required")

    def advance(i):
        try:
            return step_fn(states[i], walker_rng(seed, ids[i], step_index))
        except Exception as exc:  # reported per walker
            return WalkerFailure(ids[i], exc)

    n_workers = worker_count() if workers is None else workers
    if n_workers <= 1 or len(states) <= 1:
        return [advance(i) for i in range(len(states))]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(advance, range(len(states))))


# ---------------------------------------------------------------- bounds


def doeblin_bound(target, proposal, probe_points):
    """Largest pi(x) / q(x) over the probes, clamped below at 1; returns (M, argmax point)."""
    if not target.normalized:
        raise NormalizationError(f"target {target.name!r} is unnormalized; M would be meaningless")
    probes = np.atleast_2d(np.asarray(probe_points, dtype=np.float64))
    logp = np.atleast_1d(target.log_density(probes))
    logq = np.atleast_1d(proposal.log_prob(probes))
    inside = np.isfinite(logp)
    if not inside.any():
        raise ValueError("no probe point lies in the target support")
    if np.any(np.isneginf(logq[inside])):
        return math.inf, probes[np.flatnonzero(inside & np.isneginf(logq))[0]]
    log_ratio = np.where(inside, logp - logq, -np.inf)
    i = int(np.argmax(log_ratio))
    return max(1.0, float(np.exp(log_ratio[i]))), probes[i]


def tv_bound_product(ms) -> float:
    """2 prod(1 - 1/M_i); an infinite M contributes a factor of one."""
    out = 2.0
    for m in ms:
        if m < 1:
            raise ValueError(f"Doeblin constants must be >= 1, got {m}")
        out *= 1.0 - (0.0 if math.isinf(m) else 1.0 / m)
    return out
