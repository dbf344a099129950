"""Diagnostics: exact total variation on finite chains, kernel distances,
mixing times, Kolmogorov-Smirnov statistics, ESS and mode weights.

Total variation uses the factor-two convention, TV(p, q) = sum |p_i - q_i|,
so it ranges over [0, 2].
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .exceptions import ContainmentViolation, NormalizationError, ShapeError
from .kernels import DiscreteKernel, accept_decision

MIXING_CAP = 10_000
# mean of the Kolmogorov distribution, sqrt(pi/2) ln 2
KOLMOGOROV_MEAN = math.sqrt(math.pi / 2.0) * math.log(2.0)


@dataclass
class DiagnosticsReport:
    acceptance: list = field(default_factory=list)
    ks: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    mode_weights: Optional[list] = None
    tv_curve: Optional[list] = None
    log_ratio_sup: Optional[list] = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> "DiagnosticsReport":
        for name in ("acceptance", "ks", "ess", "tv_curve", "log_ratio_sup"):
            vals = getattr(self, name)
            if vals is not None and not np.all(np.isfinite(np.asarray(vals, dtype=float))):
                raise ValueError(f"report field {name!r} has non-finite entries")
        if self.ks and not (min(self.ks) >= 0.0 and max(self.ks) <= 1.0):
            raise ValueError("KS statistics must lie in [0, 1]")
        if self.mode_weights is not None and not math.isclose(sum(self.mode_weights), 1.0, abs_tol=1e-9):
            raise ValueError("mode weights must sum to one")
        return self

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticsReport":
        return cls(**{k: d.get(k) for k in ("acceptance", "ks", "ess", "mode_weights",
                                             "tv_curve", "log_ratio_sup")},
                   extra=d.get("extra", {}))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------- exact finite-state quantities


def _simplex(p, atol=1e-9):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=atol):
        raise ValueError("input is not a probability vector")
    return p


def exact_tv_discrete(p, q) -> float:
    p, q = _simplex(p), _simplex(q)
    if p.shape != q.shape:
        raise ShapeError("probability vectors have different lengths")
    return float(np.sum(np.abs(p - q)))


def _matrix(k):
    return k.matrix if isinstance(k, DiscreteKernel) else np.asarray(k, dtype=np.float64)


def kernel_tv_distance(k1, k2) -> float:
    """sup over starting states of the TV distance between the two rows."""
    a, b = _matrix(k1), _matrix(k2)
    if a.shape != b.shape:
        raise ShapeError(f"kernels of shape {a.shape} and {b.shape}")
    return float(np.max(np.sum(np.abs(a - b), axis=1)))


def tv_from_stationary(k: DiscreteKernel, n_max: int) -> np.ndarray:
    """Worst-case start TV, max_x ||K^n(x, .) - pi||, for n = 1..n_max."""
    return inhomogeneous_tv_curve([k] * n_max)


def inhomogeneous_tv_curve(kernels: Sequence[DiscreteKernel], pi=None) -> np.ndarray:
    """Worst-case start TV of the products K_1 ... K_n against pi, for every n."""
    if not kernels:
        return np.empty(0)
    pi = kernels[0].target if pi is None else np.asarray(pi)
    prod = np.eye(pi.size)
    out = np.empty(len(kernels))
    for i, k in enumerate(kernels):
        prod = prod @ _matrix(k)
        out[i] = np.max(np.sum(np.abs(prod - pi[None, :]), axis=1))
    return out


def mixing_time_discrete(k: DiscreteKernel, eps: float, cap: int = MIXING_CAP) -> int:
    """max over starts x of inf{n >= 1 : ||K^n(x, .) - pi|| < eps}.

    Raises ContainmentViolation if some start has not mixed after ``cap`` steps.
    """
    if not 0.0 < eps < 2.0:
        raise ValueError("eps must lie in (0, 2)")
    m, pi = _matrix(k), k.target
    prod = m.copy()
    pending = np.ones(pi.size, dtype=bool)
    for n in range(1, cap + 1):
        tv = np.sum(np.abs(prod - pi[None, :]), axis=1)
        pending &= ~(tv < eps)
        if not pending.any():
            return n
        prod = prod @ m
    raise ContainmentViolation(f"kernel not within {eps} of stationarity after {cap} steps")


def geometric_mixing_bound(M: float, eps: float) -> int:
    """ceil(log(eps/2) / log(1 - 1/M)): steps after which 2(1-1/M)^n < eps is guaranteed."""
    if M == 1.0:
        return 1
    return max(1, math.ceil(math.log(eps / 2.0) / math.log1p(-1.0 / M)))


def log_ratio_sup(target, proposal, probe_points) -> float:
    """max over probes of log pi - log q (normalized densities only)."""
    if not target.normalized:
        raise NormalizationError(f"target {target.name!r} is unnormalized")
    probes = np.atleast_2d(np.asarray(probe_points, dtype=np.float64))
    logp = np.atleast_1d(target.log_density(probes))
    logq = np.atleast_1d(proposal.log_prob(probes))
    inside = np.isfinite(logp)
    return float(np.max(logp[inside] - logq[inside]))


# ---------------------------------------------------------------- sample-based statistics


def ks_two_sample(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| for the two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_noise_floor(n: int, m: int) -> float:
    """Expected two-sample KS statistic between equal distributions, asymptotically."""
    return KOLMOGOROV_MEAN * math.sqrt((n + m) / (n * m))


def unit_vectors(n: int, dim: int, rng) -> np.ndarray:
    """Rows uniform on the sphere. Draws are row-major, so a longer request
    from an identically seeded generator extends a shorter one."""
    u = rng.standard_normal((n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def random_projection_ks(samples_a, samples_b, n_proj: int, rng, chunk: int = 256) -> list:
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if n_proj < 1:
        raise ValueError("n_proj must be at least 1")
    dirs = unit_vectors(n_proj, a.shape[1], rng)
    out = []
    for start in range(0, n_proj, chunk):
        block = dirs[start:start + chunk]
        pa, pb = a @ block.T, b @ block.T
        out.extend(ks_two_sample(pa[:, j], pb[:, j]) for j in range(block.shape[0]))
    return out


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def ess(series) -> float:
    """N / (1 + 2 sum rho_k), truncated by Geyer's initial positive sequence."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 10:
        raise ValueError("ESS needs at least 10 values")
    if not np.all(np.isfinite(x)):
        raise ValueError("series has non-finite values")
    if np.ptp(x) == 0.0:
        return 1.0
    rho = autocorrelation(x)
    n_pairs = (x.size - 1) // 2
    pairs = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs:2]
    neg = np.flatnonzero(pairs <= 0.0)
    k = neg[0] if neg.size else n_pairs
    tau = 2.0 * np.sum(pairs[:k]) - 1.0
    return float(x.size / max(tau, 1e-12))


def mode_weights(samples, classifier: Callable, k_modes: int) -> np.ndarray:
    """Empirical frequencies of classifier labels 0..k_modes-1."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    labels = np.asarray(classifier(samples))
    if labels.shape != (len(samples),):
        labels = np.array([classifier(s) for s in samples])
    labels = labels.astype(np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= k_modes):
        raise ValueError("classifier returned a label outside 0..k_modes-1")
    return np.bincount(labels, minlength=k_modes) / max(labels.size, 1)


def sign_of_mean_classifier(samples) -> np.ndarray:
    """0 for fields with non-negative spatial mean, 1 otherwise."""
    return (np.mean(np.atleast_2d(samples), axis=1) < 0).astype(np.intp)


def nearest_mean_classifier(means) -> Callable:
    means = np.asarray(means, dtype=np.float64)

    def classify(samples):
        d = np.atleast_2d(samples)[:, None, :] - means[None, :, :]
        return np.argmin(np.sum(d * d, axis=2), axis=1)

    return classify


def symmetrize(samples) -> np.ndarray:
    """Append -x for every x (exact for sign-symmetric targets)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    return np.concatenate([samples, -samples])


# ---------------------------------------------------------------- stationarity probe


@dataclass
class ProbeResult:
    checkpoints: list
    ks: list
    noise_floor: float
    low_power: bool
    recorded: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))


def stationarity_probe(adapt_rule, target, n_steps: int, n_replicas: int, rng,
                       checkpoints=None, initial=None, record: int = 0) -> ProbeResult:
    """Start ``n_replicas`` chains at exact target draws, run adaptive IMH and
    report KS(states at step n, fresh exact draws) at each checkpoint.

    ``adapt_rule`` is ``"mle"`` (Gaussian proposal refit to the chain's own
    history X_0..X_n after every step) or ``"none"`` (the proposal stays at
    ``initial``). ``initial`` defaults to the target's mean and standard
    deviation. One-dimensional Gaussian proposals only. The states of the
    first ``record`` replicas at each checkpoint are returned in ``recorded``.
    """
    if adapt_rule not in ("mle", "none"):
        raise ValueError(f"unknown adaptation rule {adapt_rule!r}")
    if target.dim != 1:
        raise ShapeError("the stationarity probe works on one-dimensional targets")
    if checkpoints is None:
        checkpoints = sorted({n for n in (1, 10, 100, 1000, 10_000) if n <= n_steps} | {n_steps})
    checkpoints = sorted(int(c) for c in checkpoints)
    if initial is None:
        ref = target.sample(100_000, np.random.default_rng(0))[:, 0]
        initial = (target.info["mean"][0], math.sqrt(target.info["cov"][0, 0])) \
            if "mean" in target.info else (ref.mean(), ref.std())
    mu = np.full(n_replicas, float(initial[0]))
    sigma = np.full(n_replicas, float(initial[1]))
    x = target.sample(n_replicas, rng)[:, 0]
    logp = target.log_density(x[:, None])
    count = np.ones(n_replicas)
    mean, m2 = x.copy(), np.zeros(n_replicas)
    ks, kept, cp = [], [], iter(checkpoints)
    nxt = next(cp, None)
    for n in range(1, n_steps + 1):
        y = mu + sigma * rng.standard_normal(n_replicas)
        logp_y = target.log_density(y[:, None])
        logq_x = -0.5 * ((x - mu) / sigma) ** 2
        logq_y = -0.5 * ((y - mu) / sigma) ** 2
        _, acc = accept_decision(logp_y - logp + logq_x - logq_y, rng.random(n_replicas))
        x, logp = np.where(acc, y, x), np.where(acc, logp_y, logp)
        if adapt_rule == "mle":
            count += 1
            delta = x - mean
            mean += delta / count
            m2 += delta * (x - mean)
            mu = mean.copy()
            sigma = np.maximum(np.sqrt(m2 / count), 1e-6)
        while nxt is not None and nxt == n:
            ks.append(ks_two_sample(x, target.sample(n_replicas, rng)[:, 0]))
            kept.append(x[:record].copy())
            nxt = next(cp, None)
    recorded = np.array(kept) if kept else np.empty((0, min(record, n_replicas)))
    return ProbeResult(checkpoints[: len(ks)], ks, ks_noise_floor(n_replicas, n_replicas),
                       n_replicas < 100, recorded)


def normal_cdf_ks(samples, mean: float, std: float) -> float:
    """One-sample KS distance against N(mean, std^2)."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    f = ndtr((x - mean) / std)
    n = x.size
    return float(max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n)))
