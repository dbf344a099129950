"""Small exact studies built from the library primitives.

Each function returns plain dictionaries of numbers so that the runner, the
CLI ``check`` command and the test suite can share them.
"""
from __future__ import annotations

import math

import numpy as np

from . import diagnostics as diag
from . import oracles
from .adaptation import coin_flip_adapt, gaussian_exact_kl_step
from .flows import DiscreteProposal
from .kernels import (
    doeblin_bound,
    imh_discrete_kernel,
    mh_discrete_kernel,
    mixture_discrete_kernel,
    tv_bound_product,
)
from .targets import discrete_target

# round-off allowance for comparisons between exact matrix-power quantities
TV_SLACK = 1e-12


def random_simplex(k: int, rng) -> np.ndarray:
    """Uniform draw from the open probability simplex."""
    return rng.dirichlet(np.ones(k))


def discrete_doeblin(pi, q) -> float:
    """Doeblin constant of the IMH kernel with target ``pi`` and proposal ``q``."""
    probes = np.arange(len(pi), dtype=np.float64)[:, None]
    return doeblin_bound(discrete_target(pi), DiscreteProposal(np.asarray(q)), probes)[0]


# ---------------------------------------------------------------- uniform ergodicity


def geometric_ergodicity_check(n_instances: int = 100, k: int = 5, n_max: int = 50, seed: int = 0) -> dict:
    """Exact n-step TV of random IMH kernels against 2 (1 - 1/M)^n."""
    rng = np.random.default_rng(seed)
    n = np.arange(1, n_max + 1)
    violations, worst = 0, -math.inf
    for _ in range(n_instances):
        pi, q = random_simplex(k, rng), random_simplex(k, rng)
        m = discrete_doeblin(pi, q)
        tv = diag.tv_from_stationary(imh_discrete_kernel(pi, q), n_max)
        bound = 2.0 * (1.0 - 1.0 / m) ** n
        violations += int(np.sum(tv > bound + TV_SLACK))
        worst = max(worst, float(np.max(tv - bound)))
    return {"instances": n_instances, "violations": violations, "max_excess": worst}


# ---------------------------------------------------------------- deterministic adaptation


def _proposal_sequence(pi, n_steps, rng, kind):
    k = len(pi)
    if kind == "random":
        return [random_simplex(k, rng) for _ in range(n_steps)]
    # proposals drifting from a random start towards the target
    q0 = random_simplex(k, rng)
    w = 1.0 - 0.9 ** np.arange(1, n_steps + 1)
    return [(1.0 - wi) * q0 + wi * pi for wi in w]


def adaptive_bound_check(n_instances: int = 100, k: int = 5, n_steps: int = 50, seed: int = 0) -> dict:
    """Deterministic proposal sequences: exact TV of the kernel products against
    the product bound, and monotonicity of the exact TV."""
    rng = np.random.default_rng(seed)
    bound_violations = monotone_violations = 0
    worst_bound = worst_increase = -math.inf
    for i in range(n_instances):
        pi = random_simplex(k, rng)
        qs = _proposal_sequence(pi, n_steps, rng, "random" if i % 2 == 0 else "drift")
        kernels = [imh_discrete_kernel(pi, q) for q in qs]
        tv = diag.inhomogeneous_tv_curve(kernels, pi)
        ms = [discrete_doeblin(pi, q) for q in qs]
        bound = np.array([tv_bound_product(ms[: j + 1]) for j in range(n_steps)])
        tv0 = float(np.max(2.0 * (1.0 - pi)))
        steps = np.diff(np.concatenate([[tv0], tv]))
        bound_violations += int(np.sum(tv > bound + TV_SLACK))
        monotone_violations += int(np.sum(steps > TV_SLACK))
        worst_bound = max(worst_bound, float(np.max(tv - bound)))
        worst_increase = max(worst_increase, float(np.max(steps)))
    return {
        "instances": n_instances,
        "bound_violations": bound_violations,
        "max_bound_excess": worst_bound,
        "monotone_violations": monotone_violations,
        "max_increase": worst_increase,
    }


# ---------------------------------------------------------------- diminishing adaptation


def coin_flip_witness(n_replicas: int = 1000, n_max: int = 1000, seed: int = 0,
                      target=(0.3, 0.7), grid: int = 21) -> dict:
    """Mean exact kernel distance between consecutive kernels under coin-flip
    adaptation with alpha_n = 1/(n+1) on a two-state IMH family.

    The candidate at each step is a fresh uniform draw from the parameter grid.
    Returns the curve of replica means indexed by n = 0..n_max-1.
    """
    rng = np.random.default_rng(seed)
    pi = np.asarray(target, dtype=np.float64)
    thetas = np.linspace(0.05, 0.95, grid)
    kernels = [imh_discrete_kernel(pi, np.array([t, 1.0 - t])) for t in thetas]
    dist = np.array([[diag.kernel_tv_distance(a, b) for b in kernels] for a in kernels])
    current = rng.integers(grid, size=n_replicas)
    curve = np.empty(n_max)
    for n in range(n_max):
        alpha = 1.0 / (n + 1)
        candidates = rng.integers(grid, size=n_replicas)
        nxt = np.array([coin_flip_adapt(c, d, alpha, rng) for c, d in zip(current, candidates)])
        curve[n] = dist[current, nxt].mean()
        current = nxt
    return {"mean_distance": curve.tolist(), "replicas": n_replicas}


# ---------------------------------------------------------------- mixture kernels


def mixture_distance_identity(n_instances: int = 50, k: int = 5, alphas=(0.0, 0.3, 1.0), seed: int = 0) -> dict:
    """max |d(H, H') - alpha d(K, K')| where H = alpha K + (1 - alpha) L shares
    the local kernel L and K, K' are IMH kernels for two proposals."""
    rng = np.random.default_rng(seed)
    worst = {float(a): 0.0 for a in alphas}
    for _ in range(n_instances):
        pi = random_simplex(k, rng)
        local_q = rng.random((k, k))
        local_q = local_q + local_q.T
        local = mh_discrete_kernel(pi, local_q / local_q.sum(axis=1, keepdims=True))
        k1 = imh_discrete_kernel(pi, random_simplex(k, rng))
        k2 = imh_discrete_kernel(pi, random_simplex(k, rng))
        d = diag.kernel_tv_distance(k1, k2)
        for a in alphas:
            h1 = mixture_discrete_kernel(k1, local, a)
            h2 = mixture_discrete_kernel(k2, local, a)
            worst[float(a)] = max(worst[float(a)], abs(diag.kernel_tv_distance(h1, h2) - a * d))
    return {"instances": n_instances, "max_error": worst}


# ---------------------------------------------------------------- Gaussian KL flow


def kl_flow_check(mu0: float, sigma0: float, t_max: float = 3.0, dt: float = 1e-4,
                  t_limit: float = 10.0, n_grid: int = 101) -> dict:
    """Euler integration of the reverse-KL flow against its closed form, and the
    ratio bound along the flow.

    Monotonicity of the bound is checked on ``n_grid`` times in [0, t_max]. Near
    the limit the per-step decrease falls below the rounding error of
    sigma^2 - 1, so later times only enter through the gap at ``t_limit``.
    """
    n_euler = int(round(t_max / dt))
    mu, sigma = mu0, sigma0
    err_mu = err_sigma = 0.0
    for i in range(1, n_euler + 1):
        mu, sigma = gaussian_exact_kl_step(mu, sigma, dt)
        m_ref, s_ref = oracles.gaussian_kl_flow_solution(mu0, sigma0, i * dt)
        err_mu = max(err_mu, abs(mu - m_ref))
        err_sigma = max(err_sigma, abs(sigma - s_ref))

    def bound_at(t):
        return oracles.gaussian_ratio_bound(*oracles.gaussian_kl_flow_solution(mu0, sigma0, t))

    ts = np.linspace(0.0, t_max, n_grid)
    bounds = np.array([bound_at(t) for t in ts])
    limit = math.exp(mu0 * mu0 / (2.0 * (sigma0 * sigma0 - 1.0)))
    return {
        "euler_max_error_mu": err_mu,
        "euler_max_error_sigma": err_sigma,
        "ratio_bound_times": ts.tolist(),
        "ratio_bound": bounds.tolist(),
        "ratio_bound_limit": limit,
        "ratio_bound_final_gap": float(abs(bound_at(t_limit) - limit)),
        "ratio_bound_non_increasing": bool(np.all(np.diff(bounds) <= 0.0)),
        "log_ratio_sup": np.log(bounds).tolist(),
    }


# ---------------------------------------------------------------- kernel density proposals


def kde_equivalence_study(n_instances: int, rng, n_grid: int = 40, radius: float = 0.1) -> dict:
    """Compare the closed-form improvement predicate with brute-force M_{n+1} <= M_n.

    Each instance has a random positive target on a 1D grid of [0, 1], centers
    that cover every grid point plus a few random extras, and a new center
    that is either a random grid point or the current worst-ratio point.
    """
    grid = np.linspace(0.0, 1.0, n_grid)
    probes = grid[:, None]
    cover = grid[np.unique(np.rint(np.linspace(0.0, 1.0, int(math.ceil(1.0 / radius)) + 1) * (n_grid - 1))).astype(int)]
    cols = {c: [] for c in ("instance", "n", "M_inner", "M_outer", "M_n", "M_next", "predicate", "brute_force")}
    for i in range(n_instances):
        pi = random_simplex(n_grid, rng)
        extra = grid[rng.integers(n_grid, size=rng.integers(0, 8))]
        kde = oracles.KdeProposal(np.concatenate([cover, extra]), radius)

        def target(x, pi=pi):
            return pi[np.rint(np.asarray(x).ravel() * (n_grid - 1)).astype(int)]

        if rng.random() < 0.5:
            new = grid[rng.integers(n_grid)]
        else:
            new = grid[int(np.argmax(pi / kde.counts(probes)))]
        m_in, m_out = oracles.kde_bound_components(kde, target, new, probes)
        m_n = oracles.kde_doeblin(kde, target, probes)
        m_next = oracles.kde_doeblin(kde.with_center(new), target, probes)
        for key, val in (("instance", i), ("n", kde.n), ("M_inner", m_in), ("M_outer", m_out), ("M_n", m_n),
                         ("M_next", m_next), ("predicate", oracles.kde_update_improves(m_in, m_out, kde.n)),
                         ("brute_force", m_next <= m_n)):
            cols[key].append(val)
    return {k: np.array(v) for k, v in cols.items()}
