"""Vectorised multi-walker sampling loop used by ``run_experiment``.

Randomness
----------
Walker ``w`` owns a PCG64 stream seeded by ``SeedSequence(seed, spawn_key=(w,))``.
Each sweep consumes exactly one block of ``3 + noise_dim + dim`` raw 64-bit
draws per walker, laid out as

    [u_kernel, u_component, u_accept, z_1..z_noise_dim, xi_1..xi_dim]

where uniforms are ``((raw >> 11) + 0.5) / 2**53`` and the normals are their
inverse-CDF images. Block ``n`` of walker ``w`` therefore depends only on
``(seed, w, n)``: adding walkers, changing their order or the worker count
cannot change any other walker's draws. Initial positions come from
``SeedSequence(seed, spawn_key=(w, 0))``; adaptation and diagnostics use
reserved keys.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .. import adaptation as adapt
from .. import flows
from ..exceptions import ConfigError, NonFiniteError
from ..kernels import (
    RunningCovariance,
    imh_core,
    mala_core,
    precond_mala_core,
    rwm_core,
)
from ..oracles import gaussian_kl_flow_solution
from ..targets import make_target

ADAPT_KEY = 2**32 - 2
INIT_KEY = 2**32 - 1
DIAG_KEY = 2**32 - 3
REF_KEY = 2**32 - 4
CHUNK = 128
TAGS = ("init", "imh", "mala", "pmala", "rwm")


class RunError(RuntimeError):
    """A module error during a run, annotated with step and walker."""

    def __init__(self, step, walker, cause):
        where = f"step {step}" + ("" if walker is None else f", walker {walker}")
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
        self.step, self.walker, self.cause = step, walker, cause


def stream(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def raw_to_uniform(raw: np.ndarray) -> np.ndarray:
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) / 9007199254740992.0


class WalkerStreams:
    """Per-walker blocks of uniforms; ``block(n)`` must be requested for n = 1, 2, ..."""

    def __init__(self, seed: int, walker_ids, slots: int, n_normal: int, chunk: int = CHUNK):
        self.gens = [np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(w),))) for w in walker_ids]
        self.slots, self.n_normal, self.chunk = slots, n_normal, chunk
        self._start, self._buf = 1, None

    def block(self, n: int):
        if self._buf is None or n >= self._start + self.chunk:
            if self._buf is not None:
                self._start += self.chunk
            if not self._start <= n < self._start + self.chunk:
                raise ValueError("blocks must be requested in order")
            k = self.chunk * self.slots
            raw = np.stack([g.random_raw(k) for g in self.gens]).reshape(len(self.gens), self.chunk, self.slots)
            u = raw_to_uniform(raw)
            self._buf = (u[:, :, :3], ndtri(u[:, :, 3:3 + self.n_normal]))
        i = n - self._start
        return self._buf[0][:, i], self._buf[1][:, i]


# ---------------------------------------------------------------- builders


def build_target(cfg):
    try:
        return make_target(cfg.target["name"], **cfg.target.get("params", {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for target {cfg.target['name']!r}: {exc}") from exc


def _vec(value, dim, default):
    if value is None:
        return np.full(dim, float(default))
    arr = np.asarray(value, dtype=np.float64)
    return np.full(dim, float(arr)) if arr.ndim == 0 else arr


def build_proposal(cfg, target):
    p = cfg.proposal
    fam, dim = p["family"], target.dim
    rng = stream(cfg.seed, INIT_KEY)
    if fam == "none":
        return None
    if fam == "affine":
        base = flows.AffineParams(_vec(p["shift"], dim, 0.0), _vec(p["log_scale"], dim, 0.0))
    elif fam == "realnvp":
        base = flows.realnvp_init(dim, int(p["n_pairs"]), int(p["hidden"]), rng,
                                  int(p["n_hidden_layers"]), p["activation"])
    elif fam == "gaussian":
        base = flows.DiagonalGaussian(_vec(p["mean"], dim, 0.0), _vec(p["std"], dim, 1.0))
    elif fam == "discrete":
        if p["probs"] is None:
            raise ConfigError("discrete proposals need 'probs'")
        base = flows.DiscreteProposal(np.asarray(p["probs"], dtype=np.float64))
    else:  # pragma: no cover - validated earlier
        raise ConfigError(f"unknown proposal family {fam!r}")
    mix = p.get("mixture")
    if mix:
        fixed = flows.DiagonalGaussian(_vec(mix.get("mean"), dim, 0.0), _vec(mix.get("std"), dim, 1.0))
        try:
            return flows.MixtureProposal(float(mix["weight"]), fixed, base)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad mixture config: {exc}") from exc
    return base


def initial_points(cfg, target, proposal, walker_ids) -> np.ndarray:
    init = cfg.walkers["init"]
    kind, dim = init["kind"], target.dim
    n = len(walker_ids)
    if kind == "point":
        return np.tile(_vec(init.get("point"), dim, 0.0), (n, 1))
    if kind == "modes":
        points = [_vec(pt, dim, 0.0) for pt in init["points"]]
        return np.array([points[mode_of_walker(w, init.get("fractions"), len(points))] for w in walker_ids])
    out = np.empty((n, dim))
    for i, w in enumerate(walker_ids):
        rng = stream(cfg.seed, int(w), 0)
        if kind == "target":
            out[i] = target.sample(1, rng)[0]
        else:
            if proposal is None:
                raise ConfigError("walkers.init kind 'proposal' needs a proposal")
            out[i] = proposal.sample(None, rng)
    return out


def mode_of_walker(w: int, fractions, n_modes: int) -> int:
    """Mode index of walker ``w``. Fractions are rounded to rationals with period
    L = lcm of their denominators and walker w takes slot w mod L, so each block of
    L walkers matches the fractions exactly and the assignment ignores the walker count."""
    fr = [Fraction(1, n_modes)] * n_modes if fractions is None else [Fraction(f).limit_denominator(1000) for f in fractions]
    if len(fr) != n_modes or sum(fr) != 1 or min(fr) < 0:
        raise ConfigError("walker init fractions must be one non-negative entry per mode, summing to one")
    period = math.lcm(*(f.denominator for f in fr))
    cum = np.cumsum([f.numerator * (period // f.denominator) for f in fr])
    return int(np.searchsorted(cum, int(w) % period, side="right"))


def schedule_from(cfg) -> adapt.Schedule:
    a = cfg.adaptation
    hp = a["halving_period"]
    return adapt.Schedule(float(a["eps0"]), None if hp in (None, 0) else int(hp),
                          float(a["alpha_c"]), float(a["alpha_decay"]))


# ---------------------------------------------------------------- run state


@dataclass
class ChainRecord:
    """Everything the controller writes to disk for a chain run."""

    walker_ids: list
    trace_steps: list = field(default_factory=list)
    trace_x: list = field(default_factory=list)
    trace_logp: list = field(default_factory=list)
    trace_acc: list = field(default_factory=list)
    trace_tag: list = field(default_factory=list)
    counts: Optional[np.ndarray] = None
    events: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    proposal: object = None


def affine_gaussian_kl_grad(params: flows.AffineParams, target) -> flows.AffineParams:
    """Exact gradient of KL(N(m, S) || N(shift, diag e^{2 s})) in (shift, s).

    This is the forward divergence, i.e. the population version of maximum
    likelihood, whose minimizer matches the target means and marginal variances.
    """
    if "cov" not in target.info:
        raise ConfigError("the exact-KL rule needs a Gaussian target")
    diff = params.shift - target.info["mean"]
    inv_var = np.exp(-2.0 * params.log_scale)
    d_shift = diff * inv_var
    d_log_scale = 1.0 - (np.diag(target.info["cov"]) + diff * diff) * inv_var
    return flows.AffineParams(d_shift, d_log_scale)


def run_chain(cfg, walker_ids=None, on_checkpoint=None, initial=None) -> ChainRecord:
    """Run the sampling loop; returns the in-memory record (no files written).

    ``initial`` overrides the configured starting points, one row per walker.
    """
    target = build_target(cfg)
    proposal = build_proposal(cfg, target)
    kcfg, acfg = cfg.kernel, cfg.adaptation
    ktype, rule = kcfg["type"], acfg["rule"]
    ids = list(range(cfg.walkers["count"])) if walker_ids is None else list(walker_ids)
    W, dim = len(ids), target.dim
    uses_imh = ktype in ("imh", "mixture")
    local = ktype if ktype in ("rwm", "mala", "pmala") else (kcfg["local"] if ktype == "mixture" else None)
    alpha = 1.0 if ktype == "imh" else (float(kcfg["alpha"]) if ktype == "mixture" else 0.0)
    h, reg = float(kcfg["step_size"]), float(kcfg["pmala_reg"])
    noise_dim = proposal.noise_dim if proposal is not None else 0
    if rule == "kl-flow":
        mu0, sigma0 = float(cfg.params["mu0"]), float(cfg.params["sigma0"])
        dt = float(acfg["dt"])

        def flow_at(n):
            mu, sigma = gaussian_kl_flow_solution(mu0, sigma0, n * dt)
            return flows.AffineParams(np.array([mu]), np.array([math.log(sigma)]))

        proposal = flow_at(0)

    if initial is None:
        x = initial_points(cfg, target, proposal, ids)
    else:
        x = np.array(initial, dtype=np.float64).reshape(W, dim)
    logp = np.atleast_1d(target.log_density(x))
    if not np.all(np.isfinite(logp)):
        raise RunError(0, int(ids[int(np.argmin(np.isfinite(logp)))]), ValueError("initial point outside the target support"))
    need_grad = local in ("mala", "pmala")
    if need_grad and target.grad_log_density is None:
        raise ConfigError(f"kernel {local!r} needs a target gradient")
    grad = np.atleast_2d(target.grad_log_density(x)) if need_grad else None
    logq = np.atleast_1d(proposal.log_prob(x)) if (uses_imh and proposal is not None) else np.full(W, np.nan)

    rec = ChainRecord(ids, proposal=proposal)
    rec.counts = np.zeros((cfg.steps + 1, 4), dtype=np.int64)
    every_trace = int(cfg.diagnostics["trace_every"])
    last_acc, last_tag = np.zeros(W, dtype=bool), np.zeros(W, dtype=np.int8)

    def record(n):
        rec.trace_steps.append(n)
        rec.trace_x.append(x.copy())
        rec.trace_logp.append(logp.copy())
        rec.trace_acc.append(last_acc.copy())
        rec.trace_tag.append(last_tag.copy())

    record(0)
    streams = WalkerStreams(cfg.seed, ids, 3 + noise_dim + dim, noise_dim + dim)
    adapt_rng = stream(cfg.seed, ADAPT_KEY)
    schedule = schedule_from(cfg)
    buffer = adapt.HistoryBuffer(dim, acfg["buffer_capacity"]) if rule == "pseudo-likelihood" else None
    if buffer is not None:
        buffer.add(x)
    optimizer = adapt.Adam() if acfg["optimizer"] == "adam" else None
    running = None
    if local == "rwm":
        running = RunningCovariance(dim, float(acfg.get("rwm_init_var", 1.0)) * np.eye(dim))
        if rule == "rwm":
            running = running.update(x)
    factor = running.proposal_factor() if running is not None else None
    n_events = 0
    every_adapt = int(acfg["every"])
    ckpt_every = int(cfg.diagnostics["checkpoint_every"])
    tag_id = {t: i for i, t in enumerate(TAGS)}

    def locate(n, fn, idx):
        # rerun one walker at a time to name the failing one
        for j in idx:
            try:
                fn(np.array([j]))
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise RunError(n, int(ids[j]), exc) from exc
        raise RunError(n, None, RuntimeError("batched step failed but no single walker reproduces it"))

    for n in range(1, cfg.steps + 1):
        u3, normals = streams.block(n)
        z, xi = normals[:, :noise_dim], normals[:, noise_dim:]
        use_imh = u3[:, 0] < alpha
        acc = np.zeros(W, dtype=bool)
        tags = np.zeros(W, dtype=np.int8)
        imh_idx = np.flatnonzero(use_imh)
        loc_idx = np.flatnonzero(~use_imh)

        if imh_idx.size:
            def imh_branch(idx):
                y, lqy = proposal.from_noise(z[idx], u3[idx, 1])
                lpy = np.atleast_1d(target.log_density(y))
                _, a = imh_core(logp[idx], logq[idx], lpy, np.atleast_1d(lqy), u3[idx, 2])
                return y, lpy, np.atleast_1d(lqy), a

            try:
                y, lpy, lqy, a = imh_branch(imh_idx)
            except Exception:  # noqa: BLE001
                locate(n, imh_branch, imh_idx)
            moved = imh_idx[a]
            x[moved], logp[moved], logq[moved] = y[a], lpy[a], lqy[a]
            if need_grad and moved.size:
                grad[moved] = np.atleast_2d(target.grad_log_density(x[moved]))
            acc[imh_idx] = a
            tags[imh_idx] = tag_id["imh"]
            rec.counts[n, 0], rec.counts[n, 1] = imh_idx.size, int(a.sum())

        if loc_idx.size:
            if local == "mala":
                def loc_branch(idx):
                    return mala_core(x[idx], logp[idx], grad[idx], target, h, xi[idx], u3[idx, 2])

                try:
                    y, lpy, gy, _, a = loc_branch(loc_idx)
                except Exception:  # noqa: BLE001
                    locate(n, loc_branch, loc_idx)
                moved = loc_idx[a]
                x[moved], logp[moved], grad[moved] = y[a], lpy[a], gy[a]
            elif local == "rwm":
                y, lpy, _, a = rwm_core(x[loc_idx], logp[loc_idx], target, factor, xi[loc_idx], u3[loc_idx, 2])
                moved = loc_idx[a]
                x[moved], logp[moved] = y[a], lpy[a]
            else:
                a = np.zeros(loc_idx.size, dtype=bool)
                for k, j in enumerate(loc_idx):
                    try:
                        y, lpy, gy, _, ok = precond_mala_core(x[j], logp[j], grad[j], target, h, xi[j], u3[j, 2], reg)
                    except Exception as exc:  # noqa: BLE001
                        raise RunError(n, int(ids[j]), exc) from exc
                    if ok:
                        x[j], logp[j], grad[j] = y, lpy, gy
                    a[k] = ok
                moved = loc_idx[a]
            if uses_imh and moved.size:
                logq[moved] = np.atleast_1d(proposal.log_prob(x[moved]))
            acc[loc_idx] = a
            tags[loc_idx] = tag_id[local]
            rec.counts[n, 2], rec.counts[n, 3] = loc_idx.size, int(a.sum())

        last_acc, last_tag = acc, tags

        # ---- adaptation (single writer, between sweeps)
        if buffer is not None:
            buffer.add(x)
        if running is not None and rule == "rwm":
            running = running.update(x)
            factor = running.proposal_factor()
        if rule == "kl-flow":
            proposal = flow_at(n)
            logq = np.atleast_1d(proposal.log_prob(x))
        elif rule in ("pseudo-likelihood", "reverse-kl", "exact-kl") and n % every_adapt == 0:
            event = _adapt(rule, proposal, buffer, schedule, n_events, cfg, target, adapt_rng, optimizer)
            proposal = event.pop("params")
            event["sweep"] = n
            rec.events.append(event)
            n_events += 1
            logq = np.atleast_1d(proposal.log_prob(x))
            if ckpt_every and n_events % ckpt_every == 0:
                rec.checkpoints.append((n, proposal))
                if on_checkpoint is not None:
                    on_checkpoint(n, proposal)
        if n % every_trace == 0:
            record(n)

    rec.proposal = proposal
    if rule in ("pseudo-likelihood", "reverse-kl", "exact-kl") and (not rec.checkpoints or rec.checkpoints[-1][0] != cfg.steps):
        rec.checkpoints.append((cfg.steps, proposal))
    return rec


def _adapt(rule, proposal, buffer, schedule, k, cfg, target, rng, optimizer=None) -> dict:
    a = cfg.adaptation
    if rule == "pseudo-likelihood":
        params, event = adapt.pseudo_likelihood_update(
            proposal, buffer, schedule, k, int(a["batch"]), rng, return_event=True,
            max_grad_norm=None if a["max_grad_norm"] is None else float(a["max_grad_norm"]),
            optimizer=optimizer,
        )
        event["params"] = params
        return event
    eps, alpha = schedule.eps(k), schedule.alpha(k)
    event = {"step": k, "eps": eps, "alpha": alpha, "fired": False, "skipped": None}
    if not (alpha >= 1.0 or rng.random() < alpha):
        event["params"] = proposal
        return event
    event["fired"] = True
    try:
        if rule == "reverse-kl":
            new = adapt.reverse_kl_update(proposal, target, int(a["n_samples"]), eps, rng)
        else:
            flow = flows.trainable(proposal)
            new = flows.with_trainable(proposal, flows.add_scaled(flow, affine_gaussian_kl_grad(flow, target), -eps))
    except NonFiniteError as exc:
        event["skipped"] = str(exc)
        new = proposal
    event["params"] = new
    return event
