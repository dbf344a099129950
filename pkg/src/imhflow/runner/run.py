"""Experiment orchestration: run, report, replay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .. import diagnostics as diag
from .. import flows, studies
from ..exceptions import ConfigError, TraceCorruptError
from ..kernels import doeblin_bound, imh_discrete_kernel
from . import io
from .config import RunConfig, from_dict
from .engine import DIAG_KEY, REF_KEY, TAGS, build_proposal, build_target, run_chain, stream

RESOLVED = "config.resolved.yaml"
REPORT = "report.json"


@dataclass
class RunArtifacts:
    out_dir: Path
    files: dict = field(default_factory=dict)
    report: diag.DiagnosticsReport | None = None

    def path(self, name) -> Path:
        return self.out_dir / name


def run_experiment(config) -> RunArtifacts:
    """Execute a run described by ``config`` (a RunConfig or raw mapping) and write its artifacts."""
    cfg = config if isinstance(config, RunConfig) else from_dict(config)
    out = io.ensure_dir(cfg.out)
    io.write_text(out / RESOLVED, cfg.to_yaml())
    files = {}
    runner = {
        "chain": _run_chain_files,
        "discrete-exact": _run_chain_files,
        "kl-flow": _run_chain_files,
        "stationarity": _run_stationarity_files,
        "kde-study": _run_kde_files,
    }[cfg.experiment]
    files.update(runner(cfg, out))
    io.write_manifest(out, files)
    report = compute_report(out)
    io.write_text(out / REPORT, report.to_json())
    return RunArtifacts(out, files, report)


# ---------------------------------------------------------------- writers


def _run_chain_files(cfg, out) -> dict:
    ckpt_dir = out / "checkpoints"
    if cfg.adaptation["rule"] in ("pseudo-likelihood", "reverse-kl", "exact-kl"):
        io.ensure_dir(ckpt_dir)
        for old in ckpt_dir.glob("params_*.json"):
            old.unlink()
    rec = run_chain(cfg)
    W = len(rec.walker_ids)
    R = len(rec.trace_steps)
    steps = np.repeat(np.array(rec.trace_steps, dtype=np.int64), W)
    walkers = np.tile(np.array(rec.walker_ids, dtype=np.int64), R)
    x = np.concatenate(rec.trace_x) if R else np.empty((0, 1))
    logp = np.concatenate(rec.trace_logp)
    acc = np.concatenate(rec.trace_acc)
    tags = np.array(TAGS)[np.concatenate(rec.trace_tag)]
    tags[steps == 0] = "init"
    files = {"trace.csv": io.write_trace(out / "trace.csv", steps, walkers, x, logp, acc, tags)}
    c = rec.counts[1:]
    files["acceptance.csv"] = io.write_table(
        out / "acceptance.csv",
        ["step", "imh_proposed", "imh_accepted", "local_proposed", "local_accepted"],
        [np.arange(1, cfg.steps + 1, dtype=np.int64)] + [c[:, i] for i in range(4)],
    )
    files["events.jsonl"] = io.write_events(out / "events.jsonl", rec.events)
    for step, params in rec.checkpoints:
        name = f"checkpoints/params_{step:08d}.json"
        flows.save_params(params, out / name)
        files[name] = 1
    return files


def _run_stationarity_files(cfg, out) -> dict:
    p = cfg.params
    target = build_target(cfg)
    rng = stream(cfg.seed, DIAG_KEY)
    res = diag.stationarity_probe(p.get("rule", "mle"), target, cfg.steps, int(p.get("replicas", 1000)), rng,
                                  checkpoints=p.get("checkpoints"), record=int(p.get("record", 5)))
    files = {"ks_curve.csv": io.write_table(out / "ks_curve.csv", ["step", "ks"],
                                            [np.array(res.checkpoints, dtype=np.int64), np.array(res.ks)])}
    rec = res.recorded
    k = rec.shape[1] if rec.size else 0
    steps = np.repeat(np.array(res.checkpoints, dtype=np.int64), k)
    walkers = np.tile(np.arange(k, dtype=np.int64), len(res.checkpoints))
    x = rec.reshape(-1, 1)
    files["trace.csv"] = io.write_trace(out / "trace.csv", steps, walkers, x, target.log_density(x),
                                        np.zeros(len(x), dtype=bool), np.full(len(x), "imh"))
    return files


def _run_kde_files(cfg, out) -> dict:
    p = cfg.params
    rows = studies.kde_equivalence_study(int(p.get("instances", 500)), stream(cfg.seed, DIAG_KEY),
                                         n_grid=int(p.get("grid", 40)), radius=float(p.get("radius", 0.1)))
    cols = ["instance", "n", "M_inner", "M_outer", "M_n", "M_next", "predicate", "brute_force"]
    return {"kde.csv": io.write_table(out / "kde.csv", cols, [np.asarray(rows[c]) for c in cols])}


# ---------------------------------------------------------------- reports


def load_resolved(out_dir) -> RunConfig:
    path = Path(out_dir) / RESOLVED
    if not path.exists():
        raise TraceCorruptError(f"{out_dir} has no {RESOLVED}")
    try:
        return from_dict(yaml.safe_load(path.read_text()))
    except (yaml.YAMLError, ConfigError) as exc:
        raise TraceCorruptError(f"resolved config in {out_dir} is unreadable: {exc}") from exc


def compute_report(out_dir, n_proj=None) -> diag.DiagnosticsReport:
    """Diagnostics from stored artifacts only (no re-sampling of the chain)."""
    out = Path(out_dir)
    io.verify_manifest(out)
    cfg = load_resolved(out)
    if n_proj is not None:
        cfg.diagnostics["n_proj"] = int(n_proj)
    kind = cfg.experiment
    if kind == "stationarity":
        t = io.read_table(out / "ks_curve.csv")
        rep = diag.DiagnosticsReport(ks=t["ks"].tolist(), extra={
            "checkpoints": t["step"].astype(int).tolist(),
            "noise_floor": diag.ks_noise_floor(int(cfg.params.get("replicas", 1000)),
                                               int(cfg.params.get("replicas", 1000))),
        })
        return rep.validate()
    if kind == "kde-study":
        t = io.read_table(out / "kde.csv")
        agree = t["predicate"] == t["brute_force"]
        return diag.DiagnosticsReport(extra={
            "instances": int(len(agree)),
            "agreement": float(np.mean(agree)) if len(agree) else 1.0,
            "improving_fraction": float(np.mean(t["brute_force"])) if len(agree) else 0.0,
        }).validate()
    rep = _chain_report(cfg, out)
    if kind == "discrete-exact":
        _add_discrete_exact(cfg, rep, out)
    elif kind == "kl-flow":
        _add_kl_flow(cfg, rep)
    return rep.validate()


def _classifier(cfg, target):
    modes = cfg.diagnostics["modes"]
    if modes == "nearest-mean":
        return diag.nearest_mean_classifier(target.info["means"]), len(target.info["means"])
    if modes == "sign-of-mean":
        return diag.sign_of_mean_classifier, 2
    return None, 0


def _rate(acc, prop):
    return float(acc.sum() / prop.sum()) if prop.sum() else 0.0


def _chain_report(cfg, out) -> diag.DiagnosticsReport:
    tr = io.read_trace(out / "trace.csv")
    target = build_target(cfg)
    d = cfg.diagnostics
    steps = tr["step"]
    post = steps > float(d["burn_in"]) * cfg.steps
    if not post.any():
        post = np.ones_like(steps, dtype=bool)
    samples = tr["x"][post]
    extra = {"n_samples": int(len(samples)), "final_step": int(steps.max()) if len(steps) else 0}

    acc_t = io.read_table(out / "acceptance.csv")
    acceptance = []
    if cfg.steps > 0:
        imh_p, imh_a = acc_t["imh_proposed"], acc_t["imh_accepted"]
        loc_p, loc_a = acc_t["local_proposed"], acc_t["local_accepted"]
        bins = np.array_split(np.arange(cfg.steps), min(int(d["acceptance_bins"]), cfg.steps))
        extra["acceptance_imh"] = [_rate(imh_a[b], imh_p[b]) for b in bins]
        extra["acceptance_local"] = [_rate(loc_a[b], loc_p[b]) for b in bins]
        main = "acceptance_imh" if imh_p.sum() else "acceptance_local"
        acceptance = extra[main]
        q = max(cfg.steps // 4, 1)
        extra["imh_rate"] = _rate(imh_a, imh_p)
        extra["local_rate"] = _rate(loc_a, loc_p)
        extra["imh_rate_first_quartile"] = _rate(imh_a[:q], imh_p[:q])
        extra["imh_rate_last_quartile"] = _rate(imh_a[-q:], imh_p[-q:])

    ks, ref = [], None
    if target.reference_sampler is not None and target.support != "finite":
        ref = target.sample(int(d["n_reference"]), stream(cfg.seed, REF_KEY))
        if int(d["n_proj"]) > 0 and len(samples):
            ks = diag.random_projection_ks(samples, ref, int(d["n_proj"]), stream(cfg.seed, DIAG_KEY))
            extra["ks_median"] = float(np.median(ks))

    ess = []
    walker0 = tr["walker"] == (tr["walker"].min() if len(tr["walker"]) else 0)
    series = tr["x"][post & walker0][: int(d["ess_max_len"])]
    if len(series) >= 10:
        ess = [diag.ess(series[:, i]) for i in range(series.shape[1])]

    clf, k = _classifier(cfg, target)
    weights = None
    if clf is not None and len(samples):
        weights = diag.mode_weights(samples, clf, k).tolist()
        last = steps == steps.max()
        extra["final_mode_weights"] = diag.mode_weights(tr["x"][last], clf, k).tolist()

    log_ratio = None
    ckpts = sorted((out / "checkpoints").glob("params_*.json")) if (out / "checkpoints").exists() else []
    if ckpts and ref is not None and target.normalized:
        probes = ref[:2000]
        log_ratio = [diag.log_ratio_sup(target, flows.load_params(f), probes) for f in ckpts]
        extra["checkpoint_steps"] = [int(f.stem.split("_")[1]) for f in ckpts]
    return diag.DiagnosticsReport(acceptance=acceptance, ks=ks, ess=ess, mode_weights=weights,
                                  log_ratio_sup=log_ratio, extra=extra)


def _add_discrete_exact(cfg, rep, out) -> None:
    target = build_target(cfg)
    proposal = build_proposal(cfg, target)
    pi = target.info["probs"]
    k = imh_discrete_kernel(pi, proposal.probs)
    states = np.arange(pi.size, dtype=np.float64)[:, None]
    M, _ = doeblin_bound(target, proposal, states)
    n_max = int(cfg.params.get("n_max", 50))
    tv = diag.tv_from_stationary(k, n_max)
    bound = 2.0 * (1.0 - 1.0 / M) ** np.arange(1, n_max + 1)
    rep.tv_curve = tv.tolist()
    rep.extra.update({
        "doeblin_M": M,
        "tv_bound": bound.tolist(),
        "bound_violations": int(np.sum(tv > bound + 1e-12)),
        "mixing_time_0.01": diag.mixing_time_discrete(k, 0.01),
        "stationarity_error": float(np.max(np.abs(pi @ k.matrix - pi))),
    })
    if rep.extra.get("n_samples", 0):
        rep.extra["empirical_state_frequencies"] = _empirical_frequencies(cfg, out, pi.size)


def _empirical_frequencies(cfg, out, k):
    tr = io.read_trace(out / "trace.csv")
    post = tr["step"] > float(cfg.diagnostics["burn_in"]) * cfg.steps
    x = tr["x"][post if post.any() else slice(None)][:, 0].astype(int)
    return (np.bincount(x, minlength=k) / max(len(x), 1)).tolist()


def _add_kl_flow(cfg, rep) -> None:
    p = cfg.params
    res = studies.kl_flow_check(float(p["mu0"]), float(p["sigma0"]), t_max=float(p.get("t_max", 3.0)),
                                dt=float(p.get("euler_dt", 1e-4)))
    rep.log_ratio_sup = res.pop("log_ratio_sup")
    rep.extra.update(res)


def replay_diagnostics(artifacts_dir, n_proj=None) -> diag.DiagnosticsReport:
    """Recompute the report from stored traces; raises TraceCorruptError on damaged artifacts."""
    out = Path(artifacts_dir)
    if not out.is_dir():
        raise TraceCorruptError(f"{out} is not a directory")
    return compute_report(out, n_proj)


def trace_digests(out_dir) -> dict:
    """SHA-256 of every trace-type artifact recorded in the manifest."""
    return {name: e["sha256"] for name, e in io.verify_manifest(out_dir)["files"].items()}
