"""Acceptance suite: one function per criterion, shared by ``imhflow check`` and
the test suite.

Every function returns a :class:`CriterionResult` whose ``passed`` flag applies
the stated tolerance and runtime budget; ``detail`` carries the measured
numbers.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import studies
from .flows import ravel, realnvp_init, unravel_like
from .tensor_ad import init_mlp, mlp_forward, mlp_param_grad


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    seconds: float
    budget: float
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        facts = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{status}] {self.number:2d} {self.title} ({self.seconds:.1f}s / {self.budget:.0f}s): {facts}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _timed(number, title, budget, fn: Callable[[], tuple]) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    return CriterionResult(number, title, bool(ok and dt < budget), dt, budget, detail)


def _run(preset: str, out_dir, **overrides):
    from .runner import preset_config, run_experiment
    from .runner.config import deep_merge

    cfg = deep_merge(preset_config(preset), overrides)
    cfg["out"] = str(Path(out_dir) / preset)
    return run_experiment(cfg)


# ---------------------------------------------------------------- exact discrete criteria


def criterion_1(seed: int = 0) -> CriterionResult:
    def body():
        r = studies.geometric_ergodicity_check(100, 5, 50, seed)
        return r["violations"] == 0, {"instances": r["instances"], "violations": r["violations"],
                                      "max_excess": r["max_excess"]}
    return _timed(1, "uniform-ergodicity bound on random 5-state IMH kernels", 5.0, body)


def criterion_2(seed: int = 0) -> CriterionResult:
    def body():
        r = studies.adaptive_bound_check(100, 5, 50, seed)
        ok = r["bound_violations"] == 0 and r["monotone_violations"] == 0
        return ok, r
    return _timed(2, "product TV bound and monotone TV for deterministic adaptation", 5.0, body)


def criterion_3() -> CriterionResult:
    def body():
        detail, ok = {}, True
        for mu0, s0 in ((1.0, 2.0), (-2.0, 1.5), (0.0, 3.0)):
            r = studies.kl_flow_check(mu0, s0, t_max=3.0, dt=1e-4, t_limit=10.0)
            err = max(r["euler_max_error_mu"], r["euler_max_error_sigma"])
            ok &= err < 1e-3 and r["ratio_bound_non_increasing"] and r["ratio_bound_final_gap"] < 1e-3
            detail[f"euler_err({mu0:g},{s0:g})"] = err
            detail[f"gap({mu0:g},{s0:g})"] = r["ratio_bound_final_gap"]
            if (mu0, s0) == (1.0, 2.0):
                detail["limit(1,2)"] = r["ratio_bound_limit"]
                ok &= abs(r["ratio_bound_limit"] - math.exp(1.0 / 6.0)) < 1e-12
        return ok, detail
    return _timed(3, "Gaussian KL flow: Euler vs closed form, ratio bound and its limit", 1.0, body)


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _directional_check(f, theta, grad, rng, h, n_dirs):
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.standard_normal(theta.size)
        v /= np.linalg.norm(v)
        fd = (f(theta + h * v) - f(theta - h * v)) / (2.0 * h)
        worst = max(worst, _rel_err(float(grad @ v), fd))
    return worst


def _generic(params, rng, scale=0.1):
    # jitter every parameter: zero biases put relu inputs exactly on the kink
    # whenever a whole layer is inactive, where no derivative exists
    theta = ravel(params)
    return unravel_like(params, theta + scale * rng.standard_normal(theta.size))


def criterion_4(seed: int = 0, n_cases: int = 100, h: float = 1e-6, n_dirs: int = 3) -> CriterionResult:
    """Analytic gradients against central differences along random unit directions."""
    def body():
        rng = np.random.default_rng(seed)
        worst_mlp = worst_flow = 0.0
        for _ in range(n_cases):
            d_in, d_out = int(rng.integers(1, 101)), int(rng.integers(1, 101))
            widths = [d_in] + [int(rng.integers(2, 33)) for _ in range(int(rng.integers(1, 3)))] + [d_out]
            net = _generic(init_mlp(widths, rng), rng)
            x = rng.standard_normal((int(rng.integers(1, 9)), d_in))
            cot = rng.standard_normal((len(x), d_out))
            theta = ravel(net)

            def f_mlp(t, net=net, x=x, cot=cot):
                return float(np.sum(cot * mlp_forward(unravel_like(net, t), x)))

            g = ravel(mlp_param_grad(net, x, cot))
            worst_mlp = max(worst_mlp, _directional_check(f_mlp, theta, g, rng, h, n_dirs))
        for _ in range(n_cases):
            dim = int(rng.integers(2, 101))
            flow = _generic(realnvp_init(dim, 5, int(rng.integers(4, 17)), rng, zero_last=False, gain=0.3), rng)
            x = rng.standard_normal((int(rng.integers(1, 9)), dim))
            theta = ravel(flow)

            def f_flow(t, flow=flow, x=x):
                return float(np.sum(unravel_like(flow, t).log_prob(x)))

            g = ravel(flow.log_prob_param_grad(x))
            worst_flow = max(worst_flow, _directional_check(f_flow, theta, g, rng, h, n_dirs))
        return worst_mlp < 1e-4 and worst_flow < 1e-4, {"max_rel_err_mlp": worst_mlp,
                                                        "max_rel_err_flow": worst_flow}
    return _timed(4, "parameter gradients vs central differences", 30.0, body)


# ---------------------------------------------------------------- sampler criteria


def criterion_5(out_dir=None, seed: int = 0) -> CriterionResult:
    def body():
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(out_dir or tmp)
            imh = _run("bimodal-2d", base, seed=seed).report
            rwm = _run("bimodal-2d-rwm", base, seed=seed).report
            mala = _run("bimodal-2d-mala", base, seed=seed).report
        w = imh.mode_weights[0]
        w_rwm, w_mala = max(rwm.mode_weights), max(mala.mode_weights)
        ok = abs(w - 0.5) <= 0.05 and w_rwm > 0.95 and w_mala > 0.95
        return ok, {"imh_weight": w, "rwm_max_weight": w_rwm, "mala_max_weight": w_mala}
    return _timed(5, "bimodal mixture: adaptive IMH balances modes, RWM/MALA stay", 120.0, body)


def criterion_6(out_dir=None, seed: int = 0) -> CriterionResult:
    def body():
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(out_dir or tmp)
            field_run = _run("phi4-field", base, seed=seed).report
            mala = _run("phi4-mala", base, seed=seed).report
        w = field_run.mode_weights
        q1, q4 = field_run.extra["imh_rate_first_quartile"], field_run.extra["imh_rate_last_quartile"]
        # classifier index 0 is the non-negative-mean mode, where the MALA walker starts
        w_mala = mala.mode_weights[0]
        ok = abs(w[0] - 0.5) <= 0.1 and q4 > q1 and w_mala > 0.99
        return ok, {"mode_weights": w, "final_step_weights": field_run.extra["final_mode_weights"],
                    "imh_acc_q1": q1, "imh_acc_q4": q4, "mala_initial_mode_weight": w_mala}
    return _timed(6, "phi4 field: 20/80 start recovers 50/50, MALA stays", 600.0, body)


def criterion_7(out_dir=None, seed: int = 0) -> CriterionResult:
    def body():
        with tempfile.TemporaryDirectory() as tmp:
            rep = _run("stationarity-violation", Path(out_dir or tmp), seed=seed).report
        ks = dict(zip(rep.extra["checkpoints"], rep.ks))
        floor = rep.extra["noise_floor"]
        ok = ks[100] > ks[10000] and ks[10000] <= 3.0 * floor
        return ok, {"ks_100": ks[100], "ks_10000": ks[10000], "noise_floor": floor}
    return _timed(7, "stationarity violation under MLE adaptation fades", 300.0, body)


def criterion_8(seed: int = 0) -> CriterionResult:
    def body():
        r = studies.kde_equivalence_study(500, np.random.default_rng(seed))
        agree = float(np.mean(r["predicate"] == r["brute_force"]))
        return agree == 1.0, {"agreement": agree, "improving_fraction": float(np.mean(r["brute_force"]))}
    return _timed(8, "KDE improvement predicate vs brute force", 10.0, body)


def criterion_9(seed: int = 0) -> CriterionResult:
    def body():
        curve = studies.coin_flip_witness(1000, 1001, seed)["mean_distance"]
        early, late = curve[10], curve[1000]
        ratio = math.inf if late == 0 else early / late
        return ratio >= 10.0, {"mean_d_n10": early, "mean_d_n1000": late, "ratio": ratio}
    return _timed(9, "coin-flip adaptation: consecutive kernel distance shrinks", 30.0, body)


def criterion_10(seed: int = 0) -> CriterionResult:
    def body():
        r = studies.mixture_distance_identity(50, 5, (0.0, 0.3, 1.0), seed)
        worst = max(r["max_error"].values())
        return worst <= 1e-12, {"max_error": worst}
    return _timed(10, "mixture-kernel distance identity", 1.0, body)


# reduced budgets so every preset runs twice within the time limit
_REPRO_OVERRIDES = {
    "stationarity-violation": {"steps": 100, "params": {"replicas": 500, "checkpoints": [10, 100]}},
    "kde-bound-study": {"params": {"instances": 50}},
}
# presets whose walkers do not interact (no pooled adaptation)
_INDEPENDENT = {"two-state-exact": (2, 5), "gaussian-kl-flow": (2, 5), "bimodal-2d-mala": (1, 3),
                "phi4-mala": (1, 3)}


def criterion_11(out_dir=None, seed: int = 0, steps: int = 100) -> CriterionResult:
    from .runner import list_presets
    from .runner.io import read_trace
    from .runner.run import trace_digests

    def body():
        mismatched, changed = [], []
        with tempfile.TemporaryDirectory() as tmp:
            base = Path(out_dir or tmp)
            for name, _ in list_presets():
                ov = dict(_REPRO_OVERRIDES.get(name, {"steps": steps}), seed=seed)
                a = _run(name, base / "a", **ov)
                b = _run(name, base / "b", **ov)
                if trace_digests(a.out_dir) != trace_digests(b.out_dir):
                    mismatched.append(name)
            for name, (small, large) in _INDEPENDENT.items():
                ov = {"steps": steps, "seed": seed}
                ta = read_trace(_run(name, base / "w_small", walkers={"count": small}, **ov).out_dir / "trace.csv")
                tb = read_trace(_run(name, base / "w_large", walkers={"count": large}, **ov).out_dir / "trace.csv")
                shared = tb["walker"] < small
                if not (np.array_equal(ta["x"], tb["x"][shared]) and np.array_equal(ta["step"], tb["step"][shared])):
                    changed.append(name)
        n = len(list_presets())
        return not mismatched and not changed, {"presets_rerun": n, "hash_mismatches": mismatched,
                                                "walker_count_dependent": changed}
    return _timed(11, "reproducible traces and walker-count independence", 60.0, body)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def run_all(numbers=None, echo: Callable[[str], None] = print) -> list:
    results = []
    for i in numbers or sorted(CRITERIA):
        res = CRITERIA[i]()
        echo(res.line())
        results.append(res)
    return results
