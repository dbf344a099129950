"""Proposal families: affine flows, RealNVP stacks and fixed-component mixtures.

Parameter containers are immutable. Adaptation builds new containers through
:func:`ravel` / :func:`unravel_like`, so a snapshot handed to walkers never
changes underneath them.

Every proposal exposes the same small surface used by the kernels:

``dim``, ``noise_dim``
    dimension of a point and number of standard normals per draw;
``log_prob(x)``
    normalized log-density, batched over rows;
``from_noise(z, u)``
    deterministic draw from pre-generated noise ``z`` (``(n, noise_dim)``)
    and uniforms ``u`` (``(n,)``), returning ``(x, log_prob(x))``;
``sample(n, rng)``
    convenience wrapper drawing the noise from ``rng``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import NonFiniteError, ShapeError
from .tensor_ad import DenseParams, GradTape, init_mlp, mlp_forward

LOG_2PI = np.log(2.0 * np.pi)
CHECKPOINT_VERSION = 1


def std_normal_logpdf(z: np.ndarray) -> np.ndarray:
    return -0.5 * np.sum(z * z, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


def _rows(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise ShapeError(f"expected dimension {dim}, got shape {x.shape}")
    return x2, single


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


class _ProposalMixin:
    def sample(self, n=None, rng=None):
        if rng is None:
            raise ValueError("an explicit numpy Generator is required")
        k = 1 if n is None else n
        z = rng.standard_normal((k, self.noise_dim))
        u = rng.random(k)
        x, _ = self.from_noise(z, u)
        return x[0] if n is None else x


# ---------------------------------------------------------------- affine


@dataclass(frozen=True, eq=False)
class AffineParams(_ProposalMixin):
    """x = shift + exp(log_scale) * z with z ~ N(0, I)."""

    shift: np.ndarray
    log_scale: np.ndarray

    def __post_init__(self):
        if self.shift.shape != self.log_scale.shape or self.shift.ndim != 1:
            raise ShapeError("shift and log_scale must be vectors of equal length")

    @classmethod
    def identity(cls, dim: int) -> "AffineParams":
        return cls(np.zeros(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.shift.size

    noise_dim = dim

    def arrays(self) -> list:
        return [self.shift, self.log_scale]

    def replace_arrays(self, arrays) -> "AffineParams":
        return AffineParams(*[np.asarray(a, dtype=np.float64) for a in arrays])

    def forward(self, z):
        z2, single = _rows(z, self.dim)
        x = self.shift + np.exp(self.log_scale) * z2
        logdet = np.full(z2.shape[0], np.sum(self.log_scale))
        _check_finite(x, "affine forward")
        return (x[0], logdet[0]) if single else (x, logdet)

    def inverse(self, x):
        x2, single = _rows(x, self.dim)
        z = (x2 - self.shift) * np.exp(-self.log_scale)
        logdet = np.full(x2.shape[0], -np.sum(self.log_scale))
        _check_finite(z, "affine inverse")
        return (z[0], logdet[0]) if single else (z, logdet)

    def log_prob(self, x):
        z, logdet = self.inverse(x)
        return std_normal_logpdf(z) + logdet

    def from_noise(self, z, u=None):
        x, logdet = self.forward(z)
        return x, std_normal_logpdf(np.atleast_2d(z)) - np.atleast_1d(logdet)

    def log_prob_param_grad(self, x) -> "AffineParams":
        x2, _ = _rows(x, self.dim)
        z = (x2 - self.shift) * np.exp(-self.log_scale)
        g = AffineParams(
            np.sum(z * np.exp(-self.log_scale), axis=0),
            np.sum(z * z - 1.0, axis=0),
        )
        _check_finite(g.shift, "affine gradient")
        return g

    def sample_path_grad(self, z, target, loss_cotangent=1.0) -> "AffineParams":
        if target.grad_log_density is None:
            raise ValueError(f"target {target.name!r} has no gradient")
        z2, _ = _rows(z, self.dim)
        scale = np.exp(self.log_scale)
        x = self.shift + scale * z2
        gx = target.grad_log_density(x)
        c = loss_cotangent
        return AffineParams(
            -c * np.sum(gx, axis=0),
            c * np.sum(-1.0 - gx * scale * z2, axis=0),
        )


# ---------------------------------------------------------------- RealNVP


@dataclass(frozen=True, eq=False)
class CouplingLayer:
    """Affine coupling: coordinates where ``mask`` is True pass through and
    condition the scale/translation of the rest."""

    mask: np.ndarray
    scale: DenseParams
    translate: DenseParams

    def __post_init__(self):
        n_cond = int(self.mask.sum())
        n_upd = self.mask.size - n_cond
        for net, name in ((self.scale, "scale"), (self.translate, "translate")):
            if net.widths[0] != n_cond or net.widths[-1] != n_upd:
                raise ShapeError(
                    f"{name} network widths {net.widths} do not map {n_cond} -> {n_upd}"
                )

    @property
    def cond(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def upd(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)


def half_masks(dim: int) -> tuple:
    """Contiguous half-split masks: first half conditions, then second half."""
    if dim < 2:
        raise ShapeError("coupling layers need dimension >= 2")
    first = np.zeros(dim, dtype=bool)
    first[: dim // 2] = True
    return first, ~first


@dataclass(frozen=True, eq=False)
class RealNVPParams(_ProposalMixin):
    """Stack of coupling layers applied in order to a standard-normal base draw."""

    layers: tuple

    def __post_init__(self):
        dims = {layer.mask.size for layer in self.layers}
        if len(dims) != 1:
            raise ShapeError("all coupling layers must share one dimension")
        covered = np.zeros(self.dim, dtype=bool)
        for layer in self.layers:
            covered |= ~layer.mask
        if not covered.all():
            raise ShapeError("some coordinates are never updated by any layer")

    @property
    def dim(self) -> int:
        return self.layers[0].mask.size

    noise_dim = dim

    def arrays(self) -> list:
        out = []
        for layer in self.layers:
            out += layer.scale.arrays() + layer.translate.arrays()
        return out

    def replace_arrays(self, arrays) -> "RealNVPParams":
        arrays = list(arrays)
        layers, pos = [], 0
        for layer in self.layers:
            ns, nt = len(layer.scale.arrays()), len(layer.translate.arrays())
            s = layer.scale.replace_arrays(arrays[pos:pos + ns])
            t = layer.translate.replace_arrays(arrays[pos + ns:pos + ns + nt])
            pos += ns + nt
            layers.append(CouplingLayer(layer.mask, s, t))
        return RealNVPParams(tuple(layers))

    def forward(self, z):
        z2, single = _rows(z, self.dim)
        x = z2.copy()
        logdet = np.zeros(z2.shape[0])
        for i, layer in enumerate(self.layers):
            a, b = layer.cond, layer.upd
            s = mlp_forward(layer.scale, x[:, a])
            t = mlp_forward(layer.translate, x[:, a])
            x[:, b] = x[:, b] * np.exp(s) + t
            logdet += s.sum(axis=1)
            if not np.all(np.isfinite(x)):
                raise NonFiniteError(f"non-finite output of coupling layer {i} (forward)")
        return (x[0], logdet[0]) if single else (x, logdet)

    def inverse(self, x, strict: bool = True):
        """Inverse map and its log-determinant.

        With ``strict=False`` rows that overflow are left non-finite instead
        of raising; :meth:`log_prob` maps them to zero density.
        """
        x2, single = _rows(x, self.dim)
        y = x2.copy()
        logdet = np.zeros(x2.shape[0])
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(len(self.layers) - 1, -1, -1):
                layer = self.layers[i]
                a, b = layer.cond, layer.upd
                s = mlp_forward(layer.scale, y[:, a])
                t = mlp_forward(layer.translate, y[:, a])
                y[:, b] = (y[:, b] - t) * np.exp(-s)
                logdet -= s.sum(axis=1)
                if strict and not np.all(np.isfinite(y)):
                    raise NonFiniteError(f"non-finite output of coupling layer {i} (inverse)")
        return (y[0], logdet[0]) if single else (y, logdet)

    def log_prob(self, x):
        # overflow in the inverse pass only happens where the density underflows
        z, logdet = self.inverse(x, strict=False)
        with np.errstate(over="ignore", invalid="ignore"):
            out = std_normal_logpdf(np.atleast_2d(z)) + np.atleast_1d(logdet)
        out = np.where(np.isfinite(out), out, -np.inf)
        return out[0] if np.ndim(x) == 1 else out

    def from_noise(self, z, u=None):
        x, logdet = self.forward(z)
        return x, std_normal_logpdf(np.atleast_2d(z)) - np.atleast_1d(logdet)

    def log_prob_param_grad(self, x, exact_rows: bool = False) -> "RealNVPParams":
        """Gradient of sum_rows log_prob(x) by reverse mode through the inverse pass."""
        y, _ = _rows(x, self.dim)
        saved = []
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            a, b = layer.cond, layer.upd
            ts = GradTape(layer.scale, y[:, a], exact_rows)
            tt = GradTape(layer.translate, y[:, a], exact_rows)
            s, t = ts.output, tt.output
            u = y.copy()
            u[:, b] = (y[:, b] - t) * np.exp(-s)
            saved.append((i, ts, tt, s, u[:, b]))
            y = u
        _check_finite(y, "RealNVP inverse pass")
        g = -y
        grads = [None] * len(self.layers)
        for i, ts, tt, s, ub in reversed(saved):
            layer = self.layers[i]
            a, b = layer.cond, layer.upd
            gb = g[:, b]
            inv_scale = np.exp(-s)
            gs, in_s = ts.backward(-gb * ub - 1.0)
            gt, in_t = tt.backward(-gb * inv_scale)
            prev = np.empty_like(g)
            prev[:, a] = g[:, a] + in_s + in_t
            prev[:, b] = gb * inv_scale
            g = prev
            grads[i] = CouplingLayer(layer.mask, gs, gt)
        return RealNVPParams(tuple(grads))

    def sample_path_grad(self, z, target, loss_cotangent=1.0, exact_rows: bool = False) -> "RealNVPParams":
        """Gradient of sum_rows c * [log q(x(z)) - log pi(x(z))] through x = forward(z)."""
        if target.grad_log_density is None:
            raise ValueError(f"target {target.name!r} has no gradient")
        x, _ = _rows(z, self.dim)
        x = x.copy()
        saved = []
        for layer in self.layers:
            a, b = layer.cond, layer.upd
            ts = GradTape(layer.scale, x[:, a], exact_rows)
            tt = GradTape(layer.translate, x[:, a], exact_rows)
            s, t = ts.output, tt.output
            xb = x[:, b].copy()
            x[:, b] = xb * np.exp(s) + t
            saved.append((ts, tt, s, xb))
        _check_finite(x, "RealNVP forward pass")
        c = loss_cotangent
        g = -c * target.grad_log_density(x)
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            a, b = layer.cond, layer.upd
            ts, tt, s, xb = saved[i]
            gb = g[:, b]
            scale = np.exp(s)
            gs, in_s = ts.backward(gb * xb * scale - c)
            gt, in_t = tt.backward(gb)
            prev = np.empty_like(g)
            prev[:, a] = g[:, a] + in_s + in_t
            prev[:, b] = gb * scale
            g = prev
            grads[i] = CouplingLayer(layer.mask, gs, gt)
        return RealNVPParams(tuple(grads))


def realnvp_init(
    dim: int,
    n_pairs: int,
    hidden: int,
    rng: np.random.Generator,
    n_hidden_layers: int = 2,
    activation: str = "relu",
    zero_last: bool = True,
    gain: float = 1.0,
) -> RealNVPParams:
    """RealNVP stack of ``2 * n_pairs`` coupling layers with alternating half masks.

    With ``zero_last`` every output layer starts at zero so the flow is the identity.
    """
    masks = half_masks(dim)
    layers = []
    for k in range(2 * n_pairs):
        mask = masks[k % 2]
        n_cond, n_upd = int(mask.sum()), int((~mask).sum())
        widths = [n_cond] + [hidden] * n_hidden_layers + [n_upd]
        s = init_mlp(widths, rng, activation, zero_last, gain)
        t = init_mlp(widths, rng, activation, zero_last, gain)
        layers.append(CouplingLayer(mask, s, t))
    return RealNVPParams(tuple(layers))


# ---------------------------------------------------------------- fixed components


@dataclass(frozen=True, eq=False)
class DiagonalGaussian(_ProposalMixin):
    """Fixed Gaussian with diagonal covariance; used as the full-support mixture component."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.size

    noise_dim = dim

    def log_prob(self, x):
        x2, single = _rows(x, self.dim)
        z = (x2 - self.mean) / self.std
        out = std_normal_logpdf(z) - np.sum(np.log(self.std))
        return out[0] if single else out

    def from_noise(self, z, u=None):
        z2 = np.atleast_2d(z)
        return self.mean + self.std * z2, std_normal_logpdf(z2) - np.sum(np.log(self.std))


@dataclass(frozen=True, eq=False)
class DiscreteProposal(_ProposalMixin):
    """Proposal on finite states {0, ..., k-1}; points are length-1 arrays."""

    probs: np.ndarray
    dim = 1
    noise_dim = 0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-12):
            raise ValueError("probs must be a probability vector")

    def log_prob(self, x):
        x2, single = _rows(x, 1)
        with np.errstate(divide="ignore"):
            out = np.log(self.probs[x2[:, 0].astype(np.intp)])
        return out[0] if single else out

    def from_noise(self, z, u):
        u = np.atleast_1d(u)
        cdf = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), self.probs.size - 1)
        x = idx.astype(np.float64)[:, None]
        return x, np.log(self.probs[idx])


# ---------------------------------------------------------------- mixtures


@dataclass(frozen=True, eq=False)
class MixtureProposal(_ProposalMixin):
    """weight * fixed(x) + (1 - weight) * adaptive(x); only ``adaptive`` is ever trained."""

    weight: float
    fixed: object
    adaptive: object

    def __post_init__(self):
        if not 0.0 < self.weight < 1.0:
            raise ValueError(f"mixture weight must lie in (0, 1), got {self.weight}")
        if self.fixed.dim != self.adaptive.dim:
            raise ShapeError("mixture components have different dimensions")

    @property
    def dim(self) -> int:
        return self.adaptive.dim

    @property
    def noise_dim(self) -> int:
        return max(self.fixed.noise_dim, self.adaptive.noise_dim)

    def log_prob(self, x):
        return np.logaddexp(
            np.log(self.weight) + self.fixed.log_prob(x),
            np.log1p(-self.weight) + self.adaptive.log_prob(x),
        )

    def from_noise(self, z, u):
        z2 = np.atleast_2d(z)
        u = np.atleast_1d(u)
        use_fixed = u < self.weight
        x = np.empty((z2.shape[0], self.dim))
        lf = np.empty(z2.shape[0])
        la = np.empty(z2.shape[0])
        if use_fixed.any():
            xf, lf_own = self.fixed.from_noise(z2[use_fixed, : self.fixed.noise_dim], u[use_fixed])
            x[use_fixed], lf[use_fixed] = xf, lf_own
            la[use_fixed] = self.adaptive.log_prob(xf)
        if (~use_fixed).any():
            xa, la_own = self.adaptive.from_noise(z2[~use_fixed, : self.adaptive.noise_dim], u[~use_fixed])
            x[~use_fixed], la[~use_fixed] = xa, la_own
            lf[~use_fixed] = self.fixed.log_prob(xa)
        logq = np.logaddexp(np.log(self.weight) + lf, np.log1p(-self.weight) + la)
        return x, logq

    def with_adaptive(self, adaptive) -> "MixtureProposal":
        return MixtureProposal(self.weight, self.fixed, adaptive)


# ---------------------------------------------------------------- parameter vectors


def ravel(params) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.arrays()])


def unravel_like(params, vector: np.ndarray):
    vector = np.asarray(vector, dtype=np.float64)
    arrays, pos = [], 0
    for a in params.arrays():
        arrays.append(vector[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    if pos != vector.size:
        raise ShapeError(f"vector of length {vector.size} does not match {pos} parameters")
    return params.replace_arrays(arrays)


def add_scaled(params, direction, step: float):
    """params + step * direction for two containers of identical structure."""
    return params.replace_arrays(
        [p + step * d for p, d in zip(params.arrays(), direction.arrays())]
    )


def n_params(params) -> int:
    return sum(a.size for a in params.arrays())


# ---------------------------------------------------------------- functional API


def flow_forward(params, z):
    return params.forward(z)


def flow_inverse(params, x):
    return params.inverse(x)


def flow_log_prob(params, x):
    return params.log_prob(x)


def flow_sample(params, rng, n=None):
    return params.sample(n, rng)


def flow_log_prob_param_grad(params, x):
    return params.log_prob_param_grad(x)


def flow_sample_path_grad(params, z, target, loss_cotangent=1.0):
    return params.sample_path_grad(z, target, loss_cotangent)


def mixture_log_prob(mix: MixtureProposal, x):
    return mix.log_prob(x)


def mixture_sample(mix: MixtureProposal, rng, n=None):
    return mix.sample(n, rng)


# ---------------------------------------------------------------- checkpoints


def _dense_spec(net: DenseParams) -> dict:
    return {"widths": list(net.widths), "activation": net.activation}


def params_to_dict(params) -> dict:
    """Structure description plus a flat parameter list, tagged with a format version."""
    if isinstance(params, MixtureProposal):
        return {
            "version": CHECKPOINT_VERSION,
            "family": "mixture",
            "weight": params.weight,
            "fixed": {"mean": params.fixed.mean.tolist(), "std": params.fixed.std.tolist()},
            "adaptive": params_to_dict(params.adaptive),
        }
    if isinstance(params, AffineParams):
        spec = {"family": "affine", "dim": params.dim}
    elif isinstance(params, RealNVPParams):
        spec = {
            "family": "realnvp",
            "layers": [
                {"mask": layer.mask.astype(int).tolist(),
                 "scale": _dense_spec(layer.scale),
                 "translate": _dense_spec(layer.translate)}
                for layer in params.layers
            ],
        }
    else:
        raise TypeError(f"cannot serialise {type(params).__name__}")
    spec["version"] = CHECKPOINT_VERSION
    spec["values"] = ravel(params).tolist()
    return spec


def _zeros_dense(spec: dict) -> DenseParams:
    w = spec["widths"]
    return DenseParams(
        tuple(np.zeros((i, o)) for i, o in zip(w[:-1], w[1:])),
        tuple(np.zeros(o) for o in w[1:]),
        spec["activation"],
    )


def params_from_dict(d: dict):
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    family = d["family"]
    if family == "mixture":
        fixed = DiagonalGaussian(np.array(d["fixed"]["mean"]), np.array(d["fixed"]["std"]))
        return MixtureProposal(d["weight"], fixed, params_from_dict(d["adaptive"]))
    if family == "affine":
        template = AffineParams.identity(d["dim"])
    elif family == "realnvp":
        template = RealNVPParams(tuple(
            CouplingLayer(np.array(spec["mask"], dtype=bool),
                          _zeros_dense(spec["scale"]), _zeros_dense(spec["translate"]))
            for spec in d["layers"]
        ))
    else:
        raise ValueError(f"unknown flow family {family!r}")
    return unravel_like(template, np.array(d["values"], dtype=np.float64))


def save_params(params, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh)


def load_params(path):
    with open(path) as fh:
        return params_from_dict(json.load(fh))


def trainable(proposal):
    """The component that adaptation updates (the flow inside a mixture)."""
    return proposal.adaptive if isinstance(proposal, MixtureProposal) else proposal


def with_trainable(proposal, params):
    if isinstance(proposal, MixtureProposal):
        return proposal.with_adaptive(params)
    return params


def sequence_of(params_list: Sequence) -> np.ndarray:
    return np.stack([ravel(p) for p in params_list])
