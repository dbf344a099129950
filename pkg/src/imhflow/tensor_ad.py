"""Dense multilayer perceptrons with hand-written reverse-mode gradients.

Only what the coupling layers need: affine layers, relu or identity hidden
activations, a linear output layer, and vector-Jacobian products with respect
to both the parameters and the input. Everything is float64.

Inputs are either a single vector of shape ``(d,)`` or an explicit batch of
shape ``(n, d)``; nothing is broadcast implicitly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import NonFiniteError, ShapeError

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True, eq=False)
class DenseParams:
    """Weights ``W_l`` of shape ``(d_l, d_{l+1})`` and biases ``b_l``.

    The activation applies to every hidden layer; the output layer is linear.
    """

    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i}: input width {w.shape[0]} != previous output "
                    f"width {self.weights[i - 1].shape[1]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"layer {i}: non-finite parameters")

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def replace_arrays(self, arrays: Sequence[np.ndarray]) -> "DenseParams":
        arrays = list(arrays)
        return DenseParams(tuple(arrays[0::2]), tuple(arrays[1::2]), self.activation)


def init_mlp(
    widths: Sequence[int],
    rng: np.random.Generator,
    activation: str = "relu",
    zero_last: bool = False,
    gain: float = 1.0,
) -> DenseParams:
    """He-style initialisation; ``zero_last`` zeroes the output layer."""
    weights, biases = [], []
    n_layers = len(widths) - 1
    for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
        if zero_last and i == n_layers - 1:
            w = np.zeros((d_in, d_out))
        else:
            w = gain * rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in)
        weights.append(w)
        biases.append(np.zeros(d_out))
    return DenseParams(tuple(weights), tuple(biases), activation)


def _as_batch(params: DenseParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.ndim not in (1, 2):
        raise ShapeError(f"input must be 1-D or 2-D, got shape {x.shape}")
    x2 = x[None, :] if single else x
    if x2.shape[1] != params.widths[0]:
        raise ShapeError(f"layer 0: input width {x2.shape[1]} != expected {params.widths[0]}")
    return x2, single


def _matmul(a: np.ndarray, w: np.ndarray, exact_rows: bool) -> np.ndarray:
    # einsum keeps each output row independent of how many rows are batched
    # together; BLAS does not, but is several times faster.
    if exact_rows:
        return np.einsum("ij,jk->ik", a, w)
    return a @ w


class GradTape:
    """Records one batched forward pass so it can be differentiated.

    ``inputs[l]`` is the input to layer ``l`` and ``pre[l]`` its
    pre-activation; ``output`` is the network output.
    """

    def __init__(self, params: DenseParams, x: np.ndarray, exact_rows: bool = True):
        x2, self.single = _as_batch(params, x)
        self.params = params
        self.exact_rows = exact_rows
        self.inputs: list = []
        self.pre: list = []
        h = x2
        last = len(params.weights) - 1
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            self.inputs.append(h)
            a = _matmul(h, w, exact_rows) + b
            self.pre.append(a)
            h = a if i == last or params.activation == "identity" else np.maximum(a, 0.0)
        self.output = h

    def replay(self) -> np.ndarray:
        x = self.inputs[0][0] if self.single else self.inputs[0]
        return GradTape(self.params, x, self.exact_rows).result()

    def result(self) -> np.ndarray:
        return self.output[0] if self.single else self.output

    def backward(self, cotangent: np.ndarray) -> tuple[DenseParams, np.ndarray]:
        """Return (parameter gradient, input gradient) of ``sum(cotangent * output)``.

        Parameter gradients are summed over the batch.
        """
        g = np.asarray(cotangent, dtype=np.float64)
        if self.single:
            g = g[None, :] if g.ndim == 1 else g
        if g.shape != self.output.shape:
            raise ShapeError(f"cotangent shape {g.shape} != output shape {self.output.shape}")
        params = self.params
        n = len(params.weights)
        dws, dbs = [None] * n, [None] * n
        for i in range(n - 1, -1, -1):
            dws[i] = self.inputs[i].T @ g
            dbs[i] = g.sum(axis=0)
            g = g @ params.weights[i].T
            if i > 0 and params.activation == "relu":
                # subgradient of relu at 0 taken as 0
                g = g * (self.pre[i - 1] > 0.0)
        grads = DenseParams(tuple(dws), tuple(dbs), params.activation)
        return grads, (g[0] if self.single else g)


def mlp_forward(params: DenseParams, x: np.ndarray, exact_rows: bool = True) -> np.ndarray:
    return GradTape(params, x, exact_rows).result()


def mlp_vjp(params: DenseParams, x: np.ndarray, cotangent: np.ndarray) -> tuple[DenseParams, np.ndarray]:
    return GradTape(params, x).backward(cotangent)


def mlp_param_grad(params: DenseParams, x: np.ndarray, cotangent: np.ndarray) -> DenseParams:
    """Gradient of ``cotangent . mlp_forward(params, x)`` with respect to the parameters."""
    return mlp_vjp(params, x, cotangent)[0]
