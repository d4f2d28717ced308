"""Dense sine networks with Taylor-mode input derivatives.

Hidden layers apply ``sin(pi * beta * z)`` with one trainable ``beta`` per
hidden layer; the output layer is affine. Input derivatives (first order,
and diagonal second order) are propagated analytically alongside the
forward pass, and parameter gradients come from torch reverse mode through
that propagation, so losses built from second derivatives differentiate
correctly with respect to every weight, bias and beta.

Flat parameter order: for each layer ``W`` (fan_in x fan_out, row major)
then ``b``; finally the hidden-layer betas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

DTYPE = torch.float64


class ShapeError(ValueError):
    pass


class ParamLayout:
    """Named slices of a flat parameter vector."""

    def __init__(self, entries: Sequence[tuple[str, tuple[int, ...]]]):
        self.entries = list(entries)
        self.offsets = {}
        pos = 0
        for name, shape in self.entries:
            n = int(np.prod(shape)) if shape else 1
            self.offsets[name] = (pos, pos + n, shape)
            pos += n
        self.size = pos

    def views(self, flat):
        return {name: flat[a:b].reshape(shape) for name, (a, b, shape) in self.offsets.items()}


def mlp_layout(layer_sizes: Sequence[int], prefix: str = "") -> ParamLayout:
    entries = []
    for l, (a, b) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        entries.append((f"{prefix}W{l}", (a, b)))
        entries.append((f"{prefix}b{l}", (b,)))
    entries.append((f"{prefix}beta", (len(layer_sizes) - 2,)))
    return ParamLayout(entries)


class TorchMlp:
    """Functional view of a sine MLP over torch tensors (usually flat-param views)."""

    def __init__(self, layer_sizes: Sequence[int], tensors: dict, prefix: str = ""):
        self.layer_sizes = tuple(layer_sizes)
        n = len(self.layer_sizes) - 1
        self.W = [tensors[f"{prefix}W{l}"] for l in range(n)]
        self.b = [tensors[f"{prefix}b{l}"] for l in range(n)]
        self.beta = tensors[f"{prefix}beta"]

    def __call__(self, X: torch.Tensor) -> torch.Tensor:
        h = X
        for l in range(len(self.W) - 1):
            h = torch.sin(math.pi * self.beta[l] * (h @ self.W[l] + self.b[l]))
        return h @ self.W[-1] + self.b[-1]

    def taylor(self, X: torch.Tensor, first: Sequence[int] = (), second: Sequence[int] = ()):
        """Value plus derivatives along the input axes ``first`` (first order)
        and ``second`` (diagonal second order).

        Returns (value (N, out), d1 (len(first), N, out), d2 (len(second), N, out)).
        """
        first = list(first)
        second = list(second)
        dims = first + [d for d in second if d not in first]
        pos2 = [dims.index(d) for d in second]
        if not dims:
            return self(X), None, None
        W0, b0 = self.W[0], self.b[0]
        z = X @ W0 + b0
        dz = W0[dims][:, None, :]  # constant along each input axis
        h, dh, d2h = z, dz, None
        for l in range(len(self.W)):
            if l > 0:
                z = h @ self.W[l] + self.b[l]
                dz = dh @ self.W[l]
                d2z = d2h @ self.W[l] if d2h is not None else None
            else:
                d2z = None
            if l == len(self.W) - 1:
                h, dh, d2h = z, dz, d2z
                break
            s = math.pi * self.beta[l]
            sn, cs = torch.sin(s * z), torch.cos(s * z)
            dzs = dz[pos2] if pos2 else None
            if pos2:
                curv = -(s * s) * sn * dzs * dzs
                d2h = curv if d2z is None else s * cs * d2z + curv
            h = sn
            dh = s * cs * dz
        d1 = dh[: len(first)] if first else None
        if d1 is not None and d1.shape[1] != X.shape[0]:
            d1 = d1.expand(-1, X.shape[0], -1)
        d2 = None
        if second:
            # a purely affine network has zero curvature
            d2 = d2h if d2h is not None else torch.zeros((len(second),) + tuple(h.shape), dtype=h.dtype)
        return h, d1, d2


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    betas: np.ndarray

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ShapeError("need at least input and output sizes")
        for l, (a, b) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            if np.shape(self.weights[l]) != (a, b) or np.shape(self.biases[l]) != (b,):
                raise ShapeError(f"layer {l} parameter shapes do not match {a}->{b}")
        if np.shape(self.betas) != (len(self.layer_sizes) - 2,):
            raise ShapeError("one beta per hidden layer required")

    @classmethod
    def init(cls, layer_sizes: Sequence[int], seed: int | np.random.Generator = 0,
             output_scale: float = 1.0) -> "MlpModel":
        """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases, betas 1.

        ``output_scale`` multiplies the output-layer weights.
        """
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        sizes = tuple(int(s) for s in layer_sizes)
        weights, biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-bound, bound, size=(a, b)))
            biases.append(np.zeros(b))
        weights[-1] = weights[-1] * output_scale
        return cls(sizes, weights, biases, np.ones(len(sizes) - 2))

    @property
    def layout(self) -> ParamLayout:
        return mlp_layout(self.layer_sizes)

    @property
    def n_params(self) -> int:
        return self.layout.size

    def pack(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [np.asarray(W, float).ravel(), np.asarray(b, float).ravel()]
        parts.append(np.asarray(self.betas, float).ravel())
        return np.concatenate(parts)

    @classmethod
    def unpack(cls, layer_sizes: Sequence[int], flat: np.ndarray) -> "MlpModel":
        layout = mlp_layout(layer_sizes)
        flat = np.asarray(flat, dtype=float)
        if flat.size != layout.size:
            raise ShapeError(f"expected {layout.size} parameters, got {flat.size}")
        v = layout.views(flat.copy())
        n = len(layer_sizes) - 1
        return cls(tuple(layer_sizes), [v[f"W{l}"] for l in range(n)], [v[f"b{l}"] for l in range(n)], v["beta"])

    def torch_view(self) -> TorchMlp:
        flat = torch.tensor(self.pack(), dtype=DTYPE)
        return TorchMlp(self.layer_sizes, self.layout.views(flat))

    def architecture(self) -> dict:
        return {"kind": "sine-mlp", "layer_sizes": list(self.layer_sizes), "beta": "per-hidden-layer"}

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.layer_sizes[0]:
            raise ShapeError(f"input must have {self.layer_sizes[0]} columns, got shape {X.shape}")
        return X2, single

    def forward(self, X) -> np.ndarray:
        X2, single = self._check_input(X)
        with torch.no_grad():
            out = self.torch_view()(torch.tensor(X2, dtype=DTYPE)).numpy()
        return out[0] if single else out

    def input_derivatives(self, X):
        """(value, gradient, diagonal Hessian) w.r.t. the inputs.

        Shapes for N points, d inputs, o outputs: (N, o), (N, d, o), (N, d, o);
        a 1-D input drops the leading N axis.
        """
        X2, single = self._check_input(X)
        d = self.layer_sizes[0]
        with torch.no_grad():
            v, d1, d2 = self.torch_view().taylor(torch.tensor(X2, dtype=DTYPE), range(d), range(d))
        v = v.numpy()
        g = d1.permute(1, 0, 2).numpy()
        h = d2.permute(1, 0, 2).numpy()
        if single:
            return v[0], g[0], h[0]
        return v, g, h


def forward(model: MlpModel, X) -> np.ndarray:
    return model.forward(X)


def input_derivatives(model: MlpModel, X):
    return model.input_derivatives(X)


def flat_objective(layout: ParamLayout, loss_fn: Callable[[dict], torch.Tensor]):
    """Wrap ``loss_fn(tensor views) -> scalar`` as ``flat ndarray -> (loss, grad)``."""

    def objective(flat: np.ndarray):
        p = torch.tensor(np.asarray(flat, dtype=float), dtype=DTYPE, requires_grad=True)
        loss = loss_fn(layout.views(p))
        (grad,) = torch.autograd.grad(loss, p, allow_unused=True)
        g = np.zeros(layout.size) if grad is None else grad.numpy().copy()
        return float(loss.detach()), g

    return objective


def param_gradient(loss_fn: Callable[[TorchMlp], torch.Tensor], model: MlpModel) -> np.ndarray:
    """Gradient of a scalar loss of the network with respect to the flat parameters."""
    obj = flat_objective(model.layout, lambda v: loss_fn(TorchMlp(model.layer_sizes, v)))
    return obj(model.pack())[1]
