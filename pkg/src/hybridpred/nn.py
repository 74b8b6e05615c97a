"""
Small dense networks with exact reverse-mode gradients and an Adam optimizer.

Parameters are stored in one flat float64 vector laid out as
``[W_1, ..., W_L, b_1, ..., b_L]`` where ``W_k`` has shape
``(n_{k-1}, n_k)`` in row-major order. Hidden layers use ``tanh``, the
output layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeMismatch

__all__ = ["DenseNetwork", "AdamState", "apply_update"]


class DenseNetwork:
    def __init__(self, layer_sizes, parameters=None):
        sizes = [int(n) for n in layer_sizes]
        if len(sizes) < 2 or any(n <= 0 for n in sizes):
            raise ValueError("layer_sizes needs at least two positive entries")
        self.layer_sizes = tuple(sizes)
        n_params = self.n_parameters(sizes)
        if parameters is None:
            parameters = np.zeros(n_params)
        params = np.array(parameters, dtype=float).ravel()
        if params.size != n_params:
            raise ShapeMismatch(f"expected {n_params} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        self.parameters = params

    @staticmethod
    def n_parameters(layer_sizes):
        return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))

    @classmethod
    def initialize(cls, layer_sizes, rng):
        """Uniform init in +-sqrt(6 / (n_in + n_out)), zero biases."""
        sizes = [int(n) for n in layer_sizes]
        weights = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-limit, limit, size=a * b))
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(sizes, np.concatenate(weights + biases))

    def _slices(self):
        sizes = self.layer_sizes
        w_slices, b_slices = [], []
        off = 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            w_slices.append((slice(off, off + a * b), (a, b)))
            off += a * b
        for b in sizes[1:]:
            b_slices.append(slice(off, off + b))
            off += b
        return w_slices, b_slices

    def unpack(self, params=None):
        """Views ``(weights, biases)`` into a flat parameter vector."""
        params = self.parameters if params is None else params
        w_slices, b_slices = self._slices()
        weights = [params[s].reshape(shape) for s, shape in w_slices]
        biases = [params[s] for s in b_slices]
        return weights, biases

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.layer_sizes[0]:
            raise ShapeMismatch(
                f"input has {x.shape[-1]} features, network expects {self.layer_sizes[0]}"
            )
        return x

    def forward(self, x):
        """Evaluate the network on a vector or a batch of row vectors."""
        out, _ = self.forward_with_cache(x)
        return out

    def forward_with_cache(self, x):
        x = self._check_input(x)
        weights, biases = self.unpack()
        acts = [x]
        h = x
        last = len(weights) - 1
        for k, (W, b) in enumerate(zip(weights, biases)):
            z = h @ W + b
            h = z if k == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def backward(self, cache, upstream):
        """Reverse-mode pass for ``sum(upstream * forward(x))``.

        Returns
        -------
        param_grad : ndarray, same shape as ``parameters``
            Summed over the batch.
        input_grad : ndarray, same shape as the input
        """
        weights, _ = self.unpack()
        acts = cache
        delta = np.asarray(upstream, dtype=float)
        if delta.shape != acts[-1].shape:
            raise ShapeMismatch(f"upstream shape {delta.shape} != output shape {acts[-1].shape}")
        grad = np.zeros_like(self.parameters)
        gw, gb = self.unpack(grad)
        for k in range(len(weights) - 1, -1, -1):
            if k != len(weights) - 1:
                delta = delta * (1.0 - acts[k + 1] ** 2)
            h_in = acts[k]
            if h_in.ndim == 1:
                gw[k][...] = np.outer(h_in, delta)
                gb[k][...] = delta
            else:
                gw[k][...] = h_in.T @ delta
                gb[k][...] = delta.sum(axis=0)
            delta = delta @ weights[k].T
        return grad, delta

    def gradient(self, x, upstream):
        """Gradient of ``upstream . forward(x)`` w.r.t. parameters and input."""
        _, cache = self.forward_with_cache(x)
        return self.backward(cache, upstream)

    def copy(self):
        return DenseNetwork(self.layer_sizes, self.parameters.copy())

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes), "parameters": self.parameters.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["layer_sizes"], np.asarray(data["parameters"], dtype=float))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)


def apply_update(state, parameters, gradient):
    """One bias-corrected Adam step; returns ``(new_parameters, new_state)``."""
    parameters = np.asarray(parameters, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if parameters.shape != gradient.shape:
        raise ShapeMismatch("parameters and gradient differ in shape")
    m = np.zeros_like(parameters) if state.m is None else state.m
    v = np.zeros_like(parameters) if state.v is None else state.v
    t = state.step + 1
    m = state.beta1 * m + (1.0 - state.beta1) * gradient
    v = state.beta2 * v + (1.0 - state.beta2) * gradient * gradient
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = parameters - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(state.learning_rate, state.beta1, state.beta2, state.eps, t, m, v)
    return new_params, new_state
