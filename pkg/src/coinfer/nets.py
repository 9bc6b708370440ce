"""Dense networks with manual backprop, Adam updates, and target blending.

Everything operates on float64 numpy arrays; a forward pass takes a
``(batch, in_dim)`` matrix.  Gradients returned by :meth:`Mlp.backward` are
exact for whatever scalar objective produced the ``grad_output`` seed, so
loss-specific scaling (e.g. a 1/batch factor) belongs to the caller.
"""

from __future__ import annotations

import numpy as np


class Mlp:
    """Fully connected network with ReLU hidden layers.

    ``output`` selects the output activation: ``"linear"`` or ``"tanh"``.
    Weights and biases start uniform in ``+/- 1/sqrt(fan_in)``; the final
    layer can be narrowed via ``final_scale`` to keep initial outputs small.
    Random biases also keep pre-activations off the ReLU kink, which matters
    for finite-difference gradient validation.
    """

    def __init__(self, layer_sizes, rng: np.random.Generator, output: str = "linear",
                 final_scale: float | None = None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if output not in ("linear", "tanh"):
            raise ValueError(f"unknown output activation {output!r}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.output = output
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(layer_sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if i == last and final_scale is not None:
                bound = final_scale
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0)
            else:
                h = np.tanh(z) if self.output == "tanh" else z
        return h

    def forward_cached(self, x: np.ndarray):
        """Forward pass that also returns the caches backward() needs."""
        h = np.asarray(x, dtype=float)
        caches = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                out = np.maximum(z, 0.0)
                caches.append((h, z))
                h = out
            else:
                out = np.tanh(z) if self.output == "tanh" else z
                caches.append((h, out))
                h = out
        return h, caches

    def backward(self, caches, grad_output: np.ndarray):
        """Backpropagate a seed gradient through the cached forward pass.

        Returns ``(grads, grad_input)`` where ``grads`` aligns with
        :meth:`parameters` and ``grad_input`` is the gradient at the input.
        """
        last = len(self.weights) - 1
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        d = np.asarray(grad_output, dtype=float)
        for i in range(last, -1, -1):
            x_in, aux = caches[i]
            if i == last:
                dz = d * (1.0 - aux * aux) if self.output == "tanh" else d
            else:
                dz = d * (aux > 0)
            grads_w[i] = x_in.T @ dz
            grads_b[i] = dz.sum(axis=0)
            d = dz @ self.weights[i].T
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.append(gw)
            grads.append(gb)
        return grads, d

    def parameters(self) -> list[np.ndarray]:
        """Live parameter arrays, interleaved ``[W0, b0, W1, b1, ...]``."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def clone(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.layer_sizes = self.layer_sizes
        twin.output = self.output
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin


class Adam:
    """Standard Adam over a list of parameter arrays (updated in place)."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient lists do not match optimizer state")
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def soft_update(target: Mlp, online: Mlp, rate: float) -> None:
    """Blend online parameters into the target: ``t = rate*o + (1-rate)*t``."""
    tgt, src = target.parameters(), online.parameters()
    if len(tgt) != len(src):
        raise ValueError("networks have different parameter counts")
    for t, o in zip(tgt, src):
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {o.shape}")
        t *= 1.0 - rate
        t += rate * o
