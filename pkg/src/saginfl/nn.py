"""Minimal dense-network engine with exact reverse-mode gradients.

Serves both the RL function approximators and the optional nonconvex
federated task model.  Kept numpy-only so every training run is bit
reproducible from a seed; no external autodiff state leaks between agents.
"""

from __future__ import annotations

import math

import numpy as np

_ACTIVATIONS = ("tanh", "relu", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    return np.ones_like(z)


class Tape:
    """Forward intermediates for one exact reverse pass."""

    __slots__ = ("inputs", "pre", "post", "version")

    def __init__(self, inputs, pre, post, version):
        self.inputs = inputs
        self.pre = pre
        self.post = post
        self.version = version


class DenseNet:
    """Fully connected net: affine layers with one hidden activation.

    The output layer is always linear; heads that need squashing apply it
    outside so losses can mix raw and squashed views of the same output.
    """

    def __init__(self, sizes: list[int], hidden_activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if hidden_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {hidden_activation!r}")
        self.sizes = list(sizes)
        self.hidden_activation = hidden_activation
        self.version = 0
        rng = rng or np.random.default_rng()
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray, want_tape: bool = False):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(
                f"input width {x.shape[1]} != expected {self.sizes[0]}")
        pre, post = [], []
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if i == self.n_layers - 1 else _act(self.hidden_activation, z)
            post.append(h)
        out = h[0] if squeeze else h
        if want_tape:
            return out, Tape(x, pre, post, self.version)
        return out

    def backward(self, tape: Tape, dy: np.ndarray):
        """Exact reverse pass.

        Returns ``(grads, dx)`` where grads is a list of ``(dW, db)`` pairs in
        layer order and ``dx`` the gradient at the input.
        """
        if tape.version != self.version:
            raise RuntimeError("stale tape: parameters changed since forward")
        dy = np.asarray(dy, dtype=np.float64)
        if dy.ndim == 1:
            dy = dy[None, :]
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * self.n_layers
        delta = dy
        for i in range(self.n_layers - 1, -1, -1):
            if i != self.n_layers - 1:
                delta = delta * _act_grad(self.hidden_activation,
                                          tape.pre[i], tape.post[i])
            below = tape.inputs if i == 0 else tape.post[i - 1]
            grads[i] = (below.T @ delta, delta.sum(axis=0))
            delta = delta @ self.weights[i].T
        return grads, delta

    # parameter plumbing --------------------------------------------------
    def get_params(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def set_params(self, flat: list[np.ndarray]) -> None:
        it = iter(flat)
        for i in range(self.n_layers):
            self.weights[i] = np.array(next(it), dtype=np.float64)
            self.biases[i] = np.array(next(it), dtype=np.float64)
        self.version += 1

    def copy(self) -> "DenseNet":
        clone = DenseNet.__new__(DenseNet)
        clone.sizes = list(self.sizes)
        clone.hidden_activation = self.hidden_activation
        clone.version = 0
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def apply_grads(self, updates: list[tuple[np.ndarray, np.ndarray]]) -> None:
        for i, (dw, db) in enumerate(updates):
            self.weights[i] = self.weights[i] + dw
            self.biases[i] = self.biases[i] + db
        self.version += 1


def grads_to_flat(grads) -> list[np.ndarray]:
    return [a for pair in grads for a in pair]


def clip_global_norm(flat_grads: list[np.ndarray],
                     max_norm: float) -> list[np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in flat_grads))
    if total <= max_norm or total == 0.0:
        return flat_grads
    scale = max_norm / total
    return [g * scale for g in flat_grads]


class Adam:
    """Bias-corrected adaptive-moment optimizer over a DenseNet."""

    def __init__(self, net: DenseNet, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float | None = 10.0):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.get_params()]
        self.v = [np.zeros_like(p) for p in net.get_params()]

    def step(self, grads) -> None:
        """Descend along ``grads`` (layer-ordered (dW, db) pairs)."""
        flat = grads_to_flat(grads)
        if self.grad_clip is not None:
            flat = clip_global_norm(flat, self.grad_clip)
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        params = self.net.get_params()
        new_params = []
        for i, (p, g) in enumerate(zip(params, flat)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            new_params.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        self.net.set_params(new_params)


def adam_update(params: np.ndarray, grads: np.ndarray, m: np.ndarray,
                v: np.ndarray, t: int, lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8):
    """Single flat-array Adam step; returns (params, m, v).

    ``t`` is the 1-based step index after this update.
    """
    m = beta1 * m + (1.0 - beta1) * grads
    v = beta2 * v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> None:
    """Polyak step: target <- tau * online + (1 - tau) * target."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    new = [tau * o + (1.0 - tau) * t
           for o, t in zip(online.get_params(), target.get_params())]
    target.set_params(new)
