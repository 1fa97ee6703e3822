"""One-hidden-layer rectifier network used as the Q-function approximator."""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import NumericalDivergence, ShapeMismatch


class Network:
    """Fully connected ``input -> relu(hidden) -> linear(output)`` network.

    Weights are stored row-major as ``W1[hidden, input]`` and
    ``W2[output, hidden]``.
    """

    def __init__(self, input_dim: int, output_dim: int, hidden_dim: int = 128,
                 seed: int = 0, zero: bool = False):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.output_dim = int(output_dim)
        if zero:
            self.W1 = np.zeros((hidden_dim, input_dim))
            self.b1 = np.zeros(hidden_dim)
            self.W2 = np.zeros((output_dim, hidden_dim))
            self.b2 = np.zeros(output_dim)
            return
        rng = np.random.default_rng(seed)
        lim1 = 1.0 / np.sqrt(max(input_dim, 1))
        lim2 = 1.0 / np.sqrt(hidden_dim)
        self.W1 = rng.uniform(-lim1, lim1, (hidden_dim, input_dim))
        self.b1 = rng.uniform(-lim1, lim1, hidden_dim)
        self.W2 = rng.uniform(-lim2, lim2, (output_dim, hidden_dim))
        self.b2 = rng.uniform(-lim2, lim2, output_dim)

    @property
    def params(self):
        return (self.W1, self.b1, self.W2, self.b2)

    def forward(self, x) -> np.ndarray:
        """Q-values for one observation (1-D) or a batch (2-D)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.ascontiguousarray(x.reshape(1, -1) if single else x)
        if X.shape[1] != self.input_dim:
            raise ShapeMismatch(f"expected input of length {self.input_dim}, got {X.shape[1]}")
        out = kernels.mlp_forward(self.W1, self.b1, self.W2, self.b2, X)
        return out[0] if single else out

    __call__ = forward

    def grad_step(self, observations, actions, targets, lr: float) -> float:
        """One SGD step on mean (target - q[action])^2; returns pre-step loss."""
        X = np.ascontiguousarray(np.asarray(observations, dtype=float).reshape(-1, self.input_dim))
        a = np.ascontiguousarray(actions, dtype=np.int64)
        t = np.ascontiguousarray(targets, dtype=float)
        if not (len(X) == len(a) == len(t)) or len(X) == 0:
            raise ShapeMismatch("batch arrays must share a non-zero length")
        if not np.all(np.isfinite(t)):
            raise NumericalDivergence("non-finite training target")
        if a.min() < 0 or a.max() >= self.output_dim:
            raise ShapeMismatch("action index out of range")
        loss = kernels.mlp_grad_step(self.W1, self.b1, self.W2, self.b2, X, a, t, float(lr))
        if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in self.params):
            raise NumericalDivergence(f"training diverged (loss={loss})")
        return float(loss)

    def loss(self, observations, actions, targets) -> float:
        q = self.forward(np.asarray(observations, dtype=float).reshape(-1, self.input_dim))
        err = q[np.arange(len(q)), np.asarray(actions)] - np.asarray(targets, dtype=float)
        return float(np.mean(err * err))

    def clone(self) -> "Network":
        twin = Network.__new__(Network)
        twin.input_dim, twin.hidden_dim, twin.output_dim = self.input_dim, self.hidden_dim, self.output_dim
        twin.W1, twin.b1, twin.W2, twin.b2 = (p.copy() for p in self.params)
        return twin

    def copy_from(self, other: "Network") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def load_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        expected = sum(p.size for p in self.params)
        if vec.size != expected:
            raise ShapeMismatch(f"expected {expected} parameters, got {vec.size}")
        at = 0
        for p in self.params:
            p[...] = vec[at:at + p.size].reshape(p.shape)
            at += p.size


def forward(net: Network, observation) -> np.ndarray:
    return net.forward(observation)


def grad_step(net: Network, batch, lr: float) -> float:
    """``batch`` is an iterable of (observation, action_index, target)."""
    obs, acts, tgts = zip(*batch)
    return net.grad_step(np.array(obs, dtype=float), np.array(acts), np.array(tgts, dtype=float), lr)


def clone_parameters(net: Network) -> Network:
    return net.clone()
