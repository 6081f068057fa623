"""Drift network and its training loop.

A small fully connected net maps (t, x) to a vector field value.  Forward,
backward, and the adaptive-moment update are written out by hand so every
gradient is auditable against finite differences.
"""
from __future__ import annotations

import dataclasses
import json
from typing import Callable, Sequence

import numpy as np

from .core import (
    ConditionalDrift,
    PinnedPathSpec,
    eval_conditional_drift_batch,
    sample_pinned_batch,
)
from .errors import DataError, DomainError, ShapeError

ACTIVATIONS = ("silu", "tanh")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s


def _silu_prime(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def _tanh_prime(z):
    t = np.tanh(z)
    return 1.0 - t * t


class DriftNetwork:
    """MLP with input [t, x] (raw scalar time) and output of x's dimension.

    Hidden weights start Glorot-uniform, the output layer starts at zero,
    so a fresh network is the zero vector field.
    """

    def __init__(self, dim: int, hidden: Sequence[int] = (128, 128, 128),
                 activation: str = "silu", rng: np.random.Generator | None = None):
        if dim < 1:
            raise DomainError(f"dim must be >= 1, got {dim}")
        hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in hidden):
            raise DomainError(f"hidden sizes must be >= 1, got {hidden}")
        if activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.dim = dim
        self.hidden = hidden
        self.activation = activation
        sizes = (dim + 1,) + hidden + (dim,)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.weights[-1][:] = 0.0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def _act(self, z):
        return _silu(z) if self.activation == "silu" else np.tanh(z)

    def _act_prime(self, z):
        return _silu_prime(z) if self.activation == "silu" else _tanh_prime(z)

    def _stack_inputs(self, ts, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.dim:
            raise ShapeError(f"xs must be (n, {self.dim}), got {xs.shape}")
        ts = np.asarray(ts, dtype=np.float64)
        if ts.ndim == 0:
            ts = np.full(xs.shape[0], float(ts))
        if ts.shape != (xs.shape[0],):
            raise ShapeError(f"ts shape {ts.shape} does not match n={xs.shape[0]}")
        return np.concatenate([ts[:, None], xs], axis=1)

    def forward(self, ts, xs) -> np.ndarray:
        """Field values at a batch of (t, x); ts scalar or per-row."""
        h = self._stack_inputs(ts, xs)
        last = self.n_layers - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if layer != last:
                h = self._act(h)
        return h

    def _forward_cached(self, inputs):
        # pre-activations per hidden layer and the activations feeding
        # each weight matrix, kept for the backward pass
        hs = [inputs]
        zs = []
        h = inputs
        last = self.n_layers - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if layer != last:
                zs.append(z)
                h = self._act(z)
                hs.append(h)
            else:
                h = z
        return h, hs, zs

    def drift_fn(self) -> Callable[[float, np.ndarray], np.ndarray]:
        """The network as a plain (t, X) -> (n, d) callable for simulation."""
        return lambda t, xs: self.forward(float(t), xs)


def loss_and_grad(net: DriftNetwork, ts, xs, targets
                  ) -> tuple[float, list[np.ndarray]]:
    """Mean squared field error and its exact parameter gradients.

    Loss is mean over the batch of the squared Euclidean error.  Gradients
    are ordered like net.parameters(): W0, b0, W1, b1, ...
    """
    targets = np.asarray(targets, dtype=np.float64)
    inputs = net._stack_inputs(ts, xs)
    if targets.shape != (inputs.shape[0], net.dim):
        raise ShapeError(f"targets must be (n, {net.dim}), got {targets.shape}")
    out, hs, zs = net._forward_cached(inputs)
    err = out - targets
    n = inputs.shape[0]
    loss = float(np.sum(err * err)) / n

    grads: list[np.ndarray] = [None] * (2 * net.n_layers)
    delta = 2.0 * err / n
    for layer in range(net.n_layers - 1, -1, -1):
        grads[2 * layer] = hs[layer].T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer].T) * net._act_prime(zs[layer - 1])
    return loss, grads


@dataclasses.dataclass
class OptimizerState:
    """Adam moments, one slot per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_network(cls, net: DriftNetwork) -> "OptimizerState":
        return cls(m=[np.zeros_like(p) for p in net.parameters()],
                   v=[np.zeros_like(p) for p in net.parameters()])


def optimizer_step(net: DriftNetwork, state: OptimizerState,
                   grads: list[np.ndarray], lr: float) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    params = net.parameters()
    if len(grads) != len(params):
        raise ShapeError(f"got {len(grads)} gradients for {len(params)} parameters")
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for p, m, v, g in zip(params, state.m, state.v, grads):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


PairSource = Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]]


def train_regression(net: DriftNetwork, pair_source: PairSource,
                     path: PinnedPathSpec, drift: ConditionalDrift,
                     steps: int, batch_size: int,
                     lr: float | Callable[[int], float],
                     rng: np.random.Generator,
                     t_clip: float = 1e-3,
                     state: OptimizerState | None = None) -> np.ndarray:
    """Regress the network on conditional drift targets; returns the loss log.

    Each step draws pairs from ``pair_source``, times uniformly from
    [t_clip, 1 - t_clip], positions from the pinned path, and fits the
    drift value at those points.  Passing ``state`` warm-starts the
    optimizer across calls.
    """
    if steps < 0 or batch_size < 1:
        raise DomainError(f"need steps >= 0 and batch_size >= 1, got {steps}, {batch_size}")
    if state is None:
        state = OptimizerState.for_network(net)
    losses = np.empty(steps)
    for step in range(steps):
        x0, x1 = pair_source(batch_size, rng)
        ts = rng.uniform(t_clip, 1.0 - t_clip, size=x0.shape[0])
        xs = sample_pinned_batch(path, x0, x1, ts, rng)
        targets = eval_conditional_drift_batch(drift, xs, x0, x1, ts)
        if not np.all(np.isfinite(targets)):
            raise DataError(f"non-finite regression target at step {step}")
        rate = lr(step) if callable(lr) else lr
        loss, grads = loss_and_grad(net, ts, xs, targets)
        optimizer_step(net, state, grads, rate)
        losses[step] = loss
    return losses


CHECKPOINT_VERSION = 1


def save_checkpoint(path, nets: dict[str, DriftNetwork], extra: dict | None = None) -> None:
    """Write named networks plus a JSON header to an .npz file.

    Arrays round-trip bit-exactly; the header records format version,
    architecture per net, and any caller-provided run metadata.
    """
    arrays = {}
    meta = {"format_version": CHECKPOINT_VERSION, "nets": {}, "extra": extra or {}}
    for name, net in nets.items():
        if "__" in name:
            raise DomainError(f"net name {name!r} may not contain '__'")
        meta["nets"][name] = {"dim": net.dim, "hidden": list(net.hidden),
                              "activation": net.activation}
        for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}__W{layer}"] = w
            arrays[f"{name}__b{layer}"] = b
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[dict[str, DriftNetwork], dict]:
    """Inverse of save_checkpoint."""
    try:
        archive = np.load(path)
    except (ValueError, OSError, EOFError) as exc:
        raise DataError(f"checkpoint {path} is not a readable archive: {exc}") from exc
    with archive as data:
        try:
            meta = json.loads(str(data["meta"]))
        except (KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"checkpoint {path} has no readable header: {exc}") from exc
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(
                f"checkpoint format {meta.get('format_version')!r} not supported")
        nets = {}
        for name, arch in meta["nets"].items():
            net = DriftNetwork(arch["dim"], arch["hidden"], arch["activation"])
            for layer in range(net.n_layers):
                net.weights[layer] = np.array(data[f"{name}__W{layer}"])
                net.biases[layer] = np.array(data[f"{name}__b{layer}"])
            nets[name] = net
    return nets, meta
