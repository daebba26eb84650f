"""Mixture of actor-critic network with hand-written backpropagation.

All weights and biases live in one flat float64 vector; a layout table maps
each ``(subnet, layer)`` to its slice.  Critics share their first hidden layer,
each critic head then has one more hidden layer and a scalar affine output.
Actors are independent tanh MLPs whose outputs are squashed into [-1, 1] and
decoded to physical actions by :class:`NormalizationSpec`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import MalformedFile, TopologyMismatch
from .model import HALF_PI, AbstractAction, ModelParams, PendulumState

WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class NetworkTopology:
    n_pairs: int = 8
    n_state: int = 4
    critic_shared: int = 32
    critic_head: int = 32
    actor_hidden: tuple = (128, 128, 128)
    n_action: int = 3

    def __post_init__(self):
        object.__setattr__(self, "actor_hidden", tuple(int(h) for h in self.actor_hidden))
        if self.n_pairs < 2:
            raise ValueError("need at least two actor-critic pairs")
        sizes = (self.n_state, self.critic_shared, self.critic_head, self.n_action) + self.actor_hidden
        if min(sizes) < 1:
            raise ValueError("layer sizes must be positive")

    @property
    def input_dim(self) -> int:
        return self.n_pairs + self.n_state

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "n_state": self.n_state,
            "critic_shared": self.critic_shared,
            "critic_head": self.critic_head,
            "actor_hidden": list(self.actor_hidden),
            "n_action": self.n_action,
        }


class Slot(NamedTuple):
    subnet: str
    layer: int
    offset: int
    shape: tuple  # (fan_out, fan_in)

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1] + self.shape[0]


def layout(topo: NetworkTopology) -> list:
    """Layer slots in storage order: W (row-major) followed by its bias."""
    slots = []
    offset = 0

    def add(subnet, layer, fan_out, fan_in):
        nonlocal offset
        slot = Slot(subnet, layer, offset, (fan_out, fan_in))
        slots.append(slot)
        offset += slot.size

    add("critic_shared", 0, topo.critic_shared, topo.input_dim)
    for i in range(topo.n_pairs):
        add(f"critic{i}", 0, topo.critic_head, topo.critic_shared)
        add(f"critic{i}", 1, 1, topo.critic_head)
    for i in range(topo.n_pairs):
        fan_in = topo.input_dim
        for k, h in enumerate(topo.actor_hidden):
            add(f"actor{i}", k, h, fan_in)
            fan_in = h
        add(f"actor{i}", len(topo.actor_hidden), topo.n_action, fan_in)
    return slots


def param_count(topo: NetworkTopology) -> int:
    return sum(s.size for s in layout(topo))


def _views(flat: np.ndarray, slots) -> dict:
    views = {}
    for s in slots:
        n_w = s.shape[0] * s.shape[1]
        w = flat[s.offset: s.offset + n_w].reshape(s.shape)
        b = flat[s.offset + n_w: s.offset + s.size]
        views.setdefault(s.subnet, []).append((w, b))
    return views


class MaceParameters:
    """Flat parameter vector plus per-layer ``(W, b)`` views into it."""

    def __init__(self, topology: NetworkTopology, theta: np.ndarray):
        self.topology = topology
        self.slots = layout(topology)
        expected = sum(s.size for s in self.slots)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (expected,):
            raise TopologyMismatch(f"expected {expected} parameters, got {theta.shape}")
        self.theta = theta
        self.layers = _views(self.theta, self.slots)

    def zeros_like(self) -> np.ndarray:
        return np.zeros_like(self.theta)

    def grad_views(self, grad: np.ndarray) -> dict:
        return _views(grad, self.slots)

    def subnet_mask(self, subnet: str) -> np.ndarray:
        mask = np.zeros(self.theta.shape, dtype=bool)
        for s in self.slots:
            if s.subnet == subnet:
                mask[s.offset: s.offset + s.size] = True
        return mask

    def copy(self) -> "MaceParameters":
        return MaceParameters(self.topology, self.theta.copy())

    def __eq__(self, other):
        return (
            isinstance(other, MaceParameters)
            and self.topology == other.topology
            and np.array_equal(self.theta, other.theta)
        )


def init_params(topology: NetworkTopology, rng_seed: int) -> MaceParameters:
    rng = np.random.default_rng(rng_seed)
    theta = np.zeros(param_count(topology))
    for s in layout(topology):
        bound = 1.0 / math.sqrt(s.shape[1])
        n_w = s.shape[0] * s.shape[1]
        theta[s.offset: s.offset + n_w] = rng.uniform(-bound, bound, n_w)
    return MaceParameters(topology, theta)


# -- input/output normalization ----------------------------------------------

@dataclass(frozen=True)
class NormalizationSpec:
    """Affine maps between physical ranges and [-1, 1]."""

    state_ranges: tuple
    action_ranges: tuple

    @classmethod
    def from_model(cls, params: ModelParams, theta1dot_range=(-2.0, 8.0)) -> "NormalizationSpec":
        return cls(
            state_ranges=(params.r_bounds, (-HALF_PI, HALF_PI), params.rdot_bounds, tuple(theta1dot_range)),
            action_ranges=(params.theta2_bounds, params.delta_bounds, params.rdot_bounds),
        )

    @staticmethod
    def _encode(x, ranges):
        lo = np.array([r[0] for r in ranges])
        hi = np.array([r[1] for r in ranges])
        return 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0

    @staticmethod
    def _decode(z, ranges):
        lo = np.array([r[0] for r in ranges])
        hi = np.array([r[1] for r in ranges])
        return lo + 0.5 * (np.asarray(z, dtype=np.float64) + 1.0) * (hi - lo)

    def encode_state(self, x):
        return self._encode(x, self.state_ranges)

    def decode_state(self, z):
        return self._decode(z, self.state_ranges)

    def encode_action(self, a):
        return self._encode(a, self.action_ranges)

    def decode_action(self, z) -> np.ndarray:
        """Physical action triple, clipped into bounds against round-off."""
        lo = np.array([r[0] for r in self.action_ranges])
        hi = np.array([r[1] for r in self.action_ranges])
        return np.clip(self._decode(z, self.action_ranges), lo, hi)

    def to_dict(self) -> dict:
        return {"state_ranges": [list(r) for r in self.state_ranges],
                "action_ranges": [list(r) for r in self.action_ranges]}

    @classmethod
    def from_dict(cls, d) -> "NormalizationSpec":
        return cls(tuple(tuple(float(v) for v in r) for r in d["state_ranges"]),
                   tuple(tuple(float(v) for v in r) for r in d["action_ranges"]))


def encode_input(norm: NormalizationSpec, n_pairs: int, s: PendulumState) -> np.ndarray:
    x = np.zeros(n_pairs + 4)
    x[s.c1] = 1.0
    x[n_pairs:] = norm.encode_state((s.r1, s.theta1, s.r1dot, s.theta1dot))
    return x


def encode_inputs(norm: NormalizationSpec, n_pairs: int, states: Sequence[PendulumState]) -> np.ndarray:
    X = np.zeros((len(states), n_pairs + 4))
    if not len(states):
        return X
    X[np.arange(len(states)), [s.c1 for s in states]] = 1.0
    X[:, n_pairs:] = norm.encode_state([(s.r1, s.theta1, s.r1dot, s.theta1dot) for s in states])
    return X


def decode_actor(norm: NormalizationSpec, z, c2: int) -> AbstractAction:
    th2, delta, rd = (float(v) for v in norm.decode_action(z))
    return AbstractAction(th2, delta, rd, int(c2))


# -- forward passes ----------------------------------------------------------

def _critic_hidden(params: MaceParameters, X):
    (w1, b1), = params.layers["critic_shared"]
    return np.tanh(X @ w1.T + b1)


def forward_critics_batch(params: MaceParameters, X: np.ndarray) -> np.ndarray:
    """Critic values for a batch of encoded inputs, shape ``(m, n_pairs)``."""
    X = np.atleast_2d(X)
    h1 = _critic_hidden(params, X)
    out = np.empty((X.shape[0], params.topology.n_pairs))
    for i in range(params.topology.n_pairs):
        (w2, b2), (w3, b3) = params.layers[f"critic{i}"]
        out[:, i] = np.tanh(h1 @ w2.T + b2) @ w3[0] + b3[0]
    return out


def forward_critics(params: MaceParameters, x: np.ndarray) -> np.ndarray:
    return forward_critics_batch(params, x)[0]


def _actor_pass(params: MaceParameters, i: int, X):
    acts = [X]
    h = X
    for w, b in params.layers[f"actor{i}"]:
        h = np.tanh(h @ w.T + b)
        acts.append(h)
    return acts


def forward_actor_batch(params: MaceParameters, i: int, X: np.ndarray) -> np.ndarray:
    return _actor_pass(params, i, np.atleast_2d(X))[-1]


def forward_actor(params: MaceParameters, i: int, x: np.ndarray) -> np.ndarray:
    return forward_actor_batch(params, i, x)[0]


# -- gradients ---------------------------------------------------------------

def critic_gradient_batch(params: MaceParameters, X: np.ndarray, heads: Sequence[int], y: Sequence[float]):
    """Gradient of ``sum_k 0.5 * (y_k - V_{heads[k]}(x_k))**2``; also returns the loss."""
    X = np.atleast_2d(X)
    heads = np.asarray(heads, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    grad = params.zeros_like()
    g = params.grad_views(grad)
    h1 = _critic_hidden(params, X)
    dh1 = np.zeros_like(h1)
    loss = 0.0
    for i in np.unique(heads):
        rows = heads == i
        (w2, b2), (w3, b3) = params.layers[f"critic{i}"]
        (gw2, gb2), (gw3, gb3) = g[f"critic{i}"]
        hi = h1[rows]
        h2 = np.tanh(hi @ w2.T + b2)
        v = h2 @ w3[0] + b3[0]
        err = v - y[rows]
        loss += 0.5 * float(err @ err)
        gw3[0] += err @ h2
        gb3[0] += err.sum()
        dz2 = np.outer(err, w3[0]) * (1.0 - h2 * h2)
        gw2 += dz2.T @ hi
        gb2 += dz2.sum(axis=0)
        dh1[rows] += dz2 @ w2
    dz1 = dh1 * (1.0 - h1 * h1)
    (gw1, gb1), = g["critic_shared"]
    gw1 += dz1.T @ X
    gb1 += dz1.sum(axis=0)
    return grad, loss


def critic_gradient(params: MaceParameters, i: int, x: np.ndarray, y: float) -> np.ndarray:
    return critic_gradient_batch(params, x, [i], [y])[0]


def actor_gradient_batch(params: MaceParameters, i: int, X: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_k 0.5 * ||A_k - Pi_i(x_k)||**2`` over actor ``i``'s weights."""
    X = np.atleast_2d(X)
    A = np.atleast_2d(A)
    grad = params.zeros_like()
    g = params.grad_views(grad)[f"actor{i}"]
    layers = params.layers[f"actor{i}"]
    acts = _actor_pass(params, i, X)
    delta = (acts[-1] - A) * (1.0 - acts[-1] ** 2)
    for k in range(len(layers) - 1, -1, -1):
        gw, gb = g[k]
        gw += delta.T @ acts[k]
        gb += delta.sum(axis=0)
        if k:
            delta = (delta @ layers[k][0]) * (1.0 - acts[k] ** 2)
    return grad


def actor_gradient(params: MaceParameters, i: int, x: np.ndarray, a_target: np.ndarray) -> np.ndarray:
    return actor_gradient_batch(params, i, x, a_target)


def sgd_step(params: MaceParameters, gradient: np.ndarray, alpha: float) -> MaceParameters:
    if gradient.shape != params.theta.shape:
        raise TopologyMismatch("gradient shape does not match parameters")
    return MaceParameters(params.topology, params.theta - alpha * gradient)


def copy_to_target(params: MaceParameters) -> MaceParameters:
    return params.copy()


# -- weights file ------------------------------------------------------------

def save_params(path, params: MaceParameters, normalization: NormalizationSpec | None = None) -> None:
    doc = {
        "version": WEIGHTS_VERSION,
        "topology": params.topology.to_dict(),
        "params": [float(v) for v in params.theta],
    }
    if normalization is not None:
        doc["normalization"] = normalization.to_dict()
    with open(path, "w") as f:
        # repr(float) is the shortest round-tripping form (<= 17 significant digits)
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


def load_params(path, topology: NetworkTopology | None = None):
    """Read a weights file; returns ``(params, normalization or None)``."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != WEIGHTS_VERSION:
        raise MalformedFile(f"{path}: missing or unsupported version")
    try:
        topo = NetworkTopology(**doc["topology"])
        theta = np.array(doc["params"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    if topology is not None and topo != topology:
        raise TopologyMismatch(f"{path}: file topology {topo} differs from {topology}")
    if theta.shape != (param_count(topo),):
        raise MalformedFile(f"{path}: expected {param_count(topo)} parameters, found {theta.size}")
    norm = doc.get("normalization")
    return MaceParameters(topo, theta), (NormalizationSpec.from_dict(norm) if norm else None)
