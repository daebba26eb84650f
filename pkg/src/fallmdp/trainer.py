"""Learning loop for the mixture of actor-critic policy.

Each iteration collects a few exploratory rollouts (Boltzmann choice of the
expert, Gaussian noise on its action), then takes one critic step toward
max-min temporal-difference targets computed with a frozen target copy, and
one actor step that imitates buffered actions only where they beat the
current value estimate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .dp import ExperienceTuple
from .errors import ConfigInvalid
from .model import HALF_PI, ModelParams, PendulumState, transition
from .net import (
    MaceParameters,
    NetworkTopology,
    NormalizationSpec,
    actor_gradient_batch,
    copy_to_target,
    critic_gradient_batch,
    decode_actor,
    encode_input,
    encode_inputs,
    forward_actor,
    forward_critics,
    forward_critics_batch,
    init_params,
    sgd_step,
)
from .policy import Policy, run_episode

log = logging.getLogger(__name__)

GREEDY_T = 1e-8


@dataclass
class TrainConfig:
    iterations: int = 1000
    rollouts_per_iteration: int = 10
    minibatch: int = 32
    alpha: float = 1e-4
    gamma: float = 0.9
    temperature0: float = 5.0
    anneal_iterations: int = 250
    action_noise_std: tuple = (0.1, 0.1, 0.1)
    buffer_capacity: int = 50_000
    dp_seed_tuples: int = 5000
    target_sync_every: int = 10
    updates_per_iteration: int = 1
    episode_depth: int = 10
    init_contact: int = 0
    init_state_mean: tuple = (0.2, 0.3, 0.0, 2.5)
    init_state_std: tuple = (0.01, 0.05, 0.05, 0.5)
    heldout_cases: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        self.action_noise_std = tuple(float(v) for v in self.action_noise_std)
        self.init_state_mean = tuple(float(v) for v in self.init_state_mean)
        self.init_state_std = tuple(float(v) for v in self.init_state_std)

    def validate(self) -> None:
        if self.iterations < 0 or self.dp_seed_tuples < 0 or self.heldout_cases < 0:
            raise ConfigInvalid("counts must be non-negative")
        for name in ("rollouts_per_iteration", "minibatch", "buffer_capacity",
                     "target_sync_every", "updates_per_iteration", "anneal_iterations",
                     "episode_depth"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be positive")
        if not 0 < self.gamma <= 1:
            raise ConfigInvalid("gamma must lie in (0, 1]")
        if not self.temperature0 > 0:
            raise ConfigInvalid("temperature0 must be positive")
        if not self.alpha > 0:
            raise ConfigInvalid("alpha must be positive")
        if self.minibatch > self.buffer_capacity:
            raise ConfigInvalid("minibatch larger than buffer capacity")
        if len(self.action_noise_std) != 3 or min(self.action_noise_std) < 0:
            raise ConfigInvalid("action_noise_std needs three non-negative entries")
        if len(self.init_state_mean) != 4 or len(self.init_state_std) != 4 or min(self.init_state_std) < 0:
            raise ConfigInvalid("init_state_mean/std need four entries (r1, theta1, r1dot, theta1dot)")

    def temperature(self, iteration: int) -> float:
        """Linear anneal from ``temperature0`` to zero over ``anneal_iterations``."""
        return self.temperature0 * max(0.0, 1.0 - iteration / self.anneal_iterations)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigInvalid(f"unknown training fields: {sorted(extra)}")
        return cls(**d)


class ReplayBuffer:
    """Fixed-capacity FIFO of experience tuples with uniform sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list = []
        self._next = 0
        self.inserted = 0

    def __len__(self):
        return len(self._items)

    def add(self, t: ExperienceTuple) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity
        self.inserted += 1

    def extend(self, tuples) -> None:
        for t in tuples:
            self.add(t)

    def contents(self) -> list:
        """Items from oldest to newest."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[: self._next]

    def sample(self, m: int, rng: np.random.Generator) -> list:
        idx = rng.integers(0, len(self._items), size=m)
        return [self._items[i] for i in idx]


def boltzmann_probs(values, T: float) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if T <= GREEDY_T:
        p = np.zeros(v.size)
        p[int(np.argmax(v))] = 1.0
        return p
    z = np.exp((v - v.max()) / T)
    return z / z.sum()


def boltzmann_select(values, T: float, rng: np.random.Generator) -> int:
    v = np.asarray(values, dtype=np.float64)
    if T <= GREEDY_T:
        return int(np.argmax(v))
    return int(rng.choice(v.size, p=boltzmann_probs(v, T)))


def sample_initial_state(config: TrainConfig, model: ModelParams, rng: np.random.Generator) -> PendulumState:
    """Draw from the diagonal Gaussian start distribution, rejecting invalid states."""
    mean = np.array(config.init_state_mean)
    std = np.array(config.init_state_std)
    rmin, rmax = model.r_bounds
    dlo, dhi = model.rdot_bounds
    for _ in range(100_000):
        r, th, rd, thd = (float(v) for v in rng.normal(mean, std))
        if rmin <= r <= rmax and -HALF_PI < th < HALF_PI and dlo <= rd <= dhi:
            return PendulumState(config.init_contact, r, th, rd, thd)
    raise ConfigInvalid("initial-state distribution never produced a valid state")


def sample_initial_states(config: TrainConfig, model: ModelParams, n: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [sample_initial_state(config, model, rng) for _ in range(n)]


def explore_rollout(policy: Policy, config: TrainConfig, rng: np.random.Generator, temperature: float,
                    s0: Optional[PendulumState] = None) -> list:
    model, norm, params = policy.model, policy.norm, policy.params
    s = sample_initial_state(config, model, rng) if s0 is None else s0
    noise = np.array(config.action_noise_std)
    out = []
    for _ in range(config.episode_depth):
        if s.terminal:
            break
        allowed = model.allowed_successors(s.c1)
        x = encode_input(norm, params.topology.n_pairs, s)
        values = forward_critics(params, x)
        c = allowed[boltzmann_select(values[allowed], temperature, rng)]
        z = np.clip(forward_actor(params, c, x) + noise * rng.standard_normal(3), -1.0, 1.0)
        a = decode_actor(norm, z, c)
        o = transition(model, s, a)
        out.append(ExperienceTuple(s, a.continuous(), o.next_state, o.reward, c, o.terminal))
        if o.terminal:
            break
        s = o.next_state
    return out


def _max_allowed(values: np.ndarray, states: Sequence[PendulumState], model: ModelParams) -> np.ndarray:
    return np.array([max(values[k, c] for c in model.allowed_successors(s.c1)) for k, s in enumerate(states)])


def td_targets(target: MaceParameters, batch: Sequence[ExperienceTuple], gamma: float,
               norm: NormalizationSpec, model: ModelParams) -> np.ndarray:
    """``r`` for terminal tuples, else ``min(r, gamma * max_j Vhat_j(s'))``."""
    y = np.array([t.r for t in batch], dtype=np.float64)
    live = [k for k, t in enumerate(batch) if not t.terminal]
    if live:
        nxt = [batch[k].s_next for k in live]
        v = forward_critics_batch(target, encode_inputs(norm, target.topology.n_pairs, nxt))
        boot = gamma * _max_allowed(v, nxt, model)
        y[live] = np.minimum(y[live], boot)
    return y


def critic_update(params: MaceParameters, target: MaceParameters, batch: Sequence[ExperienceTuple],
                  config: TrainConfig, norm: NormalizationSpec, model: ModelParams) -> tuple:
    """One summed-gradient step on the chosen critics; returns ``(params, loss)``."""
    if not batch:
        raise ValueError("empty minibatch")
    y = td_targets(target, batch, config.gamma, norm, model)
    X = encode_inputs(norm, params.topology.n_pairs, [t.s for t in batch])
    grad, loss = critic_gradient_batch(params, X, [t.c for t in batch], y)
    return sgd_step(params, grad, config.alpha), loss


def actor_update(params: MaceParameters, target: MaceParameters, batch: Sequence[ExperienceTuple],
                 config: TrainConfig, norm: NormalizationSpec, model: ModelParams) -> tuple:
    """Imitate tuples whose TD target beats the current value; returns ``(params, n_applied)``."""
    if not batch:
        raise ValueError("empty minibatch")
    states = [t.s for t in batch]
    X = encode_inputs(norm, params.topology.n_pairs, states)
    y = _max_allowed(forward_critics_batch(params, X), states, model)
    y_td = td_targets(target, batch, config.gamma, norm, model)
    keep = np.flatnonzero(y_td > y)
    if keep.size == 0:
        return params, 0
    grad = params.zeros_like()
    heads = np.array([batch[k].c for k in keep])
    A = norm.encode_action([batch[k].a for k in keep])
    for i in np.unique(heads):
        rows = heads == i
        grad += actor_gradient_batch(params, int(i), X[keep[rows]], A[rows])
    return sgd_step(params, grad, config.alpha), int(keep.size)


@dataclass
class TrainLogRow:
    iteration: int
    temperature: float
    buffer_size: int
    mean_heldout_reward: float
    critic_loss: float
    actor_updates_applied: int


TRAIN_LOG_COLUMNS = tuple(TrainLogRow.__dataclass_fields__)


def heldout_reward(policy: Policy, states: Sequence[PendulumState], max_depth: int) -> float:
    if not states:
        return math.nan
    return float(np.mean([run_episode(policy, s, max_depth).episode_reward for s in states]))


def train(config: TrainConfig, model: ModelParams, dp_tuples: Sequence[ExperienceTuple],
          norm: Optional[NormalizationSpec] = None, topology: Optional[NetworkTopology] = None,
          heldout: Optional[Sequence[PendulumState]] = None) -> tuple:
    """Run the learning loop; returns ``(params, log_rows)``."""
    config.validate()
    norm = norm or NormalizationSpec.from_model(model)
    topology = topology or NetworkTopology(n_pairs=model.n_contacts)
    if topology.n_pairs != model.n_contacts:
        raise ConfigInvalid("one actor-critic pair per contact label is required")
    params = init_params(topology, config.rng_seed)
    rows: list = []
    if config.iterations == 0:
        return params, rows
    if not dp_tuples:
        raise ConfigInvalid("training needs DP tuples to seed the buffer")
    rng = np.random.default_rng(config.rng_seed)
    if heldout is None:
        heldout = sample_initial_states(config, model, config.heldout_cases, config.rng_seed + 1)
    target = copy_to_target(params)
    buffer = ReplayBuffer(config.buffer_capacity)
    buffer.extend(dp_tuples)
    for it in range(config.iterations):
        T = config.temperature(it)
        snapshot = Policy(params, norm, model)
        for _ in range(config.rollouts_per_iteration):
            buffer.extend(explore_rollout(snapshot, config, rng, T))
        loss, applied = 0.0, 0
        for _ in range(config.updates_per_iteration):
            params, step_loss = critic_update(params, target, buffer.sample(config.minibatch, rng), config, norm, model)
            params, n = actor_update(params, target, buffer.sample(config.minibatch, rng), config, norm, model)
            loss += step_loss
            applied += n
        if (it + 1) % config.target_sync_every == 0:
            target = copy_to_target(params)
        score = heldout_reward(Policy(params, norm, model), heldout, config.episode_depth)
        rows.append(TrainLogRow(it, T, len(buffer), score, loss / config.updates_per_iteration, applied))
        log.debug("iter %d T=%.3f buffer=%d heldout=%.4f", it, T, len(buffer), score)
    return params, rows
