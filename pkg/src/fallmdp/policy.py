"""Deployment side of the learned policy: greedy expert selection and episodes."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegeneratePrediction, NoAllowedContact
from .model import AbstractAction, ModelParams, PendulumState, transition
from .net import (
    MaceParameters,
    NormalizationSpec,
    decode_actor,
    encode_input,
    forward_actor,
    forward_critics,
)


@dataclass(frozen=True)
class Policy:
    params: MaceParameters
    norm: NormalizationSpec
    model: ModelParams


def greedy_contact(values, allowed) -> int:
    """Highest-valued allowed contact, lowest index on ties."""
    best = None
    for c in allowed:
        if best is None or values[c] > values[best]:
            best = c
    return best


def act(policy: Policy, s: PendulumState) -> tuple:
    allowed = policy.model.allowed_successors(s.c1)
    if not allowed:
        raise NoAllowedContact(f"no successor allowed from contact {s.c1}")
    x = encode_input(policy.norm, policy.params.topology.n_pairs, s)
    c2 = greedy_contact(forward_critics(policy.params, x), allowed)
    return c2, decode_actor(policy.norm, forward_actor(policy.params, c2, x), c2)


@dataclass
class EpisodeStep:
    state: PendulumState
    contact: int
    action: AbstractAction
    impulse: float
    reward: float
    failure: Optional[str] = None


@dataclass
class EpisodeRecord:
    initial_state: PendulumState
    steps: list = field(default_factory=list)
    episode_reward: float = 1.0
    terminated: bool = True
    query_ms: list = field(default_factory=list)

    @property
    def contact_sequence(self) -> list:
        return [st.contact for st in self.steps]

    @property
    def impulses(self) -> list:
        return [st.impulse for st in self.steps]

    @property
    def max_impulse(self) -> float:
        return max(self.impulses) if self.steps else 0.0

    @property
    def failed(self) -> bool:
        return not self.terminated or any(st.failure for st in self.steps)

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "initial_state": _state(self.initial_state),
            "steps": [
                {
                    "state": _state(st.state),
                    "contact": st.contact,
                    "action": {"theta2": st.action.theta2, "delta": st.action.delta,
                               "r1dot_des": st.action.r1dot_des, "c2": st.action.c2},
                    "impulse": st.impulse,
                    "reward": st.reward,
                    "failure": st.failure,
                }
                for st in self.steps
            ],
            "episode_reward": self.episode_reward,
            "max_impulse": self.max_impulse,
            "contact_sequence": self.contact_sequence,
            "terminated": self.terminated,
        }
        if timing:
            d["query_ms"] = list(self.query_ms)
        return d


def _state(s: PendulumState) -> dict:
    return {"c1": s.c1, "r1": s.r1, "theta1": s.theta1, "r1dot": s.r1dot, "theta1dot": s.theta1dot}


def run_episode(policy: Policy, s0: PendulumState, max_depth: int = 10) -> EpisodeRecord:
    """Query the policy at every impact until the fall stops.

    A fall still moving after ``max_depth`` impacts scores 0, the same
    pessimistic rule the DP applies to an exhausted budget.
    """
    rec = EpisodeRecord(s0)
    if s0.terminal:
        return rec
    s, pivot = s0, 0.0
    for _ in range(max_depth):
        t0 = time.perf_counter()
        c2, a = act(policy, s)
        rec.query_ms.append(1e3 * (time.perf_counter() - t0))
        o = transition(policy.model, s, a, pivot_x=pivot)
        rec.steps.append(EpisodeStep(s, c2, a, o.impulse, o.reward, o.failure))
        if o.terminal:
            rec.episode_reward = min(st.reward for st in rec.steps)
            return rec
        s, pivot = o.next_state, o.pivot_x
    rec.terminated = False
    rec.episode_reward = 0.0
    return rec


@dataclass(frozen=True)
class TriangleTargets:
    v1: tuple
    v2: tuple
    v3: tuple


def plan_triangle(pivot_x: float, s: PendulumState, a: AbstractAction) -> TriangleTargets:
    """COM and next-contact targets predicted at the next impact."""
    r_hat = s.r1 + a.delta * a.r1dot_des
    th_hat = s.theta1 + a.delta * s.theta1dot
    if r_hat <= 0.0 or math.cos(th_hat) <= 0.0:
        raise DegeneratePrediction(f"predicted rod (r={r_hat:.4g}, theta={th_hat:.4g}) leaves the ground plane")
    v1 = (pivot_x, 0.0)
    v2 = (pivot_x + r_hat * math.sin(th_hat), r_hat * math.cos(th_hat))
    v3 = (v2[0] + v2[1] * math.tan(a.theta2), 0.0)
    return TriangleTargets(v1, v2, v3)


SUMMARY_COLUMNS = ("case", "c1", "r1", "theta1", "r1dot", "theta1dot",
                   "contacts", "max_impulse", "episode_reward")


def episode_summary_row(case_id: int, rec: EpisodeRecord, timing: bool = False) -> list:
    """Flat row under ``SUMMARY_COLUMNS``, plus mean query ms when ``timing``."""
    s = rec.initial_state
    row = [case_id, s.c1, s.r1, s.theta1, s.r1dot, s.theta1dot,
           " ".join(str(c) for c in rec.contact_sequence), rec.max_impulse, rec.episode_reward]
    if timing:
        row.append(float(np.mean(rec.query_ms)) if rec.query_ms else 0.0)
    return row
