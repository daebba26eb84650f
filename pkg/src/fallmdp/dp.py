"""Memoized max-min dynamic programming over a gridded action space.

Values live on the reward scale: the value of a state is the best achievable
minimum per-impact reward ``1/(1+j)`` over the rest of the fall, which ranks
plans exactly like minimizing the maximum impulse.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigInvalid, MalformedFile, NoFeasibleAction
from .model import (
    AbstractAction,
    ModelParams,
    PendulumState,
    outcome_from_pre,
    phase_states,
    transition,
)


@dataclass(frozen=True)
class DiscretizationSpec:
    n_theta2: int = 5
    n_delta: int = 5
    n_rdot: int = 3
    state_quant: tuple = (1e-3, 1e-3, 1e-3, 1e-3)
    max_depth: int = 10

    def __post_init__(self):
        for name in ("n_theta2", "n_delta", "n_rdot", "max_depth"):
            if int(getattr(self, name)) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")
            object.__setattr__(self, name, int(getattr(self, name)))
        quant = tuple(float(q) for q in self.state_quant)
        if len(quant) != 4 or not all(q > 0 for q in quant):
            raise ConfigInvalid("state_quant needs four positive widths")
        object.__setattr__(self, "state_quant", quant)

    def axes(self, params: ModelParams) -> tuple:
        """Grid values for (theta2, delta, r1dot_des)."""
        return (
            _axis(params.theta2_bounds, self.n_theta2),
            _axis(params.delta_bounds, self.n_delta),
            _axis(params.rdot_bounds, self.n_rdot),
        )

    def to_dict(self) -> dict:
        return {
            "n_theta2": self.n_theta2,
            "n_delta": self.n_delta,
            "n_rdot": self.n_rdot,
            "state_quant": list(self.state_quant),
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscretizationSpec":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigInvalid(f"unknown discretization fields: {sorted(extra)}")
        return cls(**d)


def _axis(bounds, n):
    lo, hi = bounds
    if n == 1:
        return [0.5 * (lo + hi)]
    return [float(v) for v in np.linspace(lo, hi, n)]


class StateKey(NamedTuple):
    c1: int
    q: tuple


def state_key(s: PendulumState, spec: DiscretizationSpec) -> StateKey:
    w = spec.state_quant
    return StateKey(
        s.c1,
        (round(s.r1 / w[0]), round(s.theta1 / w[1]), round(s.r1dot / w[2]), round(s.theta1dot / w[3])),
    )


@dataclass
class ExperienceTuple:
    s: PendulumState
    a: tuple
    s_next: Optional[PendulumState]
    r: float
    c: int
    terminal: bool

    @property
    def action(self) -> AbstractAction:
        return AbstractAction(self.a[0], self.a[1], self.a[2], self.c)


@dataclass
class DpPlan:
    initial_state: PendulumState
    actions: list = field(default_factory=list)
    impulses: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    states: list = field(default_factory=list)
    value: float = 1.0
    terminated: bool = True

    @property
    def contacts(self) -> list:
        return [a.c2 for a in self.actions]

    @property
    def max_impulse(self) -> float:
        return max(self.impulses) if self.impulses else 0.0

    def tuples(self) -> list:
        out = []
        for k, (a, r) in enumerate(zip(self.actions, self.rewards)):
            nxt = self.states[k + 1]
            terminal = nxt is None or nxt.terminal
            out.append(ExperienceTuple(self.states[k], a.continuous(), nxt, r, a.c2, terminal))
        return out

    def to_dict(self) -> dict:
        return {
            "initial_state": _state_dict(self.initial_state),
            "actions": [
                {"theta2": a.theta2, "delta": a.delta, "r1dot_des": a.r1dot_des, "c2": a.c2}
                for a in self.actions
            ],
            "impulses": list(self.impulses),
            "rewards": list(self.rewards),
            "contacts": self.contacts,
            "value": self.value,
            "terminated": self.terminated,
        }


def _state_dict(s: Optional[PendulumState]):
    if s is None:
        return None
    return {"c1": s.c1, "r1": s.r1, "theta1": s.theta1, "r1dot": s.r1dot, "theta1dot": s.theta1dot}


class DpSolver:
    """Depth-limited max-min search with a state-keyed value cache.

    Cache entries are keyed by ``(depth, StateKey)``; the remaining impact
    budget changes the value, so it has to be part of the key.
    """

    def __init__(self, params: ModelParams, spec: DiscretizationSpec):
        self.params = params
        self.spec = spec
        self.theta2s, self.deltas, self.rdots = spec.axes(params)
        self.cache: dict = {}
        self.expanded = 0

    def clear_cache(self) -> None:
        self.cache.clear()

    def _outcomes(self, s: PendulumState):
        """Grid outcomes from ``s`` as ``(index, outcome)`` in grid order.

        Contacts are labels only, so one outcome per continuous action is
        shared by every allowed ``c2`` (index ``(i, j, k, c2)``).
        """
        p = self.params
        self.expanded += 1
        succ = p.allowed_successors(s.c1)
        pres = [phase_states(p, s, rd, self.deltas) for rd in self.rdots]
        out = []
        for i, th2 in enumerate(self.theta2s):
            for j in range(len(self.deltas)):
                for k in range(len(self.rdots)):
                    o = outcome_from_pre(p, pres[k][j], 0.0, th2, succ[0])
                    for c2 in succ:
                        out.append(((i, j, k, c2), o))
        return out

    def _action(self, idx) -> AbstractAction:
        i, j, k, c2 = idx
        return AbstractAction(self.theta2s[i], self.deltas[j], self.rdots[k], c2)

    def _search(self, s: PendulumState, depth: int, alpha: float = -math.inf, cap: float = math.inf):
        """Best grid action from ``s``.

        Returns ``(value, action, lo, hi)`` where ``[lo, hi]`` brackets the
        true value.  The caller only needs the value when it lies in
        ``[alpha, cap]``: the search stops once it reaches ``cap`` (lower bound)
        or once nothing left can reach ``alpha`` (upper bound).  With the
        default window the result is exact and ``action`` is the
        lexicographically first maximizer.
        """
        best, best_idx = -1.0, None
        feasible = False
        cands = self._outcomes(s)
        cands.sort(key=lambda c: -c[1].reward)
        for idx, o in cands:
            if o.failed:
                continue
            feasible = True
            r = o.reward
            if r < best:
                break
            if r < alpha and best < alpha:
                hi = max(best, r)
                return hi, None, -math.inf, hi
            if r == best and idx > best_idx:
                continue
            if o.terminal:
                v = r
            else:
                nxt = o.next_state
                if nxt.c1 != idx[3]:
                    nxt = PendulumState(idx[3], nxt.r1, nxt.theta1, nxt.r1dot, nxt.theta1dot)
                v = min(r, self._value(nxt, depth + 1, max(best, alpha), r))
            if v > best or (v == best and idx < best_idx):
                best, best_idx = v, idx
                if best >= cap:
                    return best, self._action(best_idx), best, math.inf
        if not feasible:
            return 0.0, None, 0.0, 0.0
        if best < alpha:
            return best, None, -math.inf, best
        return best, self._action(best_idx), best, best

    def _value(self, s: PendulumState, depth: int, alpha: float, cap: float) -> float:
        if s.terminal:
            return 1.0
        if depth >= self.spec.max_depth:
            return 0.0
        key = (depth, state_key(s, self.spec))
        lo, hi = self.cache.get(key, (-math.inf, math.inf))
        if lo == hi or lo >= cap:
            return lo
        if hi < alpha:
            return hi
        value, _, new_lo, new_hi = self._search(s, depth, alpha, cap)
        self.cache[key] = (max(lo, new_lo), min(hi, new_hi))
        return value

    def solve_value(self, s: PendulumState, depth: int = 0) -> float:
        return self._value(s, depth, -math.inf, math.inf)

    def best_action(self, s: PendulumState, depth: int = 0) -> tuple:
        if s.terminal:
            raise ValueError("best_action needs a non-terminal state")
        if depth >= self.spec.max_depth:
            raise ValueError("impact budget exhausted")
        value, a, _, _ = self._search(s, depth)
        if a is None:
            raise NoFeasibleAction("every grid action fails from this state")
        self.cache[(depth, state_key(s, self.spec))] = (value, value)
        return a, value

    def extract_rollout(self, s0: PendulumState) -> DpPlan:
        plan = DpPlan(s0, states=[s0])
        if s0.terminal:
            return plan
        s, pivot = s0, 0.0
        for depth in range(self.spec.max_depth):
            try:
                a, _ = self.best_action(s, depth)
            except NoFeasibleAction:
                break
            o = transition(self.params, s, a, pivot_x=pivot)
            plan.actions.append(a)
            plan.impulses.append(o.impulse)
            plan.rewards.append(o.reward)
            plan.states.append(o.next_state)
            if o.terminal:
                plan.value = min(plan.rewards)
                return plan
            s, pivot = o.next_state, o.pivot_x
        plan.terminated = False
        plan.value = 0.0
        return plan


def _rollout_job(args):
    params, spec, s0 = args
    return DpSolver(params, spec).extract_rollout(s0)


def solve_rollouts(params: ModelParams, spec: DiscretizationSpec,
                   initial_states: Sequence[PendulumState], threads: int = 1) -> list:
    """One plan per initial state, each solved with a fresh cache.

    Fresh caches make every plan independent of evaluation order, so the
    result is the same for any ``threads``.
    """
    from .parallel import pmap

    return pmap(_rollout_job, [(params, spec, s0) for s0 in initial_states], threads)


def generate_tuples(params: ModelParams, spec: DiscretizationSpec,
                    initial_states: Iterable[PendulumState], threads: int = 1) -> list:
    tuples = []
    for plan in solve_rollouts(params, spec, list(initial_states), threads):
        tuples.extend(plan.tuples())
    return tuples


# -- tuple file --------------------------------------------------------------

TUPLE_COLUMNS = (
    "c1", "r1", "theta1", "r1dot", "theta1dot",
    "theta2", "delta", "r1dot_des", "c2", "r", "terminal",
    "c1'", "r1'", "theta1'", "r1dot'", "theta1dot'",
)


def _fmt(x: float) -> str:
    return repr(float(x))


def tuple_row(t: ExperienceTuple) -> list:
    row = [str(t.s.c1)] + [_fmt(v) for v in t.s.as_tuple()[1:]]
    row += [_fmt(v) for v in t.a] + [str(t.c), _fmt(t.r), "1" if t.terminal else "0"]
    if t.s_next is None:
        row += ["-1", "nan", "nan", "nan", "nan"]
    else:
        row += [str(t.s_next.c1)] + [_fmt(v) for v in t.s_next.as_tuple()[1:]]
    return row


def write_tuples(path, tuples: Iterable[ExperienceTuple]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TUPLE_COLUMNS)
        for t in tuples:
            w.writerow(tuple_row(t))


def read_tuples(path) -> list:
    out = []
    with open(path, newline="") as f:
        rows = csv.reader(f)
        header = next(rows, None)
        if header is None or tuple(header) != TUPLE_COLUMNS:
            raise MalformedFile(f"{path}: unexpected tuple header")
        for n, row in enumerate(rows, start=2):
            if len(row) != len(TUPLE_COLUMNS):
                raise MalformedFile(f"{path}:{n}: expected {len(TUPLE_COLUMNS)} columns")
            try:
                s = PendulumState(int(row[0]), *(float(v) for v in row[1:5]))
                a = tuple(float(v) for v in row[5:8])
                c, r, terminal = int(row[8]), float(row[9]), row[10] == "1"
                c_next = int(row[11])
                s_next = None if c_next < 0 else PendulumState(c_next, *(float(v) for v in row[12:16]))
            except ValueError as exc:
                raise MalformedFile(f"{path}:{n}: {exc}") from exc
            out.append(ExperienceTuple(s, a, s_next, r, c, terminal))
    return out


def write_plans(path, plans: Sequence[DpPlan]) -> None:
    with open(path, "w") as f:
        json.dump([p.to_dict() for p in plans], f, indent=1)
        f.write("\n")


def mean_value(plans: Sequence[DpPlan]) -> float:
    return float(np.mean([p.value for p in plans])) if plans else math.nan
