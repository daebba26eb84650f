"""Abstract falling model: a variable-length inverted pendulum plus a massless stopper.

Angles follow the sagittal-plane convention used throughout the package:

* ``theta1`` is the rod angle from the upward vertical, positive in the fall
  direction (+x).
* ``theta2`` is the stopper angle from the downward vertical, positive forward,
  so the stopper tip lands at ``x1 + y1 * tan(theta2)``.

Rotations are therefore clockwise-positive; the rigid-body angular velocity used
at impact (counter-clockwise positive, as in the usual ``v_p = v + w x d`` rule)
is ``-theta1dot``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numba import njit

from .errors import (
    ActionOutOfBounds,
    ConfigInvalid,
    DegenerateState,
    DisallowedContact,
    InfeasibleStopper,
)

HALF_PI = 0.5 * math.pi


def _pair(value, name):
    lo, hi = (float(v) for v in value)
    if not lo < hi:
        raise ConfigInvalid(f"{name}: expected min < max, got {value!r}")
    return (lo, hi)


@dataclass(frozen=True)
class ModelParams:
    M: float = 1.6
    I: float = 0.016
    g: float = 9.81
    r_bounds: tuple = (0.08, 0.26)
    r2_bounds: tuple = (0.08, 0.26)
    theta2_bounds: tuple = (-0.2, 0.9)
    delta_bounds: tuple = (0.05, 0.2)
    rdot_bounds: tuple = (-0.2, 0.2)
    n_contacts: int = 8
    contact_adjacency: Optional[tuple] = None
    integrator_dt: float = 1e-3
    failure_impulse: float = 10.0

    def __post_init__(self):
        set_ = object.__setattr__
        for name in ("r_bounds", "r2_bounds", "theta2_bounds", "delta_bounds", "rdot_bounds"):
            set_(self, name, _pair(getattr(self, name), name))
        for name in ("M", "I", "g", "integrator_dt"):
            if not float(getattr(self, name)) > 0:
                raise ConfigInvalid(f"{name} must be positive")
            set_(self, name, float(getattr(self, name)))
        if self.failure_impulse < 0:
            raise ConfigInvalid("failure_impulse must be non-negative")
        if self.r_bounds[0] < 0:
            raise ConfigInvalid("r_min must be non-negative")
        if self.r2_bounds[0] <= 0:
            raise ConfigInvalid("r2_min must be positive")
        # stopper length becomes the next rod length
        if self.r2_bounds[0] < self.r_bounds[0] or self.r2_bounds[1] > self.r_bounds[1]:
            raise ConfigInvalid("r2_bounds must lie inside r_bounds")
        if max(abs(v) for v in self.theta2_bounds) >= HALF_PI:
            raise ConfigInvalid("|theta2| bounds must be below pi/2")
        if self.delta_bounds[0] <= 0:
            raise ConfigInvalid("delta_min must be positive")
        n = int(self.n_contacts)
        if n < 1:
            raise ConfigInvalid("n_contacts must be >= 1")
        set_(self, "n_contacts", n)
        adj = self.contact_adjacency
        if adj is None:
            adj = tuple(tuple(True for _ in range(n)) for _ in range(n))
        else:
            adj = tuple(tuple(bool(v) for v in row) for row in adj)
        if len(adj) != n or any(len(row) != n for row in adj):
            raise ConfigInvalid("contact_adjacency must be n_contacts x n_contacts")
        if not all(any(row) for row in adj):
            raise ConfigInvalid("every contact needs at least one allowed successor")
        set_(self, "contact_adjacency", adj)

    def allowed_successors(self, c1: int) -> list[int]:
        return [c2 for c2, ok in enumerate(self.contact_adjacency[c1]) if ok]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(row) if isinstance(row, tuple) else row for row in v]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"unknown model fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class PendulumState:
    c1: int
    r1: float
    theta1: float
    r1dot: float
    theta1dot: float

    @property
    def terminal(self) -> bool:
        return self.theta1dot <= 0.0

    def as_tuple(self) -> tuple:
        return (self.c1, self.r1, self.theta1, self.r1dot, self.theta1dot)

    def validate(self, params: ModelParams) -> None:
        if not 0 <= self.c1 < params.n_contacts:
            raise DegenerateState(f"contact index {self.c1} out of range")
        lo, hi = params.r_bounds
        if not lo <= self.r1 <= hi:
            raise DegenerateState(f"r1={self.r1} outside {params.r_bounds}")
        if not self.r1 * math.cos(self.theta1) > 0:
            raise DegenerateState("COM must be above the ground")


@dataclass(frozen=True)
class AbstractAction:
    theta2: float
    delta: float
    r1dot_des: float
    c2: int

    def continuous(self) -> tuple:
        return (self.theta2, self.delta, self.r1dot_des)


@dataclass(frozen=True)
class Failure:
    """Marker for a phase that ends without a valid impact."""

    reason: str


@dataclass(frozen=True)
class TransitionOutcome:
    next_state: Optional[PendulumState]
    impulse: float
    reward: float
    terminal: bool
    pivot_x: float = 0.0
    failure: Optional[str] = None
    trace: Optional[list] = field(default=None, compare=False)

    @property
    def failed(self) -> bool:
        return self.failure is not None


class ImpactResult(NamedTuple):
    state: PendulumState
    impulse: float
    pivot_x: float
    contact_vel_pre: float
    contact_vel_post: float
    omega_pre: float
    omega_post: float


def reward_from_impulse(j: float) -> float:
    return 1.0 / (1.0 + j)


def com_kinematics(pivot_x: float, s: PendulumState) -> tuple:
    st, ct = math.sin(s.theta1), math.cos(s.theta1)
    x1 = pivot_x + s.r1 * st
    y1 = s.r1 * ct
    x1dot = s.r1dot * st + s.r1 * s.theta1dot * ct
    y1dot = s.r1dot * ct - s.r1 * s.theta1dot * st
    return x1, y1, x1dot, y1dot


# -- swing integration -------------------------------------------------------

@njit(cache=True)
def _rk4(g, r, th, om, rd, h):
    # state (r, theta, omega); r' = rd (constant over the step)
    k1 = (g * math.sin(th) - 2.0 * rd * om) / r
    r2 = r + 0.5 * h * rd
    th2 = th + 0.5 * h * om
    om2 = om + 0.5 * h * k1
    k2 = (g * math.sin(th2) - 2.0 * rd * om2) / r2
    th3 = th + 0.5 * h * om2
    om3 = om + 0.5 * h * k2
    k3 = (g * math.sin(th3) - 2.0 * rd * om3) / r2
    r4 = r + h * rd
    th4 = th + h * om3
    om4 = om + h * k3
    k4 = (g * math.sin(th4) - 2.0 * rd * om4) / r4
    th_new = th + h / 6.0 * (om + 2.0 * om2 + 2.0 * om3 + om4)
    om_new = om + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return r4, th_new, om_new


@njit(cache=True)
def _swing(g, rmin, rmax, rdlo, rdhi, r, th, om, rdot_des, h):
    """One integration step of length ``h``; returns (r, theta, omega, rdot)."""
    rd = min(max(rdot_des, rdlo), rdhi)
    if (r >= rmax and rd > 0.0) or (r <= rmin and rd < 0.0):
        rd = 0.0
    if rd == 0.0:
        r, th, om = _rk4(g, r, th, om, 0.0, h)
        return r, th, om, 0.0
    bound = rmax if rd > 0.0 else rmin
    h_hit = (bound - r) / rd
    if h_hit >= h:
        r, th, om = _rk4(g, r, th, om, rd, h)
        return r, th, om, rd
    # rod saturates inside the step: split at the exact crossing time
    if h_hit > 0.0:
        _, th, om = _rk4(g, r, th, om, rd, h_hit)
    _, th, om = _rk4(g, bound, th, om, 0.0, h - h_hit)
    return bound, th, om, 0.0


@njit(cache=True)
def _broken(r, th):
    if not (-HALF_PI < th < HALF_PI):
        return 1
    if r * math.cos(th) <= 0.0:
        return 2
    return 0


_FAILURES = {1: "over-rotation", 2: "ground"}


@njit(cache=True)
def _phase_kernel(g, rmin, rmax, rdlo, rdhi, dt, r, th, om, rd, rdot_des, ns, fracs, record):
    """Integrate once and sample the state after ``ns[i]`` steps plus ``fracs[i]``.

    ``ns`` must be non-decreasing.  Rows of ``out`` are (r, theta, omega, rdot);
    ``status`` is 0 on success or a failure code.  With ``record`` the state
    after every full step is stored in ``traj``.
    """
    k = ns.shape[0]
    out = np.empty((k, 4))
    status = np.zeros(k, dtype=np.int64)
    nmax = ns[k - 1] if k > 0 else 0
    traj = np.empty((nmax + 1 if record else 1, 3))
    traj[0, 0] = r
    traj[0, 1] = th
    traj[0, 2] = om
    steps = 0
    fail = 0
    for i in range(k):
        while fail == 0 and steps < ns[i]:
            r, th, om, rd = _swing(g, rmin, rmax, rdlo, rdhi, r, th, om, rdot_des, dt)
            steps += 1
            fail = _broken(r, th)
            if record:
                traj[steps, 0] = r
                traj[steps, 1] = th
                traj[steps, 2] = om
        if fail != 0:
            status[i] = fail
            continue
        if fracs[i] > 0.0:
            rf, thf, omf, rdf = _swing(g, rmin, rmax, rdlo, rdhi, r, th, om, rdot_des, fracs[i])
            status[i] = _broken(rf, thf)
            out[i, 0] = rf
            out[i, 1] = thf
            out[i, 2] = omf
            out[i, 3] = rdf
        else:
            out[i, 0] = r
            out[i, 1] = th
            out[i, 2] = om
            out[i, 3] = rd
    return out, status, traj[: steps + 1]


def step_swing(params: ModelParams, s: PendulumState, r1dot_des: float, dt: float) -> PendulumState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not s.r1 > 0:
        raise DegenerateState(f"r1={s.r1} must be positive")
    r, th, om, rd = _swing(params.g, params.r_bounds[0], params.r_bounds[1], params.rdot_bounds[0],
                           params.rdot_bounds[1], s.r1, s.theta1, s.theta1dot, float(r1dot_des), float(dt))
    return PendulumState(s.c1, r, th, rd, om)


def _step_count(delta: float, dt: float) -> tuple:
    n = int(math.floor(delta / dt + 1e-9))
    frac = delta - n * dt
    if frac <= 1e-9 * dt:
        frac = 0.0
    return n, frac


def phase_states(
    params: ModelParams,
    s: PendulumState,
    r1dot_des: float,
    deltas: Sequence[float],
    trace: Optional[list] = None,
    pivot_x: float = 0.0,
) -> list:
    """Pre-impact states for several phase durations along one swing trajectory.

    Each duration is realised as whole integrator steps plus one fractional
    step branched off the shared trajectory, so the result for ``delta`` is
    bit-identical to integrating that duration on its own.  Entries are
    ``PendulumState`` or ``Failure``.  When ``trace`` is a list, COM samples
    ``(t, x, y)`` of the longest duration are appended to it.
    """
    if not s.r1 > 0:
        raise DegenerateState(f"r1={s.r1} must be positive")
    dt = params.integrator_dt
    plan = [_step_count(d, dt) for d in deltas]
    order = sorted(range(len(deltas)), key=lambda i: plan[i])
    ns = np.array([plan[i][0] for i in order], dtype=np.int64)
    fracs = np.array([plan[i][1] for i in order], dtype=np.float64)
    out, status, traj = _phase_kernel(
        params.g, params.r_bounds[0], params.r_bounds[1], params.rdot_bounds[0], params.rdot_bounds[1],
        dt, s.r1, s.theta1, s.theta1dot, s.r1dot, float(r1dot_des), ns, fracs, trace is not None,
    )
    res: list = [None] * len(deltas)
    for pos, i in enumerate(order):
        if status[pos]:
            res[i] = Failure(_FAILURES[int(status[pos])])
        elif ns[pos] == 0 and fracs[pos] == 0.0:
            res[i] = s
        else:
            row = out[pos]
            res[i] = PendulumState(s.c1, float(row[0]), float(row[1]), float(row[3]), float(row[2]))
    if trace is not None:
        for n, (r, th, _) in enumerate(traj):
            trace.append((n * dt, pivot_x + r * math.sin(th), r * math.cos(th)))
        last = res[order[-1]] if order else None
        if isinstance(last, PendulumState) and fracs[-1] > 0.0:
            trace.append((ns[-1] * dt + fracs[-1], pivot_x + last.r1 * math.sin(last.theta1),
                          last.r1 * math.cos(last.theta1)))
    return res


def simulate_phase(params: ModelParams, s: PendulumState, a: AbstractAction,
                   pivot_x: float = 0.0, trace: Optional[list] = None):
    """Swing for ``a.delta`` seconds; returns ``(s_pre, pivot_x)`` or a ``Failure``."""
    _check_continuous(params, a)
    res = phase_states(params, s, a.r1dot_des, [a.delta], trace=trace, pivot_x=pivot_x)[0]
    if isinstance(res, Failure):
        return res
    return res, pivot_x


# -- impact ------------------------------------------------------------------

def stopper_geometry(params: ModelParams, pivot_x: float, s_pre: PendulumState, theta2: float) -> tuple:
    if not abs(theta2) < HALF_PI:
        raise InfeasibleStopper(f"theta2={theta2} not in (-pi/2, pi/2)")
    x1, y1, _, _ = com_kinematics(pivot_x, s_pre)
    if not y1 > 0:
        raise InfeasibleStopper("COM is not above the ground")
    x2 = x1 + y1 * math.tan(theta2)
    r2 = y1 / math.cos(theta2)
    lo, hi = params.r2_bounds
    if not lo <= r2 <= hi:
        raise InfeasibleStopper(f"stopper length {r2:.6g} outside {params.r2_bounds}")
    return x2, 0.0, r2


def impact_impulse(params: ModelParams, x1: float, x2: float, y2dot_pre: float) -> float:
    if y2dot_pre >= 0.0:
        return 0.0
    return -y2dot_pre / (1.0 / params.M + (x2 - x1) ** 2 / params.I)


def resolve_impact(params: ModelParams, pivot_x: float, s_pre: PendulumState,
                   theta2: float, c2: int) -> ImpactResult:
    x1, y1, x1dot, y1dot = com_kinematics(pivot_x, s_pre)
    x2, _, r2 = stopper_geometry(params, pivot_x, s_pre, theta2)
    # lever arm from the COM, independent of where the pivot sits
    d = y1 * math.tan(theta2)
    omega = -s_pre.theta1dot
    y2dot_pre = y1dot + omega * d
    j = impact_impulse(params, 0.0, d, y2dot_pre)
    y1dot_post = y1dot + j / params.M
    omega_post = omega + j * d / params.I
    y2dot_post = y1dot_post + omega_post * d
    # re-anchor at the stopper tip; COM sits at angle -theta2 about it
    th = -theta2
    st, ct = math.sin(th), math.cos(th)
    rdot = x1dot * st + y1dot_post * ct
    thdot = (x1dot * ct - y1dot_post * st) / r2
    state = PendulumState(int(c2), r2, th, rdot, thdot)
    return ImpactResult(state, j, x2, y2dot_pre, y2dot_post, omega, omega_post)


# -- full transition ---------------------------------------------------------

def _check_continuous(params: ModelParams, a: AbstractAction) -> None:
    for value, (lo, hi), name in (
        (a.theta2, params.theta2_bounds, "theta2"),
        (a.delta, params.delta_bounds, "delta"),
        (a.r1dot_des, params.rdot_bounds, "r1dot_des"),
    ):
        if not lo <= value <= hi:
            raise ActionOutOfBounds(f"{name}={value} outside [{lo}, {hi}]")


def check_action(params: ModelParams, s: PendulumState, a: AbstractAction) -> None:
    _check_continuous(params, a)
    if not 0 <= a.c2 < params.n_contacts:
        raise DisallowedContact(f"contact {a.c2} out of range")
    if not params.contact_adjacency[s.c1][a.c2]:
        raise DisallowedContact(f"contact {s.c1} -> {a.c2} not allowed")


def failure_outcome(params: ModelParams, reason: str, pivot_x: float = 0.0, trace=None) -> TransitionOutcome:
    return TransitionOutcome(None, params.failure_impulse, 0.0, True, pivot_x, reason, trace)


def outcome_from_pre(params: ModelParams, pre, pivot_x: float, theta2: float, c2: int,
                     trace=None) -> TransitionOutcome:
    """Finish a transition given the result of the swing phase."""
    if isinstance(pre, Failure):
        return failure_outcome(params, pre.reason, pivot_x, trace)
    try:
        hit = resolve_impact(params, pivot_x, pre, theta2, c2)
    except InfeasibleStopper:
        return failure_outcome(params, "infeasible-stopper", pivot_x, trace)
    s_next = hit.state
    return TransitionOutcome(
        s_next, hit.impulse, reward_from_impulse(hit.impulse), s_next.terminal, hit.pivot_x, None, trace
    )


def transition(params: ModelParams, s: PendulumState, a: AbstractAction,
               pivot_x: float = 0.0, trace: bool = False) -> TransitionOutcome:
    check_action(params, s, a)
    samples = [] if trace else None
    pre = phase_states(params, s, a.r1dot_des, [a.delta], trace=samples, pivot_x=pivot_x)[0]
    return outcome_from_pre(params, pre, pivot_x, a.theta2, a.c2, trace=samples)
