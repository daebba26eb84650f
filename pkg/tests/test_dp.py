import itertools

import numpy as np
import pytest

from fallmdp.dp import (
    TUPLE_COLUMNS,
    DiscretizationSpec,
    DpSolver,
    ExperienceTuple,
    generate_tuples,
    read_tuples,
    solve_rollouts,
    state_key,
    write_tuples,
)
from fallmdp.errors import ConfigInvalid, MalformedFile, NoFeasibleAction
from fallmdp.model import AbstractAction, ModelParams, PendulumState, transition

FINE = (1e-12,) * 4


def grid_actions(p, spec, c1):
    th, de, rd = spec.axes(p)
    for (i, a), (j, b), (k, c) in itertools.product(enumerate(th), enumerate(de), enumerate(rd)):
        for c2 in p.allowed_successors(c1):
            yield (i, j, k, c2), AbstractAction(a, b, c, c2)


def brute_value(p, spec, s, depth):
    """Exhaustive max-min enumeration without any caching."""
    if s.terminal:
        return 1.0
    if depth == spec.max_depth:
        return 0.0
    best = 0.0
    for _, a in grid_actions(p, spec, s.c1):
        o = transition(p, s, a)
        if o.failed:
            continue
        v = o.reward if o.terminal else min(o.reward, brute_value(p, spec, o.next_state, depth + 1))
        best = max(best, v)
    return best


def brute_best(p, spec, s):
    """First grid index (lexicographic) reaching the exhaustive optimum."""
    best, arg = -1.0, None
    for idx, a in grid_actions(p, spec, s.c1):
        o = transition(p, s, a)
        if o.failed:
            continue
        v = o.reward if o.terminal else min(o.reward, brute_value(p, spec, o.next_state, 1))
        if v > best:
            best, arg = v, (idx, a)
    return best, arg


def random_instance(rng):
    n = int(rng.integers(1, 4))
    adj = rng.random((n, n)) < 0.6
    adj[np.arange(n), rng.integers(0, n, n)] = True
    p = ModelParams(n_contacts=n, contact_adjacency=adj.tolist())
    spec = DiscretizationSpec(int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                              FINE, int(rng.integers(1, 3)))
    s = PendulumState(int(rng.integers(n)), rng.uniform(0.15, 0.26), rng.uniform(-0.4, 0.4),
                      rng.uniform(-0.2, 0.2), rng.uniform(0.5, 3.0))
    return p, spec, s


def test_spec_validation():
    with pytest.raises(ConfigInvalid):
        DiscretizationSpec(n_theta2=0)
    with pytest.raises(ConfigInvalid):
        DiscretizationSpec(state_quant=(1e-3, 0.0, 1e-3, 1e-3))
    with pytest.raises(ConfigInvalid):
        DiscretizationSpec(max_depth=0)
    spec = DiscretizationSpec(2, 3, 1, (1e-2,) * 4, 4)
    assert DiscretizationSpec.from_dict(spec.to_dict()) == spec


def test_axes_inclusive_and_midpoint():
    p = ModelParams()
    th, de, rd = DiscretizationSpec(3, 2, 1).axes(p)
    assert th == pytest.approx([-0.2, 0.35, 0.9])
    assert de == [0.05, 0.2]
    assert rd == [0.0]


def test_state_key_rounds_to_nearest():
    spec = DiscretizationSpec(state_quant=(0.01, 0.01, 0.01, 0.01))
    a = state_key(PendulumState(1, 0.2049, 0.1, 0.0, 1.0), spec)
    b = state_key(PendulumState(1, 0.1951, 0.1, 0.0, 1.0), spec)
    c = state_key(PendulumState(1, 0.2051, 0.1, 0.0, 1.0), spec)
    assert a == b == (1, (20, 10, 0, 100))
    assert c != a


def test_terminal_state_value_one():
    solver = DpSolver(ModelParams(), DiscretizationSpec())
    assert solver.solve_value(PendulumState(0, 0.2, 0.1, 0.0, -0.5)) == 1.0
    plan = solver.extract_rollout(PendulumState(0, 0.2, 0.1, 0.0, 0.0))
    assert plan.actions == [] and plan.value == 1.0 and plan.terminated


def test_single_path_value():
    p = ModelParams(n_contacts=1)
    spec = DiscretizationSpec(1, 1, 1, FINE, 1)
    s = PendulumState(0, 0.2, -0.35, 0.0, 0.8)
    th, de, rd = spec.axes(p)
    o = transition(p, s, AbstractAction(th[0], de[0], rd[0], 0))
    assert o.terminal and not o.failed
    assert DpSolver(p, spec).solve_value(s) == o.reward
    a, v = DpSolver(p, spec).best_action(s)
    assert a == AbstractAction(th[0], de[0], rd[0], 0) and v == o.reward


def test_budget_exhaustion_is_zero():
    p = ModelParams(n_contacts=1)
    spec = DiscretizationSpec(1, 1, 1, FINE, 1)
    s = PendulumState(0, 0.2, 0.3, 0.0, 2.5)
    o = transition(p, s, AbstractAction(*(ax[0] for ax in spec.axes(p)), 0))
    assert not o.terminal
    assert DpSolver(p, spec).solve_value(s) == 0.0
    plan = DpSolver(p, spec).extract_rollout(s)
    assert len(plan.actions) == 1 and not plan.terminated and plan.value == 0.0


def test_memoized_equals_brute_force():
    rng = np.random.default_rng(2024)
    nontrivial = tried = 0
    while nontrivial < 20:
        tried += 1
        assert tried < 200
        p, spec, s = random_instance(rng)
        expected = brute_value(p, spec, s, 0)
        assert DpSolver(p, spec).solve_value(s) == expected
        nontrivial += 0.0 < expected < 1.0


def test_memoized_equals_brute_force_full_grid():
    p = ModelParams(n_contacts=2)
    spec = DiscretizationSpec(3, 3, 3, FINE, 2)
    for s in (PendulumState(0, 0.2, 0.3, 0.0, 1.2), PendulumState(1, 0.22, 0.1, 0.1, 2.0)):
        expected = brute_value(p, spec, s, 0)
        assert 0.0 < expected < 1.0
        assert DpSolver(p, spec).solve_value(s) == expected
        a, v = DpSolver(p, spec).best_action(s)
        assert (v, a) == (expected, brute_best(p, spec, s)[1][1])


def test_best_action_matches_brute_force_with_ties():
    rng = np.random.default_rng(7)
    for _ in range(8):
        p, spec, s = random_instance(rng)
        v, arg = brute_best(p, spec, s)
        if arg is None:
            with pytest.raises(NoFeasibleAction):
                DpSolver(p, spec).best_action(s)
            continue
        a, value = DpSolver(p, spec).best_action(s)
        assert value == v
        assert a == arg[1]


def test_tie_prefers_lowest_contact():
    # contact labels do not change the physics, so the two successors tie
    p = ModelParams(n_contacts=2)
    spec = DiscretizationSpec(2, 2, 1, FINE, 2)
    s = PendulumState(1, 0.2, 0.3, 0.0, 1.5)
    a, _ = DpSolver(p, spec).best_action(s)
    assert a.c2 == 0


def test_value_monotone_in_budget_and_bounded():
    p = ModelParams(n_contacts=2)
    s = PendulumState(0, 0.2, 0.3, 0.0, 2.5)
    values = [DpSolver(p, DiscretizationSpec(3, 3, 2, (1e-3,) * 4, d)).solve_value(s) for d in (1, 2, 3)]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert values == sorted(values)


def test_cache_clear_does_not_change_values():
    p = ModelParams(n_contacts=2)
    spec = DiscretizationSpec(3, 3, 2, (1e-3,) * 4, 3)
    states = [PendulumState(0, 0.2, 0.3, 0.0, 2.5), PendulumState(0, 0.21, 0.33, 0.01, 2.2)]
    solver = DpSolver(p, spec)
    warm = [solver.solve_value(s) for s in states]
    assert solver.cache
    solver.clear_cache()
    assert not solver.cache
    cold = [DpSolver(p, spec).solve_value(s) for s in states]
    assert warm == cold == [solver.solve_value(s) for s in states]


def test_plan_value_is_min_reward_and_matches_solver():
    p = ModelParams(n_contacts=2)
    spec = DiscretizationSpec(3, 3, 2, FINE, 2)
    s = PendulumState(0, 0.2, 0.3, 0.0, 1.2)
    plan = DpSolver(p, spec).extract_rollout(s)
    assert plan.terminated
    assert plan.value == min(plan.rewards) == 1.0 / (1.0 + max(plan.impulses))
    assert plan.value == DpSolver(p, spec).solve_value(s)
    assert len(plan.actions) == len(plan.impulses) == len(plan.rewards) <= spec.max_depth


def test_no_feasible_action():
    p = ModelParams(n_contacts=1, delta_bounds=(0.3, 0.4))
    spec = DiscretizationSpec(2, 2, 1, FINE, 2)
    s = PendulumState(0, 0.2, 1.3, 0.0, 5.0)
    with pytest.raises(NoFeasibleAction):
        DpSolver(p, spec).best_action(s)
    plan = DpSolver(p, spec).extract_rollout(s)
    assert plan.actions == [] and plan.value == 0.0


def test_rollouts_deterministic_and_thread_independent():
    p = ModelParams(n_contacts=2)
    spec = DiscretizationSpec(3, 3, 2, (1e-3,) * 4, 2)
    rng = np.random.default_rng(0)
    states = [PendulumState(0, rng.uniform(0.18, 0.24), rng.uniform(0.2, 0.4), 0.0, rng.uniform(1.5, 3))
              for _ in range(4)]
    one = solve_rollouts(p, spec, states, threads=1)
    again = solve_rollouts(p, spec, states, threads=1)
    two = solve_rollouts(p, spec, states, threads=2)
    assert [x.to_dict() for x in one] == [x.to_dict() for x in again] == [x.to_dict() for x in two]


def test_generate_tuples_chain():
    p = ModelParams(n_contacts=2)
    spec = DiscretizationSpec(3, 3, 2, (1e-3,) * 4, 3)
    assert generate_tuples(p, spec, []) == []
    s = PendulumState(0, 0.2, 0.3, 0.0, 2.5)
    plan = DpSolver(p, spec).extract_rollout(s)
    tuples = generate_tuples(p, spec, [s])
    assert len(tuples) == len(plan.actions) >= 2
    for t0, t1 in zip(tuples, tuples[1:]):
        assert t0.s_next == t1.s and not t0.terminal
    assert tuples[0].s == s
    assert all(t.c == a.c2 and 0.0 <= t.r <= 1.0 for t, a in zip(tuples, plan.actions))


def test_tuple_file_round_trip(tmp_path):
    p = ModelParams(n_contacts=2)
    spec = DiscretizationSpec(2, 3, 2, (1e-3,) * 4, 3)
    rng = np.random.default_rng(1)
    states = [PendulumState(0, rng.uniform(0.18, 0.24), rng.uniform(0.2, 0.4), 0.0, rng.uniform(1.5, 3))
              for _ in range(5)]
    tuples = generate_tuples(p, spec, states)
    tuples.append(ExperienceTuple(states[0], (0.1, 0.2, 0.0), None, 0.0, 1, True))
    path = tmp_path / "t.csv"
    write_tuples(path, tuples)
    back = read_tuples(path)
    assert back == tuples
    write_tuples(tmp_path / "u.csv", back)
    assert (tmp_path / "u.csv").read_bytes() == path.read_bytes()
    assert path.read_text().splitlines()[0] == ",".join(TUPLE_COLUMNS)


def test_tuple_file_empty_and_malformed(tmp_path):
    path = tmp_path / "t.csv"
    write_tuples(path, [])
    assert read_tuples(path) == []
    path.write_text("a,b\n")
    with pytest.raises(MalformedFile):
        read_tuples(path)
    path.write_text(",".join(TUPLE_COLUMNS) + "\n0,0.2,0.1\n")
    with pytest.raises(MalformedFile):
        read_tuples(path)
    path.write_text(",".join(TUPLE_COLUMNS) + "\n" + ",".join(["x"] * len(TUPLE_COLUMNS)) + "\n")
    with pytest.raises(MalformedFile):
        read_tuples(path)
