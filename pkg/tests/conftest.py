import json

import pytest

from fallmdp.config import desk_config


def small_config_dict(**training):
    """Desk instance shrunk so a full dp/train/eval cycle takes seconds."""
    d = desk_config().to_dict()
    d["discretization"].update(n_theta2=3, n_delta=3, n_rdot=1, max_depth=2)
    d["training"].update(iterations=3, dp_seed_tuples=30, heldout_cases=4, rollouts_per_iteration=2)
    d["training"].update(training)
    d["eval"].update(n_cases=6, profile_cases=[0, 5, 99])
    return d


@pytest.fixture
def small_config(tmp_path):
    def make(name="cfg.json", **training):
        path = tmp_path / name
        path.write_text(json.dumps(small_config_dict(**training)))
        return path
    return make


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line and fail the test if the criterion is missed."""
    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        request.config.stash[_VERDICTS].append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
