import numpy as np
import pytest

from evmopf.pareto import prepare
from evmopf.samples import demo_instance

_CACHE = {}


def prepared_instance(name: str, **kw):
    """Bundled instance with its no-EV baseline stored; cached per session."""
    key = (name, tuple(sorted(kw.items())))
    if key not in _CACHE:
        _CACHE[key] = prepare(demo_instance(name, **kw))
    return _CACHE[key]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def verdict(name: str, ok: bool, detail: str = "") -> bool:
    line = f"{name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
