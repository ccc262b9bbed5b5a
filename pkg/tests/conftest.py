import numpy as np
import pytest
from hypothesis import settings

from drocox.data import SyntheticConfig, generate_synthetic

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

BENCH_COEFFICIENTS = ((1.0, 1.0, 0.0, 0.0), (-1.0, 0.5, 1.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds():
    cfg = SyntheticConfig(200, (0.7, 0.3), BENCH_COEFFICIENTS, censoring_rate=0.5, seed=3)
    return generate_synthetic(cfg)


@pytest.fixture
def tiny_ds():
    cfg = SyntheticConfig(40, (0.6, 0.4), BENCH_COEFFICIENTS, censoring_rate=0.5, seed=4)
    return generate_synthetic(cfg)


_ACCEPTANCE = pytest.StashKey()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; returns ``record(number, ok, detail)``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        lines.append((number, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
