import numpy as np
import pytest

from mcnoma.channel import SystemConfig, sample_links


def tiny_config(nf, m, seed, **kw):
    """Small instance with moderate demands so the dynamic-programming oracle stays exact-ish."""
    kw.setdefault("rate_range", (1.0, 3.0))
    return SystemConfig(nf, m, seed=seed, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scenario_4x7():
    return sample_links(SystemConfig(4, 7, seed=2))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Records one PASS/FAIL line per criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
