import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def warm_jit():
    """Load (or compile) the numba kernels once so timed checks measure runs only."""
    from ekflab.filter import IntegratorSettings
    from ekflab.scenarios import get_scenario, run_scenario

    short = {"integrator": {"t_end": 0.05}}
    for name in ("kd-diverge", "linear-a2-positive", "sine-chain-small-error"):
        run_scenario(get_scenario(name, short))
    return IntegratorSettings()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
