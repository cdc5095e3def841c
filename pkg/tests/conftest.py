import numpy as np
import pytest

from photocal.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def default_seq():
    """The default 200-frame noiseless synthetic sequence."""
    return generate(SynthSpec())


@pytest.fixture(scope="session")
def small_seq():
    return generate(SynthSpec(seed=3, frames=30, width=48, height=40, n_points=80, texture_cells=6))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        lines.append((number, f"[{'PASS' if ok else 'FAIL'}] #{number} {title}: {detail}"))
        print(lines[-1][1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
