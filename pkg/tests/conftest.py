import pytest

from snblab.converter import CMC, ConverterSpec, StateFeedback


def multiloop_spec(**changes) -> ConverterSpec:
    """Multi-loop buck converter used throughout the worked example."""
    base = dict(v_s=20.0, R=22.0, L=20e-3, C=47e-6, T=400e-6, V_m=1.0, v_r=0.2152,
                scheme=StateFeedback(2.1435, -0.1383))
    base.update(changes)
    return ConverterSpec(**base)


def cmc_spec(v_s=10.0, D=0.85, m_a=1e4, **changes) -> ConverterSpec:
    """Current-mode buck with K = 0.5; the peak-current reference puts the
    steady state at duty ``D`` for source voltage ``v_s``."""
    T, L, R = 10e-6, 100e-6, 40.0
    V_m = m_a * T
    i_c = D * v_s / R + v_s * (1 - D) * D * T / (2 * L) + m_a * T * D
    base = dict(v_s=v_s, R=R, L=L, C=100e-6, T=T, V_m=V_m, v_r=i_c, scheme=CMC())
    base.update(changes)
    return ConverterSpec(**base)


@pytest.fixture
def multiloop():
    return multiloop_spec()


@pytest.fixture
def cmc():
    return cmc_spec()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
