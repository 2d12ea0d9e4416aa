import numpy as np
import pytest

from mdprsma.channel import ScenarioParams, build_ensemble, draw_scenario
from mdprsma.rates import PrecoderSolution


def cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_ensemble(seed, s=6, **kw):
    rng = np.random.default_rng(seed)
    return build_ensemble(draw_scenario(ScenarioParams(**kw), rng), s, rng)


def random_solution(ens, rng, scale=2.0):
    sol = PrecoderSolution.zeros(ens.ns2, ens.nt2, ens.ks, ens.kt)
    sol.W = cn(rng, sol.W.shape) * scale
    sol.P = cn(rng, sol.P.shape) * scale
    return sol


@pytest.fixture
def ens():
    return random_ensemble(123)



def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
