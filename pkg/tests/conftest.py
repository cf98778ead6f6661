import numpy as np
import pytest

from weakfine.labels import LabelSpace, SynthConfig, synth_generate


@pytest.fixture
def tiny_space():
    # 3 fine, 2 coarse: 0->0, 1->0, 2->1
    return LabelSpace(["a", "b", "c"], ["A", "B"], [0, 0, 1])


@pytest.fixture(scope="session")
def small_data():
    cfg = SynthConfig(n_fine=8, n_coarse=4, children_per_coarse=2, dim=6, per_class=20)
    return synth_generate(cfg, 3)


def random_stochastic(rng, n, m=None):
    M = rng.random((n, m or n)) + 1e-3
    return M / M.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria append (number, passed, detail); printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE, key=lambda r: (int(r[0].rstrip("ab")), r[0])):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
