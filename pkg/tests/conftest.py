import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("c2vl", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60)
settings.load_profile("c2vl")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_rows(rng, b, d, dtype=torch.float64):
    x = torch.from_numpy(rng.normal(size=(b, d))).to(dtype)
    return x / x.norm(dim=1, keepdim=True)


@pytest.fixture(scope="session")
def synth_small():
    from c2vl.data import synth_generate
    return synth_generate(3, 10, seed=7)


ACCEPTANCE = []  # (criterion, passed, detail) recorded by test_acceptance.py


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
