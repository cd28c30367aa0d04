import numpy as np
import pytest
import torch

from otvm.config import ModelConfig, toy_config

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    """Smallest model that keeps every code path (for gradient and shape tests)."""
    return ModelConfig(
        key_dim=4,
        value_dim=6,
        prop_channels=(4, 4, 6, 8),
        decoder_channels=8,
        alpha_channels=(4, 4, 6, 8, 8),
        alpha_decoder_channels=8,
        ppm_channels=4,
        refine_channels=8,
        alpha_hidden=64,
        refine_hidden=16,
    )


@pytest.fixture
def toy():
    return toy_config()


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, name, passed, detail=""):
        _ACCEPTANCE.append((number, name, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {name}" + (f"  ({detail})" if detail else ""))
