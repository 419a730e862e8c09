import numpy as np
import pytest

from saltseg.model_arch import LayerSpec

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_specs():
    """Two conv/pool stages on 16x16, then fused and plain resizes down to 13x13."""
    return [
        LayerSpec("conv", filters=4, kernel=(3, 3), activation="relu"),
        LayerSpec("maxpool"),
        LayerSpec("conv", filters=4, kernel=(3, 3), activation="relu"),
        LayerSpec("maxpool"),
        LayerSpec("upsample", target_hw=(8, 8)),
        LayerSpec("conv", filters=3, kernel=(3, 3), activation="relu"),
        LayerSpec("upsample", target_hw=(16, 16)),
        LayerSpec("downsample", target_hw=(13, 13)),
        LayerSpec("conv", filters=1, kernel=(3, 3), activation="linear"),
        LayerSpec("output", activation="sigmoid"),
    ]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
