import numpy as np
import pytest

ACCEPTANCE_LINES = []


def bind_random(layer, rng, dtype=np.float64):
    """Give a standalone layer its own parameter arrays, randomly initialized."""
    views = {name: np.zeros(shape, dtype=dtype) for name, shape in layer.param_shapes()}
    layer.bind(views)
    layer.init_params(rng)
    if getattr(layer, "use_bias", False):
        layer.bias[:] = rng.normal(0, 0.1, layer.bias.shape)
    return layer


def record(number, title, ok, detail=""):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
