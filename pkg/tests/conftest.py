import numpy as np
import pytest


def central_difference(f, x: np.ndarray, idx, h: float = 1e-5) -> float:
    """d f / d x[idx] by a central difference; x is modified and restored in place."""
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def relu_pattern(spec, params, x) -> list:
    """On/off state of every piecewise-linear unit of ``spec`` on batch ``x``."""
    from bindedvae.nn import mlp_forward
    _, tape = mlp_forward(spec, params, x)
    return [pre > 0 for layer, pre in zip(spec.layers, tape.pre)
            if layer.activation in ("relu", "leaky_relu")]


def smooth_indices(pattern, x: np.ndarray, rng, k: int, h: float = 1e-5) -> list:
    """k random indices of ``x`` whose +-h perturbation leaves ``pattern()`` unchanged.

    A central difference across a relu kink measures a secant, not the
    derivative, so indices that straddle one are redrawn instead of compared.
    """
    out = []
    for i in rng.permutation(x.size):
        idx = np.unravel_index(i, x.shape)
        old = x[idx]
        x[idx] = old + h
        up = pattern()
        x[idx] = old - h
        down = pattern()
        x[idx] = old
        if all(np.array_equal(a, b) for a, b in zip(up, down)):
            out.append(idx)
            if len(out) == k:
                return out
    raise AssertionError(f"fewer than {k} kink-free indices")


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def sample_indices(rng, shape, k):
    flat = rng.choice(int(np.prod(shape)), size=min(k, int(np.prod(shape))), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
