import numpy as np
import pytest

from subspace_defense.matcore import RngStream
from subspace_defense.net import Architecture, init_params


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def jitter_net(net, seed, scale=0.3):
    """Perturb every parameter (biases included) so no gradient is trivially zero."""
    for k, w in net.params.items():
        noise = RngStream(seed, f"jitter/{k}").gaussian(w.size).reshape(w.shape)
        net.params[k] = w + scale * noise
    return net


def small_net(variant="two_layer_linear", activation="tanh", seed=0, input_dim=5, hidden=(7,), feature_dim=6,
              subspace_dim=3, classes=3):
    arch = Architecture(input_dim=input_dim, hidden=hidden, feature_dim=feature_dim, subspace_dim=subspace_dim,
                        classes=classes, defense_variant=variant, activation=activation)
    return jitter_net(init_params(arch, RngStream(seed, "test-net")), seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
