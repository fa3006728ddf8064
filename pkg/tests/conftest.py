import numpy as np
import pytest

from neurovio.dataio import FlightSpec, WorldSpec, corrupt_frames, generate_synthetic, split

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def smoke_dataset(n_obs: int = 8, seed: int = 0, shape=(12, 16, 1)):
    """Small flight with ``n_obs`` observations and low-resolution frames."""
    flight = FlightSpec(duration=(n_obs + 1) / 10.0, image_shape=shape)
    return generate_synthetic(WorldSpec(), flight, seed)


def standard_dataset():
    """Standard acceptance dataset: 200 observations, 20% corrupted, 0.8 split."""
    ds = corrupt_frames(generate_synthetic(WorldSpec(), FlightSpec(), 0), 0.2, 0)
    train, test = split(ds, 0.8)
    return ds, train, test


@pytest.fixture(scope="session")
def smoke():
    return smoke_dataset()


def numeric_grad(f, x: np.ndarray, idx, h: float = 1e-5) -> float:
    """Central difference of scalar ``f()`` with respect to ``x[idx]`` (mutated in place)."""
    orig = x[idx]
    x[idx] = orig + h
    fp = f()
    x[idx] = orig - h
    fm = f()
    x[idx] = orig
    return (fp - fm) / (2 * h)


def rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def gradcheck(loss_fn, params, n_probes: int = 20, seed: int = 0, h: float = 1e-5) -> list[float]:
    """Relative errors between backward() and central differences on random probes.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    Probes cycle through ``params`` in random order, one random element at a
    time, so every parameter is hit once there are at least as many probes.
    """
    from neurovio.nn.tensor import backward

    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(params))
    total = sum(p.size for p in params)
    probes: list[tuple[int, int]] = []
    attempt = 0
    while len(probes) < min(n_probes, total) and attempt < 100 * n_probes:
        i = int(order[attempt % len(params)])
        attempt += 1
        probe = (i, int(rng.integers(params[i].size)))
        if probe not in probes:
            probes.append(probe)
    errors = []
    for i, j in probes:
        idx = np.unravel_index(j, params[i].shape)
        num = numeric_grad(lambda: loss_fn().item(), params[i].data, idx, h)
        errors.append(rel_error(float(analytic[i][idx]), num))
    return errors


def full_model_gradcheck(n_probes: int = 60, seed: int = 0):
    """Gradient check of the composed network on a short sequence.

    The sequence routes one step through the IMU-only branch so the visual
    placeholder is exercised next to the CNN, both LSTMs, the heads, the
    auxiliary visual readout and the learned log-variances. Returns ``(errors, parameter names covered)``.
    """
    from neurovio.model import FusionConfig, FusionNet

    ds = smoke_dataset(3, seed=seed, shape=(12, 16, 1))
    net = FusionNet(FusionConfig(image_shape=(12, 16, 1), visual_aux_weight=1.0), seed=seed)
    prevs = [ds.initial_pose] + [o.ground_truth for o in ds.observations[:-1]]
    truths = [o.ground_truth for o in ds]
    route = [False, True, False]

    def loss():
        raw, _ = net.forward_sequence(ds.observations, prevs, route=route)
        return net.loss(raw, truths).total

    params = net.parameters()
    errors = gradcheck(loss, params, n_probes=max(n_probes, len(params)), seed=seed)
    return errors, [p.name for p in params]
