import numpy as np
import pytest

from lipcert import ActivationSpec, Network

# Region center used throughout the experiments, tiled to any width.
CENTER_PATTERN = np.array([0.4, 1.8, -0.5, -1.3, 0.9])


def center_for(dim: int) -> np.ndarray:
    return np.resize(CENTER_PATTERN, dim)


def random_network(depth, width, act, seed, d0=5, dN=2,
                   norm_range=(0.8, 2.5), bias_scale=0.1) -> Network:
    """Random test network with per-layer spectral norms in norm_range."""
    rng = np.random.default_rng(seed)
    dims = [d0] + [width] * (depth - 1) + [dN]
    ws, bs = [], []
    for rows, cols in zip(dims[1:], dims[:-1]):
        target = rng.uniform(*norm_range)
        G = rng.standard_normal((rows, cols))
        ws.append(G * (target / np.linalg.norm(G, ord=2)))
        bs.append(bias_scale * rng.standard_normal(rows))
    return Network(tuple(ws), tuple(bs), act)


@pytest.fixture
def scalar_relu_net() -> Network:
    """W1 = 2, W2 = 1, zero biases: certified bound is exactly 2."""
    return Network((np.array([[2.0]]), np.array([[1.0]])),
                   (np.array([0.0]), np.array([0.0])),
                   ActivationSpec("relu"))


def random_spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T) + 0.1 * scale * np.eye(n)
