"""Standard operators, the two-level benchmark, and seeded field generators."""

import numpy as np

from .dynamics import SystemModel, TimeGrid

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
IDENTITY2 = np.eye(2, dtype=np.complex128)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)

# Resonant carrier of the benchmark (level splitting of sigma_z).
BENCHMARK_FREQUENCY = 2.0


def projector(n, k):
    """|k><k| in dimension n."""
    p = np.zeros((n, n), dtype=np.complex128)
    p[k, k] = 1.0
    return p


def benchmark_model():
    """H0 = sigma_z, mu = sigma_x."""
    return SystemModel(SIGMA_Z, SIGMA_X)


def benchmark_problem():
    """(model, rho0, theta) for the two-level benchmark: rho0 = |0><0|, theta = sigma_z."""
    return benchmark_model(), projector(2, 0), SIGMA_Z.copy()


def benchmark_grid(T=20.0, q=1001):
    return TimeGrid(T, q)


def resonant_field(grid, rotation=np.pi / 2, frequency=BENCHMARK_FREQUENCY, phase=0.0):
    """Resonant cosine pulse whose (rotating-wave) Rabi angle equals ``rotation``.

    The default quarter-turn leaves the benchmark expectation near zero, a
    generic starting point halfway down the landscape.
    """
    t = grid.times
    amp = rotation / grid.T
    return amp * np.cos(frequency * t + phase)


def random_field(grid, rng, n_modes=4, amplitude=0.1, frequency=BENCHMARK_FREQUENCY, spread=1.0):
    """Sum of ``n_modes`` sinusoids with random amplitudes, phases and detunings."""
    t = grid.times
    amps = amplitude * rng.uniform(0.2, 1.0, n_modes) / np.sqrt(n_modes)
    freqs = frequency + spread * rng.uniform(-1.0, 1.0, n_modes)
    phases = rng.uniform(0.0, 2 * np.pi, n_modes)
    return np.sum(amps[:, None] * np.cos(freqs[:, None] * t[None, :] + phases[:, None]), axis=0)


def random_system(n, rng, gap=1.0, coupling=0.5):
    """Diagonal nondegenerate H0 with a fully coupled real-symmetric dipole."""
    levels = np.cumsum(gap * rng.uniform(0.7, 1.3, n))
    h0 = np.diag(levels - levels.mean()).astype(np.complex128)
    m = coupling * rng.uniform(0.5, 1.0, (n, n))
    mu = np.triu(m, 1)
    mu = (mu + mu.T).astype(np.complex128)
    return SystemModel(h0, mu)
