"""Schroedinger propagation of a dipole-coupled system under a sampled field.

Conventions (hbar = 1):

* step Hamiltonian ``H(t) = H0 - mu * eps(t)``;
* the field is piecewise constant, taking the value ``eps[j]`` on the cell
  ``[t_j, t_{j+1})``, so the last sample never influences the dynamics;
* each cell propagator is ``exp(-i H_j dt)``, computed from the
  eigendecomposition of ``H_j``.

Two quadratures over the time grid are available wherever an integral over
``t`` of a dipole function is needed:

``"cell"``
    Cell-averaged interaction-picture operators with weight ``dt`` per cell.
    With this choice ``dU(T)/d eps_j = i U(T) mu_bar_j dt`` holds exactly for
    the discretised dynamics, so gradients and tracking steps are exact
    first-order derivatives of the propagation.
``"trapezoid"``
    Point samples ``mu(t_j)`` with trapezoid weights; a plain quadrature of
    the continuous-time integrals.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import DimensionError, InvalidField, InvalidInput, NumericalFailure
from .linalg import HERMITIAN_TOL, check_hermitian

QUADRATURES = ("cell", "trapezoid")


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Internal Hamiltonian and dipole operator, optionally morphed in ``s``.

    When ``morph_start`` and ``morph_end`` are given (each a ``(H0, mu)``
    pair) the model at algorithmic time ``s`` in [0, 1] interpolates
    linearly between them; ``H0``/``mu`` are then ignored by :meth:`at`.
    """

    H0: np.ndarray
    mu: np.ndarray
    morph_start: tuple | None = None
    morph_end: tuple | None = None

    def __post_init__(self):
        h0 = check_hermitian(self.H0, HERMITIAN_TOL, "H0")
        mu = check_hermitian(self.mu, HERMITIAN_TOL, "mu")
        if h0.shape != mu.shape:
            raise DimensionError(f"H0 {h0.shape} and mu {mu.shape} differ in shape")
        if h0.shape[0] < 2:
            raise InvalidInput("Hilbert dimension must be at least 2")
        object.__setattr__(self, "H0", h0)
        object.__setattr__(self, "mu", mu)
        if (self.morph_start is None) != (self.morph_end is None):
            raise InvalidInput("morph_start and morph_end must be given together")
        if self.morph_start is not None:
            ends = []
            for label, pair in (("morph_start", self.morph_start), ("morph_end", self.morph_end)):
                h, m = pair
                h = check_hermitian(h, HERMITIAN_TOL, f"{label}.H0")
                m = check_hermitian(m, HERMITIAN_TOL, f"{label}.mu")
                if h.shape != h0.shape or m.shape != h0.shape:
                    raise DimensionError(f"{label} matrices must be {h0.shape}")
                ends.append((h, m))
            object.__setattr__(self, "morph_start", ends[0])
            object.__setattr__(self, "morph_end", ends[1])

    @property
    def dim(self):
        return self.H0.shape[0]

    @property
    def morphing(self):
        return self.morph_start is not None

    def at(self, s):
        """Static model at algorithmic time ``s`` (identity when not morphing)."""
        if not self.morphing:
            return self
        (h_a, m_a), (h_b, m_b) = self.morph_start, self.morph_end
        return SystemModel((1 - s) * h_a + s * h_b, (1 - s) * m_a + s * m_b)

    def derivatives(self):
        """(dH0/ds, dmu/ds); zero matrices when not morphing."""
        if not self.morphing:
            z = np.zeros_like(self.H0)
            return z, z.copy()
        (h_a, m_a), (h_b, m_b) = self.morph_start, self.morph_end
        return h_b - h_a, m_b - m_a

    def is_traceless(self, tol=1e-12):
        mats = [self.H0, self.mu]
        if self.morphing:
            mats += list(self.morph_start) + list(self.morph_end)
        return all(abs(np.trace(m)) < tol for m in mats)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    q: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidInput(f"final time must be positive, got {self.T}")
        if int(self.q) != self.q or self.q < 2:
            raise InvalidInput(f"need at least 2 time samples, got {self.q}")
        object.__setattr__(self, "q", int(self.q))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self):
        return self.T / (self.q - 1)

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.q)

    def weights(self, quadrature="cell"):
        """Quadrature weights over the q samples."""
        w = np.full(self.q, self.dt)
        if quadrature == "cell":
            w[-1] = 0.0
        elif quadrature == "trapezoid":
            w[0] *= 0.5
            w[-1] *= 0.5
        else:
            raise InvalidInput(f"unknown quadrature {quadrature!r}")
        return w

    def fluence(self, field_row):
        """Integral of eps(t)**2 for the piecewise-constant field."""
        row = np.asarray(field_row, dtype=float)
        return float(np.dot(self.weights("cell"), row * row))


@dataclass
class ControlField:
    """p x q samples eps(s_k, t_j): one row per algorithmic step."""

    grid: np.ndarray
    time_grid: TimeGrid
    ds: float

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.grid, dtype=float))
        if g.shape[1] != self.time_grid.q:
            raise InvalidField(f"field rows have {g.shape[1]} samples, grid expects {self.time_grid.q}")
        if not np.all(np.isfinite(g)):
            raise InvalidField("field contains non-finite values")
        self.grid = g

    @property
    def p(self):
        return self.grid.shape[0]

    @property
    def initial(self):
        return self.grid[0]


@dataclass(eq=False)
class PropagatorTrajectory:
    """U(t_j, 0) for all q samples plus the per-cell eigendata used to build them."""

    propagators: np.ndarray
    energies: np.ndarray
    eigvecs: np.ndarray
    grid: TimeGrid
    field: np.ndarray = field(repr=False)

    @property
    def final(self):
        return self.propagators[-1]

    @property
    def dim(self):
        return self.propagators.shape[-1]

    def interaction_picture(self, op, quadrature="cell"):
        """Samples of U^dag(t) op U(t) matching the chosen quadrature.

        Returns an array of shape (q, N, N). For ``"cell"`` the first q - 1
        entries are cell averages and the last is the point value at T,
        which carries zero weight.
        """
        op = np.ascontiguousarray(op, dtype=np.complex128)
        k = _backend.kernels
        point = k.conjugate_series(self.propagators, op)
        if quadrature == "trapezoid":
            return point
        if quadrature != "cell":
            raise InvalidInput(f"unknown quadrature {quadrature!r}")
        cells = k.cell_average_series(
            np.ascontiguousarray(self.propagators[:-1]), self.energies,
            self.eigvecs, op, self.grid.dt)
        return np.concatenate([cells, point[-1:]], axis=0)


@dataclass(eq=False)
class DipoleTrace:
    """Interaction-picture dipole mu(t_j) = U^dag(t_j) mu U(t_j).

    ``mus`` holds the q point samples; ``cell_mus`` the q - 1 exact cell
    averages (see the module docstring).
    """

    mus: np.ndarray
    cell_mus: np.ndarray | None
    grid: TimeGrid

    def samples(self, quadrature="cell"):
        """(operators (q, N, N), weights (q,)) for the given quadrature."""
        w = self.grid.weights(quadrature)
        if quadrature == "trapezoid" or self.cell_mus is None:
            if quadrature == "cell":
                raise InvalidInput("cell quadrature needs cell-averaged dipoles")
            return self.mus, w
        return np.concatenate([self.cell_mus, self.mus[-1:]], axis=0), w


def propagate(model, field_row, grid):
    """Time-ordered propagators under a piecewise-constant field.

    Parameters
    ----------
    model : SystemModel
        A static model (call ``model.at(s)`` first when morphing).
    field_row : array_like, shape (q,)
    grid : TimeGrid

    Returns
    -------
    PropagatorTrajectory
    """
    row = np.asarray(field_row, dtype=float)
    if row.shape != (grid.q,):
        raise InvalidField(f"field row must have shape ({grid.q},), got {row.shape}")
    if not np.all(np.isfinite(row)):
        raise InvalidField("field contains non-finite values")
    hams = model.H0[None, :, :] - model.mu[None, :, :] * row[:-1, None, None]
    try:
        energies, vecs = np.linalg.eigh(hams)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"step Hamiltonian diagonalisation failed: {exc}") from exc
    energies = np.ascontiguousarray(energies)
    vecs = np.ascontiguousarray(vecs)
    k = _backend.kernels
    steps = k.step_unitaries(energies, vecs, grid.dt)
    props = k.chain(steps)
    return PropagatorTrajectory(props, energies, vecs, grid, row.copy())


def dipole_trace(traj, mu):
    """Point and cell-averaged interaction-picture dipoles along ``traj``."""
    mu = np.ascontiguousarray(mu, dtype=np.complex128)
    if mu.shape != (traj.dim, traj.dim):
        raise DimensionError(f"dipole shape {mu.shape} does not match propagators ({traj.dim})")
    k = _backend.kernels
    point = k.conjugate_series(traj.propagators, mu)
    cells = k.cell_average_series(
        np.ascontiguousarray(traj.propagators[:-1]), traj.energies,
        traj.eigvecs, mu, traj.grid.dt)
    return DipoleTrace(point, cells, traj.grid)
