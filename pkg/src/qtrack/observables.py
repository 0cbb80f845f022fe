"""Tracking of observable expectation values instead of the full propagator.

An orthonormal set of Hermitian operators Theta'_i (trace inner product)
gives the measured vector v_i = Tr(rho(T) Theta'_i). The field is evolved so
that v follows a prescribed path w(s), using the m x m Gram matrix Gamma of
the field gradients of v.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dmorph import DEFAULT_CAP, DEFAULT_RCOND, GMatrix, fluence_free_function
from .dynamics import ControlField, PropagatorTrajectory, dipole_trace, propagate
from .errors import (
    DimensionError,
    IllConditionedWarning,
    InvalidInput,
    InvalidSpectrum,
    NearCriticalSingularity,
    NumericalFailure,
    SingularGamma,
    StalledOptimization,
)
from .landscape import (
    OptimizationTrace,
    StepRecord,
    expectation,
    grad_field,
    response_series,
)
from .linalg import check_hermitian, hermitian_basis, unvec_hermitian, vec_hermitian
from .systems import PAULIS

GAMMA_TOL = 1e-12


# ------------------------------------------------------------------- basis

@dataclass(eq=False)
class ObservableBasis:
    """Raw operators, their orthonormalised span and expansion coefficients.

    ``coeffs[k, i]`` is Tr(raw_k ortho_i), so raw_k = sum_i coeffs[k, i] ortho_i.
    """

    raw: list
    ortho: list
    coeffs: np.ndarray

    @property
    def m(self):
        return len(self.ortho)

    @property
    def dim(self):
        return self.ortho[0].shape[0]


def orthogonalize(raw, tol=1e-10):
    """Modified Gram-Schmidt (with one re-orthogonalisation pass) on vec images.

    Operators whose residual falls below ``tol`` times their norm are dropped.
    """
    raw = [check_hermitian(r, name="observable") for r in raw]
    if not raw:
        raise InvalidInput("need at least one observable")
    n = raw[0].shape[0]
    if any(r.shape != (n, n) for r in raw):
        raise DimensionError("observables differ in shape")
    vecs = [vec_hermitian(r, check=False) for r in raw]
    basis = []
    for v in vecs:
        scale = np.linalg.norm(v)
        if scale == 0.0:
            continue
        r = v.copy()
        for _ in range(2):
            for e in basis:
                r -= np.dot(e, r) * e
        norm = np.linalg.norm(r)
        if norm < tol * max(scale, 1.0):
            continue
        basis.append(r / norm)
    if not basis:
        raise InvalidInput("all observables vanish")
    e = np.array(basis)
    coeffs = np.array(vecs) @ e.T
    return ObservableBasis(raw, list(unvec_hermitian(e)), coeffs)


def default_basis(theta, m):
    """Theta followed by the leading elements of the standard Hermitian basis.

    The identity direction carries no dynamical information (its expectation
    is the trace of rho), so the trace-free part of the standard basis is used.
    """
    theta = check_hermitian(theta, name="theta")
    n = theta.shape[0]
    if not 1 <= m <= n * n - 1:
        raise InvalidInput(f"basis size must lie in [1, {n * n - 1}]")
    ident = np.eye(n) / np.sqrt(n)
    extra = [b - np.trace(b).real / n * np.eye(n) for b in hermitian_basis(n)]
    theta0 = theta - np.trace(theta).real / n * np.eye(n)
    full = orthogonalize([ident, theta0] + extra)
    ortho = full.ortho[1:1 + m]
    return orthogonalize(ortho)


def pauli_basis(labels="xyz"):
    """Normalised Pauli operators sigma_k / sqrt(2) for the given labels."""
    pick = {"x": PAULIS[0], "y": PAULIS[1], "z": PAULIS[2]}
    return orthogonalize([pick[c] for c in labels])


# ---------------------------------------------------------- observations

def _final_unitary(traj):
    return traj.final if isinstance(traj, PropagatorTrajectory) else np.asarray(traj)


def observable_vector(traj, rho, basis):
    """v_i = Re Tr(U rho U^dag Theta'_i)."""
    U = _final_unitary(traj)
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != U.shape or basis.dim != U.shape[0]:
        raise DimensionError("rho, basis and propagator dimensions differ")
    rho_t = U @ rho @ U.conj().T
    return np.array([np.trace(rho_t @ o).real for o in basis.ortho])


def grad_observable_vector(traj, dip, rho, basis, quadrature="cell"):
    """Field gradients of each v_i, shape (m, q)."""
    rows = [grad_field(traj, dip, rho, o, quadrature).a0 for o in basis.ortho]
    return np.array(rows)


@dataclass(eq=False)
class GammaMatrix:
    gamma: np.ndarray
    singular_values: np.ndarray
    rows: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    _g: GMatrix = field(default=None, repr=False)

    @property
    def condition(self):
        if self.singular_values[0] == 0.0:
            return float("inf")
        return self._g.condition

    def solve(self, rhs, rcond=DEFAULT_RCOND):
        return self._g.solve(rhs, rcond)


def assemble_Gamma(grad_v, grid, quadrature="cell"):
    """Gamma = grad_v diag(w) grad_v^T with the quadrature weights of the grid."""
    grad_v = np.atleast_2d(np.asarray(grad_v, dtype=float))
    if not np.all(np.isfinite(grad_v)):
        raise InvalidInput("observable gradients must be finite")
    w = grid.weights(quadrature)
    g = GMatrix.from_samples(grad_v.T, w)
    return GammaMatrix(g.g, g.singular_values, grad_v, w, g)


def response_matrix(U, rho, basis):
    """Rows vec(i[rho, U^dag Theta'_i U]); Gamma = B G B^T with this B."""
    rows = []
    for o in basis.ortho:
        c = 1j * (rho @ U.conj().T @ o @ U - U.conj().T @ o @ U @ rho)
        rows.append(vec_hermitian(c, check=False))
    return np.array(rows)


# ----------------------------------------------------------------- targets

@dataclass(eq=False)
class ObservableTrackSpec:
    """Target values w(s_k) and slopes dw/ds on the schedule ``s``.

    ``mode == "scalar"`` tracks the single expectation Tr(rho(T) Theta).
    ``beta`` of None means 1/ds.
    """

    s: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    beta: float | None = None
    mode: str = "vector"
    target_fn: object = field(default=None, repr=False)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.w = np.asarray(self.w, dtype=float).reshape(len(self.s), -1)
        self.dw = np.asarray(self.dw, dtype=float).reshape(self.w.shape)
        if self.mode not in ("vector", "scalar"):
            raise InvalidInput(f"unknown tracking mode {self.mode!r}")
        if self.mode == "scalar" and self.w.shape[1] != 1:
            raise InvalidInput("scalar tracks hold one value per step")
        if np.any(np.diff(self.s) <= 0):
            raise InvalidInput("schedule must be strictly increasing")

    def at(self, s):
        """(w(s), dw/ds(s)) between schedule points.

        Uses the exact target function when one was supplied, otherwise
        linear interpolation of the stored samples.
        """
        if self.target_fn is not None:
            w, dw = self.target_fn(s)
            return np.atleast_1d(np.asarray(w, dtype=float)), np.atleast_1d(np.asarray(dw, dtype=float))
        w = np.array([np.interp(s, self.s, col) for col in self.w.T])
        dw = np.array([np.interp(s, self.s, col) for col in self.dw.T])
        return w, dw


def targets_from_geodesic(track, rho, basis, beta=None):
    """w_i(s) = Tr(Q(s) rho Q(s)^dag Theta'_i) along a geodesic, with exact slopes."""
    rho = np.asarray(rho, dtype=np.complex128)
    comm = 1j * (track.A @ rho - rho @ track.A)
    ops = list(basis.ortho)

    def target(s):
        q = track.at(s)
        rho_s = q @ rho @ q.conj().T
        drho = q @ comm @ q.conj().T
        return ([np.trace(rho_s @ o).real for o in ops],
                [np.trace(drho @ o).real for o in ops])

    pairs = [target(s) for s in track.schedule]
    return ObservableTrackSpec(track.schedule, [p[0] for p in pairs], [p[1] for p in pairs],
                               beta, "vector", target)


def scalar_targets_from_geodesic(track, rho, theta, beta=None):
    """P(s) = Tr(Q(s) rho Q(s)^dag theta) along a geodesic."""
    raw = ObservableBasis([theta], [np.asarray(theta, dtype=np.complex128)], np.ones((1, 1)))
    spec = targets_from_geodesic(track, rho, raw, beta)
    spec.mode = "scalar"
    return spec


def linear_ramp(p_start, p_end, p, beta=None):
    """Scalar target P(s) rising linearly from ``p_start`` to ``p_end`` over s in [0, 1]."""
    s = np.linspace(0.0, 1.0, int(p))
    rate = p_end - p_start
    w = p_start + rate * s
    return ObservableTrackSpec(s, w, np.full_like(s, rate), beta, "scalar",
                               lambda x: (p_start + rate * x, rate))


# ------------------------------------------------------------------- steps

def vector_track_step(Gamma, grad_v, w_target, v_now, dw_ds, beta, f_s, grid,
                      strict=False, cap=DEFAULT_CAP, rcond=DEFAULT_RCOND):
    """Field velocity for vector tracking.

    d eps/ds = f + grad_v^T Gamma^+ (beta (w - v) + dw/ds - a), where
    a = int grad_v f dt.
    """
    grad_v = np.atleast_2d(np.asarray(grad_v, dtype=float))
    q = grad_v.shape[1]
    f = np.zeros(q) if f_s is None else np.asarray(f_s, dtype=float)
    cond = Gamma.condition
    if cond > cap:
        if strict:
            raise SingularGamma(f"Gamma condition number {cond:.3g} exceeds {cap:.3g}")
        warnings.warn(f"Gamma condition number {cond:.3g}; using pseudo-inverse",
                      IllConditionedWarning, stacklevel=2)
    w = Gamma.weights
    a = grad_v @ (w * f)
    rhs = (beta * (np.asarray(w_target, dtype=float) - np.asarray(v_now, dtype=float))
           + np.asarray(dw_ds, dtype=float) - a)
    return f + grad_v.T @ Gamma.solve(rhs, rcond)


def scalar_track_step(gamma_s, a0, P_target, phi_now, dP_ds, beta, f_s, grid,
                      quadrature="cell"):
    """Field velocity for tracking a single expectation value.

    d eps/ds = f + [beta (P - Phi) + dP/ds - int a0 f dt] / gamma * a0.

    Raises
    ------
    NearCriticalSingularity
        When gamma = int a0^2 dt falls below 1e-12.
    """
    if gamma_s < GAMMA_TOL:
        raise NearCriticalSingularity(f"gradient Gram value {gamma_s:.3g} below {GAMMA_TOL}")
    a0 = np.asarray(a0, dtype=float)
    f = np.zeros_like(a0) if f_s is None else np.asarray(f_s, dtype=float)
    w = grid.weights(quadrature)
    coef = (beta * (P_target - phi_now) + dP_ds - np.dot(w, a0 * f)) / gamma_s
    return f + coef * a0


# -------------------------------------------------------------- diagnostics

def _check_partition(mults, name):
    out = [int(m) for m in mults]
    if not out or any(m < 1 or m != m_ for m, m_ in zip(out, mults)):
        raise InvalidSpectrum(f"{name} multiplicities must be positive integers")
    return out


def degenerate_manifold_dim(rho_mults, theta_mults, mode="max", overlaps=None):
    """Dimension bound of the manifold of propagators sharing an observable vector.

    Modes
    -----
    ``"max"``: sum n_i^2 + sum m_j^2 - N.
    ``"aligned"``: sum n_i^2 + sum m_j^2 - sum k_ij^2 for the overlap counts
    ``overlaps`` (rows follow rho blocks, columns theta blocks).
    ``"pure_pair"``: N^2 - N, the value quoted for a pure state paired with a
    rank-one observable; it agrees with ``"max"`` only at N = 2.
    """
    rm = _check_partition(rho_mults, "rho")
    tm = _check_partition(theta_mults, "theta")
    n = sum(rm)
    if sum(tm) != n:
        raise InvalidSpectrum(f"partitions sum to {n} and {sum(tm)}")
    base = sum(x * x for x in rm) + sum(x * x for x in tm)
    if mode == "max":
        return base - n
    if mode == "pure_pair":
        return n * n - n
    if mode in ("aligned", "permutation_aligned"):
        if overlaps is None:
            raise InvalidSpectrum("aligned mode needs the overlap counts")
        k = np.asarray(overlaps, dtype=int)
        if k.shape != (len(rm), len(tm)) or np.any(k < 0):
            raise InvalidSpectrum("overlap matrix shape does not match the partitions")
        if list(k.sum(axis=1)) != rm or list(k.sum(axis=0)) != tm:
            raise InvalidSpectrum("overlap counts are inconsistent with the partitions")
        return base - int(np.sum(k * k))
    raise InvalidInput(f"unknown mode {mode!r}")


# ------------------------------------------------------------------ driver

@dataclass
class ObservableTrackingOptions:
    strict: bool = False
    cap: float = DEFAULT_CAP
    rcond: float = DEFAULT_RCOND
    fluence: bool = False
    fluence_weights: np.ndarray | float = 1.0
    quadrature: str = "cell"
    integrator: str = "euler"
    divergence_tol: float = 0.5

    def __post_init__(self):
        if self.integrator not in ("euler", "rk4"):
            raise InvalidInput(f"unknown integrator {self.integrator!r}")


class _Measurement:
    """Measured vector, its field gradients and Gamma at one field."""

    def __init__(self, model, row, grid, rho, theta, basis, scalar, quadrature):
        self.traj = propagate(model, row, grid)
        self.dip = dipole_trace(self.traj, model.mu)
        if scalar:
            self.grad_v = grad_field(self.traj, self.dip, rho, theta, quadrature).a0[None, :]
            self.v = np.array([expectation(self.traj.final, rho, theta)])
        else:
            self.grad_v = grad_observable_vector(self.traj, self.dip, rho, basis, quadrature)
            self.v = observable_vector(self.traj, rho, basis)
        self.gamma = assemble_Gamma(self.grad_v, grid, quadrature)


def _obs_velocity(meas, row, w, dw, beta, ds, grid, scalar, opts):
    f = fluence_free_function(row, opts.fluence_weights, ds) if opts.fluence else None
    if scalar:
        return scalar_track_step(float(meas.gamma.gamma[0, 0]), meas.grad_v[0], w[0],
                                 meas.v[0], dw[0], beta, f, grid, opts.quadrature)
    with warnings.catch_warnings():
        if not opts.strict:
            warnings.simplefilter("ignore", IllConditionedWarning)
        return vector_track_step(meas.gamma, meas.grad_v, w, meas.v, dw, beta, f, grid,
                                 opts.strict, opts.cap, opts.rcond)


def run_observable_tracking(model, field0, spec, basis, rho, theta=None, options=None,
                            trace=None):
    """Evolve the field so the measured observables follow ``spec``.

    Vector mode uses ``basis``; scalar mode tracks Tr(rho(T) theta) and
    ignores ``basis``. ``theta`` (if given) is recorded as Phi. The s-update
    is explicit Euler or classical RK4 (``options.integrator``); RK4 stages
    read the targets at intermediate s through ``spec.at``.

    Raises
    ------
    NearCriticalSingularity
        Scalar mode at a point where the gradient vanishes.
    SingularGamma
        Strict mode with an ill-conditioned Gamma.
    """
    opts = options or ObservableTrackingOptions()
    if not isinstance(field0, ControlField):
        raise InvalidInput("field0 must be a ControlField")
    if model.morphing:
        raise InvalidInput("observable tracking needs a static model")
    scalar = spec.mode == "scalar"
    if scalar and theta is None:
        raise InvalidInput("scalar tracking needs theta")
    if not scalar and basis is None:
        raise InvalidInput("vector tracking needs an observable basis")
    grid = field0.time_grid
    rho = np.asarray(rho, dtype=np.complex128)
    row = field0.initial.copy()
    trace = trace if trace is not None else OptimizationTrace()

    def measure(r):
        return _Measurement(model, r, grid, rho, theta, basis, scalar, opts.quadrature)

    n = len(spec.s)
    for k in range(n):
        s = float(spec.s[k])
        meas = measure(row)
        err = float(np.linalg.norm(spec.w[k] - meas.v))
        phi = gnorm = None
        if theta is not None:
            phi = expectation(meas.traj.final, rho, theta)
            gnorm = grad_field(meas.traj, meas.dip, rho, theta, opts.quadrature).norm()
        trace.append(StepRecord(s, phi, gnorm, grid.fluence(row), meas.gamma.condition, err,
                                meas.traj.final.copy()))
        if err > opts.divergence_tol:
            trace.stop_reason = "diverged"
            raise StalledOptimization(f"observable tracking error {err:.3g} at s = {s:.6g}")
        if k == n - 1:
            break
        ds = float(spec.s[k + 1] - s)
        beta = 1.0 / ds if spec.beta is None else float(spec.beta)
        v1 = _obs_velocity(meas, row, spec.w[k], spec.dw[k], beta, ds, grid, scalar, opts)
        if opts.integrator == "euler":
            row = row + ds * v1
        else:
            vs = [v1]
            for frac in (0.5, 0.5, 1.0):
                r_st = row + frac * ds * vs[-1]
                w_st, dw_st = spec.at(s + frac * ds)
                vs.append(_obs_velocity(measure(r_st), r_st, w_st, dw_st, beta, ds, grid,
                                        scalar, opts))
            row = row + ds / 6.0 * (vs[0] + 2 * vs[1] + 2 * vs[2] + vs[3])
        if not np.all(np.isfinite(row)):
            raise NumericalFailure(f"field became non-finite at s = {s:.6g}")
    trace.stop_reason = "completed"
    trace.final_field = row
    return trace
