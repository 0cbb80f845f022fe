"""Tracking of prescribed paths U(T, s) on the unitary group.

The field is evolved in s so that U(T)^dag dU(T)/ds = i Delta(s) for a
Hermitian target increment Delta. To first order this is the linear
constraint

    sum_j w_j vec(mu_j) d eps_j/ds = vec(Delta) + b,

where mu_j are interaction-picture dipoles, w_j quadrature weights and b
compensates any s-dependence of H0 and mu (Hamiltonian morphing).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlField, dipole_trace, propagate
from .errors import (
    IllConditionedWarning,
    InvalidInput,
    NumericalFailure,
    SingularGMatrix,
    StalledOptimization,
)
from .landscape import OptimizationTrace, StepRecord, expectation, grad_field
from .linalg import (
    check_hermitian,
    log_unitary,
    pinv_singular_values,
    unitarity_error,
    vec_hermitian,
)

DEFAULT_CAP = 1e8
DEFAULT_RCOND = 1e-10
INF_RATIO = 1e-12


# ----------------------------------------------------------- Gram matrices

def _condition_from_singular(s):
    if s.size == 0 or s[0] == 0.0:
        raise InvalidInput("condition number of a zero matrix is undefined")
    if s[-1] < INF_RATIO * s[0]:
        return float("inf")
    return float(s[0] / s[-1])


@dataclass(eq=False)
class GMatrix:
    """Weighted Gram matrix of vectorised dipoles plus its SVD."""

    g: np.ndarray
    singular_values: np.ndarray
    vectors: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    _u: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, vectors, weights):
        g = (vectors * weights[:, None]).T @ vectors
        g = 0.5 * (g + g.T)
        u, s, _ = np.linalg.svd(g, hermitian=True)
        return cls(g, s, vectors, weights, u)

    @property
    def condition(self):
        return _condition_from_singular(self.singular_values)

    def solve(self, rhs, rcond=DEFAULT_RCOND):
        """Minimum-norm least-squares solution of g x = rhs."""
        inv = pinv_singular_values(self.singular_values, rcond)
        return self._u @ (inv * (self._u.T @ rhs))

    def range_residual(self, rhs, rcond=DEFAULT_RCOND):
        """Relative norm of the part of ``rhs`` outside the numerical range of g."""
        x = self.solve(rhs, rcond)
        r = self.g @ x - rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))


def assemble_G(dip, grid=None, quadrature="trapezoid"):
    """G = sum_j w_j vec(mu_j) vec(mu_j)^T over the dipole trace.

    ``quadrature="cell"`` uses the cell-averaged dipoles, which makes G the
    exact Jacobian Gram matrix of the discretised propagation.
    """
    ops, w = dip.samples(quadrature)
    vecs = vec_hermitian(ops, check=False)
    return GMatrix.from_samples(vecs, w)


def condition_number(G):
    """sigma_max / sigma_min, or inf when sigma_min < 1e-12 sigma_max."""
    if isinstance(G, GMatrix):
        s = G.singular_values
    else:
        s = np.linalg.svd(np.asarray(G, dtype=float), compute_uv=False)
    return _condition_from_singular(np.asarray(s))


# ---------------------------------------------------------------- geodesic

@dataclass(eq=False)
class GeodesicTrack:
    """Q(s) = U0 exp(i A s), s in [0, 1], with Q(1) = W."""

    U0: np.ndarray
    W: np.ndarray
    A: np.ndarray
    schedule: np.ndarray

    def at(self, s):
        w, v = np.linalg.eigh(self.A)
        return self.U0 @ (v * np.exp(1j * w * s)) @ v.conj().T

    @property
    def length(self):
        return float(np.linalg.norm(self.A))


def geodesic(U0, W, p):
    """Minimal geodesic from U0 to W sampled at p uniform points in [0, 1]."""
    U0 = np.asarray(U0, dtype=np.complex128)
    W = np.asarray(W, dtype=np.complex128)
    for name, u in (("U0", U0), ("W", W)):
        if unitarity_error(u) > 1e-8:
            raise InvalidInput(f"{name} is not unitary")
    if int(p) != p or p < 2:
        raise InvalidInput("a geodesic needs at least 2 points")
    A = log_unitary(U0.conj().T @ W)
    return GeodesicTrack(U0, W, A, np.linspace(0.0, 1.0, int(p)))


def track_delta(Q_next, U_current, ds):
    """Increment Delta with U_current exp(i Delta ds) = Q_next."""
    if ds <= 0:
        raise InvalidInput("ds must be positive")
    return log_unitary(np.asarray(U_current).conj().T @ np.asarray(Q_next)) / ds


# ------------------------------------------------------------ tracking step

def dmorph_step(G, Delta, f_s, dip, b=None, strict=False, cap=DEFAULT_CAP,
                rcond=DEFAULT_RCOND):
    """Field velocity d eps/ds meeting the tracking constraint.

    d eps/ds = f_s + vec(mu_j) . G^+ (vec(Delta) + b - alpha), with
    alpha = sum_j w_j vec(mu_j) f_s(t_j).

    ``G`` must have been assembled from ``dip`` with the quadrature whose
    samples it stores; the step uses the same samples.

    Raises
    ------
    SingularGMatrix
        In strict mode when the condition number exceeds ``cap``.
    """
    vecs, w = G.vectors, G.weights
    q = vecs.shape[0]
    f_s = np.zeros(q) if f_s is None else np.asarray(f_s, dtype=float)
    if f_s.shape != (q,):
        raise InvalidInput(f"free function must have {q} samples")
    cond = G.condition
    if cond > cap:
        if strict:
            raise SingularGMatrix(f"G condition number {cond:.3g} exceeds {cap:.3g}")
        warnings.warn(f"G condition number {cond:.3g}; using pseudo-inverse",
                      IllConditionedWarning, stacklevel=2)
    rhs = vec_hermitian(check_hermitian(Delta, 1e-9, "Delta"), check=False)
    if b is not None:
        rhs = rhs + np.asarray(b, dtype=float)
    alpha = vecs.T @ (w * f_s)
    x = G.solve(rhs - alpha, rcond)
    return f_s + vecs @ x


def constraint_residual(G, step, target):
    """sum_j w_j vec(mu_j) step_j - target."""
    return G.vectors.T @ (G.weights * step) - target


# --------------------------------------------------------------- morphing

@dataclass
class MorphTerm:
    b: np.ndarray


def morph_term(model, field_row, s, grid, traj=None):
    """Compensation vector for the s-dependence of H0 and mu.

    b = int (dH0/ds)(t) - (dmu/ds)(t) eps(t) dt in the interaction picture,
    evaluated with exact cell averages of the piecewise-constant dynamics.
    """
    n2 = model.dim ** 2
    if not model.morphing:
        return MorphTerm(np.zeros(n2))
    dh, dm = model.derivatives()
    if not (np.any(dh) or np.any(dm)):
        return MorphTerm(np.zeros(n2))
    row = np.asarray(field_row, dtype=float)
    if traj is None:
        traj = propagate(model.at(s), row, grid)
    w = grid.weights("cell")
    h_avg = vec_hermitian(traj.interaction_picture(dh, "cell"), check=False)
    m_avg = vec_hermitian(traj.interaction_picture(dm, "cell"), check=False)
    b = h_avg.T @ w - m_avg.T @ (w * row)
    return MorphTerm(b)


# ----------------------------------------------------------- free function

def fluence_free_function(field_row, W_t, ds):
    """f(t) = -eps(t) W(t) / ds; drives the field toward lower fluence."""
    row = np.asarray(field_row, dtype=float)
    W_t = np.broadcast_to(np.asarray(W_t, dtype=float), row.shape)
    if np.any(W_t < 0):
        raise InvalidInput("fluence weights must be non-negative")
    if ds <= 0:
        raise InvalidInput("ds must be positive")
    return -row * W_t / ds


def dirac_kernel_diagnostic(dip, grid=None):
    """Off-diagonal mass of K(t_j, t_l) = Tr(mu(t_j) mu(t_l)).

    Returns 1 - sum_j K_jj^2 / sum_jl K_jl^2, in [0, 1]; zero for a
    perfectly time-local kernel.
    """
    vecs = vec_hermitian(dip.mus, check=False)
    k = vecs @ vecs.T
    total = float(np.sum(k * k))
    if total == 0.0:
        raise InvalidInput("dipole kernel vanishes identically")
    diag = float(np.sum(np.diagonal(k) ** 2))
    return min(1.0, max(0.0, 1.0 - diag / total))


# ------------------------------------------------------------------ driver

CORRECTIONS = ("combined", "separate", "none")


@dataclass
class TrackingOptions:
    """Options for :func:`run_unitary_tracking`.

    correction
        ``"combined"``: Delta steers straight to the next target point;
        ``"separate"``: geodesic velocity plus a correction toward the
        current target point; ``"none"``: geodesic velocity only.
    fluence
        Use the fluence-reducing free function with weights ``fluence_weights``
        (default 1).
    divergence_tol
        Abort with StalledOptimization once ||U - Q||_F exceeds it.
    """

    correction: str = "combined"
    integrator: str = "euler"
    fluence: bool = False
    fluence_weights: np.ndarray | float = 1.0
    strict: bool = False
    cap: float = DEFAULT_CAP
    rcond: float = DEFAULT_RCOND
    quadrature: str = "cell"
    divergence_tol: float = 1.0
    keep_fields: bool = False

    def __post_init__(self):
        if self.correction not in CORRECTIONS:
            raise InvalidInput(f"unknown correction mode {self.correction!r}")
        if self.integrator not in ("euler", "rk4"):
            raise InvalidInput(f"unknown integrator {self.integrator!r}")


class _Stage:
    """Propagation products at one (s, field) point."""

    def __init__(self, model, row, grid, s, quadrature):
        self.model = model.at(s)
        self.traj = propagate(self.model, row, grid)
        self.dip = dipole_trace(self.traj, self.model.mu)
        self.G = assemble_G(self.dip, grid, quadrature)
        self.U = self.traj.final


def _velocity(stage, model, row, grid, s, delta, ds, opts):
    b = morph_term(model, row, s, grid, stage.traj).b if model.morphing else None
    f = fluence_free_function(row, opts.fluence_weights, ds) if opts.fluence else None
    with warnings.catch_warnings():
        if not opts.strict:
            warnings.simplefilter("ignore", IllConditionedWarning)
        return dmorph_step(stage.G, delta, f, stage.dip, b=b, strict=opts.strict,
                           cap=opts.cap, rcond=opts.rcond)


def run_unitary_tracking(model, field0, track, options=None, rho=None, theta=None,
                         trace=None):
    """Drive U(T, s) along ``track`` by integrating the tracking step in s.

    The s-grid is the track schedule. When ``rho`` and ``theta`` are given the
    trace also records Phi and the field-gradient norm at each step.

    Raises
    ------
    SingularGMatrix
        Strict mode and an ill-conditioned G.
    StalledOptimization
        The tracking error exceeded ``divergence_tol``.
    """
    opts = options or TrackingOptions()
    if not isinstance(field0, ControlField):
        raise InvalidInput("field0 must be a ControlField")
    grid = field0.time_grid
    sched = np.asarray(track.schedule, dtype=float)
    targets = [track.at(s) for s in sched]
    row = field0.initial.copy()
    trace = trace if trace is not None else OptimizationTrace()
    if opts.keep_fields:
        trace.fields = [row.copy()]
    trace.meta["geodesic_distance"] = track.length

    def delta_for(stage, k, s_stage, ds):
        if opts.correction == "none":
            return track.A
        if opts.correction == "combined" and s_stage == sched[k]:
            return track_delta(targets[k + 1], stage.U, ds)
        q_here = track.at(s_stage)
        return track.A + log_unitary(stage.U.conj().T @ q_here) / ds

    n = len(sched)
    for k in range(n):
        s = float(sched[k])
        stage = _Stage(model, row, grid, s, opts.quadrature)
        err = float(np.linalg.norm(stage.U - targets[k]))
        phi = gnorm = None
        if rho is not None and theta is not None:
            phi = expectation(stage.U, rho, theta)
            gnorm = grad_field(stage.traj, stage.dip, rho, theta).norm()
        trace.append(StepRecord(s, phi, gnorm, grid.fluence(row), stage.G.condition,
                                err, stage.U.copy()))
        if err > opts.divergence_tol:
            trace.stop_reason = "diverged"
            raise StalledOptimization(f"tracking error {err:.3g} at s = {s:.6g}")
        if k == n - 1:
            break
        ds = float(sched[k + 1] - s)
        v1 = _velocity(stage, model, row, grid, s, delta_for(stage, k, s, ds), ds, opts)
        if opts.integrator == "euler":
            row = row + ds * v1
        else:
            vs = [v1]
            for frac, prev in ((0.5, 0), (0.5, 1), (1.0, 2)):
                s_mid = s + frac * ds
                r_mid = row + frac * ds * vs[prev]
                st = _Stage(model, r_mid, grid, s_mid, opts.quadrature)
                vs.append(_velocity(st, model, r_mid, grid, s_mid,
                                    delta_for(st, k, s_mid, ds), ds, opts))
            row = row + ds / 6.0 * (vs[0] + 2 * vs[1] + 2 * vs[2] + vs[3])
        if not np.all(np.isfinite(row)):
            raise NumericalFailure(f"field became non-finite at s = {s:.6g}")
        if opts.keep_fields:
            trace.fields.append(row.copy())
    trace.stop_reason = trace.stop_reason or "completed"
    trace.final_field = row
    return trace
