"""Objective, gradients, gradient flows and landscape geometry.

The objective is Phi(U) = Tr(U rho U^dag Theta) evaluated at U = U(T).
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .dynamics import ControlField, dipole_trace, propagate
from .errors import (
    DimensionError,
    InvalidInput,
    InvalidSpectrum,
    NumericalFailure,
    StalledOptimization,
)
from .linalg import (
    check_density,
    check_hermitian,
    commutator,
    geodesic_distance,
    log_unitary,
    multiplicities,
    sorted_eigh,
)

MAX_ENUMERATION_DIM = 6


# ---------------------------------------------------------------- objective

def expectation(U, rho, theta):
    """Re Tr(U rho U^dag theta)."""
    U = np.asarray(U, dtype=np.complex128)
    rho = np.asarray(rho, dtype=np.complex128)
    theta = np.asarray(theta, dtype=np.complex128)
    if not (U.shape == rho.shape == theta.shape) or U.ndim != 2:
        raise DimensionError(f"shapes {U.shape}, {rho.shape}, {theta.shape} do not match")
    val = np.trace(U @ rho @ U.conj().T @ theta)
    scale = max(1.0, np.linalg.norm(rho) * np.linalg.norm(theta))
    if abs(val.imag) > 1e-10 * scale:
        raise NumericalFailure(f"expectation has imaginary part {val.imag:.3g}")
    return float(val.real)


def _response_operator(U_T, rho, theta):
    """C = i[rho, U^dag theta U]; a0(t) = Tr(C mu(t))."""
    theta_T = U_T.conj().T @ theta @ U_T
    return 1j * commutator(rho, theta_T)


def response_series(c_op, ops):
    """Tr(C op_j) for a Hermitian C and a stack of Hermitian operators."""
    return np.einsum("ab,jba->j", c_op, ops).real


@dataclass
class GradientField:
    """a0(t_j) = dPhi/d eps(t_j) as a functional derivative (per unit area)."""

    a0: np.ndarray
    weights: np.ndarray

    def norm(self):
        """L2 norm sqrt(int a0^2 dt)."""
        return float(np.sqrt(np.dot(self.weights, self.a0 ** 2)))

    def sup(self):
        return float(np.max(np.abs(self.a0)))


def grad_field(traj, dip, rho, theta, quadrature="cell"):
    """Field gradient of Phi(U(T)).

    With ``"cell"`` quadrature (default) entry j is the exact derivative of
    the discretised objective with respect to the field on cell j, divided by
    dt; the final sample does not act on the dynamics and has zero gradient.
    """
    if dip.grid != traj.grid or dip.mus.shape[0] != traj.propagators.shape[0]:
        raise DimensionError("dipole trace and trajectory come from different grids")
    rho = np.asarray(rho, dtype=np.complex128)
    theta = np.asarray(theta, dtype=np.complex128)
    if rho.shape != (traj.dim, traj.dim) or theta.shape != rho.shape:
        raise DimensionError("rho/theta do not match the propagator dimension")
    c_op = _response_operator(traj.final, rho, theta)
    ops, w = dip.samples(quadrature)
    a0 = response_series(c_op, ops)
    if quadrature == "cell":
        a0[-1] = 0.0
    return GradientField(a0, w)


def grad_unitary(U, rho, theta):
    """Gradient of Phi on U(N): [theta, U rho U^dag] U."""
    U = np.asarray(U, dtype=np.complex128)
    rho = np.asarray(rho, dtype=np.complex128)
    theta = np.asarray(theta, dtype=np.complex128)
    if not (U.shape == rho.shape == theta.shape):
        raise DimensionError("U, rho, theta must share a shape")
    return commutator(theta, U @ rho @ U.conj().T) @ U


# ---------------------------------------------------------- kinematic optima

def kinematic_optimum(rho, theta):
    """A maximiser W of Phi over U(N) and the maximal value.

    W maps the k-th eigenvector of rho onto the k-th eigenvector of theta,
    both ordered by descending eigenvalue.

    Returns
    -------
    W : ndarray
    phi_max : float
    """
    p, v_rho = sorted_eigh(rho)
    lam, v_th = sorted_eigh(theta)
    W = v_th @ v_rho.conj().T
    return W, float(np.dot(p, lam))


def _blocks(counts):
    out, start = [], 0
    for c in counts:
        out.append(slice(start, start + c))
        start += c
    return out


def _block_polar(k_mat, blocks):
    """Block-diagonal unitary Y maximising Re Tr(Y K)."""
    n = k_mat.shape[0]
    y = np.zeros((n, n), dtype=np.complex128)
    for b in blocks:
        u, _, vh = np.linalg.svd(k_mat[b, b])
        y[b, b] = vh.conj().T @ u.conj().T
    return y


def _block_generators(blocks, n):
    gens = []
    for b in blocks:
        idx = range(b.start, b.stop)
        for i in idx:
            g = np.zeros((n, n), dtype=np.complex128)
            g[i, i] = 1.0
            gens.append(g)
        for i, j in itertools.combinations(idx, 2):
            g = np.zeros((n, n), dtype=np.complex128)
            g[i, j] = g[j, i] = 1.0
            gens.append(g)
            g = np.zeros((n, n), dtype=np.complex128)
            g[i, j], g[j, i] = -1j, 1j
            gens.append(g)
    return gens


def nearest_optimum(U0, rho, theta, special=False, refine=True):
    """The maximiser of Phi closest (in geodesic distance) to ``U0``.

    Every maximiser has the form W = V_theta Y Z V_rho^dag with Y, Z block
    unitaries commuting with the sorted spectra of theta and rho. The
    search alternates block Procrustes updates and then refines the
    geodesic distance directly.

    Parameters
    ----------
    special : bool
        Fix the global phase so that det(U0^dag W) = 1. Needed when the
        dynamics are traceless and only SU(N) is reachable.
    """
    U0 = np.asarray(U0, dtype=np.complex128)
    p, v_rho = sorted_eigh(rho)
    lam, v_th = sorted_eigh(theta)
    n = U0.shape[0]
    th_blocks = _blocks(multiplicities(lam))
    rho_blocks = _blocks(multiplicities(p))
    m_mat = v_th.conj().T @ U0 @ v_rho
    y = np.eye(n, dtype=np.complex128)
    z = np.eye(n, dtype=np.complex128)
    for _ in range(100):
        y_new = _block_polar(z @ m_mat.conj().T, th_blocks)
        z_new = _block_polar(m_mat.conj().T @ y_new, rho_blocks)
        done = np.linalg.norm(y_new - y) + np.linalg.norm(z_new - z) < 1e-13
        y, z = y_new, z_new
        if done:
            break

    if refine:
        gy = _block_generators(th_blocks, n)
        gz = _block_generators(rho_blocks, n)

        def build(x):
            hy = sum(c * g for c, g in zip(x[:len(gy)], gy))
            hz = sum(c * g for c, g in zip(x[len(gy):], gz))
            ey = _expi(hy)
            ez = _expi(hz)
            return y @ ey, ez @ z

        def cost(x):
            yy, zz = build(x)
            return float(np.linalg.norm(log_unitary(m_mat.conj().T @ yy @ zz)) ** 2)

        x0 = np.zeros(len(gy) + len(gz))
        res = scipy.optimize.minimize(cost, x0, method="BFGS", options={"gtol": 1e-10})
        if res.fun < cost(x0):
            y, z = build(res.x)

    W = v_th @ y @ z @ v_rho.conj().T
    if special:
        d = np.linalg.det(U0.conj().T @ W)
        base = -np.angle(d) / n
        cands = [np.exp(1j * (base + 2 * np.pi * k / n)) * W for k in range(n)]
        W = min(cands, key=lambda c: geodesic_distance(U0, c))
    return W


def _expi(h):
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * w)) @ v.conj().T


@dataclass
class CriticalManifoldSet:
    representatives: list
    critical_values: list
    overlaps: list


def critical_manifolds(rho, theta):
    """One representative per distinct critical manifold of Phi.

    Critical points are U = V_theta P V_rho^dag for permutations P; two
    permutations lie on the same manifold exactly when they assign the same
    number of indices from each rho eigenspace to each theta eigenspace.
    Results are sorted by descending critical value.
    """
    p, v_rho = sorted_eigh(rho)
    lam, v_th = sorted_eigh(theta)
    n = len(p)
    if n > MAX_ENUMERATION_DIM:
        raise InvalidInput(f"critical manifold enumeration limited to N <= {MAX_ENUMERATION_DIM}")
    rho_label = np.repeat(np.arange(len(multiplicities(p))), multiplicities(p))
    th_label = np.repeat(np.arange(len(multiplicities(lam))), multiplicities(lam))
    seen = {}
    for perm in itertools.permutations(range(n)):
        k = np.zeros((rho_label.max() + 1, th_label.max() + 1), dtype=int)
        for i, j in enumerate(perm):
            k[rho_label[i], th_label[j]] += 1
        key = k.tobytes()
        if key in seen:
            continue
        perm_mat = np.zeros((n, n))
        perm_mat[list(perm), range(n)] = 1.0
        U = v_th @ perm_mat @ v_rho.conj().T
        seen[key] = (float(sum(p[i] * lam[j] for i, j in enumerate(perm))), U, k)
    items = sorted(seen.values(), key=lambda it: -it[0])
    return CriticalManifoldSet(
        representatives=[it[1] for it in items],
        critical_values=[it[0] for it in items],
        overlaps=[it[2] for it in items],
    )


def gradient_subspace_dim(rho_spectrum, N):
    """Dimension of the orbit explored by the gradient flow.

    Parameters
    ----------
    rho_spectrum : sequence of int
        Multiplicities of the distinct nonzero eigenvalues of rho.
    N : int
        Hilbert dimension.
    """
    mults = [int(m) for m in rho_spectrum]
    if any(m != m_ for m, m_ in zip(mults, rho_spectrum)) or any(m < 1 for m in mults):
        raise InvalidSpectrum("multiplicities must be positive integers")
    n = sum(mults)
    if n > N or N < 1:
        raise InvalidSpectrum(f"multiplicities sum to {n} > N = {N}")
    return n * (2 * N - n) - sum(m * m for m in mults)


# ---------------------------------------------------- double-bracket flows

def double_bracket_rhs(rho_s, theta):
    """[rho, [rho, theta]]."""
    rho_s = np.asarray(rho_s, dtype=np.complex128)
    return commutator(rho_s, commutator(rho_s, np.asarray(theta, dtype=np.complex128)))


def integrate_double_bracket(rho0, theta, s_values, max_step=1e-3):
    """Classical RK4 integration of the double-bracket flow.

    Returns the states at each entry of the increasing sequence ``s_values``.
    """
    rho = np.asarray(rho0, dtype=np.complex128).copy()
    out = []
    s = 0.0
    for target in s_values:
        span = target - s
        steps = max(1, int(math.ceil(span / max_step - 1e-9))) if span > 0 else 0
        h = span / steps if steps else 0.0
        for _ in range(steps):
            k1 = double_bracket_rhs(rho, theta)
            k2 = double_bracket_rhs(rho + 0.5 * h * k1, theta)
            k3 = double_bracket_rhs(rho + 0.5 * h * k2, theta)
            k4 = double_bracket_rhs(rho + h * k3, theta)
            rho = rho + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            rho = 0.5 * (rho + rho.conj().T)
        s = target
        out.append(rho.copy())
    return out


def _eigenbasis(theta):
    """Eigenvalues/vectors of theta, keeping the given order when it is diagonal."""
    theta = check_hermitian(theta, name="theta")
    if np.allclose(theta, np.diag(np.diagonal(theta)), atol=1e-14, rtol=0):
        return np.diagonal(theta).real.copy(), np.eye(theta.shape[0])
    w, v = np.linalg.eigh(theta)
    return w, v


def _populations_at(lam, x0, s):
    x0 = np.asarray(x0, dtype=float)
    if np.isinf(s):
        support = x0 > 0
        top = np.max(lam[support])
        mask = support & (np.abs(lam - top) < 1e-12)
        x = np.where(mask, x0, 0.0)
        return x / x.sum()
    with np.errstate(divide="ignore"):
        logx = np.log(x0) + 2.0 * s * lam
    logx -= np.max(logx)
    x = np.exp(logx)
    return x / x.sum()


def _check_simplex(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,) or np.any(x < 0) or abs(x.sum() - 1.0) > 1e-10:
        raise InvalidInput("populations must be a non-negative vector summing to 1")
    return x


def analytic_pure_flow(theta, c0, s):
    """Populations of a pure state under the double-bracket flow.

    x_i(s) = x_i(0) exp(2 s lambda_i) / sum_k x_k(0) exp(2 s lambda_k), in the
    eigenbasis of theta (its own order when theta is diagonal). ``s = inf``
    returns the limit: x(0) restricted to the top occupied eigenspace.
    """
    lam, v = _eigenbasis(theta)
    c0 = np.asarray(c0, dtype=np.complex128)
    if c0.shape != (len(lam),):
        raise DimensionError("state vector does not match theta")
    if abs(np.linalg.norm(c0) - 1.0) > 1e-10:
        raise InvalidInput("state vector must be normalised")
    x0 = np.abs(v.conj().T @ c0) ** 2
    return _populations_at(lam, x0 / x0.sum(), s)


def distance_dynamics(theta, x0, i_star, s):
    """Squared distance of the flowing populations to vertex ``i_star`` and its s-derivative.

    ``i_star`` is a zero-based index into the eigenbasis of ``theta``.
    """
    lam, _ = _eigenbasis(theta)
    x0 = _check_simplex(x0, len(lam))
    if not 0 <= i_star < len(lam):
        raise InvalidInput(f"vertex index {i_star} out of range")
    x = _populations_at(lam, x0, s)
    target = np.zeros_like(x)
    target[i_star] = 1.0
    dist2 = float(np.sum((x - target) ** 2))
    mean = float(np.dot(lam, x))
    ddist = 4.0 * float(np.sum(x * x * (lam - mean))) - 4.0 * x[i_star] * (lam[i_star] - mean)
    return dist2, float(ddist)


# ------------------------------------------------------------ flow driver

@dataclass
class StepRecord:
    s: float
    phi: float
    grad_norm: float | None
    fluence: float
    condition: float | None
    track_err: float | None
    U: np.ndarray = field(repr=False)
    pathlength_cum: float = 0.0


@dataclass
class OptimizationTrace:
    """Per-step diagnostics plus the final field."""

    records: list = field(default_factory=list)
    stop_reason: str = ""
    final_field: np.ndarray | None = None
    fields: list | None = None
    meta: dict = field(default_factory=dict)

    def append(self, rec):
        if self.records:
            last = self.records[-1]
            if rec.s <= last.s:
                raise InvalidInput("trace s values must be strictly increasing")
            rec.pathlength_cum = last.pathlength_cum + geodesic_distance(last.U, rec.U)
        else:
            rec.pathlength_cum = 0.0
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def final(self):
        return self.records[-1]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def unitary_pathlength(trace):
    """Sum of geodesic distances between consecutive recorded U(T)."""
    recs = trace.records if isinstance(trace, OptimizationTrace) else list(trace)
    if len(recs) < 2:
        raise InvalidInput("pathlength needs at least two records")
    return float(sum(geodesic_distance(a.U, b.U) for a, b in zip(recs[:-1], recs[1:])))


@dataclass
class StopRule:
    """Stopping criteria for the gradient flow.

    ``s_max`` defaults to ``(p - 1) * ds`` of the supplied field; the flow
    also stops after ``p`` records.
    """

    phi_tol: float = 1e-6
    grad_tol: float = 1e-8
    s_max: float | None = None
    max_records: int | None = None


def _evaluate(model, row, grid, rho, theta):
    traj = propagate(model, row, grid)
    dip = dipole_trace(traj, model.mu)
    g = grad_field(traj, dip, rho, theta)
    return traj, g, expectation(traj.final, rho, theta)


def run_gradient_flow(model, field0, rho, theta, stop=None, integrator="euler",
                      adaptive=True, keep_fields=False, trace=None):
    """Gradient ascent of Phi in the field: d eps/ds = a0.

    Explicit Euler (or classical RK4) in s. With ``adaptive`` a step that
    lowers Phi is halved until it does not, and the step regrows by a factor
    two (up to the nominal ds) after each accepted step.

    Raises
    ------
    StalledOptimization
        When the accepted step would fall below 1e-12.
    """
    if not isinstance(field0, ControlField):
        raise InvalidInput("field0 must be a ControlField")
    if model.morphing:
        raise InvalidInput("gradient flow needs a static model")
    if integrator not in ("euler", "rk4"):
        raise InvalidInput(f"unknown integrator {integrator!r}")
    rho = check_density(rho)
    theta = check_hermitian(theta, name="theta")
    stop = stop or StopRule()
    grid = field0.time_grid
    ds0 = float(field0.ds)
    s_max = stop.s_max if stop.s_max is not None else (field0.p - 1) * ds0
    max_rec = stop.max_records or field0.p
    _, phi_max = kinematic_optimum(rho, theta)

    row = field0.initial.copy()
    traj, g, phi = _evaluate(model, row, grid, rho, theta)
    trace = trace if trace is not None else OptimizationTrace()
    if keep_fields:
        trace.fields = [row.copy()]
    trace.meta["phi_max"] = phi_max
    s = 0.0
    h = ds0

    def record():
        trace.append(StepRecord(s, phi, g.norm(), grid.fluence(row), None, None, traj.final.copy()))

    record()
    while True:
        if phi_max - phi < stop.phi_tol:
            trace.stop_reason = "converged"
            break
        if g.norm() < stop.grad_tol:
            trace.stop_reason = "critical"
            break
        if s >= s_max - 1e-12:
            trace.stop_reason = "s_max"
            break
        if len(trace) >= max_rec:
            trace.stop_reason = "max_steps"
            break
        h = min(h, s_max - s)
        while True:
            if integrator == "euler":
                cand = row + h * g.a0
            else:
                k1 = g.a0
                k2 = _evaluate(model, row + 0.5 * h * k1, grid, rho, theta)[1].a0
                k3 = _evaluate(model, row + 0.5 * h * k2, grid, rho, theta)[1].a0
                k4 = _evaluate(model, row + h * k3, grid, rho, theta)[1].a0
                cand = row + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            c_traj, c_g, c_phi = _evaluate(model, cand, grid, rho, theta)
            if not adaptive or c_phi >= phi - 1e-12:
                break
            h *= 0.5
            if h < 1e-12:
                raise StalledOptimization(f"step size underflow at s = {s:.6g}")
        row, traj, g, phi = cand, c_traj, c_g, c_phi
        s += h
        if keep_fields:
            trace.fields.append(row.copy())
        record()
        h = min(2.0 * h, ds0)
    trace.final_field = row
    return trace
