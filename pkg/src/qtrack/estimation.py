"""Simulated measurements and maximum-likelihood state reconstruction.

The density matrix is parameterised as rho = T^dag T with T lower triangular
and a real diagonal. Stacking the diagonal and the real/imaginary parts of
the strictly lower entries gives N**2 real parameters t, and Tr(rho) = |t|^2,
so the unit-trace constraint is the unit sphere in parameter space.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, InvalidPovm, InvalidRecord, RankWarning
from .linalg import check_density, check_hermitian, hermitian_basis
from .systems import PAULIS

PSD_TOL = 1e-12
STATIONARY_TOL = 1e-6


# -------------------------------------------------------------------- POVM

@dataclass(eq=False)
class PovmSet:
    """Complete measurements: ``groups[g]`` is a list of PSD effects summing to I."""

    groups: list
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if not self.groups:
            raise InvalidPovm("need at least one measurement group")
        n = None
        checked = []
        for gi, grp in enumerate(self.groups):
            effects = [check_hermitian(e, 1e-10, "effect") for e in grp]
            if not effects:
                raise InvalidPovm(f"group {gi} is empty")
            for e in effects:
                if n is None:
                    n = e.shape[0]
                if e.shape != (n, n):
                    raise InvalidPovm("effects differ in dimension")
                if np.linalg.eigvalsh(e)[0] < -1e-10:
                    raise InvalidPovm(f"group {gi} has a non-PSD effect")
            if np.max(np.abs(sum(effects) - np.eye(n))) > 1e-10:
                raise InvalidPovm(f"group {gi} does not sum to the identity")
            checked.append(effects)
        self.groups = checked
        if not self.labels:
            self.labels = [f"g{i}" for i in range(len(checked))]
        if len(self.labels) != len(checked):
            raise InvalidPovm("one label per group required")

    @property
    def dim(self):
        return self.groups[0][0].shape[0]

    def probabilities(self, rho):
        """Born probabilities per group (raw, before any clipping)."""
        return [np.array([np.trace(rho @ e).real for e in grp]) for grp in self.groups]


def _eigenprojectors(h, tol=1e-10):
    w, v = np.linalg.eigh(h)
    out, start = [], 0
    for k in range(1, len(w) + 1):
        if k == len(w) or w[k] - w[start] > tol:
            vec = v[:, start:k]
            out.append(vec @ vec.conj().T)
            start = k
    return out


def pauli_povms():
    """Projective measurements in the x, y and z eigenbases of a qubit."""
    return PovmSet([_eigenprojectors(p) for p in PAULIS], ["x", "y", "z"])


def default_povms(n):
    """Eigenprojector measurements of the standard Hermitian basis.

    The diagonal basis elements all share the computational basis, so they
    collapse into a single group; every off-diagonal element contributes its
    own three-outcome measurement. The set is informationally complete. For
    N = 2 this is the Pauli set.
    """
    if n == 2:
        return pauli_povms()
    groups = [[np.diag(np.eye(n)[k]).astype(np.complex128) for k in range(n)]]
    labels = ["diag"]
    basis = hermitian_basis(n)
    iu, ju = np.triu_indices(n, 1)
    for k, (i, j) in enumerate(zip(iu, ju)):
        for part, b in (("re", basis[n + 2 * k]), ("im", basis[n + 2 * k + 1])):
            groups.append(_eigenprojectors(b))
            labels.append(f"{part}{i}{j}")
    return PovmSet(groups, labels)


# ------------------------------------------------------------------ records

@dataclass(eq=False)
class MeasurementRecord:
    counts: list
    shots: list
    seed: int | None = None

    def __post_init__(self):
        self.counts = [np.asarray(c, dtype=np.int64) for c in self.counts]
        self.shots = [int(s) for s in self.shots]
        if len(self.counts) != len(self.shots):
            raise InvalidRecord("one shot total per group required")
        for c, s in zip(self.counts, self.shots):
            if np.any(c < 0) or int(c.sum()) != s:
                raise InvalidRecord("counts must be non-negative and sum to the shots")

    def to_json(self):
        """One JSON line."""
        return json.dumps({"seed": self.seed, "shots": self.shots,
                           "counts": [c.tolist() for c in self.counts]})

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(d["counts"], d["shots"], d.get("seed"))


def simulate_measurements(rho, povms, shots, seed):
    """Multinomial outcome counts for ``shots`` repetitions of every group.

    ``shots`` may be a single integer or one per group.
    """
    rho = check_density(rho)
    if rho.shape[0] != povms.dim:
        raise InvalidPovm("state and POVM dimensions differ")
    per = [int(shots)] * len(povms.groups) if np.isscalar(shots) else [int(s) for s in shots]
    if any(s < 1 for s in per):
        raise InvalidInput("shots must be at least 1")
    rng = np.random.default_rng(seed)
    counts = []
    for p, s in zip(povms.probabilities(rho), per):
        if np.any(p < -PSD_TOL):
            raise InvalidPovm(f"negative outcome probability {p.min():.3g}")
        p = np.clip(p, 0.0, None)
        counts.append(rng.multinomial(s, p / p.sum()))
    return MeasurementRecord(counts, per, seed)


# -------------------------------------------------------- parameterisation

def _lower_index(n):
    return np.tril_indices(n, -1)


def params_to_factor(t, n):
    """Lower-triangular T with real diagonal from the parameter vector."""
    t = np.asarray(t, dtype=float)
    T = np.zeros((n, n), dtype=np.complex128)
    T[np.arange(n), np.arange(n)] = t[:n]
    il, jl = _lower_index(n)
    T[il, jl] = t[n::2] + 1j * t[n + 1::2]
    return T


def factor_to_params(T):
    n = T.shape[0]
    il, jl = _lower_index(n)
    off = np.empty(2 * len(il))
    off[0::2] = T[il, jl].real
    off[1::2] = T[il, jl].imag
    return np.concatenate([np.diagonal(T).real, off])


def params_to_rho(t, n):
    T = params_to_factor(t, n)
    return T.conj().T @ T


def rho_to_params(rho):
    """Unit-norm parameters of a full-rank density matrix."""
    rho = np.asarray(rho, dtype=np.complex128)
    rev = np.eye(rho.shape[0])[::-1]
    L = np.linalg.cholesky(rev @ rho @ rev)
    T = (rev @ L @ rev).conj().T
    t = factor_to_params(T)
    return t / np.linalg.norm(t)


def _param_jacobians(t, n, effects):
    """dp_i/dt for every effect, shape (n_effects, N**2)."""
    T = params_to_factor(t, n)
    il, jl = _lower_index(n)
    rows = []
    for e in effects:
        m = 2.0 * (T @ e)
        g = np.empty(n * n)
        g[:n] = np.diagonal(m).real
        g[n::2] = m[il, jl].real
        g[n + 1::2] = m[il, jl].imag
        rows.append(g)
    return np.array(rows)


@dataclass(eq=False)
class MLEEstimate:
    rho_hat: np.ndarray
    t_params: np.ndarray
    log_likelihood: float
    covariance: np.ndarray | None = None
    history: list = field(default_factory=list)
    iterations: int = 0
    gradient_norm: float = float("nan")


class _Likelihood:
    def __init__(self, record, povms):
        self.n = povms.dim
        self.effects = [e for grp in povms.groups for e in grp]
        self.counts = np.concatenate([np.asarray(c, dtype=float) for c in record.counts])
        if len(self.counts) != len(self.effects):
            raise InvalidRecord("record does not match the POVM layout")
        self.total = self.counts.sum()
        if self.total <= 0:
            raise InvalidRecord("record holds no counts")
        self.used = self.counts > 0
        self.stack = np.array(self.effects)

    def probs(self, t):
        rho = params_to_rho(t, self.n)
        return np.einsum("ab,kba->k", rho, self.stack).real

    def value(self, t):
        """Mean log-likelihood per shot (-inf outside the support)."""
        p = self.probs(t)[self.used]
        if np.any(p <= 0):
            return -np.inf
        return float(np.dot(self.counts[self.used], np.log(p)) / self.total)

    def gain(self, t_old, t_new):
        """value(t_new) - value(t_old), computed without cancellation."""
        p_old = self.probs(t_old)[self.used]
        p_new = self.probs(t_new)[self.used]
        if np.any(p_new <= 0):
            return -np.inf
        rel = np.log1p((p_new - p_old) / p_old)
        return float(np.dot(self.counts[self.used], rel) / self.total)

    def gradient(self, t):
        p = self.probs(t)
        weights = np.where(self.used, self.counts / np.where(self.used, p, 1.0), 0.0) / self.total
        R = np.einsum("k,kab->ab", weights, self.stack)
        T = params_to_factor(t, self.n)
        m = 2.0 * (T @ R)
        il, jl = _lower_index(self.n)
        g = np.empty(self.n * self.n)
        g[:self.n] = np.diagonal(m).real
        g[self.n::2] = m[il, jl].real
        g[self.n + 1::2] = m[il, jl].imag
        return g


def _tangent(g, t):
    return g - np.dot(g, t) * t


def mle_reconstruct(record, povms, max_iter=10_000, gain_tol=1e-10, grad_tol=1e-8,
                    with_covariance=True):
    """Maximum-likelihood density matrix by projected gradient ascent on the sphere.

    Each iteration moves along the tangent-projected gradient, renormalises
    to |t| = 1 and accepts only steps satisfying an Armijo increase. The step
    length adapts (doubling after acceptance, halving on rejection). Stops
    once the projected gradient norm drops below ``grad_tol``, or the gain
    falls below ``gain_tol`` with the projected gradient at the new point
    under 1e-6, or after ``max_iter`` iterations. Gains are per shot.
    """
    like = _Likelihood(record, povms)
    n = like.n
    t = factor_to_params(np.eye(n) / np.sqrt(n))
    val = like.value(t)
    history = [val]
    eta = 1.0
    it = 0
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        g = _tangent(like.gradient(t), t)
        gnorm = float(np.linalg.norm(g))
        if gnorm < grad_tol:
            break
        accepted = False
        while eta > 1e-16:
            cand = t + eta * g
            cand /= np.linalg.norm(cand)
            gain = like.gain(t, cand)
            if gain >= 1e-4 * eta * gnorm ** 2:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        t, val = cand, val + gain
        history.append(val)
        eta = min(eta * 2.0, 1e3)
        if gain < gain_tol and np.linalg.norm(_tangent(like.gradient(t), t)) < STATIONARY_TOL:
            break
    gnorm = float(np.linalg.norm(_tangent(like.gradient(t), t)))
    rho = params_to_rho(t, n)
    rho = 0.5 * (rho + rho.conj().T)
    est = MLEEstimate(rho, t, val * like.total, None, [h * like.total for h in history],
                      it, gnorm)
    if with_covariance:
        est.covariance = fisher_covariance(est, record, povms)
    return est


def fisher_information(t, record, povms):
    """Expected Fisher information of the parameters at ``t``.

    I = sum_groups shots_g sum_i (dp_i)(dp_i)^T / p_i, over outcomes with
    p_i > 0.
    """
    n = povms.dim
    info = np.zeros((n * n, n * n))
    rho = params_to_rho(t, n)
    for grp, shots in zip(povms.groups, record.shots):
        jac = _param_jacobians(t, n, grp)
        p = np.array([np.trace(rho @ e).real for e in grp])
        keep = p > 1e-14
        info += shots * (jac[keep].T / p[keep]) @ jac[keep]
    return 0.5 * (info + info.T)


def fisher_covariance(estimate, record, povms):
    """Constrained covariance V = I^-1 - I^-1 u u^T I^-1 / (u^T I^-1 u), u = 2t.

    Warns
    -----
    RankWarning
        When the Fisher matrix is singular; a pseudo-inverse is used.
    """
    t = np.asarray(estimate.t_params, dtype=float)
    info = fisher_information(t, record, povms)
    s = np.linalg.svd(info, compute_uv=False)
    if s[-1] < 1e-10 * s[0]:
        warnings.warn("Fisher information is singular; using pseudo-inverse", RankWarning,
                      stacklevel=2)
        inv = np.linalg.pinv(info, rcond=1e-10, hermitian=True)
    else:
        inv = np.linalg.inv(info)
    u = 2.0 * t
    iu = inv @ u
    v = inv - np.outer(iu, iu) / np.dot(u, iu)
    # Remove the residual constraint component left by the pseudo-inverse.
    un = u / np.linalg.norm(u)
    proj = np.eye(len(u)) - np.outer(un, un)
    v = proj @ v @ proj
    return 0.5 * (v + v.T)


def trace_distance(a, b):
    w = np.linalg.eigvalsh(np.asarray(a) - np.asarray(b))
    return 0.5 * float(np.sum(np.abs(w)))
