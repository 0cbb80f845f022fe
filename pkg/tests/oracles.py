"""Independent reference computations used as test oracles.

Nothing here calls into the package's numerical kernels; each routine is a
direct (often slow) evaluation of the defining formula.
"""

import itertools

import numpy as np


def expm_series(a, terms=80):
    """exp(a) by scaling-and-squaring of a truncated Taylor series."""
    a = np.asarray(a, dtype=np.complex128)
    norm = np.linalg.norm(a, 1)
    k = max(0, int(np.ceil(np.log2(max(norm, 1e-300)))) + 1)
    b = a / 2 ** k
    out = np.eye(a.shape[0], dtype=np.complex128)
    term = out.copy()
    for j in range(1, terms):
        term = term @ b / j
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


def propagate_slow(h0, mu, row, T):
    """Product of per-cell exponentials with the left-endpoint field."""
    q = len(row)
    dt = T / (q - 1)
    u = np.eye(h0.shape[0], dtype=np.complex128)
    out = [u]
    for j in range(q - 1):
        u = expm_series(-1j * (h0 - mu * row[j]) * dt) @ u
        out.append(u)
    return out


def objective_slow(h0, mu, row, T, rho, theta):
    u = propagate_slow(h0, mu, row, T)[-1]
    total = 0.0 + 0.0j
    n = h0.shape[0]
    rt = u @ rho @ u.conj().T
    for i in range(n):
        for j in range(n):
            total += rt[i, j] * theta[j, i]
    return total.real


def fd_gradient(phi_of_row, row, dt, h=1e-5):
    """Central difference of Phi per unit field area on each cell."""
    g = np.zeros(len(row))
    for j in range(len(row) - 1):
        up = row.copy()
        dn = row.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (phi_of_row(up) - phi_of_row(dn)) / (2 * h * dt)
    return g


def brute_force_max(p, lam):
    """Largest sum_i p_i lam_pi(i) over all permutations."""
    return max(sum(a * lam[k] for a, k in zip(p, perm))
               for perm in itertools.permutations(range(len(p))))


def brute_force_values(p, lam, decimals=10):
    vals = {round(sum(a * lam[k] for a, k in zip(p, perm)), decimals)
            for perm in itertools.permutations(range(len(p)))}
    return sorted(vals, reverse=True)


def rk4_diagonal_flow(lam, x0, s_end, h=1e-3):
    """Population ODE dx_i/ds = 2 x_i (lam_i - sum_k lam_k x_k), integrated by RK4."""
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(x0, dtype=float).copy()

    def f(y):
        return 2.0 * y * (lam - np.dot(lam, y))

    steps = int(round(s_end / h))
    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def trapezoid(values, T):
    """Trapezoid rule of samples on a uniform grid over [0, T] (leading axis)."""
    values = np.asarray(values)
    q = values.shape[0]
    dt = T / (q - 1)
    return dt * (values.sum(axis=0) - 0.5 * (values[0] + values[-1]))
