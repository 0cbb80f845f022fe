"""Pure numpy implementations of the propagation kernels.

These mirror the compiled versions in ``_kernels.pyx`` one-to-one and are
used whenever the extension is unavailable or ``QTRACK_PURE_PYTHON`` is set.
All arrays are C-contiguous complex128 / float64.
"""

import numpy as np


def step_unitaries(energies, vecs, dt):
    """exp(-i H_j dt) for every step, from the eigendecomposition of H_j."""
    phases = np.exp(-1j * energies * dt)
    return np.ascontiguousarray(
        np.einsum("jab,jb,jcb->jac", vecs, phases, vecs.conj())
    )


def chain(steps):
    """Time-ordered products: out[0] = I, out[j + 1] = steps[j] @ out[j]."""
    nsteps, n, _ = steps.shape
    out = np.empty((nsteps + 1, n, n), dtype=np.complex128)
    out[0] = np.eye(n)
    for j in range(nsteps):
        np.matmul(steps[j], out[j], out=out[j + 1])
    return out


def conjugate_series(props, op):
    """U_j^dag op U_j for every propagator."""
    return np.ascontiguousarray(
        np.einsum("jba,bc,jcd->jad", props.conj(), op, props)
    )


def cell_weights(energies, dt):
    """(1/dt) * integral_0^dt exp(i (E_a - E_b) tau) dtau for each step."""
    x = (energies[:, :, None] - energies[:, None, :]) * dt
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    exact = (np.exp(1j * xs) - 1.0) / (1j * xs)
    series = 1.0 + 0.5j * x - x * x / 6.0
    return np.where(small, series, exact)


def cell_average_series(props, energies, vecs, op, dt):
    """Interaction-picture average of ``op`` over each piecewise-constant cell.

    out[j] = U_j^dag V_j [(V_j^dag op V_j) * phi_j] V_j^dag U_j, where
    ``props`` holds U_j = U(t_j, 0) for j < q - 1.
    """
    phi = cell_weights(energies, dt)
    local = np.einsum("jba,bc,jcd->jad", vecs.conj(), op, vecs) * phi
    lab = np.einsum("jab,jbc,jdc->jad", vecs, local, vecs.conj())
    return np.ascontiguousarray(
        np.einsum("jba,jbc,jcd->jad", props.conj(), lab, props)
    )
