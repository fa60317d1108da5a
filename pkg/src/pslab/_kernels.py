"""Hot integration kernels: batched RK4 for bicharacteristics + linearization.

Two implementations of the same segment integrator live here: a numba
``@njit`` kernel (default) and a vectorized pure-numpy fallback.  Selection is
by the ``PSLAB_DISABLE_NUMBA`` environment variable at import time; both paths
produce the same trajectories to floating-point accuracy and are compared in
``benchmarks/bench_flow.py``.

Within a segment the symbol coefficients are constant:

    dx/dt   = xi + G x
    dxi/dt  = -(G^T xi + Q x)
    dJ/dt   = M J,   M = [[G, I], [-Q, -G^T]]
    dphi/dt = |xi|^2/2 - <x, Q x>/2

where J is the 2d x 2d linearization and phi the action-type phase used by
the moving-frame identity.
"""

from __future__ import annotations

import os

import numpy as np

DISABLE_NUMBA = os.environ.get("PSLAB_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")


def system_matrix(G: np.ndarray, Q: np.ndarray) -> np.ndarray:
    d = G.shape[0]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = G
    M[:d, d:] = np.eye(d)
    M[d:, :d] = -Q
    M[d:, d:] = -G.T
    return M


def _rk4_segment_numpy(x, xi, J, phi, G, Q, dt, nsteps,
                       out_x, out_xi, out_J, out_phi):
    """Vectorized segment integrator; batch axis first on every state array."""
    M = system_matrix(G, Q)
    GT = G.T

    def deriv(x, xi, J):
        dx = xi + x @ GT
        dxi = -(xi @ G + x @ Q)
        dJ = M @ J
        dphi = 0.5 * np.sum(xi * xi, axis=1) - 0.5 * np.einsum("bi,ij,bj->b", x, Q, x)
        return dx, dxi, dJ, dphi

    out_x[:, 0] = x
    out_xi[:, 0] = xi
    out_J[:, 0] = J
    out_phi[:, 0] = phi
    for k in range(nsteps):
        k1 = deriv(x, xi, J)
        k2 = deriv(x + 0.5 * dt * k1[0], xi + 0.5 * dt * k1[1], J + 0.5 * dt * k1[2])
        k3 = deriv(x + 0.5 * dt * k2[0], xi + 0.5 * dt * k2[1], J + 0.5 * dt * k2[2])
        k4 = deriv(x + dt * k3[0], xi + dt * k3[1], J + dt * k3[2])
        x = x + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        xi = xi + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        J = J + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        phi = phi + (dt / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        out_x[:, k + 1] = x
        out_xi[:, k + 1] = xi
        out_J[:, k + 1] = J
        out_phi[:, k + 1] = phi


def _make_numba_kernel():
    from numba import njit

    @njit(cache=True)
    def rk4_segment(x0, xi0, J0, phi0, G, Q, dt, nsteps,
                    out_x, out_xi, out_J, out_phi):  # pragma: no cover - jit
        B, d = x0.shape
        n2 = 2 * d
        M = np.zeros((n2, n2))
        for i in range(d):
            for j in range(d):
                M[i, j] = G[i, j]
                M[d + i, j] = -Q[i, j]
                M[d + i, d + j] = -G[j, i]
            M[i, d + i] += 1.0

        kx = np.empty((4, d))
        kxi = np.empty((4, d))
        kJ = np.empty((4, n2, n2))
        sx = np.empty(d)
        sxi = np.empty(d)
        sJ = np.empty((n2, n2))

        for b in range(B):
            x = x0[b].copy()
            xi = xi0[b].copy()
            J = J0[b].copy()
            phi = phi0[b]
            for i in range(d):
                out_x[b, 0, i] = x[i]
                out_xi[b, 0, i] = xi[i]
            out_J[b, 0] = J
            out_phi[b, 0] = phi
            for step in range(nsteps):
                kphi = np.zeros(4)
                for stage in range(4):
                    if stage == 0:
                        c = 0.0
                    elif stage == 3:
                        c = dt
                    else:
                        c = 0.5 * dt
                    for i in range(d):
                        if stage == 0:
                            sx[i] = x[i]
                            sxi[i] = xi[i]
                        else:
                            sx[i] = x[i] + c * kx[stage - 1, i]
                            sxi[i] = xi[i] + c * kxi[stage - 1, i]
                    if stage == 0:
                        sJ[:] = J
                    else:
                        sJ[:] = J + c * kJ[stage - 1]
                    # derivatives at the stage point
                    for i in range(d):
                        gx = 0.0
                        gtxi = 0.0
                        qx = 0.0
                        for j in range(d):
                            gx += G[i, j] * sx[j]
                            gtxi += G[j, i] * sxi[j]
                            qx += Q[i, j] * sx[j]
                        kx[stage, i] = sxi[i] + gx
                        kxi[stage, i] = -(gtxi + qx)
                    for i in range(n2):
                        for j in range(n2):
                            acc = 0.0
                            for l in range(n2):
                                acc += M[i, l] * sJ[l, j]
                            kJ[stage, i, j] = acc
                    acc = 0.0
                    for i in range(d):
                        acc += 0.5 * sxi[i] * sxi[i]
                        for j in range(d):
                            acc -= 0.5 * sx[i] * Q[i, j] * sx[j]
                    kphi[stage] = acc
                for i in range(d):
                    x[i] += (dt / 6.0) * (kx[0, i] + 2 * kx[1, i] + 2 * kx[2, i] + kx[3, i])
                    xi[i] += (dt / 6.0) * (kxi[0, i] + 2 * kxi[1, i] + 2 * kxi[2, i] + kxi[3, i])
                J += (dt / 6.0) * (kJ[0] + 2 * kJ[1] + 2 * kJ[2] + kJ[3])
                phi += (dt / 6.0) * (kphi[0] + 2 * kphi[1] + 2 * kphi[2] + kphi[3])
                for i in range(d):
                    out_x[b, step + 1, i] = x[i]
                    out_xi[b, step + 1, i] = xi[i]
                out_J[b, step + 1] = J
                out_phi[b, step + 1] = phi

    return rk4_segment


if DISABLE_NUMBA:
    rk4_segment = _rk4_segment_numpy
    BACKEND = "numpy"
else:
    try:
        rk4_segment = _make_numba_kernel()
        BACKEND = "numba"
    except ImportError:
        rk4_segment = _rk4_segment_numpy
        BACKEND = "numpy"


def integrate_segment(x, xi, J, phi, G, Q, dt, nsteps):
    """Run one constant-coefficient segment; returns per-node state arrays."""
    B, d = x.shape
    out_x = np.empty((B, nsteps + 1, d))
    out_xi = np.empty((B, nsteps + 1, d))
    out_J = np.empty((B, nsteps + 1, 2 * d, 2 * d))
    out_phi = np.empty((B, nsteps + 1))
    rk4_segment(np.ascontiguousarray(x, dtype=float),
                np.ascontiguousarray(xi, dtype=float),
                np.ascontiguousarray(J, dtype=float),
                np.ascontiguousarray(phi, dtype=float),
                np.ascontiguousarray(G, dtype=float),
                np.ascontiguousarray(Q, dtype=float),
                float(dt), int(nsteps), out_x, out_xi, out_J, out_phi)
    return out_x, out_xi, out_J, out_phi
