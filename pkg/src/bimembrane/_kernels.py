"""Compiled sweep kernels.

Sequential lexicographic sweeps keep runs bit-reproducible; the red-black
variants exist for the optional parallel mode and are deterministic per
coloring as well.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sor_sweeps(v, free, omega, sweeps):
    """SOR sweeps of the 5-point Laplace stencil over free nodes."""
    ny, nx = v.shape
    for _ in range(sweeps):
        for j in range(ny):
            for i in range(nx):
                if free[j, i]:
                    avg = 0.25 * (v[j, i + 1] + v[j, i - 1] + v[j + 1, i] + v[j - 1, i])
                    v[j, i] += omega * (avg - v[j, i])


@njit(cache=True)
def laplace_defect_inf(v, free):
    """max |avg4 - v| over free nodes (nodal defect of the 5-point stencil)."""
    ny, nx = v.shape
    worst = 0.0
    for j in range(ny):
        for i in range(nx):
            if free[j, i]:
                avg = 0.25 * (v[j, i + 1] + v[j, i - 1] + v[j + 1, i] + v[j - 1, i])
                d = abs(avg - v[j, i])
                if d > worst:
                    worst = d
    return worst


@njit(cache=True)
def gs_phase(v, active, sweeps, coef, delta):
    """Gauss-Seidel on the active set for the smoothed stationarity equation
    2*lap(v) = lam * S'(v): plain harmonic sweeps wherever v is above the
    smoothing band (S' = 0), a Picard source correction inside it.

    coef = lam * h^2 / 8; S' is the derivative of the cubic step.
    """
    ny, nx = v.shape
    for _ in range(sweeps):
        for j in range(ny):
            for i in range(nx):
                if active[j, i]:
                    avg = 0.25 * (
                        v[j, i + 1] + v[j, i - 1] + v[j + 1, i] + v[j - 1, i]
                    )
                    t = v[j, i]
                    if 0.0 < t < delta:
                        s = t / delta
                        avg -= coef * 6.0 * s * (1.0 - s) / delta
                    v[j, i] = avg


@njit(cache=True)
def membrane_sweeps(hv, wv, free, thin, lam_h, lam_w, omega, sweeps, couple_always):
    """PSOR sweeps for the half-disk membrane problems.

    free marks interior nodes of both fields; thin marks the y=0 row nodes
    carrying the ghost-reflection stencil.  With couple_always the thin
    update always assigns the weighted average (transmission); otherwise it
    projects onto {h >= w} only when the unconstrained values cross.
    """
    ny, nx = hv.shape
    lsum = lam_h + lam_w
    for _ in range(sweeps):
        for j in range(ny):
            for i in range(nx):
                if free[j, i]:
                    ah = 0.25 * (hv[j, i + 1] + hv[j, i - 1] + hv[j + 1, i] + hv[j - 1, i])
                    hv[j, i] += omega * (ah - hv[j, i])
                    aw = 0.25 * (wv[j, i + 1] + wv[j, i - 1] + wv[j + 1, i] + wv[j - 1, i])
                    wv[j, i] += omega * (aw - wv[j, i])
                elif thin[j, i]:
                    # ghost reflection: south neighbor mirrors the north one
                    gh = 0.25 * (hv[j, i + 1] + hv[j, i - 1] + 2.0 * hv[j + 1, i])
                    gw = 0.25 * (wv[j, i + 1] + wv[j, i - 1] + 2.0 * wv[j + 1, i])
                    nh = hv[j, i] + omega * (gh - hv[j, i])
                    nw = wv[j, i] + omega * (gw - wv[j, i])
                    if couple_always or nh < nw:
                        z = (lam_h * nh + lam_w * nw) / lsum
                        nh = z
                        nw = z
                    hv[j, i] = nh
                    wv[j, i] = nw


@njit(cache=True)
def membrane_defect_inf(hv, wv, free, thin, lam_h, lam_w, couple_always):
    """Worst nodal defect of the membrane system.

    Interior: |avg4 - value| per field.  Thin nodes: defect of the ghost
    stencil on the separated branch, and of the flux balance plus trace
    equality on the contact/transmission branch.
    """
    ny, nx = hv.shape
    lsum = lam_h + lam_w
    worst = 0.0
    for j in range(ny):
        for i in range(nx):
            if free[j, i]:
                d = abs(0.25 * (hv[j, i + 1] + hv[j, i - 1] + hv[j + 1, i] + hv[j - 1, i]) - hv[j, i])
                if d > worst:
                    worst = d
                d = abs(0.25 * (wv[j, i + 1] + wv[j, i - 1] + wv[j + 1, i] + wv[j - 1, i]) - wv[j, i])
                if d > worst:
                    worst = d
            elif thin[j, i]:
                gh = 0.25 * (hv[j, i + 1] + hv[j, i - 1] + 2.0 * hv[j + 1, i])
                gw = 0.25 * (wv[j, i + 1] + wv[j, i - 1] + 2.0 * wv[j + 1, i])
                contact = couple_always or (
                    wv[j, i] >= hv[j, i] - 1e-14 * (1.0 + abs(hv[j, i]))
                )
                if contact:
                    # shared trace must solve the weighted stencil
                    z = (lam_h * gh + lam_w * gw) / lsum
                    d = abs(z - hv[j, i])
                    if abs(z - wv[j, i]) > d:
                        d = abs(z - wv[j, i])
                else:
                    # separated: each field solves its own ghost stencil
                    d = abs(gh - hv[j, i])
                    if abs(gw - wv[j, i]) > d:
                        d = abs(gw - wv[j, i])
                if d > worst:
                    worst = d
    return worst
