"""The two linearized limit problems on the half-disk.

Both problems ask for a pair of functions harmonic in the open half-disk
with Dirichlet data on the curved boundary; they differ on the thin set
{y = 0}: the one-sided two-membranes problem keeps h >= w with zero
one-sided fluxes where they separate and the weighted flux balance
lam_h d_N h + lam_w d_N w = 0 where they touch, while the transmission
problem pins h = w with the flux balance everywhere.

Discretely, the thin row carries the ghost-reflection stencil; the contact
update assigns the energy-orthogonal weighted average, which makes the
balanced flux hold exactly at contact nodes of the converged iterate.
The Signorini-based reference solution comes from the split

    w1 = h - w   (thin obstacle profile, lowest homogeneity 3/2)
    w2 = lam_h h + lam_w w   (even harmonic)

planted as w1 = rho^{3/2} cos(3 theta / 2), w2 = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .fields import DomainSpec, GridSpec, ScalarField, _interior_mask

__all__ = [
    "MembranePair",
    "halfdisk_spec",
    "classify_nodes",
    "membrane_energy",
    "solve_two_membrane",
    "solve_transmission",
    "reference_signorini_pair",
    "split_pair",
    "recombine_pair",
    "complementarity_audit",
    "write_complementarity_csv",
]


@dataclass
class MembranePair:
    h: ScalarField
    w: ScalarField
    lambda_h: float
    lambda_w: float

    def __post_init__(self):
        if self.h.spec != self.w.spec or not np.array_equal(self.h.mask, self.w.mask):
            raise ValueError("membrane fields must share a grid and mask")
        if not (self.lambda_h > 0 and self.lambda_w > 0):
            raise ValueError("membrane weights must be positive")


def halfdisk_spec(n: int, radius: float = 1.0) -> GridSpec:
    """Grid covering [-R, R] x [0, R] with (n, (n+1)//2) nodes, thin row at
    y = 0; n odd keeps nodes nested under refinement."""
    h = 2.0 * radius / (n - 1)
    return GridSpec(n, (n + 1) // 2, h, -radius, 0.0)


def classify_nodes(spec: GridSpec, radius: float = 1.0):
    """(mask, free, thin, dirichlet) for the half-disk.

    Thin nodes sit on the y = 0 row with east/west/north neighbors inside the
    mask (the ghost stencil needs them); the rest of the mask boundary is
    Dirichlet."""
    mask = DomainSpec.halfdisk(radius).mask(spec)
    free = _interior_mask(mask)
    thin = np.zeros_like(mask)
    j = 0
    for i in range(1, spec.nx - 1):
        if mask[j, i] and mask[j, i - 1] and mask[j, i + 1] and mask[j + 1, i]:
            thin[j, i] = True
    dirichlet = mask & ~free & ~thin
    return mask, free, thin, dirichlet


def _as_values(data, spec):
    if callable(data):
        X, Y = spec.meshgrid()
        return np.asarray(data(X, Y), dtype=np.float64) * np.ones(spec.shape)
    return np.asarray(data, dtype=np.float64)


def membrane_energy(pair: MembranePair) -> float:
    """Weighted edge Dirichlet energy of the pair."""
    total = 0.0
    for f, lam in ((pair.h, pair.lambda_h), (pair.w, pair.lambda_w)):
        v = np.where(f.mask, f.values, 0.0)
        m = f.mask
        dx = (v[:, 1:] - v[:, :-1])[m[:, 1:] & m[:, :-1]]
        dy = (v[1:, :] - v[:-1, :])[m[1:, :] & m[:-1, :]]
        total += lam * (float(np.sum(dx * dx)) + float(np.sum(dy * dy)))
    return total


def _psor(spec, data_h, data_w, lam_h, lam_w, couple_always, radius, omega,
          tol, max_sweeps, sweeps_chunk=64):
    mask, free, thin, dirichlet = classify_nodes(spec, radius)
    hv = np.zeros(spec.shape)
    wv = np.zeros(spec.shape)
    dh = _as_values(data_h, spec)
    dw = _as_values(data_w, spec)
    hv[dirichlet] = dh[dirichlet]
    wv[dirichlet] = dw[dirichlet]
    start = 0.5 * float(np.mean(dh[dirichlet]) + np.mean(dw[dirichlet]))
    hv[free | thin] = start
    wv[free | thin] = start
    scale = max(
        1e-30,
        float(np.max(np.abs(dh[dirichlet]))),
        float(np.max(np.abs(dw[dirichlet]))),
    )
    freeb = free.astype(np.uint8)
    thinb = thin.astype(np.uint8)
    if omega is None:
        omega = 2.0 / (1.0 + math.sin(math.pi / (max(spec.nx, spec.ny) - 1)))
    done = 0
    while True:
        _kernels.membrane_sweeps(
            hv, wv, freeb, thinb, lam_h, lam_w, omega, sweeps_chunk, couple_always
        )
        done += sweeps_chunk
        defect = _kernels.membrane_defect_inf(
            hv, wv, freeb, thinb, lam_h, lam_w, couple_always
        )
        if defect <= tol * scale:
            break
        if done >= max_sweeps:
            raise RuntimeError(
                f"membrane iteration stalled at defect {defect:g} "
                f"(target {tol * scale:g}) after {done} sweeps"
            )
    hf = ScalarField(spec, np.where(mask, hv, np.nan), mask, DomainSpec.halfdisk(radius))
    wf = ScalarField(spec, np.where(mask, wv, np.nan), mask, DomainSpec.halfdisk(radius))
    return MembranePair(hf, wf, lam_h, lam_w)


def solve_two_membrane(
    data_h,
    data_w,
    lambdas,
    spec: GridSpec,
    radius: float = 1.0,
    omega: float | None = None,
    tol: float = 1e-9,
    max_sweeps: int = 400_000,
) -> MembranePair:
    """Projected SOR for the one-sided two-membranes problem: sweep both
    fields, then project thin-row values onto {h >= w} with the weighted
    average whenever the unconstrained updates cross."""
    lam_h, lam_w = lambdas
    return _psor(spec, data_h, data_w, lam_h, lam_w, False, radius, omega, tol, max_sweeps)


def solve_transmission(
    data_h,
    data_w,
    lambdas,
    spec: GridSpec,
    radius: float = 1.0,
    omega: float | None = None,
    tol: float = 1e-9,
    max_sweeps: int = 400_000,
) -> MembranePair:
    """Equality-constrained variant: the thin row carries one shared trace
    solving the weighted one-node stencil (flux balance via ghost values)."""
    lam_h, lam_w = lambdas
    dh = _as_values(data_h, spec)
    dw = _as_values(data_w, spec)
    _, _, thin, dirichlet = classify_nodes(spec, radius)
    ends = dirichlet & (np.arange(spec.ny)[:, None] == 0)
    if np.max(np.abs(dh[ends] - dw[ends])) > 1e-9 * max(1.0, float(np.max(np.abs(dh[ends])))):
        raise ValueError("transmission data must share traces at the thin-set endpoints")
    return _psor(spec, data_h, data_w, lam_h, lam_w, True, radius, omega, tol, max_sweeps)


def mixed_transmission_data(lam_h: float, lam_w: float):
    """Generic transcendental transmission data: an even harmonic plus a
    weighted odd harmonic.  The exact solution equals the data functions and
    is smooth up to the thin-set junctions; data without this corner
    compatibility degrades the global convergence rate."""
    ratio = lam_h / lam_w

    def data_h(X, Y):
        return np.exp(0.5 * X) * (np.cos(0.5 * Y) + 0.4 * np.sin(0.5 * Y))

    def data_w(X, Y):
        return np.exp(0.5 * X) * (np.cos(0.5 * Y) - 0.4 * ratio * np.sin(0.5 * Y))

    return data_h, data_w


def signorini_profile(X, Y):
    """Lowest nontrivial homogeneous solution of the thin obstacle problem,
    rho^{3/2} cos(3 theta / 2) on the upper half plane."""
    rho = np.hypot(X, Y)
    theta = np.arctan2(Y, X)
    return rho**1.5 * np.cos(1.5 * theta)


def reference_signorini_pair(
    lambdas, spec: GridSpec, radius: float = 1.0, amplitude: float = 1.0
) -> MembranePair:
    """Exact solution pair from the split (w1, w2) = (amplitude * signorini, 0)."""
    lam_h, lam_w = lambdas
    mask = DomainSpec.halfdisk(radius).mask(spec)
    X, Y = spec.meshgrid()
    w1 = amplitude * signorini_profile(X, Y)
    lsum = lam_h + lam_w
    hv = np.where(mask, lam_w * w1 / lsum, np.nan)
    wv = np.where(mask, -lam_h * w1 / lsum, np.nan)
    dom = DomainSpec.halfdisk(radius)
    return MembranePair(
        ScalarField(spec, hv, mask, dom),
        ScalarField(spec, wv, mask, dom),
        lam_h,
        lam_w,
    )


def split_pair(pair: MembranePair):
    """(w1, w2) = (h - w, lam_h h + lam_w w); w1 solves the thin obstacle
    problem, w2 is Neumann-harmonic."""
    w1 = pair.h.values - pair.w.values
    w2 = pair.lambda_h * pair.h.values + pair.lambda_w * pair.w.values
    m = pair.h.mask
    return (
        ScalarField(pair.h.spec, np.where(m, w1, np.nan), m, pair.h.domain),
        ScalarField(pair.h.spec, np.where(m, w2, np.nan), m, pair.h.domain),
    )


def recombine_pair(w1: ScalarField, w2: ScalarField, lambdas) -> MembranePair:
    lam_h, lam_w = lambdas
    lsum = lam_h + lam_w
    m = w1.mask
    hv = np.where(m, (w2.values + lam_w * w1.values) / lsum, np.nan)
    wv = np.where(m, (w2.values - lam_h * w1.values) / lsum, np.nan)
    return MembranePair(
        ScalarField(w1.spec, hv, m, w1.domain),
        ScalarField(w1.spec, wv, m, w1.domain),
        lam_h,
        lam_w,
    )


def _ghost_flux(vals, thin, h):
    """Discrete one-sided normal derivative at thin nodes implied by the
    ghost-reflection stencil: (E + W + 2N - 4*value) / (2h)."""
    ny, nx = vals.shape
    out = np.full((ny, nx), np.nan)
    idx = np.argwhere(thin)
    for j, i in idx:
        out[j, i] = (
            vals[j, i + 1] + vals[j, i - 1] + 2.0 * vals[j + 1, i] - 4.0 * vals[j, i]
        ) / (2.0 * h)
    return out


def complementarity_audit(pair: MembranePair, radius: float = 1.0):
    """Per thin node: gap h - w, ghost fluxes, and the two complementarity
    defects min(gap, -flux_h) and min(gap, flux_w)."""
    spec = pair.h.spec
    _, _, thin, _ = classify_nodes(spec, radius)
    hv = np.where(pair.h.mask, pair.h.values, 0.0)
    wv = np.where(pair.w.mask, pair.w.values, 0.0)
    fh = _ghost_flux(hv, thin, spec.h)
    fw = _ghost_flux(wv, thin, spec.h)
    X, _ = spec.meshgrid()
    rows = []
    for j, i in np.argwhere(thin):
        gap = hv[j, i] - wv[j, i]
        rows.append(
            {
                "x": float(X[j, i]),
                "gap": float(gap),
                "flux_h": float(fh[j, i]),
                "flux_w": float(fw[j, i]),
                "defect_h": float(min(gap, -fh[j, i])),
                "defect_w": float(min(gap, fw[j, i])),
                "balance": float(pair.lambda_h * fh[j, i] + pair.lambda_w * fw[j, i]),
            }
        )
    return rows


def write_complementarity_csv(rows, path):
    lines = ["x,gap,flux_h,flux_w,defect_h,defect_w,balance"]
    for r in rows:
        lines.append(
            f"{r['x']:.17g},{r['gap']:.17g},{r['flux_h']:.17g},{r['flux_w']:.17g},"
            f"{r['defect_h']:.17g},{r['defect_w']:.17g},{r['balance']:.17g}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
