"""Projected gradient descent with smoothing continuation for the
constrained two-phase functional.

Each outer cycle takes one explicit step along minus the first variation,
projects onto the ordered cone, then runs a fixed number of Gauss-Seidel
sweeps on the current positivity sets (phase-frozen harmonic relaxation)
and projects again.  The backtracking line search accepts the energy of the
*whole* cycle, so per-stage energies are nonincreasing by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .energy import (
    SmoothingSpec,
    energy,
    first_variation,
    project_cone_arrays,
    sharp_threshold,
    smoothed_total,
)
from .fields import (
    DomainSpec,
    FieldPair,
    GridSpec,
    Params,
    ScalarField,
    _interior_mask,
)

__all__ = ["SolveOptions", "BoundaryData", "SolveResult", "harmonic_solve", "solve"]

_LINE_SEARCH_SLACK = 1e-12


@dataclass(frozen=True)
class SolveOptions:
    delta_schedule: tuple
    step0: float
    max_outer: int = 600
    tol_energy: float = 1e-9
    tol_step: float = 1e-10
    relax_sweeps: int = 50
    seed: int = 0
    max_backtracks: int = 40
    step_growth: float = 1.6
    step_cap_factor: float = 4096.0
    parallel: bool = False
    # the C^1 smooth step has no dead core, so the relaxed fields carry an
    # exponential tail below the interface; the final sharpening cuts it at
    # sharpen_cut * delta_last * sqrt(lambda) and re-harmonizes the supports
    sharpen_cut: float = 0.5

    def __post_init__(self):
        ds = tuple(float(d) for d in self.delta_schedule)
        if not ds or any(b >= a for a, b in zip(ds, ds[1:])):
            raise ValueError("delta_schedule must be nonempty and strictly decreasing")
        if min(self.tol_energy, self.tol_step) <= 0 or self.step0 <= 0:
            raise ValueError("tolerances and step0 must be positive")
        object.__setattr__(self, "delta_schedule", ds)

    @classmethod
    def default_for(cls, h: float, **overrides) -> "SolveOptions":
        """delta continuation {8h, 4h, 2h} with the stable descent step h^2/8."""
        kw = dict(delta_schedule=(8 * h, 4 * h, 2 * h), step0=h * h / 8.0)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class BoundaryData:
    """Dirichlet data pinned on the boundary ring of the mask."""

    mask: np.ndarray
    u0: np.ndarray
    v0: np.ndarray
    domain: DomainSpec | None = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.u0 = np.asarray(self.u0, dtype=np.float64)
        self.v0 = np.asarray(self.v0, dtype=np.float64)
        ring = self.mask & ~_interior_mask(self.mask)
        u0r, v0r = self.u0[ring], self.v0[ring]
        if not (np.all(np.isfinite(u0r)) and np.all(np.isfinite(v0r))):
            raise ValueError("boundary data must be finite on the boundary ring")
        if np.any(v0r < 0) or np.any(u0r < v0r):
            raise ValueError("infeasible boundary data: need u0 >= v0 >= 0")

    @classmethod
    def from_functions(cls, spec: GridSpec, domain: DomainSpec, fu, fv) -> "BoundaryData":
        X, Y = spec.meshgrid()
        mask = domain.mask(spec)
        return cls(mask, np.asarray(fu(X, Y), dtype=np.float64),
                   np.asarray(fv(X, Y), dtype=np.float64), domain)

    def ring(self) -> np.ndarray:
        return self.mask & ~_interior_mask(self.mask)


@dataclass
class SolveResult:
    pair: FieldPair
    energy_trace: list
    converged: bool
    iterations: int

    def trace_csv(self) -> str:
        lines = ["iter,delta,total_smoothed,total_sharp"]
        for it, delta, rep in self.energy_trace:
            lines.append(
                f"{it},{delta:.17g},{rep.total_smoothed:.17g},{rep.total_sharp:.17g}"
            )
        return "\n".join(lines) + "\n"


def _sor_omega(spec: GridSpec) -> float:
    n = max(spec.nx, spec.ny)
    return 2.0 / (1.0 + math.sin(math.pi / (n - 1)))


def harmonic_solve(
    spec: GridSpec,
    mask: np.ndarray,
    data: np.ndarray,
    tol: float = 1e-10,
    max_sweeps: int = 200_000,
    domain: DomainSpec | None = None,
) -> ScalarField:
    """Discrete harmonic extension of the ring values of `data` into the mask,
    by SOR on the 5-point stencil down to nodal defect <= tol * ||data||_inf."""
    mask = np.asarray(mask, dtype=bool)
    free = _interior_mask(mask)
    ring = mask & ~free
    vals = np.zeros(spec.shape)
    ring_vals = np.asarray(data, dtype=np.float64)[ring]
    if ring_vals.size == 0:
        raise ValueError("mask has no boundary ring")
    scale = float(np.max(np.abs(ring_vals)))
    vals[ring] = ring_vals
    vals[free] = float(np.mean(ring_vals))
    if scale == 0.0:
        out = np.where(mask, 0.0, np.nan)
        return ScalarField(spec, out, mask, domain)
    freeb = free.astype(np.uint8)
    omega = _sor_omega(spec)
    target = tol * scale
    done = 0
    chunk = 64
    while True:
        _kernels.sor_sweeps(vals, freeb, omega, chunk)
        done += chunk
        if _kernels.laplace_defect_inf(vals, freeb) <= target:
            break
        if done >= max_sweeps:
            raise RuntimeError(
                f"harmonic solve failed to reach {target:g} in {max_sweeps} sweeps"
            )
    out = np.where(mask, vals, np.nan)
    return ScalarField(spec, out, mask, domain)


def _relax_phases(pair_arrays, free, taus, coefs, delta, sweeps, parallel):
    """Sweeps of the smoothed stationarity equation on each positivity set,
    boundary ring pinned, the other phase's set frozen."""
    for arr, tau, coef in zip(pair_arrays, taus, coefs):
        act = free & (arr > tau)
        if parallel:
            _red_black(arr, act, sweeps, coef, delta)
        else:
            _kernels.gs_phase(arr, act.astype(np.uint8), sweeps, coef, delta)


def _red_black(v, active, sweeps, coef, delta):
    ny, nx = v.shape
    J, I = np.indices((ny, nx))
    parity = (I + J) % 2
    colors = [active & (parity == 0), active & (parity == 1)]
    for _ in range(sweeps):
        for sel in colors:
            avg = np.zeros_like(v)
            avg[1:-1, 1:-1] = 0.25 * (
                v[1:-1, 2:] + v[1:-1, :-2] + v[2:, 1:-1] + v[:-2, 1:-1]
            )
            band = sel & (v > 0.0) & (v < delta)
            s = np.clip(v / delta, 0.0, 1.0)
            src = coef * 6.0 * s * (1.0 - s) / delta
            v[sel] = avg[sel]
            v[band] -= src[band]


def solve(spec: GridSpec, data: BoundaryData, params: Params, opts: SolveOptions) -> SolveResult:
    params.require_ordered()
    mask = data.mask
    free = _interior_mask(mask)
    ring = data.ring()

    # initialization: harmonic extension of the data, projected onto the cone
    u = harmonic_solve(spec, mask, data.u0, domain=data.domain).values
    v = harmonic_solve(spec, mask, data.v0, domain=data.domain).values
    u, v = np.nan_to_num(u), np.nan_to_num(v)
    pu, pv = project_cone_arrays(u, v)
    u, v = pu, pv
    u[ring] = data.u0[ring]
    v[ring] = data.v0[ring]

    def as_pair(uu, vv):
        um = np.where(mask, uu, np.nan)
        vm = np.where(mask, vv, np.nan)
        return FieldPair(
            ScalarField(spec, um, mask, data.domain),
            ScalarField(spec, vm, mask, data.domain),
            params,
        )

    def cycle(uu, vv, step, smoothing, relax=True):
        pair = as_pair(uu, vv)
        fu, fv = first_variation(pair, smoothing)
        nu = uu - step * np.nan_to_num(fu.values)
        nv = vv - step * np.nan_to_num(fv.values)
        nu[ring] = data.u0[ring]
        nv[ring] = data.v0[ring]
        nu, nv = project_cone_arrays(nu, nv)
        if relax:
            tau_u = 1e-8 * max(1.0, float(np.max(np.abs(nu))))
            tau_v = 1e-8 * max(1.0, float(np.max(np.abs(nv))))
            h2_8 = spec.h * spec.h / 8.0
            _relax_phases(
                (nu, nv),
                free,
                (tau_u, tau_v),
                (params.lambda_u * h2_8, params.lambda_v * h2_8),
                smoothing.delta,
                opts.relax_sweeps,
                opts.parallel,
            )
            nu[ring] = data.u0[ring]
            nv[ring] = data.v0[ring]
            nu, nv = project_cone_arrays(nu, nv)
        return nu, nv

    trace = []
    iterations = 0
    stalled = False
    capped = False
    for delta in opts.delta_schedule:
        smoothing = SmoothingSpec(delta)
        cur_e = smoothed_total(as_pair(u, v), smoothing)
        trace.append((iterations, delta, energy(as_pair(u, v), smoothing)))
        step = opts.step0
        for _ in range(opts.max_outer):
            # acceptance ladder: a few backtracks of the full two-stage cycle,
            # then the bare gradient step with full backtracking (the
            # variation is the exact discrete gradient, so small enough bare
            # steps must descend unless we are already stationary)
            accepted = False
            trial = step
            for _ in range(4):
                nu, nv = cycle(u, v, trial, smoothing, relax=True)
                new_e = smoothed_total(as_pair(nu, nv), smoothing)
                if new_e <= cur_e + _LINE_SEARCH_SLACK:
                    accepted = True
                    break
                trial *= 0.5
            if not accepted:
                trial = step
                for _ in range(opts.max_backtracks):
                    nu, nv = cycle(u, v, trial, smoothing, relax=False)
                    new_e = smoothed_total(as_pair(nu, nv), smoothing)
                    if new_e <= cur_e + _LINE_SEARCH_SLACK:
                        accepted = True
                        break
                    trial *= 0.5
            if not accepted:
                stalled = True
                break
            move = float(np.max(np.abs(np.nan_to_num(nu - u))))
            drop = cur_e - new_e
            u, v = nu, nv
            iterations += 1
            trace.append((iterations, delta, energy(as_pair(u, v), smoothing)))
            cur_e = new_e
            grew = trial == step
            step = min(
                trial * opts.step_growth if grew else trial,
                opts.step0 * opts.step_cap_factor,
            )
            if drop <= opts.tol_energy * max(1.0, abs(cur_e)) or move <= opts.tol_step:
                break
        else:
            capped = True
        if stalled:
            break

    if opts.sharpen_cut > 0:
        u, v = _sharpen(u, v, free, ring, data, params, opts)

    return SolveResult(
        pair=as_pair(u, v),
        energy_trace=trace,
        converged=not (stalled or capped),
        iterations=iterations,
    )


def _sharpen(u, v, free, ring, data, params, opts):
    """Remove the smeared tails and re-harmonize the frozen sharp supports."""
    delta_last = opts.delta_schedule[-1]
    cut_u = opts.sharpen_cut * delta_last * math.sqrt(params.lambda_u)
    cut_v = opts.sharpen_cut * delta_last * math.sqrt(params.lambda_v)
    dead_u = free & (u < cut_u)
    u[dead_u] = 0.0
    v[dead_u] = 0.0  # keeps the inclusion {v > 0} within {u > 0}
    v[free & (v < cut_v)] = 0.0
    scale = max(1.0, float(np.max(np.abs(u))))
    for arr in (u, v):
        act = (free & (arr > 0.0)).astype(np.uint8)
        if not act.any():
            continue
        for _ in range(400):
            if opts.parallel:
                _red_black(arr, act.astype(bool), 64, 0.0, delta_last)
            else:
                _kernels.gs_phase(arr, act, 64, 0.0, delta_last)
            if _kernels.laplace_defect_inf(arr, act) <= 1e-12 * scale:
                break
    u[ring] = data.u0[ring]
    v[ring] = data.v0[ring]
    nu, nv = project_cone_arrays(u, v)
    return nu, nv
