import math

import numpy as np
import pytest
import scipy.sparse
import scipy.sparse.linalg

from bimembrane import _kernels
from bimembrane.fields import GridSpec, ScalarField
from bimembrane.frequency import estimate_homogeneity
from bimembrane.membranes import (
    MembranePair,
    classify_nodes,
    complementarity_audit,
    halfdisk_spec,
    membrane_energy,
    recombine_pair,
    reference_signorini_pair,
    signorini_profile,
    solve_transmission,
    solve_two_membrane,
    split_pair,
    write_complementarity_csv,
)

LAMS = (0.7, 0.3)


def mixed_neumann_oracle(spec, data, radius=1.0):
    """Direct sparse solve of the ghost-stencil system: Dirichlet on the
    curved boundary, homogeneous Neumann on the thin row."""
    mask, free, thin, dirichlet = classify_nodes(spec, radius)
    unknown = free | thin
    idx = -np.ones(spec.shape, dtype=np.int64)
    ids = np.argwhere(unknown)
    idx[unknown] = np.arange(len(ids))
    rows, cols, vals = [], [], []
    rhs = np.zeros(len(ids))
    dvals = np.asarray(data, dtype=np.float64)
    for k, (j, i) in enumerate(ids):
        rows.append(k); cols.append(k); vals.append(4.0)
        if thin[j, i]:
            stencil = ((j, i + 1, 1.0), (j, i - 1, 1.0), (j + 1, i, 2.0))
        else:
            stencil = ((j, i + 1, 1.0), (j, i - 1, 1.0), (j + 1, i, 1.0), (j - 1, i, 1.0))
        for jj, ii, wgt in stencil:
            if unknown[jj, ii]:
                rows.append(k); cols.append(idx[jj, ii]); vals.append(-wgt)
            else:
                rhs[k] += wgt * dvals[jj, ii]
    A = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(len(ids), len(ids)))
    x = scipy.sparse.linalg.spsolve(A, rhs)
    out = dvals.copy()
    out[unknown] = x
    return out


def test_reference_pair_hand_conditions():
    spec = halfdisk_spec(129)
    ref = reference_signorini_pair(LAMS, spec)
    X, Y = spec.meshgrid()
    # along theta = 0 (x > 0): separated with zero one-sided fluxes
    rows = complementarity_audit(ref)
    right = [r for r in rows if r["x"] > 0.1]
    left = [r for r in rows if r["x"] < -0.1]
    assert all(r["gap"] > 0 for r in right)
    h = spec.h
    # flux of rho^{3/2} vanishes on the separated ray; the one-sided stencil
    # sees O(h^{1/2}) truncation from the cusp at worst near the origin
    assert max(abs(r["flux_h"]) for r in right) < 0.5 * math.sqrt(h)
    assert max(abs(r["flux_w"]) for r in right) < 0.5 * math.sqrt(h)
    # along theta = pi (x < 0): contact with balanced fluxes and signs
    assert all(abs(r["gap"]) < 1e-12 for r in left)
    assert all(r["flux_h"] <= 1e-12 and r["flux_w"] >= -1e-12 for r in left)
    assert max(abs(r["balance"]) for r in left) < 0.1 * math.sqrt(h)
    # analytic flux on the contact ray: d_N w1 = -(3/2) |x|^{1/2}
    mid = min(left, key=lambda r: abs(r["x"] + 0.5))
    expected = -1.5 * math.sqrt(0.5) * LAMS[1] / (LAMS[0] + LAMS[1])
    assert mid["flux_h"] == pytest.approx(expected, rel=0.05)


def test_split_recombine_inverse():
    spec = halfdisk_spec(65)
    ref = reference_signorini_pair(LAMS, spec)
    w1, w2 = split_pair(ref)
    back = recombine_pair(w1, w2, LAMS)
    m = ref.h.mask
    # the maps are linear inverses; the round trip is exact up to round-off
    assert np.max(np.abs(back.h.values[m] - ref.h.values[m])) < 1e-14
    assert np.max(np.abs(back.w.values[m] - ref.w.values[m])) < 1e-14
    # and the planted split is (signorini, 0) exactly
    X, Y = spec.meshgrid()
    assert np.allclose(w1.values[m], signorini_profile(X, Y)[m], atol=1e-12)
    assert np.max(np.abs(w2.values[m])) < 1e-12


def test_two_membrane_recovers_reference():
    errs = {}
    for n in (65, 129):
        spec = halfdisk_spec(n)
        ref = reference_signorini_pair(LAMS, spec)
        sol = solve_two_membrane(
            np.nan_to_num(ref.h.values), np.nan_to_num(ref.w.values), LAMS, spec
        )
        errs[n] = max(
            np.nanmax(np.abs(sol.h.values - ref.h.values)),
            np.nanmax(np.abs(sol.w.values - ref.w.values)),
        )
        rows = complementarity_audit(sol)
        assert max(max(r["defect_h"], r["defect_w"]) for r in rows) < 1e-6
    assert errs[129] < errs[65] < 0.01


def test_two_membrane_inactive_constraint_is_pure_neumann():
    # h >> w: the constraint never binds and each field solves its own
    # mixed Dirichlet-Neumann problem (independent sparse oracle)
    spec = halfdisk_spec(65)
    X, Y = spec.meshgrid()
    dh = 1.0 + 0.3 * X + 0.2 * Y
    dw = 0.1 * (X + 1.2) * 0.2
    sol = solve_two_membrane(dh, dw, LAMS, spec)
    oh = mixed_neumann_oracle(spec, dh)
    ow = mixed_neumann_oracle(spec, dw)
    m = sol.h.mask
    assert np.max(np.abs(sol.h.values[m] - oh[m])) < 1e-7
    assert np.max(np.abs(sol.w.values[m] - ow[m])) < 1e-7
    rows = complementarity_audit(sol)
    assert all(r["gap"] > 0 for r in rows)
    assert max(abs(r["flux_h"]) for r in rows) < 1e-7


def test_two_membrane_max_principle_data():
    # h = 1, w = 0 on the curved boundary: strict separation on the thin set
    spec = halfdisk_spec(65)
    sol = solve_two_membrane(
        lambda X, Y: 1.0 + 0.0 * X, lambda X, Y: 0.0 * X, LAMS, spec
    )
    rows = complementarity_audit(sol)
    assert all(r["gap"] > 0.5 for r in rows)
    assert max(abs(r["flux_h"]) for r in rows) < 1e-7
    assert max(abs(r["flux_w"]) for r in rows) < 1e-7


def test_two_membrane_harmonic_even_data_no_flux():
    spec = halfdisk_spec(65)
    gen = lambda X, Y: X**2 - Y**2
    sol = solve_two_membrane(gen, gen, LAMS, spec)
    X, Y = spec.meshgrid()
    m = sol.h.mask
    # x^2 - y^2 is even in y: discrete solution matches it exactly
    assert np.max(np.abs(sol.h.values[m] - gen(X, Y)[m])) < 1e-7
    assert np.max(np.abs(sol.w.values[m] - gen(X, Y)[m])) < 1e-7


def test_signorini_difference_homogeneity():
    spec = halfdisk_spec(257)
    ref = reference_signorini_pair(LAMS, spec)
    sol = solve_two_membrane(
        np.nan_to_num(ref.h.values), np.nan_to_num(ref.w.values), LAMS, spec
    )
    w1, _ = split_pair(sol)
    radii = np.linspace(0.15, 0.6, 8)
    _, extrap = estimate_homogeneity(w1, (0.0, 0.0), radii)
    assert extrap == pytest.approx(1.5, abs=0.05)


def test_transmission_symmetric_and_antisymmetric():
    spec = halfdisk_spec(65)
    gen = lambda X, Y: X**2 - Y**2
    sol = solve_transmission(gen, gen, LAMS, spec)
    m = sol.h.mask
    assert np.array_equal(sol.h.values[m], sol.w.values[m])

    odd = lambda X, Y: X * Y
    sol2 = solve_transmission(odd, lambda X, Y: -X * Y, (0.5, 0.5), spec)
    X, Y = spec.meshgrid()
    assert np.max(np.abs(sol2.h.values[m] - (X * Y)[m])) < 1e-7
    assert np.max(np.abs(sol2.w.values[m] + (X * Y)[m])) < 1e-7
    thin_vals = sol2.h.values[0, :][sol.h.mask[0, :]]
    assert np.max(np.abs(thin_vals)) < 1e-7


def test_transmission_requires_matching_end_traces():
    spec = halfdisk_spec(65)
    with pytest.raises(ValueError):
        solve_transmission(
            lambda X, Y: 1.0 + 0.0 * X, lambda X, Y: 0.0 * X, LAMS, spec
        )


def transmission_mixed_data(lams):
    from bimembrane.membranes import mixed_transmission_data

    return mixed_transmission_data(*lams)


def test_transmission_second_order_against_exact():
    data_h, data_w = transmission_mixed_data(LAMS)
    errs = {}
    for n in (33, 65, 129):
        spec = halfdisk_spec(n)
        sol = solve_transmission(data_h, data_w, LAMS, spec)
        X, Y = spec.meshgrid()
        m = sol.h.mask
        errs[n] = max(
            float(np.max(np.abs(sol.h.values[m] - data_h(X, Y)[m]))),
            float(np.max(np.abs(sol.w.values[m] - data_w(X, Y)[m]))),
        )
    assert math.log2(errs[33] / errs[65]) > 1.8
    assert math.log2(errs[65] / errs[129]) > 1.8


def test_transmission_self_convergence_rate():
    data_h, data_w = transmission_mixed_data(LAMS)
    sols = {}
    for n in (33, 65, 129):
        sols[n] = solve_transmission(data_h, data_w, LAMS, halfdisk_spec(n))

    def err_against_fine(coarse_n):
        step = (129 - 1) // (coarse_n - 1)
        cv = sols[coarse_n].h.values
        fv = sols[129].h.values[::step, ::step]
        m = sols[coarse_n].h.mask & np.isfinite(fv)
        return float(np.max(np.abs(cv[m] - fv[m])))

    rate = math.log2(err_against_fine(33) / err_against_fine(65))
    assert rate > 1.8, f"self-convergence rate {rate:.2f}"


def test_energy_monotone_under_plain_projected_sweeps():
    spec = halfdisk_spec(65)
    mask, free, thin, dirichlet = classify_nodes(spec, 1.0)
    X, Y = spec.meshgrid()
    rng = np.random.default_rng(0)
    hv = np.where(mask, 1.0 + 0.2 * X + rng.uniform(-0.2, 0.2, spec.shape), 0.0)
    wv = np.where(mask, 0.5 - 0.3 * X + rng.uniform(-0.2, 0.2, spec.shape), 0.0)
    hv[~mask] = 0.0
    wv[~mask] = 0.0

    def pair_of():
        return MembranePair(
            ScalarField(spec, np.where(mask, hv, np.nan), mask),
            ScalarField(spec, np.where(mask, wv, np.nan), mask),
            *LAMS,
        )

    energies = [membrane_energy(pair_of())]
    for _ in range(20):
        _kernels.membrane_sweeps(
            hv, wv, free.astype(np.uint8), thin.astype(np.uint8),
            LAMS[0], LAMS[1], 1.0, 1, False,
        )
        energies.append(membrane_energy(pair_of()))
    diffs = np.diff(energies)
    assert np.all(diffs <= 1e-10)


def test_iteration_cap_error():
    spec = halfdisk_spec(129)
    with pytest.raises(RuntimeError):
        solve_two_membrane(
            lambda X, Y: 1.0 + 0.0 * X, lambda X, Y: 0.0 * X, LAMS, spec,
            max_sweeps=64,
        )


def test_complementarity_csv(tmp_path):
    spec = halfdisk_spec(65)
    ref = reference_signorini_pair(LAMS, spec)
    rows = complementarity_audit(ref)
    out = tmp_path / "compl.csv"
    write_complementarity_csv(rows, out)
    head = out.read_text().splitlines()[0]
    assert head == "x,gap,flux_h,flux_w,defect_h,defect_w,balance"
