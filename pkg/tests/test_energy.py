import math

import numpy as np
import pytest

from bimembrane.fields import (
    DomainSpec,
    FieldPair,
    GridSpec,
    Params,
    make_field,
    reference_plane_pair,
)
from bimembrane.energy import (
    EnergyReport,
    SmoothingSpec,
    energy,
    first_variation,
    project_cone,
    project_cone_arrays,
    project_pair,
    smoothed_total,
)

from oracles import project_cone_oracle, smooth_bump

PARAMS = Params(0.7, 0.3)


def square_pair(n=65, lam=PARAMS):
    spec = GridSpec.centered(n, 1.0)
    return reference_plane_pair(lam, (0.0, 1.0), spec, DomainSpec.rectangle())


def test_smoothing_step_contract():
    for kind in ("poly", "quintic"):
        sm = SmoothingSpec(0.25, kind)
        t = np.linspace(-1, 1, 2001)
        s = sm.step(t)
        assert np.all(s[t <= 0] == 0.0)
        assert np.all(s[t >= 0.25] == 1.0)
        assert np.all(np.diff(s) >= -1e-15)
        # derivative consistent with the step
        mid = (t[:-1] + t[1:]) / 2
        fd = np.diff(s) / np.diff(t)
        assert np.max(np.abs(fd - sm.dstep(mid))) < 2e-2 / 0.25


def test_energy_zero_pair():
    spec = GridSpec.centered(33, 1.0)
    dom = DomainSpec.rectangle()
    zero = make_field(spec, lambda X, Y: 0.0 * X, dom)
    pair = FieldPair(zero, zero.with_values(zero.values.copy()), PARAMS)
    rep = energy(pair, SmoothingSpec(0.1))
    for val in (rep.dirichlet_u, rep.dirichlet_v, rep.measure_u, rep.measure_v,
                rep.total_smoothed, rep.total_sharp):
        assert val == 0.0


def test_energy_plane_pair_closed_form():
    # On the square [-1,1]^2 the plane pair has Dirichlet density lambda on the
    # upper half (area 2) per phase plus measure lambda * 2 per phase:
    # total_sharp = 2(lu+lv) + 2(lu+lv) = 4.
    for n in (65, 129):
        pair = square_pair(n)
        rep = energy(pair, SmoothingSpec(4 * pair.spec.h))
        assert abs(rep.total_sharp - 4.0) < 6 * pair.spec.h
    # staircase error drops roughly linearly with h
    e1 = abs(energy(square_pair(65), SmoothingSpec(0.05)).total_sharp - 4.0)
    e2 = abs(energy(square_pair(129), SmoothingSpec(0.05)).total_sharp - 4.0)
    assert e2 < e1


def test_smoothed_and_sharp_measures_coincide_away_from_band():
    spec = GridSpec.centered(49, 1.0)
    dom = DomainSpec.disk(1.0)
    # values are either 0 or >= 0.5, far from the smoothing band (0, delta)
    f = make_field(spec, lambda X, Y: np.where(Y > 0, 0.5 + X**2, 0.0), dom)
    zero = make_field(spec, lambda X, Y: 0.0 * X, dom)
    pair = FieldPair(f, zero, PARAMS)
    for delta in (0.2, 0.05, 0.01):
        rep = energy(pair, SmoothingSpec(delta))
        sharp_u = rep.total_sharp - rep.dirichlet_u - rep.dirichlet_v
        assert abs(rep.measure_u - sharp_u) < 1e-12
        assert rep.measure_v == 0.0


def test_first_variation_harmonic_above_delta():
    spec = GridSpec.centered(41, 1.0)
    dom = DomainSpec.disk(1.0)
    # harmonic and >= delta everywhere on the disk
    f = make_field(spec, lambda X, Y: 2.0 + X * Y, dom)
    pair = FieldPair(f, make_field(spec, lambda X, Y: 0.0 * X, dom), PARAMS)
    fu, fv = first_variation(pair, SmoothingSpec(0.1))
    inner = f.interior()
    assert np.max(np.abs(fu.values[inner])) < 1e-10
    assert np.max(np.abs(fv.values[inner])) < 1e-10


def test_first_variation_paraboloid():
    spec = GridSpec.centered(41, 1.0)
    dom = DomainSpec.rectangle()
    f = make_field(spec, lambda X, Y: 1.0 + X**2 + Y**2, dom)  # >= delta
    g = make_field(spec, lambda X, Y: 0.0 * X, dom)
    fu, _ = first_variation(FieldPair(f, g, PARAMS), SmoothingSpec(0.1))
    inner = f.interior()
    # -2 * lap(x^2+y^2) = -8, stencil exact on quadratics
    assert np.allclose(fu.values[inner], -8.0, atol=1e-10)


def test_first_variation_matches_energy_quotient():
    rng = np.random.default_rng(7)
    spec = GridSpec.centered(129, 1.0)
    dom = DomainSpec.disk(1.0)
    sm = SmoothingSpec(0.1)
    u = make_field(spec, lambda X, Y: 0.30 + 0.2 * np.sin(2 * X) * np.cos(Y) + 0.25 * Y, dom)
    v = make_field(spec, lambda X, Y: 0.05 + 0.04 * np.cos(3 * X * Y), dom)
    pair = FieldPair(u, v, PARAMS)
    fu, fv = first_variation(pair, sm)
    inner = u.interior()
    h2 = spec.h**2
    t = 1e-5
    worst = 0.0
    for k in range(100):
        cx, cy = rng.uniform(-0.25, 0.25, 2)
        au, av = rng.uniform(0.5, 1.5, 2) * rng.choice([-1.0, 1.0], 2)
        X, Y = spec.meshgrid()
        base_bump = smooth_bump(X, Y, cx, cy, 0.45)
        pu = np.where(inner, au * base_bump * (1.0 + 0.3 * np.sin(2 * X + k)), 0.0)
        pv = np.where(inner, av * base_bump * (1.0 + 0.3 * np.cos(Y - k)), 0.0)

        def F(t_):
            uu = u.with_values(np.where(u.mask, u.values + t_ * pu, np.nan))
            vv = v.with_values(np.where(v.mask, v.values + t_ * pv, np.nan))
            return smoothed_total(FieldPair(uu, vv, PARAMS), sm)

        quot = (F(t) - F(-t)) / (2 * t)
        pred = float(np.sum(fu.values[inner] * pu[inner])
                     + np.sum(fv.values[inner] * pv[inner])) * h2
        worst = max(worst, abs(quot - pred) / max(abs(quot), 1e-2))
    assert worst < 1e-3, f"worst relative mismatch {worst:.2e}"


@pytest.mark.parametrize(
    "pt,expected",
    [
        ((1.0, 2.0), (1.5, 1.5)),
        ((2.0, -1.0), (2.0, 0.0)),
        ((-3.0, -1.0), (0.0, 0.0)),
        ((0.4, 0.1), (0.4, 0.1)),
    ],
)
def test_project_cone_reference_points(pt, expected):
    assert project_cone(*pt) == pytest.approx(expected, abs=1e-15)


def test_project_cone_matches_dense_sampling_oracle():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-3, 3, size=(4000, 2))
    pa, pb = project_cone_arrays(pts[:, 0], pts[:, 1])
    oracle = project_cone_oracle(pts)
    err = np.hypot(pa - oracle[:, 0], pb - oracle[:, 1])
    assert float(err.max()) < 1e-6


def test_project_cone_idempotent_and_lipschitz():
    rng = np.random.default_rng(5)
    p = rng.uniform(-2, 2, size=(5000, 2))
    q = rng.uniform(-2, 2, size=(5000, 2))
    pa, pb = project_cone_arrays(p[:, 0], p[:, 1])
    paa, pbb = project_cone_arrays(pa, pb)
    assert np.max(np.abs(paa - pa)) == 0.0
    assert np.max(np.abs(pbb - pb)) == 0.0
    qa, qb = project_cone_arrays(q[:, 0], q[:, 1])
    num = np.hypot(pa - qa, pb - qb)
    den = np.hypot(p[:, 0] - q[:, 0], p[:, 1] - q[:, 1])
    assert np.all(num <= den * (1 + 1e-12))


def test_project_pair_nodewise_cases():
    spec = GridSpec.centered(33, 1.0)
    dom = DomainSpec.disk(1.0)
    params = PARAMS

    feasible = reference_plane_pair(params, (0.0, 1.0), spec, dom)
    proj = project_pair(feasible)
    m = feasible.mask
    assert np.array_equal(proj.u.values[m], feasible.u.values[m])

    zero = make_field(spec, lambda X, Y: 0.0 * X, dom)
    one = make_field(spec, lambda X, Y: 1.0 + 0.0 * X, dom)
    swapped = project_pair(FieldPair(zero, one, params))
    assert np.allclose(swapped.u.values[m], 0.5)
    assert np.allclose(swapped.v.values[m], 0.5)

    # swapping the plane slopes projects onto their nodewise average
    gu, gv = math.sqrt(0.7), math.sqrt(0.3)
    u = make_field(spec, lambda X, Y: gv * np.maximum(Y, 0.0), dom)
    v = make_field(spec, lambda X, Y: gu * np.maximum(Y, 0.0), dom)
    avg = project_pair(FieldPair(u, v, params))
    X, Y = spec.meshgrid()
    want = 0.5 * (gu + gv) * np.maximum(Y, 0.0)
    assert np.allclose(avg.u.values[m], want[m], atol=1e-14)
    assert np.allclose(avg.v.values[m], want[m], atol=1e-14)
    assert avg.ordering_violation() == 0.0


def test_energy_report_json_round_trip():
    import json

    rep = EnergyReport(1.0, 2.0, 3.0, 4.0, 10.0, 9.5)
    data = json.loads(rep.to_json())
    assert set(data) == {
        "dirichlet_u", "dirichlet_v", "measure_u", "measure_v",
        "total_smoothed", "total_sharp",
    }
    assert data["total_smoothed"] == 10.0
