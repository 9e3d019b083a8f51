"""Free-boundary extraction and the overdetermined boundary conditions.

Level sets of u and v (at the sharp phase threshold) are traced with
marching squares, chained into polylines, and sampled at segment midpoints.
Samples carry one-sided boundary gradients and the Bernoulli residual of
their phase class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import sharp_threshold
from .fields import FieldPair, ScalarField, sample_bilinear

__all__ = [
    "FreeBoundarySample",
    "BoundarySet",
    "extract_boundaries",
    "estimate_normal",
    "boundary_gradient",
    "bernoulli_residual",
    "competitor_fields",
    "proportionality_fit",
    "nondegeneracy_scan",
    "write_boundary_csv",
    "write_polylines",
]

ONE_PHASE_U = "OnePhaseU"
ONE_PHASE_V = "OnePhaseV"
TWO_PHASE = "TwoPhase"

# two boundaries within this many grid spacings of each other count as one
# two-phase interface (sub-cell locations of coincident continuum boundaries
# can separate by about one spacing on a staircase mask)
PAIRING_KAPPA = 1.5


@dataclass
class FreeBoundarySample:
    location: np.ndarray
    phase: str
    normal: np.ndarray
    grad_u: float
    grad_v: float
    residual: float
    seed: str  # which field's polyline produced the sample
    chain: int
    seglen: float = 0.0  # length of the owning polyline segment


@dataclass
class BoundarySet:
    samples: list
    polyline_u: list  # list of (k, 2) vertex arrays
    polyline_v: list

    def segments(self, which: str) -> np.ndarray:
        chains = self.polyline_u if which == "u" else self.polyline_v
        segs = []
        for c in chains:
            if len(c) >= 2:
                segs.append(np.hstack([c[:-1], c[1:]]))
        return np.vstack(segs) if segs else np.zeros((0, 4))


# --- marching squares -------------------------------------------------------

# segment endpoints per case, as pairs of edge ids (0 bottom, 1 right,
# 2 top, 3 left); cases 5 and 10 are saddles resolved by the cell average
_CASE_SEGMENTS = {
    0: [],
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(0, 2)],
    11: [(1, 2)],
    12: [(3, 1)],
    13: [(0, 1)],
    14: [(3, 0)],
    15: [],
}


def _marching_squares(f: ScalarField, level: float):
    """Segments of the level set {f = level} in physical coordinates."""
    g = f.values - level
    m = f.mask
    cell_ok = m[:-1, :-1] & m[:-1, 1:] & m[1:, 1:] & m[1:, :-1]
    c0 = g[:-1, :-1]
    c1 = g[:-1, 1:]
    c2 = g[1:, 1:]
    c3 = g[1:, :-1]
    case = (
        (c0 > 0).astype(np.int8)
        + 2 * (c1 > 0).astype(np.int8)
        + 4 * (c2 > 0).astype(np.int8)
        + 8 * (c3 > 0).astype(np.int8)
    )
    active = cell_ok & (case != 0) & (case != 15)
    cells = np.argwhere(active)
    if len(cells) == 0:
        return []
    h = f.spec.h
    x0, y0 = f.spec.x0, f.spec.y0
    segs = []
    for j, i in cells:
        corners = (c0[j, i], c1[j, i], c2[j, i], c3[j, i])
        cx, cy = x0 + i * h, y0 + j * h

        def edge_point(e):
            if e == 0:
                a, b = corners[0], corners[1]
                t = a / (a - b)
                return (cx + t * h, cy)
            if e == 1:
                a, b = corners[1], corners[2]
                t = a / (a - b)
                return (cx + h, cy + t * h)
            if e == 2:
                a, b = corners[3], corners[2]
                t = a / (a - b)
                return (cx + t * h, cy + h)
            a, b = corners[0], corners[3]
            t = a / (a - b)
            return (cx, cy + t * h)

        k = int(case[j, i])
        if k in (5, 10):
            center_inside = (corners[0] + corners[1] + corners[2] + corners[3]) > 0
            if k == 5:
                pairs = [(0, 1), (2, 3)] if center_inside else [(3, 0), (1, 2)]
            else:
                pairs = [(3, 0), (1, 2)] if center_inside else [(0, 1), (2, 3)]
        else:
            pairs = _CASE_SEGMENTS[k]
        for ea, eb in pairs:
            segs.append((edge_point(ea), edge_point(eb)))
    return segs


def _chain_segments(segs, h):
    """Order marching-squares segments into polylines (open chains first)."""
    if not segs:
        return []
    scale = 1.0 / (h * 1e-6)

    def key(p):
        return (round(p[0] * scale), round(p[1] * scale))

    adjacency = {}
    for idx, (a, b) in enumerate(segs):
        adjacency.setdefault(key(a), []).append((idx, 0))
        adjacency.setdefault(key(b), []).append((idx, 1))

    used = [False] * len(segs)
    chains = []

    def walk(start_idx, start_end):
        pts = []
        idx, end = start_idx, start_end
        a, b = segs[idx]
        cur, nxt = (a, b) if end == 0 else (b, a)
        pts.append(cur)
        while True:
            used[idx] = True
            pts.append(nxt)
            links = [
                (i2, e2)
                for (i2, e2) in adjacency.get(key(nxt), [])
                if not used[i2]
            ]
            if not links:
                break
            idx, end = links[0]
            a, b = segs[idx]
            nxt = b if end == 0 else a
        return np.array(pts)

    # open chains start at degree-1 endpoints, lexicographically for
    # deterministic output
    degree_one = []
    for k, links in adjacency.items():
        if len(links) == 1:
            degree_one.append((k, links[0]))
    degree_one.sort()
    for _, (idx, end) in degree_one:
        if not used[idx]:
            chains.append(walk(idx, end))
    for idx in range(len(segs)):
        if not used[idx]:
            chains.append(walk(idx, 0))
    return chains


# --- normals and boundary gradients ----------------------------------------


def estimate_normal(polyline: np.ndarray, location, window: float, orient_field=None):
    """Unit normal of a least-squares line fit through the polyline vertices
    within `window` of location, oriented toward increasing orient_field."""
    location = np.asarray(location, dtype=np.float64)
    d = np.hypot(polyline[:, 0] - location[0], polyline[:, 1] - location[1])
    pts = polyline[d <= window]
    if len(pts) < 3:
        raise ValueError("too few polyline vertices inside the fit window")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, 0]  # smallest principal direction
    normal = normal / np.hypot(*normal)
    if orient_field is not None:
        h = orient_field.spec.h
        probes = np.array([location + 0.75 * h * normal, location - 0.75 * h * normal])
        vals, ok = sample_bilinear(orient_field, probes)
        if not ok.all():
            raise ValueError("orientation probe left the mask")
        if vals[1] > vals[0]:
            normal = -normal
    return normal


def boundary_gradient(f: ScalarField, sample, probe: float) -> float:
    """One-sided slope of f along the sample normal.

    The field vanishes at the sample location by construction, so the slope
    is f(location + p*normal)/p; Richardson extrapolation over probes
    {p/2, p} removes the first-order truncation term.
    """
    h = f.spec.h
    if not (2 * h - 1e-12 <= probe <= 10 * h + 1e-12):
        raise ValueError("probe length must lie in [2h, 10h]")
    loc = np.asarray(sample.location if hasattr(sample, "location") else sample)
    n = np.asarray(sample.normal if hasattr(sample, "normal") else (0.0, 1.0))
    pts = np.array([loc + 0.5 * probe * n, loc + probe * n])
    vals, ok = sample_bilinear(f, pts)
    if not ok.all():
        raise ValueError("probe point outside the mask")
    s_half = vals[0] / (0.5 * probe)
    s_full = vals[1] / probe
    return float(2.0 * s_half - s_full)


def _locate_and_slope(f, loc0, n, probe, h):
    """Correct a raw level-set point onto the one-sided ramp root and return
    (location, Richardson slope).

    The marching level sits at the sharp threshold, so on fields that vanish
    identically outside their phase the raw crossing collapses onto the
    zero-side node, up to one spacing short of the true kink.  Two probe
    values give the offset-independent slope (difference quotient) and the
    kink position; the spec'd Richardson quotient is then exact at the
    corrected point.
    """
    pts = np.array([loc0 + 0.5 * probe * n, loc0 + probe * n])
    vals, ok = sample_bilinear(f, pts)
    if not ok.all():
        return None
    slope0 = (vals[1] - vals[0]) / (0.5 * probe)
    if not (slope0 > 1e-6):
        return None
    d0 = probe - vals[1] / slope0
    if not (-1.5 * h <= d0 <= 2.0 * h):
        return None
    loc = loc0 + d0 * n
    pts = np.array([loc + 0.5 * probe * n, loc + probe * n])
    vals, ok = sample_bilinear(f, pts)
    if not ok.all():
        return None
    slope = 2.0 * vals[0] / (0.5 * probe) - vals[1] / probe
    return loc, float(slope)


def _point_to_segments_dist(p, segs):
    if len(segs) == 0:
        return np.inf, None
    a = segs[:, 0:2]
    b = segs[:, 2:4]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom[denom == 0] = 1e-300
    t = np.clip(np.einsum("j,ij->i", p, ab) - np.einsum("ij,ij->i", a, ab), 0, denom) / denom
    proj = a + t[:, None] * ab
    d = np.hypot(proj[:, 0] - p[0], proj[:, 1] - p[1])
    k = int(np.argmin(d))
    return float(d[k]), proj[k]


def bernoulli_residual(pair: FieldPair, sample: FreeBoundarySample) -> float:
    """Defect of the overdetermined gradient condition for the sample class:
    one-phase points check |grad|^2 against their coefficient, two-phase
    points check the sum |grad u|^2 + |grad v|^2 against 1."""
    lu, lv = pair.params.lambda_u, pair.params.lambda_v
    if sample.phase == ONE_PHASE_U:
        return abs(sample.grad_u**2 - lu)
    if sample.phase == ONE_PHASE_V:
        return abs(sample.grad_v**2 - lv)
    return abs(sample.grad_u**2 + sample.grad_v**2 - (lu + lv))


def extract_boundaries(
    pair: FieldPair,
    probe_factor: float = 4.0,
    normal_window_factor: float = 6.0,
    kappa: float = PAIRING_KAPPA,
) -> BoundarySet:
    h = pair.spec.h
    tau_u = sharp_threshold(pair.u)
    tau_v = sharp_threshold(pair.v)
    chains_u = _chain_segments(_marching_squares(pair.u, tau_u), h)
    chains_v = _chain_segments(_marching_squares(pair.v, tau_v), h)
    bset = BoundarySet(samples=[], polyline_u=chains_u, polyline_v=chains_v)
    segs_u = bset.segments("u")
    segs_v = bset.segments("v")
    probe = probe_factor * h
    window = normal_window_factor * h

    def harvest(chains, seed, own_field, other_field, other_segs):
        for ci, chain in enumerate(chains):
            if len(chain) < 2:
                continue
            mids = 0.5 * (chain[:-1] + chain[1:])
            lens = np.hypot(*(chain[1:] - chain[:-1]).T)
            for mid, seglen in zip(mids, lens):
                try:
                    n = estimate_normal(chain, mid, window, own_field)
                except ValueError:
                    continue
                own = _locate_and_slope(own_field, mid, n, probe, h)
                if own is None:
                    continue
                loc, g_own = own
                d_other, proj = _point_to_segments_dist(loc, other_segs)
                two_phase = d_other <= kappa * h
                g_other = 0.0
                if two_phase:
                    other = _locate_and_slope(other_field, proj, n, probe, h)
                    if other is None:
                        continue
                    g_other = other[1]
                if seed == "u":
                    phase = TWO_PHASE if two_phase else ONE_PHASE_U
                    gu, gv = g_own, g_other
                else:
                    phase = TWO_PHASE if two_phase else ONE_PHASE_V
                    gu, gv = g_other, g_own
                s = FreeBoundarySample(
                    location=loc.copy(),
                    phase=phase,
                    normal=n,
                    grad_u=gu,
                    grad_v=gv,
                    residual=0.0,
                    seed=seed,
                    chain=ci,
                    seglen=float(seglen),
                )
                s.residual = bernoulli_residual(pair, s)
                bset.samples.append(s)

    harvest(chains_u, "u", pair.u, pair.v, segs_v)
    harvest(chains_v, "v", pair.v, pair.u, segs_u)
    return bset


def competitor_fields(pair: FieldPair):
    """Diagnostic modulus and weighted-average fields sharing u's support:
    m = sqrt(u^2 + v^2), q = sqrt(lambda_u) u + sqrt(lambda_v) v."""
    u, v = pair.u.values, pair.v.values
    m_vals = np.sqrt(u * u + v * v)
    q_vals = math.sqrt(pair.params.lambda_u) * u + math.sqrt(pair.params.lambda_v) * v
    m = ScalarField(pair.spec, np.where(pair.mask, m_vals, np.nan), pair.mask, pair.u.domain)
    q = ScalarField(pair.spec, np.where(pair.mask, q_vals, np.nan), pair.mask, pair.u.domain)
    return m, q


def proportionality_fit(pair: FieldPair, center, r: float):
    """Least-squares constant c minimizing ||u - c v|| over B_r(center)
    intersected with {v > tau}; returns (c, relative residual)."""
    X, Y = pair.spec.meshgrid()
    cx, cy = float(center[0]), float(center[1])
    tau_v = sharp_threshold(pair.v)
    sel = pair.mask & ((X - cx) ** 2 + (Y - cy) ** 2 <= r * r) & (
        np.nan_to_num(pair.v.values) > tau_v
    )
    if not sel.any():
        raise ValueError("no nodes of {v > tau} inside the fit ball")
    uu = pair.u.values[sel]
    vv = pair.v.values[sel]
    c = float(np.dot(uu, vv) / np.dot(vv, vv))
    num = float(np.linalg.norm(uu - c * vv))
    den = float(np.linalg.norm(uu))
    return c, (num / den if den > 0 else 0.0)


def nondegeneracy_scan(pair: FieldPair, boundary: BoundarySet, radii):
    """Growth ratios sup_{B_r} field / r per boundary sample.

    A phase's ratio is reported where the sample lies on that phase's
    boundary (its own polyline, or both for two-phase samples); radii that
    reach past the domain boundary are skipped.
    """
    X, Y = pair.spec.meshgrid()
    ring = pair.u.boundary()
    ring_x, ring_y = X[ring], Y[ring]
    u_vals = np.nan_to_num(pair.u.values)
    v_vals = np.nan_to_num(pair.v.values)
    rows = []
    for si, s in enumerate(boundary.samples):
        dist_ring = float(np.min(np.hypot(ring_x - s.location[0], ring_y - s.location[1])))
        for r in radii:
            if r > dist_ring:
                continue
            ball = pair.mask & (
                (X - s.location[0]) ** 2 + (Y - s.location[1]) ** 2 <= r * r
            )
            if not ball.any():
                continue
            want_u = s.seed == "u" or s.phase == TWO_PHASE
            want_v = s.seed == "v" or s.phase == TWO_PHASE
            ru = float(np.max(u_vals[ball])) / r if want_u else np.nan
            rv = float(np.max(v_vals[ball])) / r if want_v else np.nan
            rows.append((si, s.location[0], s.location[1], r, ru, rv))
    return rows


def write_boundary_csv(bset: BoundarySet, path):
    lines = ["x,y,phase,nx,ny,grad_u,grad_v,residual"]
    for s in bset.samples:
        lines.append(
            f"{s.location[0]:.17g},{s.location[1]:.17g},{s.phase},"
            f"{s.normal[0]:.17g},{s.normal[1]:.17g},"
            f"{s.grad_u:.17g},{s.grad_v:.17g},{s.residual:.17g}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_polylines(bset: BoundarySet, path):
    lines = ["phase chain x1 y1 x2 y2"]
    for which in ("u", "v"):
        chains = bset.polyline_u if which == "u" else bset.polyline_v
        for ci, chain in enumerate(chains):
            for a, b in zip(chain[:-1], chain[1:]):
                lines.append(
                    f"{which} {ci} {a[0]:.17g} {a[1]:.17g} {b[0]:.17g} {b[1]:.17g}"
                )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
