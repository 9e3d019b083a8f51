"""Two-sided plane sandwiches: how flat is the pair at a point and scale.

A certificate (nu, gamma_u, gamma_v, epsilon) traps both fields between
translates of a plane solution over B_r(center):

    gamma_u (x.nu - eps*r)^+ <= u <= gamma_u (x.nu + eps*r)^+   (same for v)

with gamma_u^2 + gamma_v^2 = 1 and coordinates relative to the center.
epsilon is dimensionless (per unit radius) and minimized over (nu, gamma_u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boundary import BoundarySet, extract_boundaries, estimate_normal, _point_to_segments_dist
from .fields import FieldPair

__all__ = [
    "FlatnessCertificate",
    "FlatnessError",
    "DecayReport",
    "sandwich_epsilon",
    "measure_flatness",
    "audit_certificate",
    "flatness_decay_trace",
    "write_flatness_csv",
]

GAMMA_BRACKET = (0.2, 0.98)
ANGLE_BRACKET = 0.3  # radians around the polyline normal estimate
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class FlatnessError(ValueError):
    pass


@dataclass
class FlatnessCertificate:
    center: np.ndarray
    r: float
    nu: np.ndarray
    gamma_u: float
    gamma_v: float
    epsilon: float
    at_floor: bool


@dataclass
class DecayReport:
    certificates: list
    ratios: list  # consecutive eps(r_{k+1}) / eps(r_k)
    slope: float  # log eps vs log r over non-floor certificates
    normal_drift: list  # |nu_{k+1} - nu_k| per step
    floor_radius: float  # largest radius flagged at the discretization floor


class _Window:
    """Node data of B_r(center) with the sandwich violation evaluator."""

    def __init__(self, pair: FieldPair, center, r: float):
        X, Y = pair.spec.meshgrid()
        cx, cy = float(center[0]), float(center[1])
        inside = (X - cx) ** 2 + (Y - cy) ** 2 <= r * r
        if np.any(inside & ~pair.mask):
            raise FlatnessError("ball B_r(center) exits the masked domain")
        sel = inside & pair.mask
        self.dx = (X[sel] - cx).ravel()
        self.dy = (Y[sel] - cy).ravel()
        self.u = pair.u.values[sel].ravel()
        self.v = pair.v.values[sel].ravel()
        self.r = r

    def epsilon(self, phi: float, gamma_u: float) -> float:
        gamma_v = math.sqrt(max(1.0 - gamma_u * gamma_u, 0.0))
        xi = self.dx * math.cos(phi) + self.dy * math.sin(phi)
        worst = 0.0
        for f, g in ((self.u, gamma_u), (self.v, gamma_v)):
            pos = f > 0.0
            dev = np.where(pos, np.abs(xi - f / g), np.maximum(xi, 0.0))
            m = float(dev.max()) if dev.size else 0.0
            if m > worst:
                worst = m
        return worst / self.r


def _golden(fun, lo, hi, iters):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
    x = c if fc < fd else d
    return x, min(fc, fd)


def _best_gamma(win, phi, scan=17, refine=24):
    lo, hi = GAMMA_BRACKET
    gs = np.linspace(lo, hi, scan)
    vals = [win.epsilon(phi, g) for g in gs]
    k = int(np.argmin(vals))
    a = gs[max(k - 1, 0)]
    b = gs[min(k + 1, scan - 1)]
    g, e = _golden(lambda t: win.epsilon(phi, t), a, b, refine)
    if vals[k] < e:
        return float(gs[k]), float(vals[k])
    return float(g), float(e)


def sandwich_epsilon(pair: FieldPair, center, r: float, nu, gamma_u: float) -> float:
    """Exact smallest sandwich width for a fixed plane direction and slope."""
    win = _Window(pair, center, r)
    return win.epsilon(math.atan2(nu[1], nu[0]), gamma_u)


def measure_flatness(
    pair: FieldPair,
    center,
    r: float,
    nu0=None,
    boundary: BoundarySet | None = None,
) -> FlatnessCertificate:
    """Minimize the sandwich width over the direction (bracketed around the
    polyline normal) and gamma_u; derivative-free searches because the width
    is a max over nodes and only piecewise smooth."""
    h = pair.spec.h
    center = np.asarray(center, dtype=np.float64)
    if nu0 is None:
        if boundary is None:
            boundary = extract_boundaries(pair)
        segs = boundary.segments("u")
        d, _ = _point_to_segments_dist(center, segs)
        if d > 2.0 * h:
            raise FlatnessError("center is not on the u free boundary")
        chains = [c for c in boundary.polyline_u if len(c) >= 3]
        best = None
        for c in chains:
            dd = np.min(np.hypot(c[:, 0] - center[0], c[:, 1] - center[1]))
            if best is None or dd < best[0]:
                best = (dd, c)
        nu0 = estimate_normal(best[1], center, 6.0 * h, pair.u)
    phi0 = math.atan2(nu0[1], nu0[0])

    win = _Window(pair, center, r)
    phis = np.linspace(phi0 - ANGLE_BRACKET, phi0 + ANGLE_BRACKET, 13)
    coarse = [_best_gamma(win, p) for p in phis]
    k = int(np.argmin([e for _, e in coarse]))
    a = phis[max(k - 1, 0)]
    b = phis[min(k + 1, len(phis) - 1)]
    phi, eps = _golden(lambda p: _best_gamma(win, p)[1], a, b, 18)
    if coarse[k][1] < eps:
        phi, eps = float(phis[k]), coarse[k][1]
    gamma_u, eps = _best_gamma(win, phi)
    gamma_v = math.sqrt(max(1.0 - gamma_u**2, 0.0))
    nu = np.array([math.cos(phi), math.sin(phi)])
    if eps > 1.0:
        eps = math.inf
    return FlatnessCertificate(
        center=center,
        r=r,
        nu=nu,
        gamma_u=gamma_u,
        gamma_v=gamma_v,
        epsilon=eps,
        at_floor=eps < 2.0 * h / r,
    )


def audit_certificate(pair: FieldPair, cert: FlatnessCertificate, slack=1e-9):
    """Nodewise re-check of the certified sandwich, independent of the
    width-minimizing code path."""
    if not math.isfinite(cert.epsilon):
        return True
    X, Y = pair.spec.meshgrid()
    cx, cy = cert.center
    sel = ((X - cx) ** 2 + (Y - cy) ** 2 <= cert.r**2) & pair.mask
    xi = (X[sel] - cx) * cert.nu[0] + (Y[sel] - cy) * cert.nu[1]
    shift = cert.epsilon * cert.r
    ok = True
    for vals, g in ((pair.u.values[sel], cert.gamma_u), (pair.v.values[sel], cert.gamma_v)):
        lower = g * np.maximum(xi - shift, 0.0)
        upper = g * np.maximum(xi + shift, 0.0)
        ok &= bool(np.all(vals >= lower - slack) and np.all(vals <= upper + slack))
    return ok


def flatness_decay_trace(
    pair: FieldPair,
    center,
    radii,
    boundary: BoundarySet | None = None,
) -> DecayReport:
    radii = [float(r) for r in radii]
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise FlatnessError("radii must decrease strictly")
    certs = []
    nu0 = None
    for r in radii:
        cert = measure_flatness(pair, center, r, nu0=nu0, boundary=boundary)
        if not certs and not (cert.epsilon <= 0.1):
            raise FlatnessError(
                f"not in the flat regime: eps({r}) = {cert.epsilon:.3f} > 0.1"
            )
        certs.append(cert)
        nu0 = cert.nu
    ratios = [
        b.epsilon / a.epsilon if a.epsilon > 0 else math.inf
        for a, b in zip(certs, certs[1:])
    ]
    drift = [float(np.hypot(*(b.nu - a.nu))) for a, b in zip(certs, certs[1:])]
    usable = [(math.log(c.r), math.log(c.epsilon)) for c in certs
              if not c.at_floor and 0 < c.epsilon < math.inf]
    if len(usable) >= 2:
        xs, ys = zip(*usable)
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = math.nan
    floored = [c.r for c in certs if c.at_floor]
    return DecayReport(
        certificates=certs,
        ratios=ratios,
        slope=slope,
        normal_drift=drift,
        floor_radius=max(floored) if floored else 0.0,
    )


def write_flatness_csv(report: DecayReport, path):
    lines = ["r,eps,nu_x,nu_y,gamma_u,floor_flag"]
    for c in report.certificates:
        lines.append(
            f"{c.r:.17g},{c.epsilon:.17g},{c.nu[0]:.17g},{c.nu[1]:.17g},"
            f"{c.gamma_u:.17g},{int(c.at_floor)}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
