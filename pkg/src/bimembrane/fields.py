"""Grids, masked scalar fields, discrete calculus, and blow-up rescaling.

All fields live on uniform rectangular lattices.  Nodes outside the
computational domain (a disk, half-disk, or the full rectangle) carry NaN
and are excluded from every stencil and quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "DomainSpec",
    "ScalarField",
    "VectorField",
    "Params",
    "FieldPair",
    "make_field",
    "gradient",
    "laplacian",
    "blowup_rescale",
    "reference_plane_pair",
    "sample_bilinear",
    "write_grid",
    "read_grid",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform lattice: node (i, j) sits at (x0 + i*h, y0 + j*h)."""

    nx: int
    ny: int
    h: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs nx, ny >= 3, got {self.nx}x{self.ny}")
        if not (self.h > 0):
            raise ValueError(f"grid spacing must be positive, got {self.h}")

    @property
    def shape(self):
        return (self.ny, self.nx)

    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.y0 + self.h * np.arange(self.ny)

    def meshgrid(self):
        """Node coordinates as (X, Y), each of shape (ny, nx)."""
        return np.meshgrid(self.xs(), self.ys(), indexing="xy")

    @classmethod
    def centered(cls, n: int, half_width: float = 1.0) -> "GridSpec":
        """n x n grid covering [-half_width, half_width]^2."""
        h = 2.0 * half_width / (n - 1)
        return cls(n, n, h, -half_width, -half_width)


# Tolerance for "node on the domain boundary" decisions relative to h.
_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class DomainSpec:
    """Masked subdomain of the grid.

    kinds: 'rectangle' (all nodes), 'disk' (x^2+y^2 <= R^2, centered at the
    physical origin), 'halfdisk' (disk intersected with y >= 0), 'freeform'
    (mask carried by the NaN pattern of the field values).
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rectangle", "disk", "halfdisk", "freeform"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind in ("disk", "halfdisk") and not (self.param > 0):
            raise ValueError("disk domains need a positive radius")

    def mask(self, spec: GridSpec) -> np.ndarray:
        X, Y = spec.meshgrid()
        if self.kind == "rectangle":
            return np.ones(spec.shape, dtype=bool)
        if self.kind == "freeform":
            raise ValueError("freeform domains carry their mask explicitly")
        R2 = self.param * self.param * (1.0 + 1e-12)
        inside = X * X + Y * Y <= R2
        if self.kind == "halfdisk":
            inside &= Y >= -_EDGE_TOL * spec.h
        return inside

    @classmethod
    def rectangle(cls):
        return cls("rectangle", 0.0)

    @classmethod
    def disk(cls, radius: float):
        return cls("disk", radius)

    @classmethod
    def halfdisk(cls, radius: float):
        return cls("halfdisk", radius)


def _interior_mask(mask: np.ndarray) -> np.ndarray:
    """Nodes whose four lattice neighbors are all masked."""
    inner = np.zeros_like(mask)
    inner[1:-1, 1:-1] = (
        mask[1:-1, 1:-1]
        & mask[1:-1, 2:]
        & mask[1:-1, :-2]
        & mask[2:, 1:-1]
        & mask[:-2, 1:-1]
    )
    return inner


@dataclass
class ScalarField:
    """Grid sampling of a real function; NaN marks nodes outside the domain."""

    spec: GridSpec
    values: np.ndarray
    mask: np.ndarray
    domain: DomainSpec | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.spec.shape or self.mask.shape != self.spec.shape:
            raise ValueError("field arrays must match the grid shape")
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValueError("masked nodes must carry finite values")
        self.values = self.values.copy()
        self.values[~self.mask] = np.nan

    def interior(self) -> np.ndarray:
        return _interior_mask(self.mask)

    def boundary(self) -> np.ndarray:
        return self.mask & ~_interior_mask(self.mask)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.spec, values, self.mask, self.domain)

    def sup(self) -> float:
        vals = self.values[self.mask]
        return float(np.max(np.abs(vals))) if vals.size else 0.0


@dataclass
class VectorField:
    """Per-node gradient samples; NaN where the stencil is unavailable."""

    spec: GridSpec
    gx: np.ndarray
    gy: np.ndarray

    def defined(self) -> np.ndarray:
        return np.isfinite(self.gx) & np.isfinite(self.gy)


@dataclass(frozen=True)
class Params:
    """Phase coefficients; normalized so they sum to one."""

    lambda_u: float
    lambda_v: float

    def __post_init__(self):
        if not (self.lambda_u > 0 and self.lambda_v > 0):
            raise ValueError("phase coefficients must be positive")
        if abs(self.lambda_u + self.lambda_v - 1.0) > 1e-12:
            raise ValueError(
                "lambda_u + lambda_v must equal 1, got "
                f"{self.lambda_u + self.lambda_v!r}"
            )

    def require_ordered(self):
        """The variational existence mode additionally needs lambda_u >= lambda_v."""
        if self.lambda_u < self.lambda_v:
            raise ValueError("variational mode requires lambda_u >= lambda_v")


@dataclass
class FieldPair:
    """Ordered pair (u, v) sharing one grid and mask."""

    u: ScalarField
    v: ScalarField
    params: Params

    def __post_init__(self):
        if self.u.spec != self.v.spec:
            raise ValueError("u and v must share a grid")
        if not np.array_equal(self.u.mask, self.v.mask):
            raise ValueError("u and v must share a mask")

    @property
    def spec(self) -> GridSpec:
        return self.u.spec

    @property
    def mask(self) -> np.ndarray:
        return self.u.mask

    def ordering_violation(self) -> float:
        """Largest defect of u >= v >= 0 over masked nodes (0 when feasible)."""
        m = self.mask
        du = self.v.values[m] - self.u.values[m]
        dv = -self.v.values[m]
        worst = max(du.max(initial=-np.inf), dv.max(initial=-np.inf))
        return float(max(worst, 0.0))


def make_field(spec: GridSpec, generator, domain: DomainSpec) -> ScalarField:
    """Sample generator(x, y) at node coordinates inside the domain."""
    X, Y = spec.meshgrid()
    mask = domain.mask(spec)
    vals = np.full(spec.shape, np.nan)
    g = np.asarray(generator(X, Y), dtype=np.float64)
    vals[mask] = np.broadcast_to(g, spec.shape)[mask]
    return ScalarField(spec, vals, mask, domain)


def gradient(f: ScalarField) -> VectorField:
    """Central differences at interior nodes, one-sided second-order where a
    single neighbor is missing, NaN where neither stencil fits."""
    if not _interior_mask(f.mask).any():
        raise ValueError("field has no interior nodes")
    v = f.values
    m = f.mask
    h = f.spec.h
    ny, nx = f.spec.shape
    gx = np.full((ny, nx), np.nan)
    gy = np.full((ny, nx), np.nan)

    def axis_deriv(out, shift):
        # shift = +1 rolls values from the east/north; build the three
        # stencils on the full array, then select per node.
        vp = np.full_like(v, np.nan)
        vm = np.full_like(v, np.nan)
        vpp = np.full_like(v, np.nan)
        vmm = np.full_like(v, np.nan)
        if shift == "x":
            vp[:, :-1] = v[:, 1:]
            vm[:, 1:] = v[:, :-1]
            vpp[:, :-2] = v[:, 2:]
            vmm[:, 2:] = v[:, :-2]
        else:
            vp[:-1, :] = v[1:, :]
            vm[1:, :] = v[:-1, :]
            vpp[:-2, :] = v[2:, :]
            vmm[2:, :] = v[:-2, :]
        has_p = np.isfinite(vp)
        has_m = np.isfinite(vm)
        central = m & has_p & has_m
        out[central] = (vp[central] - vm[central]) / (2 * h)
        fwd = m & ~has_m & has_p & np.isfinite(vpp)
        out[fwd] = (-3 * v[fwd] + 4 * vp[fwd] - vpp[fwd]) / (2 * h)
        bwd = m & ~has_p & has_m & np.isfinite(vmm)
        out[bwd] = (3 * v[bwd] - 4 * vm[bwd] + vmm[bwd]) / (2 * h)

    axis_deriv(gx, "x")
    axis_deriv(gy, "y")
    return VectorField(f.spec, gx, gy)


def laplacian(f: ScalarField) -> ScalarField:
    """5-point stencil at interior nodes; the result is masked to those nodes."""
    inner = _interior_mask(f.mask)
    if not inner.any():
        raise ValueError("field has no interior nodes")
    v = f.values
    h2 = f.spec.h * f.spec.h
    out = np.full(f.spec.shape, np.nan)
    out[1:-1, 1:-1] = (
        v[1:-1, 2:] + v[1:-1, :-2] + v[2:, 1:-1] + v[:-2, 1:-1] - 4 * v[1:-1, 1:-1]
    ) / h2
    out[~inner] = np.nan
    return ScalarField(f.spec, out, inner, None)


def sample_bilinear(f: ScalarField, pts: np.ndarray):
    """Bilinear interpolation at pts (shape (k, 2)).

    Returns (values, valid); a sample is valid when its cell's four corners
    are masked and the point lies inside the grid rectangle.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    s = f.spec
    fx = (pts[:, 0] - s.x0) / s.h
    fy = (pts[:, 1] - s.y0) / s.h
    ok = (fx >= -1e-12) & (fx <= s.nx - 1 + 1e-12) & (fy >= -1e-12) & (fy <= s.ny - 1 + 1e-12)
    i0 = np.clip(np.floor(fx).astype(np.int64), 0, s.nx - 2)
    j0 = np.clip(np.floor(fy).astype(np.int64), 0, s.ny - 2)
    tx = fx - i0
    ty = fy - j0
    m = f.mask
    corners_ok = m[j0, i0] & m[j0, i0 + 1] & m[j0 + 1, i0] & m[j0 + 1, i0 + 1]
    valid = ok & corners_ok
    v = f.values
    out = np.full(pts.shape[0], np.nan)
    if valid.any():
        jj, ii = j0[valid], i0[valid]
        txv, tyv = tx[valid], ty[valid]
        out[valid] = (
            v[jj, ii] * (1 - txv) * (1 - tyv)
            + v[jj, ii + 1] * txv * (1 - tyv)
            + v[jj + 1, ii] * (1 - txv) * tyv
            + v[jj + 1, ii + 1] * txv * tyv
        )
    return out, valid


def blowup_rescale(f: ScalarField, center, r: float, out_spec: GridSpec) -> ScalarField:
    """Zoom f around center at scale r with homogeneity-1 normalization:
    output node x carries f(center + r*x) / r (bilinear)."""
    if not (r > 0):
        raise ValueError("rescale radius must be positive")
    cx, cy = float(center[0]), float(center[1])
    # The ball B_r(center) must sit inside the masked domain.
    theta = np.linspace(0.0, 2 * math.pi, 256, endpoint=False)
    ring = np.column_stack(
        [cx + r * np.cos(theta), cy + r * np.sin(theta)]
    )
    _, ring_ok = sample_bilinear(f, ring)
    if not ring_ok.all():
        raise ValueError("ball B_r(center) exits the masked domain")
    X, Y = out_spec.meshgrid()
    pts = np.column_stack([cx + r * X.ravel(), cy + r * Y.ravel()])
    vals, valid = sample_bilinear(f, pts)
    out = (vals / r).reshape(out_spec.shape)
    return ScalarField(out_spec, np.where(valid.reshape(out_spec.shape), out, np.nan),
                       valid.reshape(out_spec.shape), DomainSpec("freeform"))


def reference_plane_pair(
    params: Params,
    nu,
    spec: GridSpec,
    domain: DomainSpec | None = None,
) -> FieldPair:
    """Exact two-phase plane solution u = sqrt(lambda_u) (x.nu)^+ and the
    analogous v; the shared boundary is the line through the physical origin."""
    nu = np.asarray(nu, dtype=np.float64)
    nrm = float(np.hypot(nu[0], nu[1]))
    if not math.isclose(nrm, 1.0, rel_tol=0, abs_tol=1e-9):
        nu = nu / nrm
    if domain is None:
        domain = DomainSpec.rectangle()
    gu = math.sqrt(params.lambda_u)
    gv = math.sqrt(params.lambda_v)
    u = make_field(spec, lambda X, Y: gu * np.maximum(nu[0] * X + nu[1] * Y, 0.0), domain)
    v = make_field(spec, lambda X, Y: gv * np.maximum(nu[0] * X + nu[1] * Y, 0.0), domain)
    return FieldPair(u, v, params)


# --- grid file format -------------------------------------------------------
#
# line 1: nx ny h x0 y0
# line 2: mask <domainkind> <param>
# then ny rows of nx whitespace-separated values (row j first), nan for
# unmasked nodes.  17 significant digits guarantee bit-exact round trips.


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_grid(f: ScalarField, path):
    dom = f.domain or DomainSpec("freeform")
    lines = [
        f"{f.spec.nx} {f.spec.ny} {_fmt(f.spec.h)} {_fmt(f.spec.x0)} {_fmt(f.spec.y0)}",
        f"mask {dom.kind} {_fmt(dom.param)}",
    ]
    for j in range(f.spec.ny):
        lines.append(" ".join(_fmt(x) for x in f.values[j]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid(path) -> ScalarField:
    with open(path) as fh:
        header = fh.readline().split()
        nx, ny = int(header[0]), int(header[1])
        h, x0, y0 = float(header[2]), float(header[3]), float(header[4])
        mline = fh.readline().split()
        if mline[0] != "mask":
            raise ValueError(f"{path}: malformed mask line")
        dom = DomainSpec(mline[1], float(mline[2])) if mline[1] != "freeform" \
            else DomainSpec("freeform")
        vals = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if vals.shape != (ny, nx):
        raise ValueError(f"{path}: expected {ny}x{nx} values, got {vals.shape}")
    spec = GridSpec(nx, ny, h, x0, y0)
    return ScalarField(spec, vals, np.isfinite(vals), dom)
