"""Independent brute-force oracles shared by the test suite."""

import numpy as np


def project_cone_oracle(pts: np.ndarray, n_angles: int = 2048, refine: int = 50):
    """Nearest point of {(a, b): a >= b >= 0} by dense ray sampling.

    The cone is the union of rays (cos t, sin t), t in [0, pi/4].  For each
    candidate angle the 1-D projection onto the ray is exact; the best angle
    is then refined by golden-section.  Independent of the closed-form
    case analysis under test.
    """
    pts = np.asarray(pts, dtype=np.float64)
    angles = np.linspace(0.0, np.pi / 4, n_angles)

    def dist2_for(theta):
        d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        s = np.clip(pts @ d.T, 0.0, None)  # (npts, nang)
        proj = s[..., None] * d[None, :, :]
        diff = pts[:, None, :] - proj
        return np.einsum("pak,pak->pa", diff, diff), s

    d2, _ = dist2_for(angles)
    best = np.argmin(d2, axis=1)
    lo = angles[np.maximum(best - 1, 0)]
    hi = angles[np.minimum(best + 1, n_angles - 1)]

    invphi = (np.sqrt(5.0) - 1.0) / 2.0

    def d2_at(theta):
        d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        s = np.clip(np.einsum("pk,pk->p", pts, d), 0.0, None)
        diff = pts - s[:, None] * d
        return np.einsum("pk,pk->p", diff, diff)

    a, b = lo.copy(), hi.copy()
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = d2_at(c), d2_at(d)
    for _ in range(refine):
        take_c = fc < fd
        b = np.where(take_c, d, b)
        a = np.where(take_c, a, c)
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = d2_at(c), d2_at(d)
    theta = 0.5 * (a + b)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    s = np.clip(np.einsum("pk,pk->p", pts, dirs), 0.0, None)
    return s[:, None] * dirs


def smooth_bump(X, Y, cx, cy, rho):
    """C^2 compactly supported bump (1 - s^2)^3, s = dist/rho."""
    s2 = ((X - cx) ** 2 + (Y - cy) ** 2) / rho**2
    return np.where(s2 < 1.0, (1.0 - np.minimum(s2, 1.0)) ** 3, 0.0)
