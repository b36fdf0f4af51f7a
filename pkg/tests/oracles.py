"""Independent reference implementations used to cross-check the package.

Everything here is written the slow, obvious way on purpose: straight loops,
textbook formulas, quadrature — no shared code with the library under test.
"""

import numpy as np
from scipy import integrate

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
UTM_K0 = 0.9996
UTM_FALSE_EASTING = 500000.0


def meridian_arc_quadrature(lat_deg):
    """Meridian arc length from the equator by direct quadrature."""

    def integrand(phi):
        return WGS84_A * (1 - WGS84_E2) / (1 - WGS84_E2 * np.sin(phi) ** 2) ** 1.5

    val, _ = integrate.quad(integrand, 0.0, np.radians(lat_deg), epsabs=1e-10,
                            epsrel=1e-12, limit=200)
    return val


def point_scale_factor(lat_deg, lon_deg, lon0_deg):
    """Transverse Mercator point scale factor (series in the cos term)."""
    phi = np.radians(lat_deg)
    dlam = np.radians(lon_deg - lon0_deg)
    e2p = WGS84_E2 / (1 - WGS84_E2)
    c2 = e2p * np.cos(phi) ** 2
    t2 = np.tan(phi) ** 2
    a = dlam * np.cos(phi)
    return UTM_K0 * (
        1
        + a * a / 2 * (1 + c2)
        + a ** 4 / 24 * (5 - 4 * t2 + 42 * c2 + 13 * c2 * c2 - 28 * t2 * c2)
    )


def brute_force_raycast(vertices, faces, origins, dirs, t_min=1e-6):
    """Exhaustive closest-hit ray casting with the same tie-break rule."""
    n = len(origins)
    out_face = np.full(n, -1, dtype=np.int64)
    out_t = np.full(n, np.inf)
    for r in range(n):
        o = origins[r]
        d = dirs[r]
        best_t = np.inf
        best_f = -1
        for fi in range(len(faces)):
            a, b, c = vertices[faces[fi]]
            e1 = b - a
            e2 = c - a
            p = np.cross(d, e2)
            det = e1 @ p
            if abs(det) < 1e-300:
                continue
            inv = 1.0 / det
            tv = o - a
            u = (tv @ p) * inv
            if u < -1e-12 or u > 1 + 1e-12:
                continue
            q = np.cross(tv, e1)
            v = (d @ q) * inv
            if v < -1e-12 or u + v > 1 + 1e-12:
                continue
            t = (e2 @ q) * inv
            if t < t_min:
                continue
            if t < best_t or (t == best_t and fi < best_f):
                best_t = t
                best_f = fi
        out_face[r] = best_f
        out_t[r] = best_t
    return out_face, out_t


def brute_force_metrics(test_h, truth_h, test_valid, truth_valid, trunc):
    """Straight-line reimplementation of the residual statistics."""
    residuals = []
    n_valid = 0
    for i in range(test_h.shape[0]):
        for j in range(test_h.shape[1]):
            if test_valid[i, j] and truth_valid[i, j]:
                n_valid += 1
                residuals.append(test_h[i, j] - truth_h[i, j])
    residuals = np.array(residuals)
    absr = np.abs(residuals)
    kept = residuals[absr < trunc]
    completeness = 100.0 * len(kept) / n_valid
    rmse = float(np.sqrt(np.mean(kept ** 2))) if len(kept) else 0.0
    med = np.median(residuals)
    nmad = 1.4826 * float(np.median(np.abs(residuals - med)))
    s = np.sort(absr)
    rank = int(np.ceil(0.68 * len(s)))
    perc68 = float(s[max(rank, 1) - 1])
    return completeness, rmse, nmad, perc68, n_valid


def brute_force_dem_heights(vertices, faces, xs, ys):
    """Per-cell exhaustive vertical intersection: highest surface z at (x, y)."""
    heights = np.full((len(ys), len(xs)), np.nan)
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            best = -np.inf
            for fi in range(len(faces)):
                a, b, c = vertices[faces[fi]]
                # solve a + u(b-a) + v(c-a) = (x, y, z) in the plane
                m = np.array(
                    [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]]
                )
                det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
                if abs(det) < 1e-300:
                    continue
                rhs = np.array([x - a[0], y - a[1]])
                u = (m[1, 1] * rhs[0] - m[0, 1] * rhs[1]) / det
                v = (-m[1, 0] * rhs[0] + m[0, 0] * rhs[1]) / det
                if u < -1e-12 or v < -1e-12 or u + v > 1 + 1e-12:
                    continue
                z = a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2])
                best = max(best, z)
            if np.isfinite(best):
                heights[i, j] = best
    return heights


def zncc_score_sum(a, b, valid, window):
    """Summed negative ZNCC over fully-valid interior windows, loop version."""
    h, w = a.shape
    half = window // 2
    total = 0.0
    for cy in range(half, h - half):
        for cx in range(half, w - half):
            wa = a[cy - half : cy + half + 1, cx - half : cx + half + 1]
            wb = b[cy - half : cy + half + 1, cx - half : cx + half + 1]
            wv = valid[cy - half : cy + half + 1, cx - half : cx + half + 1]
            if not wv.all():
                continue
            sa = wa.std()
            sb = wb.std()
            if sa <= 1e-12 or sb <= 1e-12:
                continue
            z = ((wa - wa.mean()) * (wb - wb.mean())).mean() / (sa * sb)
            total += -min(max(z, -1.0), 1.0)
    return total


def cubic_basis_sympy(point):
    """All 20 cubic monomial values via sympy expansion, in the pinned order."""
    import sympy as sp

    b, ell, h = sp.symbols("b l h")
    terms = [
        sp.Integer(1), ell, b, h, ell * b, ell * h, b * h, ell ** 2, b ** 2,
        h ** 2, b * ell * h, ell ** 3, ell * b ** 2, ell * h ** 2,
        ell ** 2 * b, b ** 3, b * h ** 2, ell ** 2 * h, b ** 2 * h, h ** 3,
    ]
    subs = {b: point[0], ell: point[1], h: point[2]}
    return np.array([float(sp.expand(t).evalf(subs=subs)) for t in terms])
