"""Quasi-Cartesian local frame built on an in-repo UTM (WGS84) conversion.

The transverse Mercator conversion uses the 6th-order Krueger series in the
third flattening; forward/inverse round trips are accurate well below the
millimeter level, which is what the frame construction needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UtmConversionFailure
from .rfm import GeoPoint, projection_jacobian

# WGS84
_A = 6378137.0
_F = 1.0 / 298.257223563
_E = math.sqrt(_F * (2.0 - _F))
_N = _F / (2.0 - _F)
_K0 = 0.9996
_FALSE_EASTING = 500000.0

_N2 = _N * _N
_N3 = _N2 * _N
_N4 = _N3 * _N
_N5 = _N4 * _N
_N6 = _N5 * _N

# rectifying radius
_ABAR = _A / (1.0 + _N) * (1.0 + _N2 / 4.0 + _N4 / 64.0 + _N6 / 256.0)

_ALPHA = np.array(
    [
        _N / 2.0 - 2.0 / 3.0 * _N2 + 5.0 / 16.0 * _N3 + 41.0 / 180.0 * _N4
        - 127.0 / 288.0 * _N5 + 7891.0 / 37800.0 * _N6,
        13.0 / 48.0 * _N2 - 3.0 / 5.0 * _N3 + 557.0 / 1440.0 * _N4
        + 281.0 / 630.0 * _N5 - 1983433.0 / 1935360.0 * _N6,
        61.0 / 240.0 * _N3 - 103.0 / 140.0 * _N4 + 15061.0 / 26880.0 * _N5
        + 167603.0 / 181440.0 * _N6,
        49561.0 / 161280.0 * _N4 - 179.0 / 168.0 * _N5
        + 6601661.0 / 7257600.0 * _N6,
        34729.0 / 80640.0 * _N5 - 3418889.0 / 1995840.0 * _N6,
        212378941.0 / 319334400.0 * _N6,
    ]
)

_BETA = np.array(
    [
        _N / 2.0 - 2.0 / 3.0 * _N2 + 37.0 / 96.0 * _N3 - 1.0 / 360.0 * _N4
        - 81.0 / 512.0 * _N5 + 96199.0 / 604800.0 * _N6,
        1.0 / 48.0 * _N2 + 1.0 / 15.0 * _N3 - 437.0 / 1440.0 * _N4
        + 46.0 / 105.0 * _N5 - 1118711.0 / 3870720.0 * _N6,
        17.0 / 480.0 * _N3 - 37.0 / 840.0 * _N4 - 209.0 / 4480.0 * _N5
        + 5569.0 / 90720.0 * _N6,
        4397.0 / 161280.0 * _N4 - 11.0 / 504.0 * _N5
        - 830251.0 / 7257600.0 * _N6,
        4583.0 / 161280.0 * _N5 - 108847.0 / 3991680.0 * _N6,
        20648693.0 / 638668800.0 * _N6,
    ]
)


def utm_zone(lon):
    """UTM zone number for a longitude in degrees."""
    return int(math.floor((lon + 180.0) / 6.0)) % 60 + 1


def zone_central_meridian(zone):
    return float(zone * 6 - 183)


def geo_to_utm(lat, lon, zone=None):
    """Forward transverse Mercator: degrees -> (easting, northing, zone).

    Accepts scalars or arrays. Northings are relative to the equator with no
    hemisphere false northing, which keeps the frame math hemisphere-free.
    """
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if np.any(np.abs(lat) > 84.0):
        raise UtmConversionFailure("latitude outside UTM domain (|lat| > 84)")
    if zone is None:
        zone = utm_zone(float(np.mean(lon)))
    lon0 = zone_central_meridian(zone)

    phi = np.radians(lat)
    lam = np.radians(lon - lon0)
    sphi = np.sin(phi)
    # conformal latitude
    t = np.sinh(np.arctanh(sphi) - _E * np.arctanh(_E * sphi))
    xi_p = np.arctan2(t, np.cos(lam))
    eta_p = np.arcsinh(np.sin(lam) / np.hypot(t, np.cos(lam)))
    xi = xi_p.copy()
    eta = eta_p.copy()
    for j in range(6):
        k = 2.0 * (j + 1)
        xi = xi + _ALPHA[j] * np.sin(k * xi_p) * np.cosh(k * eta_p)
        eta = eta + _ALPHA[j] * np.cos(k * xi_p) * np.sinh(k * eta_p)
    easting = _FALSE_EASTING + _K0 * _ABAR * eta
    northing = _K0 * _ABAR * xi
    return easting, northing, zone


def utm_to_geo(easting, northing, zone):
    """Inverse transverse Mercator: (easting, northing, zone) -> degrees."""
    easting = np.asarray(easting, dtype=np.float64)
    northing = np.asarray(northing, dtype=np.float64)
    lon0 = zone_central_meridian(zone)
    xi = northing / (_K0 * _ABAR)
    eta = (easting - _FALSE_EASTING) / (_K0 * _ABAR)
    xi_p = xi.copy()
    eta_p = eta.copy()
    for j in range(6):
        k = 2.0 * (j + 1)
        xi_p = xi_p - _BETA[j] * np.sin(k * xi) * np.cosh(k * eta)
        eta_p = eta_p - _BETA[j] * np.cos(k * xi) * np.sinh(k * eta)
    # conformal latitude tangent
    tau_p = np.sin(xi_p) / np.hypot(np.sinh(eta_p), np.cos(xi_p))
    tau = tau_p.copy()
    # Newton iteration for geodetic from conformal latitude
    for _ in range(8):
        sigma = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1.0 + tau * tau)))
        f_tau = tau * np.sqrt(1.0 + sigma * sigma) - sigma * np.sqrt(
            1.0 + tau * tau
        ) - tau_p
        d_tau = (
            (np.sqrt((1.0 + sigma * sigma) * (1.0 + tau * tau)) - sigma * tau)
            * (1.0 - _E * _E)
            * np.sqrt(1.0 + tau * tau)
            / (1.0 + (1.0 - _E * _E) * tau * tau)
        )
        tau = tau - f_tau / d_tau
    lat = np.degrees(np.arctan(tau))
    lon = lon0 + np.degrees(np.arctan2(np.sinh(eta_p), np.cos(xi_p)))
    return lat, lon


@dataclass(frozen=True)
class LocalFrame:
    """Anchored quasi-Cartesian frame with per-axis degree-to-meter scales.

    ``inv_db``/``inv_dl`` are the signed factors 1/(B_c - B_{c+1}) and
    1/(L_c - L_{c+1}) derived from a +1 m / +1 m UTM offset of the anchor.
    """

    anchor_geo: GeoPoint
    anchor_utm: np.ndarray
    inv_db: float
    inv_dl: float
    utm_zone: int

    def __post_init__(self):
        arr = np.asarray(self.anchor_utm, dtype=np.float64).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "anchor_utm", arr)
        if not (np.isfinite(self.inv_db) and self.inv_db != 0.0):
            raise ValueError("inv_db must be finite and nonzero")
        if not (np.isfinite(self.inv_dl) and self.inv_dl != 0.0):
            raise ValueError("inv_dl must be finite and nonzero")

    @property
    def anchor_scaled(self):
        a = self.anchor_geo
        return np.array(
            [a.lat_b * self.inv_db, a.lon_l * self.inv_dl, a.height_h]
        )


@dataclass(frozen=True)
class LocalPoint:
    """Point in the quasi-Cartesian frame, meters."""

    x: float
    y: float
    z: float

    def as_array(self):
        return np.array([self.x, self.y, self.z])


def build_frame(anchor_geo):
    """Build a LocalFrame from the geographic anchor of the area of interest.

    The latitude scale comes from a +1 m northing offset of the anchor and
    the longitude scale from a +1 m easting offset. Using one joint
    (+1, +1) offset would fold grid convergence into both scales and break
    the frame away from the zone's central meridian.
    """
    a = anchor_geo
    e, n, zone = geo_to_utm(a.lat_b, a.lon_l)
    lat1, _ = utm_to_geo(float(e), float(n) + 1.0, zone)
    _, lon1 = utm_to_geo(float(e) + 1.0, float(n), zone)
    db = a.lat_b - float(lat1)
    dl = a.lon_l - float(lon1)
    if db == 0.0 or dl == 0.0:
        raise UtmConversionFailure("degenerate anchor offset")
    return LocalFrame(
        anchor_geo=a,
        anchor_utm=np.array([float(e), float(n), a.height_h]),
        inv_db=1.0 / db,
        inv_dl=1.0 / dl,
        utm_zone=zone,
    )


def _as_point_array(pt, cls):
    if isinstance(pt, (GeoPoint, LocalPoint)):
        return pt.as_array(), True
    return np.asarray(pt, dtype=np.float64), False


def to_local(frame, pt):
    """Geographic (lat, lon, h) -> local (x, y, z). Array or GeoPoint input."""
    geo, scalar = _as_point_array(pt, GeoPoint)
    out = np.empty_like(geo)
    anchor = frame.anchor_scaled
    out[..., 0] = geo[..., 0] * frame.inv_db - anchor[0]
    out[..., 1] = geo[..., 1] * frame.inv_dl - anchor[1]
    out[..., 2] = geo[..., 2] - anchor[2]
    if scalar:
        return LocalPoint(*out)
    return out


def from_local(frame, pt):
    """Local (x, y, z) -> geographic (lat, lon, h). Inverse of to_local."""
    loc, scalar = _as_point_array(pt, LocalPoint)
    anchor = frame.anchor_scaled
    out = np.empty_like(loc)
    out[..., 0] = (loc[..., 0] + anchor[0]) / frame.inv_db
    out[..., 1] = (loc[..., 1] + anchor[1]) / frame.inv_dl
    out[..., 2] = loc[..., 2] + anchor[2]
    if scalar:
        return GeoPoint(*out)
    return out


def chained_jacobian(model, frame, pt, check=True):
    """Jacobian of image coordinates w.r.t. local coordinates, px per meter.

    Element-wise product of the frame's inverse scales with the geographic
    projection Jacobian. Accepts LocalPoint or array (..., 3); returns
    (..., 2, 3).
    """
    loc, scalar = _as_point_array(pt, LocalPoint)
    geo = from_local(frame, loc)
    jac = projection_jacobian(model, geo, check=check)
    scales = np.array([1.0 / frame.inv_db, 1.0 / frame.inv_dl, 1.0])
    out = jac * scales
    if scalar:
        return out.reshape(2, 3)
    return out


def validate_frame(frame, scales, avg_height=None):
    """Scale/orthogonality report for the quasi-Cartesian approximation.

    Takes orthogonal unit vectors (east, north) in UTM at the average
    terrain height, scales them by each s, maps the endpoints UTM -> geo ->
    local and reports (s, |x'|, |y'|, angle between x' and y' in degrees).
    """
    h = frame.anchor_geo.height_h if avg_height is None else float(avg_height)
    e0, n0 = float(frame.anchor_utm[0]), float(frame.anchor_utm[1])
    rows = []
    for s in scales:
        if not s > 0:
            raise ValueError("scales must be positive")
        pts_e = np.array([e0, e0 + s, e0])
        pts_n = np.array([n0, n0, n0 + s])
        lat, lon = utm_to_geo(pts_e, pts_n, frame.utm_zone)
        geo = np.stack([lat, lon, np.full(3, h)], axis=-1)
        loc = to_local(frame, geo)
        xv = loc[1] - loc[0]
        yv = loc[2] - loc[0]
        lx = float(np.linalg.norm(xv))
        ly = float(np.linalg.norm(yv))
        cosang = float(np.dot(xv, yv) / (lx * ly))
        ang = math.degrees(math.acos(max(-1.0, min(1.0, cosang))))
        rows.append((float(s), lx, ly, ang))
    return rows
