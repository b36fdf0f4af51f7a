"""Rational function sensor model (RPC) with analytic Jacobians.

Coefficient ordering follows the RPC00B convention:
1, L, B, H, LB, LH, BH, L2, B2, H2, BLH, L3, LB2, LH2, L2B, B3, BH2, L2H, B2H, H3
where B is latitude, L is longitude and H is ellipsoidal height.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DenominatorNearZero, OutsideValidity

# (B, L, H) exponents per RPC00B term, index 0..19
EXPONENTS = np.array(
    [
        (0, 0, 0),
        (0, 1, 0),
        (1, 0, 0),
        (0, 0, 1),
        (1, 1, 0),
        (0, 1, 1),
        (1, 0, 1),
        (0, 2, 0),
        (2, 0, 0),
        (0, 0, 2),
        (1, 1, 1),
        (0, 3, 0),
        (2, 1, 0),
        (0, 1, 2),
        (1, 2, 0),
        (3, 0, 0),
        (1, 0, 2),
        (0, 2, 1),
        (2, 0, 1),
        (0, 0, 3),
    ],
    dtype=np.int64,
)

DENOMINATOR_GUARD = 1e-10
VALIDITY_EXPANSION = 1.2


@dataclass(frozen=True)
class GeoPoint:
    """Geographic point: latitude/longitude in degrees, height in meters."""

    lat_b: float
    lon_l: float
    height_h: float

    def __post_init__(self):
        if not (-90.0 <= self.lat_b <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat_b}")
        if not (-180.0 <= self.lon_l <= 180.0):
            raise ValueError(f"longitude out of range: {self.lon_l}")

    def as_array(self):
        return np.array([self.lat_b, self.lon_l, self.height_h])


@dataclass(frozen=True)
class PixelCoord:
    """Image coordinate in pixels: samp_x is the column, line_y the row."""

    samp_x: float
    line_y: float

    def as_array(self):
        return np.array([self.samp_x, self.line_y])


@dataclass(frozen=True)
class RfmModel:
    """80-coefficient rational function model plus normalization and bias shift.

    The four coefficient vectors map normalized geographic coordinates to
    normalized image coordinates through ratios of cubic polynomials; the
    scale/offset pairs de-normalize both sides, and (shift_samp, shift_line)
    is a constant bias correction added in pixel units.
    """

    num_s: np.ndarray
    den_s: np.ndarray
    num_l: np.ndarray
    den_l: np.ndarray
    scale_b: float
    off_b: float
    scale_l: float
    off_l: float
    scale_h: float
    off_h: float
    scale_samp: float
    off_samp: float
    scale_line: float
    off_line: float
    shift_samp: float = 0.0
    shift_line: float = 0.0

    def __post_init__(self):
        for name in ("num_s", "den_s", "num_l", "den_l"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (20,):
                raise ValueError(f"{name} must have 20 coefficients")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for name in ("scale_b", "scale_l", "scale_h", "scale_samp", "scale_line"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        self._check_denominators()

    def _check_denominators(self):
        # sample the normalized validity box on a lattice; denominators must
        # stay away from zero everywhere the model claims to be valid
        g = np.linspace(-1.0, 1.0, 7)
        bb, ll, hh = np.meshgrid(g, g, g, indexing="ij")
        basis = poly_basis(np.stack([bb, ll, hh], axis=-1))
        for name, den in (("den_s", self.den_s), ("den_l", self.den_l)):
            vals = basis @ den
            if np.any(np.abs(vals) < DENOMINATOR_GUARD):
                raise DenominatorNearZero(
                    f"{name} vanishes inside the validity box"
                )

    def normalize(self, geo):
        """Map (lat, lon, h), shape (..., 3), to normalized coordinates."""
        geo = np.asarray(geo, dtype=np.float64)
        out = np.empty_like(geo)
        out[..., 0] = (geo[..., 0] - self.off_b) / self.scale_b
        out[..., 1] = (geo[..., 1] - self.off_l) / self.scale_l
        out[..., 2] = (geo[..., 2] - self.off_h) / self.scale_h
        return out


def poly_basis(p_norm):
    """Cubic RPC00B basis of normalized coordinates, shape (..., 3) -> (..., 20)."""
    p = np.asarray(p_norm, dtype=np.float64)
    b, l, h = p[..., 0], p[..., 1], p[..., 2]
    out = np.empty(p.shape[:-1] + (20,), dtype=np.float64)
    out[..., 0] = 1.0
    out[..., 1] = l
    out[..., 2] = b
    out[..., 3] = h
    out[..., 4] = l * b
    out[..., 5] = l * h
    out[..., 6] = b * h
    out[..., 7] = l * l
    out[..., 8] = b * b
    out[..., 9] = h * h
    out[..., 10] = b * l * h
    out[..., 11] = l * l * l
    out[..., 12] = l * b * b
    out[..., 13] = l * h * h
    out[..., 14] = l * l * b
    out[..., 15] = b * b * b
    out[..., 16] = b * h * h
    out[..., 17] = l * l * h
    out[..., 18] = b * b * h
    out[..., 19] = h * h * h
    return out


def basis_jacobian(p_norm):
    """Partials of the 20-term basis w.r.t. (B_n, L_n, H_n), shape (..., 20, 3)."""
    p = np.asarray(p_norm, dtype=np.float64)
    b, l, h = p[..., 0], p[..., 1], p[..., 2]
    one = np.ones_like(b)
    zero = np.zeros_like(b)
    out = np.empty(p.shape[:-1] + (20, 3), dtype=np.float64)

    def term(idx, db, dl, dh):
        out[..., idx, 0] = db
        out[..., idx, 1] = dl
        out[..., idx, 2] = dh

    term(0, zero, zero, zero)
    term(1, zero, one, zero)
    term(2, one, zero, zero)
    term(3, zero, zero, one)
    term(4, l, b, zero)
    term(5, zero, h, l)
    term(6, h, zero, b)
    term(7, zero, 2 * l, zero)
    term(8, 2 * b, zero, zero)
    term(9, zero, zero, 2 * h)
    term(10, l * h, b * h, b * l)
    term(11, zero, 3 * l * l, zero)
    term(12, 2 * l * b, b * b, zero)
    term(13, zero, h * h, 2 * l * h)
    term(14, l * l, 2 * l * b, zero)
    term(15, 3 * b * b, zero, zero)
    term(16, h * h, zero, 2 * b * h)
    term(17, zero, 2 * l * h, l * l)
    term(18, 2 * b * h, zero, b * b)
    term(19, zero, zero, 3 * h * h)
    return out


def _as_geo_array(pt):
    if isinstance(pt, GeoPoint):
        return pt.as_array(), True
    return np.asarray(pt, dtype=np.float64), False


def _check_validity(p_norm, expansion):
    amax = float(np.max(np.abs(p_norm)))
    if amax > expansion:
        raise OutsideValidity(
            f"normalized coordinate magnitude {amax:.3f} exceeds "
            f"{expansion:.2f}x the validity box"
        )
    if amax > 1.0:
        warnings.warn(
            f"point at {amax:.3f}x the nominal validity box", stacklevel=3
        )


def project(model, pt, check=True, expansion=VALIDITY_EXPANSION):
    """Project geographic point(s) to image coordinates (samp, line) in px.

    Accepts a GeoPoint or an array of shape (..., 3) holding (lat, lon, h);
    returns a PixelCoord or an array of shape (..., 2).
    """
    geo, scalar = _as_geo_array(pt)
    p_norm = model.normalize(geo)
    if check:
        _check_validity(p_norm, expansion)
    basis = poly_basis(p_norm)
    den_s = basis @ model.den_s
    den_l = basis @ model.den_l
    if np.any(np.abs(den_s) < DENOMINATOR_GUARD) or np.any(
        np.abs(den_l) < DENOMINATOR_GUARD
    ):
        raise DenominatorNearZero("projection denominator below guard")
    samp = (basis @ model.num_s) / den_s * model.scale_samp + model.off_samp
    line = (basis @ model.num_l) / den_l * model.scale_line + model.off_line
    samp = samp + model.shift_samp
    line = line + model.shift_line
    if scalar:
        return PixelCoord(float(samp), float(line))
    return np.stack([samp, line], axis=-1)


def projection_jacobian(model, pt, check=True, expansion=VALIDITY_EXPANSION):
    """Analytic 2x3 Jacobian of project w.r.t. (lat, lon, h).

    Units are px/deg, px/deg, px/m. For array input of shape (..., 3) the
    result has shape (..., 2, 3).
    """
    geo, scalar = _as_geo_array(pt)
    p_norm = model.normalize(geo)
    if check:
        _check_validity(p_norm, expansion)
    basis = poly_basis(p_norm)
    dbasis = basis_jacobian(p_norm)  # (..., 20, 3)

    inv_scales = np.array(
        [1.0 / model.scale_b, 1.0 / model.scale_l, 1.0 / model.scale_h]
    )
    out = np.empty(p_norm.shape[:-1] + (2, 3), dtype=np.float64)
    for row, (num, den, img_scale) in enumerate(
        (
            (model.num_s, model.den_s, model.scale_samp),
            (model.num_l, model.den_l, model.scale_line),
        )
    ):
        n = basis @ num
        d = basis @ den
        if np.any(np.abs(d) < DENOMINATOR_GUARD):
            raise DenominatorNearZero("projection denominator below guard")
        dn = np.einsum("...kj,k->...j", dbasis, num)
        dd = np.einsum("...kj,k->...j", dbasis, den)
        # quotient rule in normalized coordinates, then chain through the
        # geographic normalization scales
        ratio_grad = (dn * d[..., None] - n[..., None] * dd) / (d * d)[..., None]
        out[..., row, :] = img_scale * ratio_grad * inv_scales
    if scalar:
        return out.reshape(2, 3)
    return out


_RPC_KEYS = {
    "LINE_OFF": "off_line",
    "SAMP_OFF": "off_samp",
    "LAT_OFF": "off_b",
    "LONG_OFF": "off_l",
    "HEIGHT_OFF": "off_h",
    "LINE_SCALE": "scale_line",
    "SAMP_SCALE": "scale_samp",
    "LAT_SCALE": "scale_b",
    "LONG_SCALE": "scale_l",
    "HEIGHT_SCALE": "scale_h",
}

_COEFF_RE = re.compile(
    r"(LINE_NUM_COEFF|LINE_DEN_COEFF|SAMP_NUM_COEFF|SAMP_DEN_COEFF)_(\d+)"
)

_COEFF_FIELDS = {
    "LINE_NUM_COEFF": "num_l",
    "LINE_DEN_COEFF": "den_l",
    "SAMP_NUM_COEFF": "num_s",
    "SAMP_DEN_COEFF": "den_s",
}


def read_rpc_text(path, shift_samp=0.0, shift_line=0.0):
    """Read an IKONOS/RPC00B style key-value text file into an RfmModel.

    Lines look like ``LINE_OFF: +002320.00 pixels``; unit suffixes are
    ignored. The bias shift is not part of the file format and is supplied
    by the caller.
    """
    scalars = {}
    coeffs = {name: np.zeros(20) for name in _COEFF_FIELDS.values()}
    seen = {name: 0 for name in _COEFF_FIELDS.values()}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or ":" not in line:
                continue
            key, value = line.split(":", 1)
            key = key.strip().upper()
            value = value.strip().split()[0]
            m = _COEFF_RE.fullmatch(key)
            if m:
                fieldname = _COEFF_FIELDS[m.group(1)]
                idx = int(m.group(2)) - 1
                if not 0 <= idx < 20:
                    raise ValueError(f"coefficient index out of range: {key}")
                coeffs[fieldname][idx] = float(value)
                seen[fieldname] += 1
            elif key in _RPC_KEYS:
                scalars[_RPC_KEYS[key]] = float(value)
    missing = [k for k in _RPC_KEYS.values() if k not in scalars]
    if missing:
        raise ValueError(f"RPC file {path} missing keys: {missing}")
    short = [k for k, n in seen.items() if n != 20]
    if short:
        raise ValueError(f"RPC file {path} has incomplete coefficients: {short}")
    return RfmModel(
        shift_samp=shift_samp, shift_line=shift_line, **coeffs, **scalars
    )


def write_rpc_text(path, model):
    """Write a model in the same key-value style accepted by read_rpc_text."""
    lines = []
    for key, fieldname in _RPC_KEYS.items():
        lines.append(f"{key}: {getattr(model, fieldname):.12g}")
    for key, fieldname in _COEFF_FIELDS.items():
        arr = getattr(model, fieldname)
        for i in range(20):
            lines.append(f"{key}_{i + 1}: {arr[i]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
