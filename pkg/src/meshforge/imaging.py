"""Raster containers, sampling, pyramids and windowed ZNCC with derivative."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

SIGMA_GUARD = 1e-12


@dataclass
class Raster:
    """Row-major intensity grid with an optional validity mask.

    Intensities are dimensionless floats; 16-bit sources are normalized to
    [0, 1] at load time. ``mask`` is True where a pixel is valid.
    """

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("raster values must be 2-D")
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ValueError("mask shape mismatch")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def bilinear_sample(r, x, y):
    """Bilinear interpolation at pixel coordinates (x=col, y=row).

    Returns (values, valid); a sample is invalid when any of its four
    neighbors is out of bounds or masked. x/y may be arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = r.values.shape
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    inb = (x0 >= 0) & (x0 <= w - 2) & (y0 >= 0) & (y0 <= h - 2)
    # exact top/right edge still has a well-defined value
    edge_x = (x == w - 1) & (y0 >= 0) & (y0 <= h - 1)
    edge_y = (y == h - 1) & (x0 >= 0) & (x0 <= w - 1)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    fx = x - x0c
    fy = y - y0c
    v00 = r.values[y0c, x0c]
    v01 = r.values[y0c, x0c + 1]
    v10 = r.values[y0c + 1, x0c]
    v11 = r.values[y0c + 1, x0c + 1]
    vals = (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )
    m = r.mask
    valid = (
        m[y0c, x0c] & m[y0c, x0c + 1] & m[y0c + 1, x0c] & m[y0c + 1, x0c + 1]
    )
    valid &= inb | (edge_x & edge_y) | (edge_x & (y0 >= 0) & (y0 <= h - 2)) | (
        edge_y & (x0 >= 0) & (x0 <= w - 2)
    )
    return vals, valid


def bilinear_gradient(r, x, y):
    """Exact gradient of the bilinear interpolant at pixel coordinates.

    Returns (d/dx, d/dy, valid); this is the derivative of
    ``bilinear_sample`` itself (piecewise bilinear in each cell), which is
    what sampling-based energies actually differentiate.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = r.values.shape
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    inb = (x0 >= 0) & (x0 <= w - 2) & (y0 >= 0) & (y0 <= h - 2)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    fx = x - x0c
    fy = y - y0c
    v00 = r.values[y0c, x0c]
    v01 = r.values[y0c, x0c + 1]
    v10 = r.values[y0c + 1, x0c]
    v11 = r.values[y0c + 1, x0c + 1]
    gx = (v01 - v00) * (1 - fy) + (v11 - v10) * fy
    gy = (v10 - v00) * (1 - fx) + (v11 - v01) * fx
    m = r.mask
    valid = inb & (
        m[y0c, x0c] & m[y0c, x0c + 1] & m[y0c + 1, x0c] & m[y0c + 1, x0c + 1]
    )
    return gx, gy, valid


def image_gradient(r):
    """Central-difference gradients (d/dx, d/dy), one-sided at the borders."""
    gy, gx = np.gradient(r.values)
    return Raster(gx, r.mask.copy()), Raster(gy, r.mask.copy())


def _halve(values, mask):
    h, w = values.shape
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    ph, pw = 2 * h2, 2 * w2
    v = np.zeros((ph, pw))
    m = np.zeros((ph, pw), dtype=bool)
    v[:h, :w] = np.where(mask, values, 0.0)
    m[:h, :w] = mask
    cnt = (
        m[0::2, 0::2].astype(np.int64)
        + m[0::2, 1::2]
        + m[1::2, 0::2]
        + m[1::2, 1::2]
    )
    s = v[0::2, 0::2] + v[0::2, 1::2] + v[1::2, 0::2] + v[1::2, 1::2]
    # pixels contributing fewer than the available fine pixels: a coarse
    # pixel is valid only if every in-bounds fine pixel under it is valid
    avail = np.full((h2, w2), 4, dtype=np.int64)
    if h % 2:
        avail[-1, :] -= 2
    if w % 2:
        avail[:, -1] -= 2
    if h % 2 and w % 2:
        avail[-1, -1] += 1
    ok = cnt == avail
    out = np.where(ok, s / np.maximum(cnt, 1), 0.0)
    return out, ok


def downsample(r, levels):
    """Repeated 2x2 box-filter halving; dimensions become ceil(dim/2) per level."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    values, mask = r.values, r.mask
    for _ in range(levels):
        values, mask = _halve(values, mask)
    return Raster(values.copy(), mask.copy())


@dataclass
class SimilarityField:
    """Per-pixel negative-ZNCC score and its intensity derivative.

    ``score`` holds M = -ZNCC at window centers where both windows are
    fully valid; ``d2m`` holds dM_total/db at every pixel covered by at
    least one valid window, accumulated over all windows containing it.
    """

    score: Raster
    d2m: Raster


def _boxsum(arr, window):
    return ndimage.uniform_filter(arr, size=window, mode="constant", cval=0.0) * (
        window * window
    )


def zncc_field(ref, reproj, window=7):
    """Windowed negative ZNCC of two co-sized rasters plus analytic derivative.

    The derivative is with respect to the ``reproj`` intensities: for a
    window with pixels a (ref) and b (reproj), means abar/bbar, standard
    deviations sa/sb over N pixels and correlation z,
    d(-z)/db_k = -[(a_k - abar)/(N sa sb) - z (b_k - bbar)/(N sb^2)],
    summed over every valid window containing pixel k.
    """
    if ref.values.shape != reproj.values.shape:
        raise ValueError("rasters must share dimensions")
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    a = np.where(ref.mask, ref.values, 0.0)
    b = np.where(reproj.mask, reproj.values, 0.0)
    both = ref.mask & reproj.mask
    af = np.where(both, a, 0.0)
    bf = np.where(both, b, 0.0)
    n_px = window * window

    cnt = _boxsum(both.astype(np.float64), window)
    full = np.abs(cnt - n_px) < 0.5
    # windows touching the border are never full
    half = window // 2
    interior = np.zeros_like(full)
    interior[half:-half, half:-half] = True
    full &= interior

    sa_sum = _boxsum(af, window)
    sb_sum = _boxsum(bf, window)
    abar = sa_sum / n_px
    bbar = sb_sum / n_px
    msq_a = _boxsum(af * af, window) / n_px
    msq_b = _boxsum(bf * bf, window) / n_px
    va = msq_a - abar * abar
    vb = msq_b - bbar * bbar
    sa = np.sqrt(np.maximum(va, 0.0))
    sb = np.sqrt(np.maximum(vb, 0.0))
    # the running box sums leave O(line_length * eps) residue on flat
    # windows, so treat variance below that noise floor as degenerate too
    noise = 64.0 * max(ref.values.shape) * np.finfo(np.float64).eps
    nondegen = (va > np.maximum(SIGMA_GUARD**2, noise * msq_a)) & (
        vb > np.maximum(SIGMA_GUARD**2, noise * msq_b)
    )
    valid_c = full & nondegen

    denom = np.where(valid_c, sa * sb, 1.0)
    cov = _boxsum(af * bf, window) / n_px - abar * bbar
    z = np.where(valid_c, cov / denom, 0.0)
    z = np.clip(z, -1.0, 1.0)
    score = Raster(np.where(valid_c, -z, 0.0), valid_c.copy())

    # accumulate the per-window derivative over all windows containing each
    # pixel; u and w are center fields, zeroed at invalid centers
    u = np.zeros_like(sa)
    w_f = np.zeros_like(sa)
    u[valid_c] = 1.0 / (n_px * sa[valid_c] * sb[valid_c])
    w_f[valid_c] = z[valid_c] / (n_px * vb[valid_c])
    d2m = -(
        af * _boxsum(u, window)
        - _boxsum(u * abar, window)
        - bf * _boxsum(w_f, window)
        + _boxsum(w_f * bbar, window)
    )
    covered = _boxsum(valid_c.astype(np.float64), window) > 0.5
    covered &= both
    d2m = np.where(covered, d2m, 0.0)
    return SimilarityField(score=score, d2m=Raster(d2m, covered))


def read_pgm16(path):
    """Read a binary 16-bit PGM (P5), normalizing intensities to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    idx = 0
    while len(tokens) < 4:
        # header tokens with '#' comments
        end = data.index(b"\n", idx) if b"\n" in data[idx:] else len(data)
        line = data[idx : end + 1]
        idx = end + 1
        stripped = line.split(b"#")[0].split()
        tokens.extend(stripped)
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5":
        raise ValueError("not a binary PGM file")
    if maxval > 65535:
        raise ValueError("unsupported PGM maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    raw = np.frombuffer(data, dtype=dtype, count=w * h, offset=idx)
    values = raw.reshape(h, w).astype(np.float64) / maxval
    return Raster(values)


def write_pgm16(path, raster):
    """Write intensities in [0, 1] as binary 16-bit PGM."""
    vals = np.clip(raster.values, 0.0, 1.0)
    scaled = np.round(vals * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{raster.width} {raster.height}\n65535\n".encode())
        fh.write(scaled.tobytes())


def read_float_raster(path):
    """Read the flat float32 raster format (u32 width, u32 height, data)."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        w, h = struct.unpack("<II", header)
        data = np.frombuffer(fh.read(4 * w * h), dtype="<f4")
    return Raster(data.reshape(h, w).astype(np.float64))


def write_float_raster(path, raster):
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", raster.width, raster.height))
        fh.write(raster.values.astype("<f4").tobytes())
