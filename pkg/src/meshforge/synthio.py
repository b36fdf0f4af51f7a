"""Synthetic scene generation: sensor models, terrain, texture, rendering.

Everything here is seed-deterministic so end-to-end runs are exactly
reproducible; the generated files use the same formats as real datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import FitResidualTooLarge
from .geoframe import LocalFrame, build_frame, from_local, geo_to_utm, to_local
from .imaging import Raster
from .mesh import DemGrid, TriMesh, mesh_from_dem
from .rfm import GeoPoint, RfmModel, poly_basis, project
from .raycast import Bvh, build_virtual_camera, intersect_rays


@dataclass
class ViewSpec:
    """One synthetic view: acquisition geometry plus sensor-model kind."""

    off_nadir_deg: float
    azimuth_deg: float
    kind: str = "affine"  # affine | cubic-perspective-fit

    def direction(self):
        """Unit viewing direction (toward the ground) in local-frame axes."""
        th = math.radians(self.off_nadir_deg)
        az = math.radians(self.azimuth_deg)
        return np.array(
            [math.sin(th) * math.cos(az), math.sin(th) * math.sin(az),
             -math.cos(th)]
        )


@dataclass
class SceneSpec:
    """Parameters of a generated test scene."""

    extent: float = 128.0
    gsd: float = 0.5
    terrain: str = "fractal"
    terrain_params: dict = field(default_factory=dict)
    texture_corr_px: float = 1.5
    texture_contrast: float = 0.5
    views: list = field(
        default_factory=lambda: [
            ViewSpec(6.0, 0.0),
            ViewSpec(6.0, 90.0),
            ViewSpec(6.0, 180.0),
            ViewSpec(6.0, 270.0),
        ]
    )
    anchor_lat: float = 30.0
    anchor_lon: float = -81.7
    anchor_height: float = 20.0
    camera_height: float = 500.0
    camera_delta_h: float = 100.0
    perspective_distance: float = 500000.0

    def __post_init__(self):
        if not (self.extent > 0 and self.gsd > 0):
            raise ValueError("extent and gsd must be positive")
        if len(self.views) < 2:
            raise ValueError("at least two views are required")
        self.views = [
            v if isinstance(v, ViewSpec) else ViewSpec(**v) for v in self.views
        ]

    @property
    def image_size(self):
        n = int(round(self.extent / self.gsd))
        return n, n


@dataclass
class Scene:
    """Generated scene bundle."""

    spec: SceneSpec
    frame: LocalFrame
    truth_mesh: TriMesh
    truth_dem: DemGrid
    images: list
    models: list
    texture: "ProceduralTexture"


class ProceduralTexture:
    """Multi-octave noise texture sampled bilinearly in local x/y meters.

    Octaves span correlation lengths from ``corr_len`` up to a quarter of
    the extent so image pyramids retain usable contrast at every level.
    """

    def __init__(self, extent, resolution, corr_len, contrast, rng):
        margin = 0.25 * extent
        self.origin = -extent / 2.0 - margin
        self.res = resolution
        n = int(math.ceil((extent + 2 * margin) / resolution)) + 1
        total = np.zeros((n, n))
        length = corr_len
        weight = 1.0
        while True:
            noise = rng.standard_normal((n, n))
            sigma = max(length / resolution, 1e-6)
            band = ndimage.gaussian_filter(noise, sigma, mode="wrap")
            band -= band.mean()
            sd = band.std()
            if sd > 0:
                total += weight * band / sd
            if length >= 0.25 * extent:
                break
            length *= 4.0
            weight *= 0.7
        total -= total.mean()
        peak = max(np.abs(total).max(), 1e-12)
        self.grid = 0.5 + 0.5 * contrast * total / peak

    def sample(self, x, y):
        gx = (np.asarray(x) - self.origin) / self.res
        gy = (np.asarray(y) - self.origin) / self.res
        n = self.grid.shape[0]
        x0 = np.clip(np.floor(gx).astype(np.int64), 0, n - 2)
        y0 = np.clip(np.floor(gy).astype(np.int64), 0, n - 2)
        fx = np.clip(gx - x0, 0.0, 1.0)
        fy = np.clip(gy - y0, 0.0, 1.0)
        g = self.grid
        return (
            g[y0, x0] * (1 - fx) * (1 - fy)
            + g[y0, x0 + 1] * fx * (1 - fy)
            + g[y0 + 1, x0] * (1 - fx) * fy
            + g[y0 + 1, x0 + 1] * fx * fy
        )


def terrain_heights(spec, xy, rng):
    """Evaluate the procedural terrain height (local z) at (..., 2) points."""
    x, y = xy[..., 0], xy[..., 1]
    params = spec.terrain_params
    kind = spec.terrain
    if kind == "flat":
        return np.full(x.shape, float(params.get("base", 0.0)))
    if kind == "ramp":
        return (
            float(params.get("base", 0.0))
            + float(params.get("slope_x", 0.05)) * x
            + float(params.get("slope_y", 0.02)) * y
        )
    if kind == "boxes":
        base = np.full(x.shape, float(params.get("base", 0.0)))
        n_boxes = int(params.get("count", 4))
        size_lo = float(params.get("min_size", 0.12)) * spec.extent
        size_hi = float(params.get("max_size", 0.25)) * spec.extent
        h_lo = float(params.get("min_height", 4.0))
        h_hi = float(params.get("max_height", 12.0))
        half = 0.5 * spec.extent
        for _ in range(n_boxes):
            cx = rng.uniform(-0.55 * half, 0.55 * half)
            cy = rng.uniform(-0.55 * half, 0.55 * half)
            sx = rng.uniform(size_lo, size_hi) / 2.0
            sy = rng.uniform(size_lo, size_hi) / 2.0
            bh = rng.uniform(h_lo, h_hi)
            inside = (np.abs(x - cx) < sx) & (np.abs(y - cy) < sy)
            base = np.where(inside, np.maximum(base, bh), base)
        return base
    if kind == "fractal":
        amp = float(params.get("amplitude", 3.0))
        corr = float(params.get("corr_len", 0.15)) * spec.extent
        n = 192
        res = 1.5 * spec.extent / n
        noise = rng.standard_normal((n + 1, n + 1))
        smooth = ndimage.gaussian_filter(noise, corr / res, mode="wrap")
        peak = max(np.abs(smooth).max(), 1e-12)
        smooth = amp * smooth / peak
        gx = np.clip((x + 0.75 * spec.extent) / res, 0, n - 1)
        gy = np.clip((y + 0.75 * spec.extent) / res, 0, n - 1)
        x0 = np.floor(gx).astype(np.int64)
        y0 = np.floor(gy).astype(np.int64)
        fx = gx - x0
        fy = gy - y0
        return (
            smooth[y0, x0] * (1 - fx) * (1 - fy)
            + smooth[y0, x0 + 1] * fx * (1 - fy)
            + smooth[y0 + 1, x0] * (1 - fx) * fy
            + smooth[y0 + 1, x0 + 1] * fx * fy
        )
    raise ValueError(f"unknown terrain kind: {kind}")


def _validity_box(spec, frame):
    """Geographic normalization covering the scene plus camera planes."""
    half = 0.7 * spec.extent
    corners = np.array(
        [[-half, -half, 0.0], [half, -half, 0.0], [-half, half, 0.0],
         [half, half, 0.0]]
    )
    geo = from_local(frame, corners)
    lat_c = float(frame.anchor_geo.lat_b)
    lon_c = float(frame.anchor_geo.lon_l)
    scale_b = max(np.abs(geo[:, 0] - lat_c).max(), 1e-7)
    scale_l = max(np.abs(geo[:, 1] - lon_c).max(), 1e-7)
    h_lo = -80.0
    h_hi = spec.camera_height + spec.camera_delta_h + 120.0
    off_h = frame.anchor_geo.height_h + 0.5 * (h_lo + h_hi)
    scale_h = 0.5 * (h_hi - h_lo)
    return lat_c, scale_b, lon_c, scale_l, off_h, scale_h


def _image_normalization(w, h):
    return (w - 1) / 2.0, max(w / 2.0, 1.0), (h - 1) / 2.0, max(h / 2.0, 1.0)


def _local_pixel_map(spec, view):
    """Orthographic local-frame -> pixel map along the view direction.

    Rows grow toward -y; the ray bundle is parallel with the requested
    off-nadir direction expressed in local-frame axes.
    """
    d_loc = view.direction()
    w, h = spec.image_size
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    g = spec.gsd
    kx = d_loc[0] / d_loc[2]
    ky = d_loc[1] / d_loc[2]

    def to_px(loc):
        x, y, z = loc[..., 0], loc[..., 1], loc[..., 2]
        px = (x - kx * z) / g + cx
        py = -(y - ky * z) / g + cy
        return np.stack([px, py], axis=-1)

    return to_px, d_loc


def make_affine_model(spec, view, frame):
    """Exact linear RFM realizing a parallel-ray view of the scene."""
    to_px, _ = _local_pixel_map(spec, view)
    lat_c, scale_b, lon_c, scale_l, off_h, scale_h = _validity_box(spec, frame)
    w, h = spec.image_size
    off_samp, scale_samp, off_line, scale_line = _image_normalization(w, h)

    def px_of_norm(bn, ln, hn):
        geo = np.array(
            [lat_c + bn * scale_b, lon_c + ln * scale_l, off_h + hn * scale_h]
        )
        return to_px(to_local(frame, geo))

    base = px_of_norm(0.0, 0.0, 0.0)
    num_s = np.zeros(20)
    num_l = np.zeros(20)
    den = np.zeros(20)
    den[0] = 1.0
    num_s[0] = (base[0] - off_samp) / scale_samp
    num_l[0] = (base[1] - off_line) / scale_line
    for term, unit in ((2, (1.0, 0.0, 0.0)), (1, (0.0, 1.0, 0.0)),
                       (3, (0.0, 0.0, 1.0))):
        p = px_of_norm(*unit)
        num_s[term] = (p[0] - base[0]) / scale_samp
        num_l[term] = (p[1] - base[1]) / scale_line
    return RfmModel(
        num_s=num_s, den_s=den.copy(), num_l=num_l, den_l=den.copy(),
        scale_b=scale_b, off_b=lat_c, scale_l=scale_l, off_l=lon_c,
        scale_h=scale_h, off_h=off_h,
        scale_samp=scale_samp, off_samp=off_samp,
        scale_line=scale_line, off_line=off_line,
    )


def make_perspective_model(spec, view, frame, fit_tol_px=0.01,
                           fit_denominator=True):
    """Cubic RFM least-squares fitted to a pinhole camera in UTM space.

    The pinhole lives in true UTM coordinates, so the geographic-to-image
    map is not exactly rational and the fitted model carries the same kind
    of gentle ray curvature as real sensor RPCs.
    """
    d_loc = view.direction()
    # +1 local x is 1 m south and +1 local y is 1 m west by construction
    d_enu = np.array([-d_loc[1], -d_loc[0], d_loc[2]])
    dist = spec.perspective_distance
    e0, n0 = float(frame.anchor_utm[0]), float(frame.anchor_utm[1])
    h0 = frame.anchor_geo.height_h
    center = np.array([e0, n0, h0]) - dist * d_enu

    fwd = d_enu / np.linalg.norm(d_enu)
    up_world = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up_world)
    nrm = np.linalg.norm(right)
    right = np.array([1.0, 0.0, 0.0]) if nrm < 1e-12 else right / nrm
    down = np.cross(fwd, right)
    f_px = dist / spec.gsd
    w, h = spec.image_size
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0

    def pinhole(geo):
        e, n, _ = geo_to_utm(geo[..., 0], geo[..., 1], zone=frame.utm_zone)
        q = np.stack([e - center[0], n - center[1], geo[..., 2] - center[2]],
                     axis=-1)
        zc = q @ fwd
        xc = q @ right
        yc = q @ down
        return np.stack(
            [f_px * xc / zc + cx, f_px * yc / zc + cy], axis=-1
        )

    lat_c, scale_b, lon_c, scale_l, off_h, scale_h = _validity_box(spec, frame)
    off_samp, scale_samp, off_line, scale_line = _image_normalization(w, h)

    g1 = np.linspace(-1.0, 1.0, 11)
    gh = np.linspace(-1.0, 1.0, 9)
    bn, ln, hn = np.meshgrid(g1, g1, gh, indexing="ij")
    pts_n = np.stack([bn, ln, hn], axis=-1).reshape(-1, 3)
    geo = np.stack(
        [lat_c + pts_n[:, 0] * scale_b, lon_c + pts_n[:, 1] * scale_l,
         off_h + pts_n[:, 2] * scale_h],
        axis=-1,
    )
    px = pinhole(geo)
    targets = np.stack(
        [(px[:, 0] - off_samp) / scale_samp,
         (px[:, 1] - off_line) / scale_line],
        axis=-1,
    )
    basis = poly_basis(pts_n)

    coeffs = []
    for k, (img_scale,) in enumerate(((scale_samp,), (scale_line,))):
        y = targets[:, k]
        num, *_ = np.linalg.lstsq(basis, y, rcond=None)
        den = np.zeros(20)
        den[0] = 1.0
        res = np.abs(basis @ num - y).max() * img_scale
        if res > fit_tol_px and fit_denominator:
            a_mat = np.concatenate(
                [basis, -y[:, None] * basis[:, 1:]], axis=1
            )
            sol, *_ = np.linalg.lstsq(a_mat, y, rcond=None)
            num = sol[:20]
            den = np.concatenate([[1.0], sol[20:]])
            res = np.abs((basis @ num) / (basis @ den) - y).max() * img_scale
        if res > fit_tol_px:
            raise FitResidualTooLarge(
                f"fit residual {res:.4f} px exceeds {fit_tol_px} px"
            )
        coeffs.append((num, den))

    return RfmModel(
        num_s=coeffs[0][0], den_s=coeffs[0][1],
        num_l=coeffs[1][0], den_l=coeffs[1][1],
        scale_b=scale_b, off_b=lat_c, scale_l=scale_l, off_l=lon_c,
        scale_h=scale_h, off_h=off_h,
        scale_samp=scale_samp, off_samp=off_samp,
        scale_line=scale_line, off_line=off_line,
    )


def make_model(spec, view, frame):
    if view.kind == "affine":
        return make_affine_model(spec, view, frame)
    if view.kind == "cubic-perspective-fit":
        return make_perspective_model(spec, view, frame)
    raise ValueError(f"unknown model kind: {view.kind}")


def render_view(model, frame, spec, truth_mesh, texture, bvh=None):
    """Ray-cast the truth mesh and sample the Lambertian texture per pixel."""
    if bvh is None:
        bvh = Bvh(truth_mesh.vertices, truth_mesh.faces)
    w, h = spec.image_size
    dummy = Raster(np.zeros((h, w)))
    mean_h = float(truth_mesh.vertices[:, 2].mean())
    cam = build_virtual_camera(
        model, frame, dummy, plane_h=mean_h + spec.camera_height,
        delta_h=spec.camera_delta_h, terrain_h=mean_h,
    )
    origins = cam.origins.reshape(-1, 3)
    dirs = cam.dirs.reshape(-1, 3)
    face, t, _, _ = intersect_rays(bvh, origins, dirs)
    hit = face >= 0
    pts = origins[hit] + t[hit, None] * dirs[hit]
    values = np.zeros(h * w)
    values[hit] = texture.sample(pts[:, 0], pts[:, 1])
    mask = hit & cam.valid.ravel()
    return Raster(values.reshape(h, w), mask.reshape(h, w))


def generate_scene(spec, seed=0):
    """Build truth surface, sensor models and rendered images, seeded."""
    rng = np.random.default_rng(seed)
    frame = build_frame(
        GeoPoint(spec.anchor_lat, spec.anchor_lon, spec.anchor_height)
    )
    n_cells = int(round(spec.extent / spec.gsd)) + 1
    origin = (-spec.extent / 2.0, -spec.extent / 2.0)
    dem = DemGrid(
        origin_local=origin, cell_size=spec.gsd,
        heights=np.zeros((n_cells, n_cells)),
    )
    centers = dem.cell_centers()
    dem.heights = terrain_heights(spec, centers, rng)
    truth_mesh = mesh_from_dem(dem, 1)

    texture = ProceduralTexture(
        extent=spec.extent,
        resolution=spec.gsd / 2.0,
        corr_len=spec.texture_corr_px * spec.gsd,
        contrast=spec.texture_contrast,
        rng=rng,
    )
    bvh = Bvh(truth_mesh.vertices, truth_mesh.faces)
    models = [make_model(spec, v, frame) for v in spec.views]
    images = [
        render_view(mdl, frame, spec, truth_mesh, texture, bvh=bvh)
        for mdl in models
    ]
    return Scene(
        spec=spec, frame=frame, truth_mesh=truth_mesh, truth_dem=dem,
        images=images, models=models, texture=texture,
    )


def perturb_mesh(m, sigma, seed=0, z_only=False):
    """Add seeded Gaussian noise to vertex positions."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    out = m.copy()
    if sigma == 0:
        return out
    v = out.vertices.copy()
    if z_only:
        v[:, 2] += rng.normal(0.0, sigma, len(v))
    else:
        v += rng.normal(0.0, sigma, v.shape)
    out.update_vertices(v)
    return out
