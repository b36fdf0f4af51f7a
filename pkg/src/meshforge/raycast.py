"""BVH ray casting, virtual cameras and cross-view texture reprojection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InverseDivergence
from .geoframe import from_local, to_local
from .imaging import Raster, bilinear_sample
from .rfm import PixelCoord, project, projection_jacobian

OCCLUSION_EPS = 1e-3
NEWTON_TOL_PX = 1e-4
NEWTON_MAX_ITER = 20


class Bvh:
    """Axis-aligned bounding volume hierarchy over mesh faces, leaves <= 4."""

    def __init__(self, vertices, faces, leaf_size=4):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        tris = self.vertices[self.faces]
        tri_bmin = tris.min(axis=1)
        tri_bmax = tris.max(axis=1)
        centroids = tris.mean(axis=1)
        (
            self.node_bmin,
            self.node_bmax,
            self.left,
            self.right,
            self.start,
            self.count,
            self.order,
            self.n_nodes,
        ) = _kernels.build_bvh(tri_bmin, tri_bmax, centroids, leaf_size)


@dataclass(frozen=True)
class Hit:
    face: int
    bary: np.ndarray
    t: float
    point: np.ndarray


def intersect_rays(bvh, origins, dirs):
    """Closest intersections for a batch of rays.

    Returns (face, t, u, v); face is -1 on miss. Barycentric weights are
    (1-u-v, u, v) for the face's three vertices.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    return _kernels.raycast_closest(
        bvh.vertices,
        bvh.faces,
        bvh.node_bmin,
        bvh.node_bmax,
        bvh.left,
        bvh.right,
        bvh.start,
        bvh.count,
        bvh.order,
        origins,
        dirs,
    )


def intersect(bvh, m, origin, direction):
    """Single-ray nearest intersection against the mesh; None on miss."""
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    face, t, u, v = intersect_rays(bvh, o, d)
    if face[0] < 0:
        return None
    bary = np.array([1.0 - u[0] - v[0], u[0], v[0]])
    point = o[0] + t[0] * d[0]
    return Hit(face=int(face[0]), bary=bary, t=float(t[0]), point=point)


def segments_occluded(bvh, origins, dirs, t_max):
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    t_max = np.ascontiguousarray(t_max, dtype=np.float64)
    return _kernels.raycast_anyhit(
        bvh.vertices,
        bvh.faces,
        bvh.node_bmin,
        bvh.node_bmax,
        bvh.left,
        bvh.right,
        bvh.start,
        bvh.count,
        bvh.order,
        origins,
        dirs,
        t_max,
    )


def inverse_project_plane(model, frame, px, height, tol=NEWTON_TOL_PX,
                          max_iter=NEWTON_MAX_ITER):
    """Invert the sensor model at fixed height by 2-D Newton iteration.

    ``px`` has shape (..., 2) holding (samp, line); returns (geo, converged)
    where geo is (..., 3). Newton runs on the planimetric 2x2 sub-Jacobian.
    """
    px = np.asarray(px, dtype=np.float64)
    flat = px.reshape(-1, 2)
    n = len(flat)
    geo = np.empty((n, 3))
    geo[:, 0] = model.off_b
    geo[:, 1] = model.off_l
    geo[:, 2] = height
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        proj = project(model, geo[idx], check=False)
        r = proj - flat[idx]
        done = np.max(np.abs(r), axis=1) < tol
        active[idx[done]] = False
        idx = idx[~done]
        if len(idx) == 0:
            break
        r = r[~done]
        jac = projection_jacobian(model, geo[idx], check=False)
        a = jac[:, 0, 0]
        b = jac[:, 0, 1]
        c = jac[:, 1, 0]
        d = jac[:, 1, 1]
        det = a * d - b * c
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        db = (d * r[:, 0] - b * r[:, 1]) / det
        dl = (-c * r[:, 0] + a * r[:, 1]) / det
        geo[idx, 0] -= db
        geo[idx, 1] -= dl
    # final residual check for points that used all iterations
    idx = np.nonzero(active)[0]
    if len(idx):
        proj = project(model, geo[idx], check=False)
        res = np.max(np.abs(proj - flat[idx]), axis=1)
        active[idx[res < tol]] = False
    converged = ~active
    return geo.reshape(px.shape[:-1] + (3,)), converged.reshape(px.shape[:-1])


@dataclass
class VirtualCamera:
    """Straight-ray proxy of a sensor model.

    Per-pixel ray origins lie on the plane z = plane_h; unit directions
    point downward toward the terrain. ``gsd`` is the mean ground footprint
    of one pixel at the reference terrain height.
    """

    origins: np.ndarray
    dirs: np.ndarray
    intensities: Raster
    gsd: float
    plane_h: float
    delta_h: float
    valid: np.ndarray

    @property
    def height(self):
        return self.origins.shape[0]

    @property
    def width(self):
        return self.origins.shape[1]

    def mean_dir(self):
        d = self.dirs[self.valid].mean(axis=0)
        return d / np.linalg.norm(d)


def build_virtual_camera(model, frame, img, plane_h, delta_h=100.0,
                         terrain_h=None, max_bad_frac=1e-3):
    """Build the per-pixel straight-ray camera for one image.

    Every pixel is inverse-projected onto the planes z = plane_h and
    z = plane_h + delta_h (local frame heights); the two points define the
    ray. GSD is measured between horizontally adjacent pixels at
    ``terrain_h`` (default: plane_h).
    """
    if not delta_h > 0:
        raise ValueError("delta_h must be positive")
    h, w = img.values.shape
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    px = np.stack([cols, rows], axis=-1)

    anchor_h = frame.anchor_geo.height_h
    geo_lo, ok_lo = inverse_project_plane(model, frame, px, plane_h + anchor_h)
    geo_hi, ok_hi = inverse_project_plane(
        model, frame, px, plane_h + delta_h + anchor_h
    )
    ok = ok_lo & ok_hi
    bad = 1.0 - ok.mean()
    if bad > max_bad_frac:
        raise InverseDivergence(
            f"inverse projection diverged for {bad:.2%} of pixels"
        )
    v_lo = to_local(frame, geo_lo)
    v_hi = to_local(frame, geo_hi)
    d = v_lo - v_hi
    norm = np.linalg.norm(d, axis=-1)
    norm = np.where(norm > 0, norm, 1.0)
    dirs = d / norm[..., None]

    t_h = plane_h if terrain_h is None else float(terrain_h)
    step = max(1, min(h, w) // 32)
    sub_c, sub_r = np.meshgrid(
        np.arange(0, w - 1, step, dtype=np.float64),
        np.arange(0, h, step, dtype=np.float64),
    )
    px_a = np.stack([sub_c, sub_r], axis=-1)
    px_b = np.stack([sub_c + 1.0, sub_r], axis=-1)
    geo_a, _ = inverse_project_plane(model, frame, px_a, t_h + anchor_h)
    geo_b, _ = inverse_project_plane(model, frame, px_b, t_h + anchor_h)
    la = to_local(frame, geo_a)
    lb = to_local(frame, geo_b)
    gsd = float(np.mean(np.linalg.norm((lb - la)[..., :2], axis=-1)))

    valid = ok & img.mask
    return VirtualCamera(
        origins=v_lo,
        dirs=dirs,
        intensities=img,
        gsd=gsd,
        plane_h=float(plane_h),
        delta_h=float(delta_h),
        valid=valid,
    )


def pixel_ray(model, frame, px, plane_h, delta_h=100.0):
    """Local-frame unit ray (downward) through one pixel at plane height."""
    if isinstance(px, PixelCoord):
        px = px.as_array()
    anchor_h = frame.anchor_geo.height_h
    geo_lo, ok_lo = inverse_project_plane(model, frame, px, plane_h + anchor_h)
    geo_hi, ok_hi = inverse_project_plane(
        model, frame, px, plane_h + delta_h + anchor_h
    )
    if not (np.all(ok_lo) and np.all(ok_hi)):
        raise InverseDivergence("pixel ray inversion did not converge")
    v_lo = to_local(frame, geo_lo)
    v_hi = to_local(frame, geo_hi)
    d = v_lo - v_hi
    return v_lo, d / np.linalg.norm(d, axis=-1)[..., None]


def validate_ray_straightness(model, frame, pixel, heights, delta_h=100.0):
    """Off-nadir ray angle of one pixel at several plane heights.

    Returns rows (h, angle_deg); variation across h measures how far the
    sensor's rays deviate from straight lines.
    """
    rows = []
    px = pixel.as_array() if isinstance(pixel, PixelCoord) else np.asarray(pixel)
    for h in heights:
        _, d = pixel_ray(model, frame, px, float(h), delta_h)
        cosang = np.clip(-d[..., 2], -1.0, 1.0)
        rows.append((float(h), math.degrees(math.acos(float(cosang)))))
    return rows


def _camera_pixel_of_points(points, cam, model=None, frame=None):
    """Image coordinates of local points in a virtual camera's view."""
    if model is not None and frame is not None:
        geo = from_local(frame, points)
        return project(model, geo, check=False)
    # affine fit of the origin grid as fallback when no model is at hand
    h, w = cam.origins.shape[:2]
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    sel = cam.valid
    a_mat = np.stack(
        [cam.origins[sel][:, 0], cam.origins[sel][:, 1],
         np.ones(sel.sum())], axis=-1
    )
    coef_c, *_ = np.linalg.lstsq(a_mat, cols[sel], rcond=None)
    coef_r, *_ = np.linalg.lstsq(a_mat, rows[sel], rcond=None)
    # project the point up to the camera plane along the mean ray first
    d = cam.mean_dir()
    t = (cam.plane_h - points[..., 2]) / d[2]
    foot = points + t[..., None] * d
    ones = np.ones(foot.shape[:-1])
    px_c = coef_c[0] * foot[..., 0] + coef_c[1] * foot[..., 1] + coef_c[2] * ones
    px_r = coef_r[0] * foot[..., 0] + coef_r[1] * foot[..., 1] + coef_r[2] * ones
    return np.stack([px_c, px_r], axis=-1)


def visibility(bvh, m, points, cam, model=None, frame=None, eps=OCCLUSION_EPS):
    """True where the segment from a surface point to the camera plane is free.

    ``points`` is (..., 3) (or a single point); the ray direction toward the
    camera is looked up from the camera's per-pixel direction grid.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    px = _camera_pixel_of_points(pts, cam, model=model, frame=frame)
    cc = np.clip(px[:, 0], 0, cam.width - 1)
    rr = np.clip(px[:, 1], 0, cam.height - 1)
    ci = np.round(cc).astype(np.int64)
    ri = np.round(rr).astype(np.int64)
    d = cam.dirs[ri, ci]
    up = -d
    dz = np.where(np.abs(up[:, 2]) > 1e-12, up[:, 2], 1e-12)
    t_plane = (cam.plane_h - pts[:, 2]) / dz
    t_plane = np.maximum(t_plane, 0.0)
    origins = pts + eps * up
    occ = segments_occluded(bvh, origins, up, t_plane - 2 * eps)
    vis = ~occ
    if single:
        return bool(vis[0])
    return vis


@dataclass
class HitMap:
    """Per-pixel hit record of a reprojection pass (flattened over pixels)."""

    shape: tuple
    px_index: np.ndarray
    face: np.ndarray
    bary: np.ndarray
    point: np.ndarray
    ray_dir: np.ndarray
    px_j: np.ndarray


def reproject(bvh, m, cam_i, cam_j, model_j, frame):
    """Transfer view j's texture into view i through the surface.

    Casts every valid pixel ray of view i, intersects the mesh, projects the
    hit into image j and samples bilinearly. Pixels are masked on miss,
    out-of-bounds in j, or occlusion toward j. Returns (raster, hitmap).
    """
    h, w = cam_i.origins.shape[:2]
    sel = cam_i.valid.ravel()
    origins = cam_i.origins.reshape(-1, 3)[sel]
    dirs = cam_i.dirs.reshape(-1, 3)[sel]
    face, t, u, v = intersect_rays(bvh, origins, dirs)
    hit = face >= 0

    idx_all = np.nonzero(sel)[0][hit]
    face = face[hit]
    t = t[hit]
    u = u[hit]
    v = v[hit]
    points = origins[hit] + t[:, None] * dirs[hit]

    geo = from_local(frame, points)
    px_j = project(model_j, geo, check=False)
    vals, ok = bilinear_sample(cam_j.intensities, px_j[:, 0], px_j[:, 1])
    vis = visibility(bvh, m, points, cam_j, model=model_j, frame=frame)
    ok &= vis

    values = np.zeros(h * w)
    mask = np.zeros(h * w, dtype=bool)
    keep = ok
    values[idx_all[keep]] = vals[keep]
    mask[idx_all[keep]] = True

    bary = np.stack([1.0 - u - v, u, v], axis=-1)
    hitmap = HitMap(
        shape=(h, w),
        px_index=idx_all[keep],
        face=face[keep],
        bary=bary[keep],
        point=points[keep],
        ray_dir=dirs[hit][keep],
        px_j=px_j[keep],
    )
    return Raster(values.reshape(h, w), mask.reshape(h, w)), hitmap
