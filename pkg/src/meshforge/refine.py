"""Variational mesh refinement: photometric gradients, fairing, hierarchy."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoValidPairs
from .geoframe import chained_jacobian
from .imaging import Raster, bilinear_gradient, downsample, zncc_field
from .mesh import (
    DemGrid,
    TriMesh,
    densify,
    dem_from_mesh,
    mesh_from_dem,
    smoothness_energy,
    thin_plate_displacement,
)
from .raycast import Bvh, build_virtual_camera, reproject


@dataclass
class RefineConfig:
    """Knobs of the coarse-to-fine refinement loop.

    ``step_size`` is the per-iteration maximum vertex displacement in meters
    per unit max-normalized gradient; when None it defaults to 0.05 times
    the current level's ground sample distance. ``beta_scale`` homogenizes
    the smoothness weight across levels and defaults to 1/gsd^2.
    """

    alpha: float = 1.0
    beta_smooth: float = 0.05
    beta_scale: float | None = None
    step_size: float | None = None
    step_gsd_factor: float = 0.05
    step_decay: float = 0.9
    iterations_per_level: int = 20
    start_level: int = 2
    zncc_window: int = 7
    min_angle: float = 5.0
    max_angle: float = 13.0
    pair_list: list | None = None
    camera_plane_offset: float = 500.0
    camera_delta_h: float = 100.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")
        if self.start_level < 0:
            raise ValueError("start_level must be >= 0")
        if self.step_size is not None and self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if not self.min_angle < self.max_angle:
            raise ValueError("min_angle must be below max_angle")


@dataclass
class GradientField:
    """Per-vertex descent vectors and the number of supporting pixels."""

    vectors: np.ndarray
    support: np.ndarray


def rescale_model(model, factor):
    """Sensor model for an image downsampled by an integer factor.

    Pixel centers map as p_coarse = (p_fine + 0.5) / factor - 0.5, so the
    image-side offsets, scales and bias shifts divide by the factor.
    """
    if factor == 1:
        return model
    f = float(factor)
    return replace(
        model,
        off_samp=(model.off_samp + 0.5) / f - 0.5,
        scale_samp=model.scale_samp / f,
        off_line=(model.off_line + 0.5) / f - 0.5,
        scale_line=model.scale_line / f,
        shift_samp=model.shift_samp / f,
        shift_line=model.shift_line / f,
    )


def select_pairs(cams, min_angle_deg=5.0, max_angle_deg=13.0):
    """Ordered view pairs whose mean-ray convergence angle is usable."""
    dirs = [c.mean_dir() for c in cams]
    pairs = []
    for i in range(len(cams)):
        for j in range(len(cams)):
            if i == j:
                continue
            cosang = np.clip(np.dot(dirs[i], dirs[j]), -1.0, 1.0)
            ang = np.degrees(np.arccos(cosang))
            if min_angle_deg <= ang <= max_angle_deg:
                pairs.append((i, j))
    if not pairs:
        raise NoValidPairs(
            f"no view pair within [{min_angle_deg}, {max_angle_deg}] degrees"
        )
    return pairs


def _pair_terms(bvh, m, cams, models, frame, pair, window):
    """Score sum, pixel count and per-pixel gradient pieces for one pair."""
    i, j = pair
    reproj, hm = reproject(bvh, m, cams[i], cams[j], models[j], frame)
    field = zncc_field(cams[i].intensities, reproj, window)
    score = float(field.score.values[field.score.mask].sum())
    n_px = int(field.score.mask.sum())

    d2m = field.d2m.values.ravel()[hm.px_index]
    live = field.d2m.mask.ravel()[hm.px_index]
    gx, gy, ok = bilinear_gradient(
        cams[j].intensities, hm.px_j[:, 0], hm.px_j[:, 1]
    )
    live &= ok
    if not live.any():
        return score, n_px, None

    jac = chained_jacobian(models[j], frame, hm.point[live], check=False)
    dpi_nd = np.einsum("nij,nj->ni", jac, hm.ray_dir[live])
    s = d2m[live] * (gx[live] * dpi_nd[:, 0] + gy[live] * dpi_nd[:, 1])
    # the hit point slides along the viewing ray when the surface moves:
    # a unit normal displacement moves it by -1/(d.n) along the ray
    n_f = m.face_normals[hm.face[live]]
    d_dot_n = np.einsum("ni,ni->n", hm.ray_dir[live], n_f)
    s = s / np.maximum(-d_dot_n, 0.05)
    return score, n_px, (hm.face[live], hm.bary[live], s)


def photometric_gradient(bvh, m, cams, models, frame, pairs, window=7):
    """Per-vertex photometric descent vectors accumulated over view pairs.

    Each valid pixel of a pair contributes its similarity derivative times
    the reprojected image gradient along the viewing ray, pushed onto the
    hit face's vertices along the face normal with barycentric weights.
    """
    if not pairs:
        raise NoValidPairs("empty pair list")
    vectors = np.zeros_like(m.vertices)
    support = np.zeros(len(m.vertices))
    normals = m.face_normals
    for pair in pairs:
        _, _, terms = _pair_terms(bvh, m, cams, models, frame, pair, window)
        if terms is None:
            continue
        faces, bary, s = terms
        contrib = (s[:, None] * normals[faces])[:, None, :] * bary[..., None]
        idx = m.faces[faces].ravel()
        np.add.at(vectors, idx, contrib.reshape(-1, 3))
        np.add.at(support, idx, np.ones(idx.shape))
    return GradientField(vectors=vectors, support=support)


def energy(bvh, m, cams, models, frame, pairs, window=7, alpha=1.0,
           beta=0.0):
    """Photometric + fairing energy of the current surface."""
    photo = 0.0
    for pair in pairs:
        score, _, _ = _pair_terms(bvh, m, cams, models, frame, pair, window)
        photo += score
    smooth = smoothness_energy(m)
    return {
        "photo": photo,
        "smooth": smooth,
        "total": alpha * photo + beta * smooth,
    }


def _combined_step(m, photo, smooth_vec, alpha, beta, max_step):
    """Normalized descent displacement: a robust-norm vertex moves max_step.

    Scaling by a high percentile instead of the maximum keeps the bulk of
    the surface moving at the nominal step; outliers are clamped per vertex.
    """
    combined = alpha * photo.vectors + beta * smooth_vec
    norms = np.linalg.norm(combined, axis=1)
    live = norms > 0.0
    if not live.any() or max_step <= 0.0:
        return np.zeros_like(combined)
    ref = np.percentile(norms[live], 90.0)
    if ref <= 0.0:
        ref = norms[live].max()
    disp = combined * (max_step / ref)
    dn = np.linalg.norm(disp, axis=1)
    over = dn > max_step
    disp[over] *= (max_step / dn[over])[:, None]
    return disp


def refine_level(m, cams, models, frame, config, level_gsd, pairs=None,
                 log=None, level=0):
    """Gradient-descent iterations of one pyramid level (in place on a copy)."""
    if pairs is None:
        pairs = config.pair_list or select_pairs(
            cams, config.min_angle, config.max_angle
        )
    beta_scale = (
        config.beta_scale if config.beta_scale is not None
        else 1.0 / (level_gsd * level_gsd)
    )
    beta = config.beta_smooth * beta_scale
    max_step = (
        config.step_size if config.step_size is not None
        else config.step_gsd_factor * level_gsd
    )
    m = m.copy()
    for it in range(config.iterations_per_level):
        bvh = Bvh(m.vertices, m.faces)
        if log is not None:
            e = energy(bvh, m, cams, models, frame, pairs,
                       window=config.zncc_window, alpha=config.alpha,
                       beta=beta)
            log.append(
                {"level": level, "iteration": it, **e}
            )
        photo = photometric_gradient(
            bvh, m, cams, models, frame, pairs, window=config.zncc_window
        )
        smooth_vec = thin_plate_displacement(m)
        step = _combined_step(m, photo, smooth_vec, config.alpha, beta,
                              max_step * config.step_decay ** it)
        m.update_vertices(m.vertices + step)
    if log is not None:
        bvh = Bvh(m.vertices, m.faces)
        e = energy(bvh, m, cams, models, frame, pairs,
                   window=config.zncc_window, alpha=config.alpha, beta=beta)
        log.append(
            {"level": level, "iteration": config.iterations_per_level, **e}
        )
    return m


def _level_cameras(m, images, models, frame, config, level):
    f = 2 ** level
    imgs = [downsample(img, level) for img in images]
    mdls = [rescale_model(mdl, f) for mdl in models]
    terrain_h = float(m.vertices[:, 2].mean())
    cams = [
        build_virtual_camera(
            mdl, frame, img, plane_h=terrain_h + config.camera_plane_offset,
            delta_h=config.camera_delta_h, terrain_h=terrain_h,
        )
        for mdl, img in zip(mdls, imgs)
    ]
    return cams, mdls


def dem_template_from_mesh(m, cell_size):
    """Empty grid covering a mesh's footprint at the given resolution."""
    lo = m.vertices[:, :2].min(axis=0)
    hi = m.vertices[:, :2].max(axis=0)
    n_cols = max(int(np.floor((hi[0] - lo[0]) / cell_size)) + 1, 2)
    n_rows = max(int(np.floor((hi[1] - lo[1]) / cell_size)) + 1, 2)
    return DemGrid(
        origin_local=(float(lo[0]), float(lo[1])),
        cell_size=float(cell_size),
        heights=np.zeros((n_rows, n_cols)),
    )


def refine_hierarchical(initial, images, models, frame, config, gsd=None,
                        log=None):
    """Coarse-to-fine refinement from an initial DEM or mesh.

    At pyramid level l the images are box-downsampled by 2^l and the mesh
    resolution targets two level-pixels per triangle edge; levels hand off
    through one-to-four subdivision.
    """
    if isinstance(initial, TriMesh):
        if gsd is None:
            raise ValueError("gsd is required when starting from a mesh")
        template = dem_template_from_mesh(initial, gsd)
        dem = dem_from_mesh(initial, template)
    else:
        dem = initial
        if gsd is None:
            gsd = dem.cell_size

    m = None
    for level in range(config.start_level, -1, -1):
        if m is None:
            m = mesh_from_dem(dem, 2 ** (level + 1))
        else:
            m = densify(m)
        cams, mdls = _level_cameras(m, images, models, frame, config, level)
        level_gsd = float(np.mean([c.gsd for c in cams]))
        pairs = config.pair_list or select_pairs(
            cams, config.min_angle, config.max_angle
        )
        m = refine_level(
            m, cams, mdls, frame, config, level_gsd, pairs=pairs, log=log,
            level=level,
        )
    return m
