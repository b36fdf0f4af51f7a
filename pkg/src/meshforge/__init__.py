"""Multi-view photometric refinement of terrain meshes under RPC sensor models."""

from .errors import (
    ConfigError,
    DegenerateWindow,
    DenominatorNearZero,
    EmptyDem,
    EmptyEvaluation,
    FitResidualTooLarge,
    InsufficientOverlap,
    InverseDivergence,
    IsolatedVertex,
    MeshforgeError,
    NoValidPairs,
    OutsideValidity,
    UtmConversionFailure,
)
from .evaluate import MetricsReport, align_vertical, compute_metrics, evaluate_dem
from .geoframe import (
    LocalFrame,
    LocalPoint,
    build_frame,
    chained_jacobian,
    from_local,
    geo_to_utm,
    to_local,
    utm_to_geo,
    validate_frame,
)
from .imaging import (
    Raster,
    SimilarityField,
    bilinear_gradient,
    bilinear_sample,
    downsample,
    image_gradient,
    read_float_raster,
    read_pgm16,
    write_float_raster,
    write_pgm16,
    zncc_field,
)
from .mesh import (
    DemGrid,
    TriMesh,
    dem_from_mesh,
    densify,
    mesh_from_dem,
    normal_umbrella,
    read_esri_ascii,
    read_ply,
    smoothness_energy,
    thin_plate_displacement,
    umbrella,
    write_esri_ascii,
    write_ply,
)
from .raycast import (
    Bvh,
    HitMap,
    VirtualCamera,
    build_virtual_camera,
    intersect,
    intersect_rays,
    inverse_project_plane,
    pixel_ray,
    reproject,
    segments_occluded,
    validate_ray_straightness,
    visibility,
)
from .refine import (
    GradientField,
    RefineConfig,
    energy,
    photometric_gradient,
    refine_hierarchical,
    refine_level,
    rescale_model,
    select_pairs,
)
from .rfm import (
    GeoPoint,
    PixelCoord,
    RfmModel,
    poly_basis,
    project,
    projection_jacobian,
    read_rpc_text,
    write_rpc_text,
)
from .synthio import SceneSpec, ViewSpec, generate_scene, perturb_mesh

__version__ = "0.1.0"
