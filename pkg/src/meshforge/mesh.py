"""Triangle mesh structure, DEM conversion, densification and fairing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDem

MIN_FACE_AREA = 1e-9


@dataclass
class DemGrid:
    """Planimetric elevation raster in local frame coordinates.

    ``origin_local`` is the (x, y) of the center of cell (0, 0); row i maps
    to y = origin_y + i * cell_size and column j to x = origin_x + j *
    cell_size. ``nodata`` marks missing cells.
    """

    origin_local: tuple
    cell_size: float
    heights: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.ndim != 2:
            raise ValueError("heights must be 2-D")

    @property
    def valid(self):
        return (self.heights != self.nodata) & np.isfinite(self.heights)

    @property
    def nrows(self):
        return self.heights.shape[0]

    @property
    def ncols(self):
        return self.heights.shape[1]

    def cell_centers(self):
        """(nrows, ncols, 2) array of cell-center x/y coordinates."""
        ox, oy = self.origin_local[0], self.origin_local[1]
        xs = ox + np.arange(self.ncols) * self.cell_size
        ys = oy + np.arange(self.nrows) * self.cell_size
        xx, yy = np.meshgrid(xs, ys)
        return np.stack([xx, yy], axis=-1)


class TriMesh:
    """Indexed triangle surface with cached adjacency and normals.

    Faces are counter-clockwise seen from +z. Vertex mutation goes through
    ``update_vertices`` so normals and adjacency stay consistent.
    """

    def __init__(self, vertices, faces):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be (F, 3)")
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")
        self._cache = {}

    def update_vertices(self, vertices):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise ValueError("vertex array shape must not change")
        self.vertices = vertices
        self._cache.clear()

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def face_normals(self):
        if "face_normals" not in self._cache:
            v = self.vertices
            f = self.faces
            cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            norms = np.linalg.norm(cross, axis=1)
            self._cache["face_areas"] = 0.5 * norms
            safe = np.maximum(norms, 1e-300)
            self._cache["face_normals"] = cross / safe[:, None]
        return self._cache["face_normals"]

    @property
    def face_areas(self):
        self.face_normals
        return self._cache["face_areas"]

    @property
    def vertex_normals(self):
        """Area-weighted average of incident face normals, unit length."""
        if "vertex_normals" not in self._cache:
            fn = self.face_normals
            areas = self.face_areas
            acc = np.zeros_like(self.vertices)
            weighted = fn * areas[:, None]
            for k in range(3):
                np.add.at(acc, self.faces[:, k], weighted)
            norms = np.linalg.norm(acc, axis=1)
            isolated = norms < 1e-300
            acc[isolated] = (0.0, 0.0, 1.0)
            norms = np.maximum(norms, 1e-300)
            out = acc / norms[:, None]
            out[isolated] = (0.0, 0.0, 1.0)
            self._cache["vertex_normals"] = out
        return self._cache["vertex_normals"]

    @property
    def one_ring(self):
        """Per-vertex list of incident face indices."""
        if "one_ring" not in self._cache:
            rings = [[] for _ in range(self.n_vertices)]
            for fi, (a, b, c) in enumerate(self.faces):
                rings[a].append(fi)
                rings[b].append(fi)
                rings[c].append(fi)
            self._cache["one_ring"] = [
                np.array(r, dtype=np.int64) for r in rings
            ]
        return self._cache["one_ring"]

    @property
    def vertex_neighbors(self):
        """CSR-style (indptr, indices) of edge-adjacent vertices, sorted."""
        if "vertex_neighbors" not in self._cache:
            f = self.faces
            edges = np.concatenate(
                [f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0
            )
            und = np.sort(edges, axis=1)
            und = np.unique(und, axis=0)
            both = np.concatenate([und, und[:, ::-1]], axis=0)
            order = np.lexsort((both[:, 1], both[:, 0]))
            both = both[order]
            counts = np.bincount(both[:, 0], minlength=self.n_vertices)
            indptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            self._cache["vertex_neighbors"] = (indptr, both[:, 1].copy())
        return self._cache["vertex_neighbors"]

    def copy(self):
        return TriMesh(self.vertices.copy(), self.faces.copy())


def mesh_from_dem(dem, decimation=1):
    """Triangulate a DEM at ``decimation * cell_size`` spacing.

    Coarse node heights are box means of the valid fine cells under each
    block; each quad of adjacent valid nodes becomes two triangles split
    along a fixed diagonal. Blocks containing any nodata cell are skipped.
    """
    if decimation < 1 or (decimation & (decimation - 1)):
        raise ValueError("decimation must be a power of two")
    valid = dem.valid
    h = np.where(valid, dem.heights, 0.0)
    nr = dem.nrows // decimation
    nc = dem.ncols // decimation
    if nr < 2 or nc < 2:
        raise EmptyDem("fewer than 2x2 nodes at this decimation")
    hs = h[: nr * decimation, : nc * decimation].reshape(
        nr, decimation, nc, decimation
    )
    vs = valid[: nr * decimation, : nc * decimation].reshape(
        nr, decimation, nc, decimation
    )
    cnt = vs.sum(axis=(1, 3))
    node_valid = cnt == decimation * decimation
    if node_valid.sum() < 4:
        raise EmptyDem("not enough valid nodes")
    node_h = np.where(
        node_valid, hs.sum(axis=(1, 3)) / np.maximum(cnt, 1), 0.0
    )

    ox, oy = dem.origin_local[0], dem.origin_local[1]
    off = (decimation - 1) / 2.0 * dem.cell_size
    xs = ox + off + np.arange(nc) * decimation * dem.cell_size
    ys = oy + off + np.arange(nr) * decimation * dem.cell_size
    xx, yy = np.meshgrid(xs, ys)

    vidx = np.full((nr, nc), -1, dtype=np.int64)
    flat_valid = node_valid.ravel()
    vidx.ravel()[flat_valid] = np.arange(flat_valid.sum())
    vertices = np.stack(
        [xx.ravel()[flat_valid], yy.ravel()[flat_valid], node_h.ravel()[flat_valid]],
        axis=-1,
    )

    q = node_valid[:-1, :-1] & node_valid[:-1, 1:] & node_valid[1:, :-1] & node_valid[1:, 1:]
    i, j = np.nonzero(q)
    v00 = vidx[i, j]
    v01 = vidx[i, j + 1]
    v10 = vidx[i + 1, j]
    v11 = vidx[i + 1, j + 1]
    faces = np.empty((2 * len(i), 3), dtype=np.int64)
    faces[0::2] = np.stack([v00, v01, v11], axis=-1)
    faces[1::2] = np.stack([v00, v11, v10], axis=-1)
    if len(faces) == 0:
        raise EmptyDem("no complete quads")
    return TriMesh(vertices, faces)


def densify(m):
    """Midpoint 1-to-4 subdivision; shared edge midpoints are deduplicated."""
    f = m.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    und = np.sort(edges, axis=1)
    uniq, inv = np.unique(und, axis=0, return_inverse=True)
    mid = 0.5 * (m.vertices[uniq[:, 0]] + m.vertices[uniq[:, 1]])
    mid_idx = m.n_vertices + np.arange(len(uniq))
    e01 = mid_idx[inv[: len(f)]]
    e12 = mid_idx[inv[len(f) : 2 * len(f)]]
    e20 = mid_idx[inv[2 * len(f) :]]
    vertices = np.concatenate([m.vertices, mid], axis=0)
    faces = np.empty((4 * len(f), 3), dtype=np.int64)
    faces[0::4] = np.stack([f[:, 0], e01, e20], axis=-1)
    faces[1::4] = np.stack([f[:, 1], e12, e01], axis=-1)
    faces[2::4] = np.stack([f[:, 2], e20, e12], axis=-1)
    faces[3::4] = np.stack([e01, e12, e20], axis=-1)
    return TriMesh(vertices, faces)


def umbrella(m, vectors=None):
    """Uniform umbrella Laplacian: mean of one-ring neighbors minus vertex."""
    indptr, indices = m.vertex_neighbors
    src = vectors if vectors is not None else m.vertices
    acc = np.zeros_like(src)
    counts = np.diff(indptr)
    owner = np.repeat(np.arange(m.n_vertices), counts)
    np.add.at(acc, owner, src[indices])
    safe = np.maximum(counts, 1)[:, None]
    lap = acc / safe - src
    lap[counts == 0] = 0.0
    return lap


def normal_umbrella(m):
    """Umbrella Laplacian projected onto vertex normals.

    The normal component is the discrete stand-in for mean curvature; the
    tangential part only reflects irregular vertex spacing (it is nonzero
    even on a perfect plane) and must not drive the fairing.
    """
    lap = umbrella(m)
    n = m.vertex_normals
    return (lap * n).sum(axis=1)[:, None] * n


def thin_plate_displacement(m):
    """Discrete bi-Laplacian descent direction per vertex.

    Applies the umbrella operator to the normal-projected umbrella field and
    keeps the normal component, the uniform-weight surrogate for the
    gradient of the integrated principal-curvature (thin plate) term.
    Isolated vertices get zero displacement.
    """
    lap_n = normal_umbrella(m)
    disp = -umbrella(m, lap_n)
    n = m.vertex_normals
    return (disp * n).sum(axis=1)[:, None] * n


def smoothness_energy(m):
    """Sum of squared normal-umbrella magnitudes, zero on planar meshes."""
    lap_n = normal_umbrella(m)
    return float((lap_n * lap_n).sum())


def dem_from_mesh(m, template, bvh=None):
    """Extract a DEM by casting vertical rays through each cell center.

    The highest mesh intersection wins; cells with no hit become nodata.
    """
    from . import raycast

    if bvh is None:
        bvh = raycast.Bvh(m.vertices, m.faces)
    centers = template.cell_centers().reshape(-1, 2)
    z_top = float(m.vertices[:, 2].max()) + 10.0
    origins = np.concatenate(
        [centers, np.full((len(centers), 1), z_top)], axis=1
    )
    dirs = np.tile(np.array([0.0, 0.0, -1.0]), (len(centers), 1))
    face, t, _, _ = raycast.intersect_rays(bvh, origins, dirs)
    hit = face >= 0
    heights = np.full(len(centers), template.nodata)
    heights[hit] = z_top - t[hit]
    return DemGrid(
        origin_local=template.origin_local,
        cell_size=template.cell_size,
        heights=heights.reshape(template.nrows, template.ncols),
        nodata=template.nodata,
    )


def read_ply(path):
    """Read an ASCII PLY triangle mesh (x y z vertices, 3-index faces)."""
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError("not a PLY file")
        n_vert = n_face = 0
        fmt = None
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("unexpected end of PLY header")
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                if parts[1] == "vertex":
                    n_vert = int(parts[2])
                elif parts[1] == "face":
                    n_face = int(parts[2])
            elif parts[0] == "end_header":
                break
        if fmt != "ascii":
            raise ValueError("only ASCII PLY is supported")
        vertices = np.empty((n_vert, 3))
        for i in range(n_vert):
            vertices[i] = [float(v) for v in fh.readline().split()[:3]]
        faces = np.empty((n_face, 3), dtype=np.int64)
        for i in range(n_face):
            parts = fh.readline().split()
            if int(parts[0]) != 3:
                raise ValueError("only triangle faces are supported")
            faces[i] = [int(v) for v in parts[1:4]]
    return TriMesh(vertices, faces)


def write_ply(path, m):
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {m.n_vertices}\n")
        fh.write("property float64 x\nproperty float64 y\nproperty float64 z\n")
        fh.write(f"element face {m.n_faces}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for v in m.vertices:
            fh.write(f"{v[0]:.12g} {v[1]:.12g} {v[2]:.12g}\n")
        for f in m.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def read_esri_ascii(path):
    """Read an ESRI ASCII grid into a DemGrid (row 0 = southernmost)."""
    header = {}
    with open(path) as fh:
        pos = fh.tell()
        while True:
            pos = fh.tell()
            line = fh.readline()
            parts = line.split()
            if len(parts) == 2 and parts[0].lower() in {
                "ncols",
                "nrows",
                "xllcorner",
                "yllcorner",
                "cellsize",
                "nodata_value",
            }:
                header[parts[0].lower()] = float(parts[1])
            else:
                fh.seek(pos)
                break
        data = np.loadtxt(fh)
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    nodata = header.get("nodata_value", -9999.0)
    heights = np.asarray(data, dtype=np.float64).reshape(nrows, ncols)[::-1]
    cell = header["cellsize"]
    origin = (
        header["xllcorner"] + cell / 2.0,
        header["yllcorner"] + cell / 2.0,
    )
    return DemGrid(
        origin_local=origin, cell_size=cell, heights=heights, nodata=nodata
    )


def write_esri_ascii(path, dem):
    with open(path, "w") as fh:
        fh.write(f"ncols {dem.ncols}\n")
        fh.write(f"nrows {dem.nrows}\n")
        fh.write(f"xllcorner {dem.origin_local[0] - dem.cell_size / 2.0:.12g}\n")
        fh.write(f"yllcorner {dem.origin_local[1] - dem.cell_size / 2.0:.12g}\n")
        fh.write(f"cellsize {dem.cell_size:.12g}\n")
        fh.write(f"NODATA_value {dem.nodata:.12g}\n")
        for row in dem.heights[::-1]:
            fh.write(" ".join(f"{v:.10g}" for v in row) + "\n")
