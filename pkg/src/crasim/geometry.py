"""Offset parabolic reflector surfaces and their pseudo-random perturbation.

Coordinates are in millimetres.  The unperturbed reflector is the paraboloid

    y = ((x - L_off)**2 + z**2) / (4 f0) - f0,   |x - L_off| <= D0/2, |z| <= D0/2

whose focus sits at ``(L_off, 0, 0)`` and whose axis is parallel to +y.  A
compressive reflector adds a piecewise-linear height field ``dh(x, z)`` along
y, defined by one i.i.d. uniform draw per mesh vertex.

Random draws come from numpy's ``PCG64`` bit generator seeded with the given
64-bit integer.  Raw 64-bit outputs are turned into uniforms in [0, 1) as
``(raw >> 11) * 2**-53`` so the stream does not depend on numpy's
distribution code, and draws are consumed in vertex-index order.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class ReflectorParams:
    """Reflector design parameters (mm); defaults reproduce the fabricated CRA."""

    aperture_size: float = 500.0
    focal_length: float = 500.0
    offset: float = 350.0
    mean_facet_edge: float = 16.4
    max_distortion: float = 0.8
    seed: int = 0

    def __post_init__(self):
        problems = []
        for name in ("aperture_size", "focal_length", "mean_facet_edge"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0 (got {getattr(self, name)!r})")
        if not self.max_distortion >= 0:
            problems.append(f"max_distortion must be >= 0 (got {self.max_distortion!r})")
        if not 0 <= int(self.seed) < 2**64:
            problems.append(f"seed must be an unsigned 64-bit integer (got {self.seed!r})")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def focal_point(self) -> np.ndarray:
        return np.array([self.offset, 0.0, 0.0])

    @property
    def center(self) -> np.ndarray:
        """Centre of the reflector footprint, on the surface (the paraboloid vertex)."""
        return np.array([self.offset, -self.focal_length, 0.0])

    def surface_y(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        return ((x - self.offset) ** 2 + z**2) / (4.0 * self.focal_length) - self.focal_length

    def surface_slope(self, x, z):
        """Return (dy/dx, dy/dz) of the unperturbed paraboloid."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        return (x - self.offset) / (2.0 * self.focal_length), z / (2.0 * self.focal_length)


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh with per-vertex height distortions along y.

    ``params`` is set for meshes built on the reflector paraboloid; facet
    normals are then taken from the smooth surface plus the facet-wise
    constant gradient of the distortion field.
    """

    vertices: np.ndarray
    faces: np.ndarray
    distortions: np.ndarray
    params: ReflectorParams | None = None

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        distortions = np.ascontiguousarray(self.distortions, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError(f"vertices must have shape (n, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must have shape (m, 3), got {faces.shape}")
        if distortions.shape != (len(vertices),):
            raise MeshError("need one distortion per vertex")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            bad = int(np.nonzero((faces < 0).any(1) | (faces >= len(vertices)).any(1))[0][0])
            raise MeshError(f"face {bad} references a vertex index out of range")
        for arr in (vertices, faces, distortions):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "distortions", distortions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)


@dataclass(frozen=True)
class FacetGeometry:
    """Per-facet reference point, unit normal and area (arrays over facets)."""

    centroid: np.ndarray
    unit_normal: np.ndarray
    area: np.ndarray
    # vertex offsets from the flat centroid, projected on the tangent plane
    tangent_offsets: np.ndarray

    def __len__(self):
        return len(self.area)


def build_tra_surface(params: ReflectorParams) -> TriMesh:
    """Tessellate the unperturbed paraboloid on a structured square grid.

    The (x - L_off, z) square of side D0 is split into ``ceil(D0 / d0)``
    cells per side, each cut into two triangles along the same diagonal, and
    the grid nodes are lifted onto the paraboloid.
    """
    n = int(np.ceil(params.aperture_size / params.mean_facet_edge - 1e-9))
    u = np.linspace(-params.aperture_size / 2, params.aperture_size / 2, n + 1)
    zz, xx = np.meshgrid(u, u + params.offset, indexing="ij")
    x = xx.ravel()
    z = zz.ravel()
    vertices = np.column_stack([x, params.surface_y(x, z), z])

    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    # winding chosen so (v1 - v0) x (v2 - v0) points to +y
    faces = np.concatenate([np.column_stack([a, c, b]), np.column_stack([b, c, d])])
    return TriMesh(vertices, faces, np.zeros(len(vertices)), params)


def uniform_draws(seed: int, n: int) -> np.ndarray:
    """``n`` uniforms in [0, 1) from PCG64(seed), 53 bits each."""
    raw = np.random.PCG64(int(seed)).random_raw(n)
    return (np.asarray(raw, dtype=np.uint64) >> np.uint64(11)).astype(float) * 2.0**-53


def perturb_surface(mesh: TriMesh, max_distortion: float, seed: int) -> TriMesh:
    """Displace every vertex along y by an i.i.d. draw from U(-dh_m, +dh_m)."""
    if not max_distortion >= 0:
        raise ValueError(f"max_distortion must be >= 0 (got {max_distortion!r})")
    if max_distortion == 0:
        dh = np.zeros(len(mesh.vertices))
    else:
        dh = max_distortion * (2.0 * uniform_draws(seed, len(mesh.vertices)) - 1.0)
    vertices = mesh.vertices.copy()
    vertices[:, 1] += dh
    params = mesh.params
    if params is not None:
        params = dataclasses.replace(params, max_distortion=max_distortion, seed=int(seed))
    return TriMesh(vertices, mesh.faces, mesh.distortions + dh, params)


def build_cra_surface(params: ReflectorParams) -> TriMesh:
    return perturb_surface(build_tra_surface(params), params.max_distortion, params.seed)


def facet_properties(mesh: TriMesh) -> FacetGeometry:
    """Reference point, normal and area of every facet.

    Areas are those of the flat triangles.  For generic meshes the centroid
    and normal are the flat-triangle ones, with the normal flipped to y >= 0.
    For reflector meshes the reference point is the surface point above the
    (x, z) centroid and the normal is that of paraboloid + distortion field,
    so an unperturbed reflector collimates a focal feed exactly.
    """
    v = mesh.vertices[mesh.faces]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    cross = np.cross(e1, e2)
    twice_area = np.linalg.norm(cross, axis=1)
    area = 0.5 * twice_area

    scale = float(np.median(np.linalg.norm(e1, axis=1))) if len(v) else 1.0
    floor = 1e-6 * (mesh.params.mean_facet_edge if mesh.params else scale) ** 2
    degenerate = np.nonzero(~(area > floor))[0]
    if degenerate.size:
        raise MeshError(f"face {int(degenerate[0])} is degenerate (area {area[degenerate[0]]:.3g} mm^2)")

    flat_centroid = v.mean(axis=1)
    if mesh.params is None:
        normal = cross / twice_area[:, None]
        normal[normal[:, 1] < 0] *= -1
        centroid = flat_centroid
    else:
        p = mesh.params
        xc, zc = flat_centroid[:, 0], flat_centroid[:, 2]
        # gradient of the piecewise-linear distortion on each face
        d = mesh.distortions[mesh.faces]
        dd1 = d[:, 1] - d[:, 0]
        dd2 = d[:, 2] - d[:, 0]
        det = e1[:, 0] * e2[:, 2] - e1[:, 2] * e2[:, 0]
        gx = (dd1 * e2[:, 2] - dd2 * e1[:, 2]) / det
        gz = (e1[:, 0] * dd2 - e2[:, 0] * dd1) / det
        sx, sz = p.surface_slope(xc, zc)
        normal = np.column_stack([-(sx + gx), np.ones_like(xc), -(sz + gz)])
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        centroid = np.column_stack([xc, p.surface_y(xc, zc) + d.mean(axis=1), zc])

    rel = v - flat_centroid[:, None, :]
    rel = rel - np.einsum("fvc,fc->fv", rel, normal)[..., None] * normal[:, None, :]
    return FacetGeometry(centroid, normal, area, rel)

