"""Region-of-interest voxel grids, test targets and measurement synthesis.

Voxels are stored in a flat vector with x varying fastest, then z, then y:
``flat = ix + nx * (iz + nz * iy)``, i.e. a C-ordered array of shape
``(ny, nz, nx)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .forward import SensingMatrix


@dataclass(frozen=True)
class RoIGrid:
    """Regular voxel lattice; ``center``, ``extent`` and ``voxel`` are (x, y, z) in mm."""

    center: tuple[float, float, float]
    extent: tuple[float, float, float]
    voxel: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "extent", tuple(float(c) for c in self.extent))
        object.__setattr__(self, "voxel", tuple(float(c) for c in self.voxel))

    @property
    def counts(self) -> tuple[int, int, int]:
        """Voxel counts (nx, ny, nz)."""
        return tuple(int(round(e / v)) for e, v in zip(self.extent, self.voxel))

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape (ny, nz, nx) of the voxel ordering."""
        nx, ny, nz = self.counts
        return ny, nz, nx

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.counts
        return nx * ny * nz

    def axis(self, i: int) -> np.ndarray:
        """Voxel-centre coordinates along axis ``i`` (0=x, 1=y, 2=z)."""
        n = self.counts[i]
        start = self.center[i] - self.extent[i] / 2
        return start + (np.arange(n) + 0.5) * self.voxel[i]

    def voxel_centers(self) -> np.ndarray:
        """(n_voxels, 3) array of voxel centres in storage order."""
        y, z, x = np.meshgrid(self.axis(1), self.axis(2), self.axis(0), indexing="ij")
        return np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    def bounds(self) -> np.ndarray:
        c = np.asarray(self.center)
        e = np.asarray(self.extent) / 2
        return np.stack([c - e, c + e])

    def to_dict(self) -> dict:
        return {"center": list(self.center), "extent": list(self.extent), "voxel": list(self.voxel)}


def build_roi(center=(0.0, 0.0, 0.0), extent=(600.0, 420.0, 600.0), voxel=(6.0, 30.0, 6.0)) -> RoIGrid:
    """Validate a RoI specification and return the grid.

    Every extent must be a whole multiple of its voxel size (to 1e-9 relative).
    """
    problems = []
    for name, e, v in zip("xyz", extent, voxel):
        if not (e > 0 and v > 0):
            problems.append(f"{name}: extent and voxel size must be positive (got {e}, {v})")
            continue
        n = e / v
        if abs(n - round(n)) > 1e-9 * max(n, 1.0) or round(n) < 1:
            lo = max(math.floor(n), 1) * v
            hi = math.ceil(n) * v
            problems.append(
                f"{name}: extent {e:g} mm is not a multiple of voxel {v:g} mm; try {lo:g} or {hi:g} mm"
            )
    if problems:
        raise ValueError("invalid RoI: " + "; ".join(problems))
    return RoIGrid(tuple(center), tuple(extent), tuple(voxel))


@dataclass
class ReflectivityVolume:
    roi: RoIGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.size != self.roi.n_voxels:
            raise ValueError(f"expected {self.roi.n_voxels} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("reflectivity values must be finite")
        self.values = values.reshape(-1)

    @property
    def grid(self) -> np.ndarray:
        """Values as an (ny, nz, nx) view."""
        return self.values.reshape(self.roi.shape)

    @classmethod
    def from_grid(cls, roi: RoIGrid, grid: np.ndarray) -> "ReflectivityVolume":
        if grid.shape != roi.shape:
            raise ValueError(f"grid shape {grid.shape} does not match RoI {roi.shape}")
        return cls(roi, np.ascontiguousarray(grid).reshape(-1))


@dataclass
class MeasurementVector:
    values: np.ndarray
    row_index: list
    snr_db: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).reshape(-1)
        if len(self.row_index) != len(self.values):
            raise ValueError("row_index length must match the number of measurements")


@dataclass
class TargetSpec:
    """Parametric target placed relative to the RoI centre.

    ``dims`` keys by shape:

    * ``t_shape``: bar_length, bar_width, stem_length, stem_width, optional depth
    * ``box``: size_x, size_y, size_z
    * ``point_set``: points (list of (x, y, z) offsets), optional amplitudes

    ``rotation_deg`` rotates the shape about the range (y) axis.  Without a
    ``depth`` a T occupies the single voxel plane containing its offset.
    """

    shape: str = "t_shape"
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_deg: float = 45.0
    dims: dict = field(
        default_factory=lambda: {"bar_length": 200.0, "bar_width": 50.0, "stem_length": 150.0, "stem_width": 50.0}
    )
    reflectivity: complex = 1.0

    def __post_init__(self):
        if self.shape not in ("t_shape", "point_set", "box"):
            raise ValueError(f"unknown target shape {self.shape!r}")


_EPS = 1e-9


def _t_mask(xl, zl, dims):
    lb, wb = dims["bar_length"], dims["bar_width"]
    ls, ws = dims["stem_length"], dims["stem_width"]
    h = ls + wb
    top = h / 2
    bar = (np.abs(xl) <= lb / 2 + _EPS) & (zl <= top + _EPS) & (zl >= top - wb - _EPS)
    stem = (np.abs(xl) <= ws / 2 + _EPS) & (zl >= -top - _EPS) & (zl <= top - wb + _EPS)
    return bar | stem


def _t_corners(dims):
    lb, wb = dims["bar_length"], dims["bar_width"]
    ls, ws = dims["stem_length"], dims["stem_width"]
    top = (ls + wb) / 2
    return np.array([[-lb / 2, top], [lb / 2, top], [-lb / 2, top - wb], [lb / 2, top - wb],
                     [-ws / 2, -top], [ws / 2, -top]])


def rasterize_target(spec: TargetSpec, roi: RoIGrid) -> ReflectivityVolume:
    """Set voxels whose centres fall inside the target to its reflectivity."""
    centers = roi.voxel_centers()
    lo, hi = roi.bounds()
    values = np.zeros(roi.n_voxels, dtype=complex)
    off = np.asarray(roi.center) + np.asarray(spec.offset, dtype=float)

    def check_inside(points, what):
        pts = np.atleast_2d(points)
        outside = np.any((pts < lo - _EPS) | (pts > hi + _EPS), axis=1)
        if outside.any():
            raise ValueError(f"{what} lies outside the RoI bounds {lo.tolist()}..{hi.tolist()}")

    if spec.shape == "point_set":
        points = np.asarray(spec.dims.get("points", []), dtype=float).reshape(-1, 3)
        amps = spec.dims.get("amplitudes")
        amps = np.full(len(points), spec.reflectivity, dtype=complex) if amps is None else np.asarray(amps, complex)
        if len(points):
            check_inside(points + off, "point scatterer")
        nx, ny, nz = roi.counts
        for p, a in zip(points + off, amps):
            idx = [min(int(np.floor((p[i] - lo[i]) / roi.voxel[i])), n - 1) for i, n in enumerate((nx, ny, nz))]
            values[idx[0] + nx * (idx[2] + nz * idx[1])] += a
        return ReflectivityVolume(roi, values)

    theta = np.deg2rad(spec.rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    dx = centers[:, 0] - off[0]
    dz = centers[:, 2] - off[2]
    # rotate voxel offsets into the target frame
    xl = c * dx + s * dz
    zl = -s * dx + c * dz

    if spec.shape == "box":
        sx, sy, sz = (float(spec.dims[k]) for k in ("size_x", "size_y", "size_z"))
        corners = np.array([[a, b] for a in (-sx / 2, sx / 2) for b in (-sz / 2, sz / 2)])
        inplane = (np.abs(xl) <= sx / 2 + _EPS) & (np.abs(zl) <= sz / 2 + _EPS)
        depth_mask = np.abs(centers[:, 1] - off[1]) <= sy / 2 + _EPS
        y_extent = (off[1] - sy / 2, off[1] + sy / 2)
    else:
        corners = _t_corners(spec.dims)
        inplane = _t_mask(xl, zl, spec.dims)
        depth = spec.dims.get("depth")
        if depth is None:
            ys = roi.axis(1)
            plane = min(int(np.floor((off[1] - lo[1]) / roi.voxel[1])), len(ys) - 1)
            depth_mask = np.isclose(centers[:, 1], ys[max(plane, 0)])
            y_extent = (off[1], off[1])
        else:
            depth_mask = np.abs(centers[:, 1] - off[1]) <= depth / 2 + _EPS
            y_extent = (off[1] - depth / 2, off[1] + depth / 2)

    world = np.column_stack([c * corners[:, 0] - s * corners[:, 1], np.zeros(len(corners)),
                             s * corners[:, 0] + c * corners[:, 1]])
    for y in y_extent:
        pts = world + np.array([off[0], y, off[2]])
        check_inside(pts, f"{spec.shape} target")

    values[inplane & depth_mask] = spec.reflectivity
    return ReflectivityVolume(roi, values)


def synthesize_measurements(H: "SensingMatrix", u: ReflectivityVolume, snr_db: float, seed: int) -> MeasurementVector:
    """Return g = H u + n with circular complex white Gaussian noise.

    The noise variance per entry is ``||H u||^2 / (m * 10**(snr_db/10))`` so the
    expected SNR equals ``snr_db``; ``snr_db = inf`` returns ``H u`` exactly.
    """
    A = H.matrix
    if A.shape[1] != u.values.size:
        raise ValueError(f"sensing matrix has {A.shape[1]} columns but the volume has {u.values.size} voxels")
    clean = A @ u.values
    if math.isinf(snr_db) and snr_db > 0:
        return MeasurementVector(clean, list(H.row_index), None)
    m = len(clean)
    power = float(np.vdot(clean, clean).real)
    sigma = math.sqrt(power / (m * 10.0 ** (snr_db / 10.0))) if power > 0 else 0.0
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    noise = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return MeasurementVector(clean + sigma / math.sqrt(2.0) * noise, list(H.row_index), float(snr_db))
