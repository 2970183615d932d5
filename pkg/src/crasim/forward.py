"""Aperture-field synthesis, the calibration chain, and sensing-matrix assembly.

Units: millimetres and GHz; wavenumbers are in rad/mm.

Chain per frequency and port::

    feed_illumination -> radiate_to_plane -> equivalent_currents -> propagate_to_roi

and one sensing row per (tx, rx) pair from the unconjugated dot product of
the two RoI fields.  Rows are ordered lexicographically by (frequency, tx,
rx) position in the input lists.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.fft
from scipy.spatial import cKDTree

from . import _kernels
from .geometry import FacetGeometry, TriMesh, facet_properties
from .scene import RoIGrid

log = logging.getLogger(__name__)

C_MM_PER_NS = 299.792458
APERTURE_NORMAL = np.array([0.0, 1.0, 0.0])


class ForwardError(RuntimeError):
    pass


def wavenumber(freq_ghz: float) -> float:
    """Free-space wavenumber in rad/mm."""
    return 2.0 * math.pi * freq_ghz / C_MM_PER_NS


def wavelength(freq_ghz: float) -> float:
    return C_MM_PER_NS / freq_ghz


def frequency_grid(start_ghz: float, stop_ghz: float, count: int) -> np.ndarray:
    """Evenly spaced frequencies with both endpoints included."""
    return np.linspace(start_ghz, stop_ghz, count)


@dataclass(frozen=True)
class FeedPort:
    position: tuple[float, float, float]
    role: str = "tx"
    polarization: tuple[float, float, float] = (1.0, 0.0, 0.0)
    pattern_exponent: float = 2.0
    boresight: tuple[float, float, float] = (0.0, -1.0, 0.0)
    amplitude: complex = 1.0
    name: str = ""

    def __post_init__(self):
        pol = np.asarray(self.polarization, dtype=float)
        if abs(np.linalg.norm(pol) - 1.0) > 1e-9:
            raise ValueError(f"polarization must be a unit vector (got {self.polarization})")
        if not self.pattern_exponent >= 0:
            raise ValueError("pattern_exponent must be >= 0")
        if self.role not in ("tx", "rx"):
            raise ValueError(f"role must be 'tx' or 'rx' (got {self.role!r})")
        b = np.asarray(self.boresight, dtype=float)
        object.__setattr__(self, "boresight", tuple(b / np.linalg.norm(b)))
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))


def cross_layout(center, n_tx: int = 4, n_rx: int = 4, pitch: float = 10.0, **kwargs) -> list[FeedPort]:
    """Tx ports on a line along x and Rx ports along z, both centred on ``center``."""
    c = np.asarray(center, dtype=float)
    ports = []
    for i in range(n_tx):
        off = (i - (n_tx - 1) / 2) * pitch
        ports.append(FeedPort(tuple(c + [off, 0, 0]), role="tx", name=f"tx{i}", **kwargs))
    for i in range(n_rx):
        off = (i - (n_rx - 1) / 2) * pitch
        ports.append(FeedPort(tuple(c + [0, 0, off]), role="rx", name=f"rx{i}", **kwargs))
    return ports


@dataclass(frozen=True)
class ApertureGrid:
    """Planar sampling grid with normal +y; nodes are centred on ``center``."""

    center: tuple[float, float, float]
    x_extent: float = 880.0
    z_extent: float = 640.0
    spacing: float = C_MM_PER_NS / 77.0 / 2.0

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("aperture spacing must be > 0")
        if not (self.x_extent >= 0 and self.z_extent >= 0):
            raise ValueError("aperture extents must be >= 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def counts(self) -> tuple[int, int]:
        """Node counts (nx, nz)."""
        return (int(math.floor(self.x_extent / self.spacing + 1e-9)) + 1,
                int(math.floor(self.z_extent / self.spacing + 1e-9)) + 1)

    @property
    def n_nodes(self) -> int:
        nx, nz = self.counts
        return nx * nz

    @property
    def normal(self) -> np.ndarray:
        return APERTURE_NORMAL.copy()

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    def axis(self, i: int) -> np.ndarray:
        """Node coordinates along x (i=0) or z (i=2)."""
        n = self.counts[0 if i == 0 else 1]
        return self.center[i] + (np.arange(n) - (n - 1) / 2) * self.spacing

    def nodes(self) -> np.ndarray:
        """(n_nodes, 3) node positions, x varying fastest."""
        z, x = np.meshgrid(self.axis(2), self.axis(0), indexing="ij")
        return np.column_stack([x.ravel(), np.full(x.size, self.center[1]), z.ravel()])

    def to_dict(self) -> dict:
        return {"center": list(self.center), "x_extent": self.x_extent, "z_extent": self.z_extent,
                "spacing": self.spacing}


@dataclass
class FieldGrid:
    aperture: ApertureGrid
    freq_ghz: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.shape != (self.aperture.n_nodes, 3):
            raise ValueError(f"expected samples of shape {(self.aperture.n_nodes, 3)}, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("field samples must be finite")


@dataclass
class CurrentGrid(FieldGrid):
    pass


@dataclass
class RoIField:
    roi: RoIGrid
    freq_ghz: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.shape != (self.roi.n_voxels, 3):
            raise ValueError(f"expected samples of shape {(self.roi.n_voxels, 3)}, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("RoI field must be finite")


@dataclass
class FeedExcitation:
    """Illumination of every facet by one feed at one frequency."""

    port: FeedPort
    freq_ghz: float
    direction: np.ndarray  # unit incidence directions, feed -> facet
    distance: np.ndarray
    phase: np.ndarray  # k * distance
    incident: np.ndarray  # incident E at the facet reference points
    reflected: np.ndarray  # PEC-reflected E
    reflected_direction: np.ndarray
    current: np.ndarray  # equivalent magnetic current density -2 n x E_ref


@dataclass
class SensingMatrix:
    matrix: np.ndarray
    row_index: list = field(default_factory=list)
    roi: RoIGrid | None = None
    scale: float = 1.0

    def __post_init__(self):
        if len(self.row_index) != self.matrix.shape[0]:
            raise ValueError("row_index must have one entry per row")
        if self.roi is not None and self.matrix.shape[1] != self.roi.n_voxels:
            raise ValueError("column count must equal the RoI voxel count")

    @property
    def shape(self):
        return self.matrix.shape


def scalar_kernel(a, b, k):
    """Return (R, G0, exp(-jkR)) between points ``a`` and ``b``."""
    r = float(np.linalg.norm(np.asarray(b, float) - np.asarray(a, float)))
    return r, (1 + 1j * k * r) / r**3, np.exp(-1j * k * r)


def feed_illumination(port: FeedPort, mesh: TriMesh, freq_ghz: float,
                      facets: FacetGeometry | None = None) -> FeedExcitation:
    """Spherical-wave illumination of every facet and its specular reflection.

    Amplitude is ``amplitude * max(cos(theta), 0)**q / r`` with theta measured
    from the feed boresight; the incident field is the polarization vector
    projected transverse to the ray.
    """
    facets = facet_properties(mesh) if facets is None else facets
    k = wavenumber(freq_ghz)
    d = facets.centroid - np.asarray(port.position)
    r = np.linalg.norm(d, axis=1)
    tiny = 1e-9 * max(float(np.max(r, initial=0.0)), 1.0)
    hit = np.nonzero(r <= tiny)[0]
    if hit.size:
        raise ForwardError(f"facet {int(hit[0])} coincides with feed {port.name or port.position}")
    dhat = d / r[:, None]
    cos_t = dhat @ np.asarray(port.boresight)
    amp = np.clip(cos_t, 0.0, None) ** port.pattern_exponent / r
    pol = np.asarray(port.polarization)
    transverse = pol[None, :] - (dhat @ pol)[:, None] * dhat
    e_inc = (port.amplitude * amp * np.exp(-1j * k * r))[:, None] * transverse
    n = facets.unit_normal
    e_ref = 2.0 * np.sum(n * e_inc, axis=1)[:, None] * n - e_inc
    refl_dir = dhat - 2.0 * np.sum(dhat * n, axis=1)[:, None] * n
    current = -2.0 * np.cross(n, e_ref)
    return FeedExcitation(port, freq_ghz, dhat, r, k * r, e_inc, e_ref, refl_dir, current)


def _check_plane_clear(mesh: TriMesh, plane: ApertureGrid):
    y0 = plane.center[1]
    ys = mesh.vertices[:, 1]
    if ys.min() <= y0 <= ys.max():
        nodes_x = plane.axis(0)
        nodes_z = plane.axis(2)
        vx = mesh.vertices[:, 0]
        vz = mesh.vertices[:, 2]
        overlap = (vx.max() >= nodes_x.min() and vx.min() <= nodes_x.max()
                   and vz.max() >= nodes_z.min() and vz.min() <= nodes_z.max())
        if overlap:
            raise ForwardError(f"aperture plane y={y0:g} mm intersects the reflector mesh")


def _radiate(excitations: list[FeedExcitation], facets: FacetGeometry, points: np.ndarray, k: float) -> np.ndarray:
    current = np.stack([e.current for e in excitations], axis=1)
    current = current * (-facets.area / (4.0 * math.pi))[:, None, None]
    inc = np.stack([k * np.einsum("fc,fvc->fv", e.direction, facets.tangent_offsets) for e in excitations], axis=1)
    out = _kernels.facet_radiation(np.ascontiguousarray(points), np.ascontiguousarray(facets.centroid),
                                   np.ascontiguousarray(facets.tangent_offsets), np.ascontiguousarray(current),
                                   np.ascontiguousarray(inc), k)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def radiate_to_plane(excitation: FeedExcitation, mesh: TriMesh, plane: ApertureGrid, freq_ghz: float,
                     facets: FacetGeometry | None = None) -> FieldGrid:
    """Physical-optics field of the illuminated reflector on the aperture plane."""
    facets = facet_properties(mesh) if facets is None else facets
    _check_plane_clear(mesh, plane)
    out = _radiate([excitation], facets, plane.nodes(), wavenumber(freq_ghz))
    return FieldGrid(plane, freq_ghz, out[0])


def equivalent_currents(field: FieldGrid) -> CurrentGrid:
    """Magnetic surface current M = -2 n0 x E on the aperture."""
    E = np.asarray(field.samples)
    if not np.all(np.isfinite(E)):
        raise ValueError("field samples must be finite")
    M = -2.0 * np.cross(APERTURE_NORMAL, E)
    return CurrentGrid(field.aperture, field.freq_ghz, M)


def _lattice(ratio: float, max_den: int = 64):
    """Integer strides (p, q) with voxel/spacing = p/q, or None."""
    frac = Fraction(ratio).limit_denominator(max_den)
    if frac.numerator < 1 or abs(frac.numerator / frac.denominator - ratio) > 1e-9 * ratio:
        return None
    return frac.numerator, frac.denominator


def _fft_plan(plane: ApertureGrid, roi: RoIGrid, max_len: int = 8192):
    plan = []
    for axis, cnt_a, cnt_r in ((0, plane.counts[0], roi.counts[0]), (2, plane.counts[1], roi.counts[2])):
        st = _lattice(roi.voxel[axis] / plane.spacing)
        if st is None:
            return None
        p, q = st
        length = (cnt_a - 1) * q + (cnt_r - 1) * p + 1
        if length > max_len:
            return None
        plan.append((p, q, plane.spacing / q, cnt_a, cnt_r, length))
    return plan


def _check_min_distance(plane: ApertureGrid, roi: RoIGrid, r_min: float):
    dy = np.abs(roi.axis(1) - plane.center[1])
    if dy.min() >= r_min:
        return
    nodes = plane.nodes()
    vox = roi.voxel_centers()
    dist, idx = cKDTree(nodes).query(vox)
    bad = np.nonzero(dist < r_min)[0]
    if bad.size:
        v = int(bad[0])
        raise ForwardError(
            f"aperture node {int(idx[v])} and voxel {v} are {dist[v]:.3g} mm apart (minimum {r_min:g} mm)")


def _propagate_fft(M: np.ndarray, plane: ApertureGrid, roi: RoIGrid, k: float, plan, workers: int = 1) -> np.ndarray:
    (px, qx, dx, nax, nrx, Lx), (pz, qz, dz, naz, nrz, Lz) = plan
    nfeeds = M.shape[0]
    Nx = scipy.fft.next_fast_len(Lx)
    Nz = scipy.fft.next_fast_len(Lz)
    Mg = M.reshape(nfeeds, naz, nax, 3)
    comps = [c for c in range(3) if np.any(Mg[..., c])]
    FM = {}
    for c in comps:
        up = np.zeros((nfeeds, Nz, Nx), complex)
        up[:, 0:(naz - 1) * qz + 1:qz, 0:(nax - 1) * qx + 1:qx] = Mg[..., c]
        FM[c] = scipy.fft.fft2(up, workers=workers)

    xa0 = plane.axis(0)[0]
    za0 = plane.axis(2)[0]
    xr0 = roi.axis(0)[0]
    zr0 = roi.axis(2)[0]
    tx = np.arange(-(nax - 1) * qx, -(nax - 1) * qx + Lx)
    tz = np.arange(-(naz - 1) * qz, -(naz - 1) * qz + Lz)
    DX = (xr0 - xa0) + tx * dx
    DZ = (zr0 - za0) + tz * dz
    weight = -plane.cell_area / (4.0 * math.pi)
    nx, ny, nz = roi.counts
    out = np.empty((nfeeds, ny, nz, nx, 3), complex)
    sx = slice((nax - 1) * qx, (nax - 1) * qx + (nrx - 1) * px + 1, px)
    sz = slice((naz - 1) * qz, (naz - 1) * qz + (nrz - 1) * pz + 1, pz)
    for iy, yr in enumerate(roi.axis(1)):
        dy = yr - plane.center[1]
        r2 = DZ[:, None] ** 2 + dy * dy + DX[None, :] ** 2
        r = np.sqrt(r2)
        g = weight * (1 + 1j * k * r) / (r2 * r) * np.exp(-1j * k * r)
        K = {}
        for c, d in ((0, DX[None, :]), (1, dy), (2, DZ[:, None])):
            pad = np.zeros((Nz, Nx), complex)
            pad[:Lz, :Lx] = g * d
            K[c] = scipy.fft.fft2(pad, workers=workers)
        # E = K (x) (M x R): component-wise cross product in Fourier space
        terms = {0: ((2, 1, 1.0), (1, 2, -1.0)), 1: ((0, 2, 1.0), (2, 0, -1.0)), 2: ((1, 0, 1.0), (0, 1, -1.0))}
        for c_out, pairs in terms.items():
            acc = None
            for kc, mc, sign in pairs:
                if mc not in FM:
                    continue
                t = K[kc][None] * FM[mc]
                acc = sign * t if acc is None else acc + sign * t
            if acc is None:
                out[:, iy, :, :, c_out] = 0
            else:
                out[:, iy, :, :, c_out] = scipy.fft.ifft2(acc, workers=workers)[:, sz, sx]
    return out.reshape(nfeeds, roi.n_voxels, 3)


def _propagate_many(M: np.ndarray, plane: ApertureGrid, roi: RoIGrid, freq_ghz: float,
                    method: str = "auto", r_min: float = 1.0, workers: int = 1) -> np.ndarray:
    """Propagate currents of shape (feeds, nodes, 3) into the RoI; returns (feeds, voxels, 3)."""
    _check_min_distance(plane, roi, r_min)
    k = wavenumber(freq_ghz)
    plan = _fft_plan(plane, roi) if method in ("auto", "fft") else None
    if method == "fft" and plan is None:
        raise ForwardError("aperture spacing and voxel sizes are not commensurate; FFT path unavailable")
    if plan is not None:
        return _propagate_fft(M, plane, roi, k, plan, workers)
    if method not in ("auto", "direct"):
        raise ValueError(f"unknown propagation method {method!r}")
    weighted = np.ascontiguousarray(M.transpose(1, 0, 2)) * (-plane.cell_area / (4.0 * math.pi))
    out = _kernels.direct_radiation(plane.nodes(), weighted, roi.voxel_centers(), k)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def propagate_to_roi(currents: CurrentGrid, roi: RoIGrid, freq_ghz: float, method: str = "auto",
                     r_min: float = 1.0) -> RoIField:
    """Near-field radiation of aperture magnetic currents into every voxel.

    Discretises E(r) = -1/(4 pi) sum G0 (M x R) exp(-jkR) ds with
    G0 = (1 + jkR)/R^3 and one quadrature point of weight spacing^2 per node.
    ``method='fft'`` evaluates the same sum as a lattice convolution and is
    used automatically when voxel sizes are rational multiples of the node
    spacing.
    """
    out = _propagate_many(currents.samples[None], currents.aperture, roi, freq_ghz, method, r_min)
    return RoIField(roi, freq_ghz, out[0])


def sensing_row(E_tx: RoIField, E_rx: RoIField) -> np.ndarray:
    """Born row: per-voxel unconjugated dot product of Tx and Rx fields."""
    if E_tx.roi != E_rx.roi:
        raise ValueError("Tx and Rx fields live on different RoI grids")
    if not math.isclose(E_tx.freq_ghz, E_rx.freq_ghz, rel_tol=1e-12):
        raise ValueError("Tx and Rx fields are at different frequencies")
    return np.sum(E_tx.samples * E_rx.samples, axis=1)


@dataclass
class ApertureCalibration:
    """Aperture fields of every port at every frequency: shape (freqs, ports, nodes, 3)."""

    plane: ApertureGrid
    ports: list
    freqs_ghz: np.ndarray
    fields: np.ndarray

    def field(self, f: int, p: int) -> FieldGrid:
        return FieldGrid(self.plane, float(self.freqs_ghz[f]), self.fields[f, p])


def calibrate_apertures(ports: list[FeedPort], freqs_ghz, mesh: TriMesh, plane: ApertureGrid,
                        progress=None) -> ApertureCalibration:
    """Synthesise the aperture field of every port at every frequency."""
    freqs = np.asarray(freqs_ghz, dtype=float)
    if not len(ports) or not len(freqs):
        raise ValueError("need at least one port and one frequency")
    facets = facet_properties(mesh)
    _check_plane_clear(mesh, plane)
    nodes = plane.nodes()
    fields = np.empty((len(freqs), len(ports), plane.n_nodes, 3), complex)
    for fi, f in enumerate(freqs):
        try:
            exc = [feed_illumination(p, mesh, f, facets) for p in ports]
            fields[fi] = _radiate(exc, facets, nodes, wavenumber(f))
        except Exception as err:
            raise ForwardError(f"aperture synthesis failed at {f:.6g} GHz: {err}") from err
        if progress:
            progress(fi + 1, len(freqs))
    return ApertureCalibration(plane, list(ports), freqs, fields)


def sensing_matrix_from_apertures(cal: ApertureCalibration, roi: RoIGrid, method: str = "auto",
                                  r_min: float = 1.0, workers: int = 1, progress=None) -> SensingMatrix:
    tx = [i for i, p in enumerate(cal.ports) if p.role == "tx"]
    rx = [i for i, p in enumerate(cal.ports) if p.role == "rx"]
    if not tx or not rx:
        raise ValueError("need at least one tx and one rx port")
    label = [p.name or f"{p.role}{i}" for i, p in enumerate(cal.ports)]
    rows = np.empty((len(cal.freqs_ghz), len(tx), len(rx), roi.n_voxels), complex)
    index = []
    for fi, f in enumerate(cal.freqs_ghz):
        M = -2.0 * np.cross(APERTURE_NORMAL, cal.fields[fi])
        try:
            E = _propagate_many(M, cal.plane, roi, float(f), method, r_min, workers)
        except Exception as err:
            raise ForwardError(f"RoI propagation failed at {f:.6g} GHz: {err}") from err
        for a, t in enumerate(tx):
            for b, r in enumerate(rx):
                rows[fi, a, b] = np.sum(E[t] * E[r], axis=1)
                index.append((float(f), label[t], label[r]))
        if progress:
            progress(fi + 1, len(cal.freqs_ghz))
    return SensingMatrix(rows.reshape(-1, roi.n_voxels), index, roi)


def assemble_sensing_matrix(ports: list[FeedPort], freqs_ghz, mesh: TriMesh, plane: ApertureGrid, roi: RoIGrid,
                            method: str = "auto", workers: int = 1) -> SensingMatrix:
    """Full-system sensing matrix, one row per (frequency, tx, rx)."""
    cal = calibrate_apertures(ports, freqs_ghz, mesh, plane)
    return sensing_matrix_from_apertures(cal, roi, method=method, workers=workers)


def normalize_sensing_matrix(H: SensingMatrix) -> SensingMatrix:
    """Scale H by one real factor so its RMS column norm is 1."""
    rms = math.sqrt(float(np.mean(np.sum(np.abs(H.matrix) ** 2, axis=0))))
    if rms == 0:
        raise ValueError("cannot normalise an all-zero sensing matrix")
    return SensingMatrix(H.matrix / rms, list(H.row_index), H.roi, H.scale / rms)
