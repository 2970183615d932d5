"""Cross-range averaging, normalisation, thresholding and image metrics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .scene import ReflectivityVolume

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class ResolutionLimits:
    sigma_xz: float  # mm
    sigma_y: float  # mm


@dataclass
class DiversityReport:
    singular_values: np.ndarray
    effective_rank: float
    condition: float

    def summary(self) -> str:
        return (f"singular values: {len(self.singular_values)}, effective rank {self.effective_rank:.4f}, "
                f"sigma_1/sigma_min {self.condition:.4g}")


def cross_range_average(vol: ReflectivityVolume, Na: int, renormalize: bool = False) -> ReflectivityVolume:
    """Average each range plane over an (Na+1) x (Na+1) window.

    Neighbours outside the RoI count as zero and the divisor stays
    (Na+1)**2 unless ``renormalize`` is set, in which case it is the number
    of in-RoI neighbours.
    """
    if int(Na) != Na or Na < 0 or Na % 2:
        raise ValueError(f"Na must be a non-negative even integer (got {Na!r})")
    Na = int(Na)
    if Na == 0:
        return ReflectivityVolume(vol.roi, vol.values.copy())
    h = Na // 2
    grid = vol.grid
    ny, nz, nx = grid.shape
    padded = np.zeros((ny, nz + Na, nx + Na), dtype=grid.dtype)
    padded[:, h:h + nz, h:h + nx] = grid
    total = np.zeros_like(grid)
    for a in range(Na + 1):
        for b in range(Na + 1):
            total += padded[:, a:a + nz, b:b + nx]
    if renormalize:
        cz = np.convolve(np.ones(nz), np.ones(Na + 1))[h:h + nz]
        cx = np.convolve(np.ones(nx), np.ones(Na + 1))[h:h + nx]
        out = total / (cz[:, None] * cx[None, :])
    else:
        out = total / (Na + 1) ** 2
    return ReflectivityVolume.from_grid(vol.roi, out)


def normalize_magnitude(vol: ReflectivityVolume) -> ReflectivityVolume:
    peak = float(np.max(np.abs(vol.values), initial=0.0))
    if peak == 0:
        raise ValueError("cannot normalise an all-zero volume")
    return ReflectivityVolume(vol.roi, vol.values / peak)


def threshold_volume(vol: ReflectivityVolume, tau: float) -> np.ndarray:
    """Boolean (ny, nz, nx) mask of voxels with |u| >= tau."""
    if not 0 <= tau <= 1:
        warnings.warn(f"threshold {tau} lies outside [0, 1]", stacklevel=2)
    return np.abs(vol.grid) >= tau


def max_projection_range(vol: ReflectivityVolume) -> np.ndarray:
    """Maximum of |u| along y: an (nz, nx) image."""
    return np.abs(vol.grid).max(axis=0)


def range_profile(vol: ReflectivityVolume) -> np.ndarray:
    """Maximum of |u| in every range plane."""
    return np.abs(vol.grid).reshape(vol.grid.shape[0], -1).max(axis=1)


def resolution_limits(lambda0: float, R: float, D0: float, B: float) -> ResolutionLimits:
    """Cross-range limit lambda0 R / (2 D0) and range limit c / (2 B); lengths in mm, B in Hz."""
    for name, val in (("lambda0", lambda0), ("R", R), ("D0", D0), ("B", B)):
        if not val > 0:
            raise ValueError(f"{name} must be positive")
    return ResolutionLimits(lambda0 * R / (2.0 * D0), SPEED_OF_LIGHT * 1e3 / (2.0 * B))


def support_iou(recon: np.ndarray, truth: np.ndarray) -> float:
    recon = np.asarray(recon, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if recon.shape != truth.shape:
        raise ValueError(f"support shapes differ: {recon.shape} vs {truth.shape}")
    union = np.count_nonzero(recon | truth)
    if union == 0:
        warnings.warn("both supports are empty; IoU defined as 1", stacklevel=2)
        return 1.0
    return np.count_nonzero(recon & truth) / union


def spectral_diversity(H) -> DiversityReport:
    """Singular spectrum and entropy-based effective rank of a sensing matrix."""
    A = getattr(H, "matrix", H)
    s = np.linalg.svd(np.asarray(A), compute_uv=False)
    s = np.sort(s)[::-1]
    if s.size == 0 or s[0] == 0:
        raise ValueError("sensing matrix is all zeros")
    energy = (s / s[0]) ** 2  # scaled first so tiny matrices do not underflow
    total = energy.sum()
    p = energy[energy > 0] / total
    erank = float(np.exp(-np.sum(p * np.log(p))))
    erank = min(max(erank, 1.0), float(len(s)))
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    return DiversityReport(s, erank, cond)


def local_maxima(profile: np.ndarray, floor: float = 0.5, dip: float = 0.8) -> list[int]:
    """Indices of distinct peaks in a 1-D profile.

    A peak must reach ``floor`` times the global maximum, and neighbouring
    peaks count as distinct only if the profile between them falls below
    ``dip`` times the smaller of the two.
    """
    p = np.asarray(profile, dtype=float)
    top = p.max(initial=0.0)
    if top <= 0:
        return []
    cand = [i for i in range(len(p))
            if p[i] >= floor * top
            and (i == 0 or p[i] > p[i - 1])
            and (i == len(p) - 1 or p[i] >= p[i + 1])]
    peaks: list[int] = []
    for i in cand:
        if peaks and p[peaks[-1]:i + 1].min() >= dip * min(p[peaks[-1]], p[i]):
            if p[i] > p[peaks[-1]]:
                peaks[-1] = i
            continue
        peaks.append(i)
    return peaks
