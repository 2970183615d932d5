"""Compiled near-field summation kernels.

Each output point is accumulated sequentially in a fixed source order, so
results are bit-identical whatever the number of numba threads.
"""
import warnings

import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

# numba probes TBB first and warns when the installed version is too old; it
# then falls back to another threading layer, which is all we need.
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)


@njit(parallel=True, cache=True)
def facet_radiation(nodes, centroid, rel, current, inc_phase, k):
    """Field at ``nodes`` from facet magnetic currents, for several feeds at once.

    nodes      (N, 3)     observation points
    centroid   (F, 3)     facet reference points
    rel        (F, 3, 3)  tangent-plane vertex offsets of each facet
    current    (F, P, 3)  facet current times area times -1/(4 pi), per feed
    inc_phase  (F, P, 3)  k * (incidence direction . rel) per feed and vertex
    returns    (N, P, 3)

    Each facet contributes G0 (M x R) exp(-jkR) multiplied by a Gaussian
    element factor exp(-sum(alpha_i^2) / 24), which matches the second
    moment of the triangle's exact radiation integral.
    """
    n_nodes = nodes.shape[0]
    n_facets = centroid.shape[0]
    n_feeds = current.shape[1]
    out = np.zeros((n_nodes, n_feeds, 3), np.complex128)
    for i in prange(n_nodes):
        px = nodes[i, 0]
        py = nodes[i, 1]
        pz = nodes[i, 2]
        for f in range(n_facets):
            rx = px - centroid[f, 0]
            ry = py - centroid[f, 1]
            rz = pz - centroid[f, 2]
            r2 = rx * rx + ry * ry + rz * rz
            r = np.sqrt(r2)
            kr = k * r
            c = np.cos(kr)
            s = np.sin(kr)
            inv = 1.0 / (r2 * r)
            g = complex((c + kr * s) * inv, (kr * c - s) * inv)
            kor = k / r
            a0 = kor * (rx * rel[f, 0, 0] + ry * rel[f, 0, 1] + rz * rel[f, 0, 2])
            a1 = kor * (rx * rel[f, 1, 0] + ry * rel[f, 1, 1] + rz * rel[f, 1, 2])
            a2 = kor * (rx * rel[f, 2, 0] + ry * rel[f, 2, 1] + rz * rel[f, 2, 2])
            for p in range(n_feeds):
                d0 = a0 - inc_phase[f, p, 0]
                d1 = a1 - inc_phase[f, p, 1]
                d2 = a2 - inc_phase[f, p, 2]
                gs = g * np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) / 24.0)
                mx = current[f, p, 0]
                my = current[f, p, 1]
                mz = current[f, p, 2]
                out[i, p, 0] += gs * (my * rz - mz * ry)
                out[i, p, 1] += gs * (mz * rx - mx * rz)
                out[i, p, 2] += gs * (mx * ry - my * rx)
    return out


@njit(parallel=True, cache=True)
def direct_radiation(sources, current, targets, k):
    """Sum G0 (M x R) exp(-jkR) over point sources.

    sources  (N, 3)     source points
    current  (N, P, 3)  weighted magnetic currents per feed
    targets  (T, 3)     observation points
    returns  (T, P, 3)
    """
    n_src = sources.shape[0]
    n_tgt = targets.shape[0]
    n_feeds = current.shape[1]
    out = np.zeros((n_tgt, n_feeds, 3), np.complex128)
    for i in prange(n_tgt):
        px = targets[i, 0]
        py = targets[i, 1]
        pz = targets[i, 2]
        for n in range(n_src):
            rx = px - sources[n, 0]
            ry = py - sources[n, 1]
            rz = pz - sources[n, 2]
            r2 = rx * rx + ry * ry + rz * rz
            r = np.sqrt(r2)
            kr = k * r
            c = np.cos(kr)
            s = np.sin(kr)
            inv = 1.0 / (r2 * r)
            g = complex((c + kr * s) * inv, (kr * c - s) * inv)
            for p in range(n_feeds):
                mx = current[n, p, 0]
                my = current[n, p, 1]
                mz = current[n, p, 2]
                out[i, p, 0] += g * (my * rz - mz * ry)
                out[i, p, 1] += g * (mz * rx - mx * rz)
                out[i, p, 2] += g * (mx * ry - my * rx)
    return out
