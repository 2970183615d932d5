"""Row-split consensus ADMM for norm-1 regularised complex least squares.

Solves::

    minimize  1/2 sum_i ||H_i u_i - g_i||^2 + lambda_r ||v||_1   s.t.  u_i = v

with scaled duals y_i.  One iteration::

    u_i <- (H_i^H H_i + rho I)^-1 (H_i^H g_i + rho (v - y_i))     (parallel over blocks)
    v   <- soft(mean_i(u_i + y_i), lambda_r / (N rho))
    y_i <- y_i + u_i - v

Stopping uses relative primal/dual residuals
``sqrt(sum ||u_i - v||^2) <= tol_p * max(||u||, sqrt(N) ||v||)`` and
``rho sqrt(N) ||v - v_prev|| <= tol_d * rho ||y||`` (plus a 1e-12 absolute floor).
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from threadpoolctl import threadpool_limits

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdmmConfig:
    block_count: int = 40
    lambda_r: float = 20.0
    rho: float = 1.0
    max_iters: int = 500
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    adaptive_rho: bool = False
    workers: int = 1

    def __post_init__(self):
        problems = []
        if not (isinstance(self.block_count, (int, np.integer)) and self.block_count >= 1):
            problems.append("block_count must be a positive integer")
        if not self.lambda_r >= 0:
            problems.append("lambda_r must be >= 0")
        if not self.rho > 0:
            problems.append("rho must be > 0")
        if not self.max_iters >= 1:
            problems.append("max_iters must be >= 1")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            problems.append("tolerances must be > 0")
        if not self.workers >= 1:
            problems.append("workers must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class ConvergenceLog:
    objective: list = field(default_factory=list)
    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.objective)

    def append(self, objective, primal, dual, rho):
        self.objective.append(float(objective))
        self.primal.append(float(primal))
        self.dual.append(float(dual))
        self.rho.append(float(rho))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "primal_residual", "dual_residual", "rho"])
            for i, row in enumerate(zip(self.objective, self.primal, self.dual, self.rho), start=1):
                w.writerow([i, *(repr(x) for x in row)])


@dataclass
class AdmmState:
    u: list
    y: list
    v: np.ndarray
    rho: float
    iteration: int = 0


def partition_rows(H: np.ndarray, g: np.ndarray, N: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split (H, g) into ``N`` contiguous row blocks whose sizes differ by at most one."""
    H = np.asarray(H)
    g = np.asarray(g)
    m = H.shape[0]
    if not (isinstance(N, (int, np.integer)) and 1 <= N <= m):
        raise ValueError(f"block count must be in [1, {m}] (got {N!r})")
    if g.shape[0] != m:
        raise ValueError("H and g have different row counts")
    bounds = np.cumsum([0] + [m // N + (1 if i < m % N else 0) for i in range(N)])
    return [(H[a:b], g[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def soft_threshold_complex(v: np.ndarray, kappa: float) -> np.ndarray:
    """Shrink magnitudes by ``kappa`` keeping phases; entries with |v| <= kappa become 0."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    v = np.asarray(v)
    if kappa == 0:
        return v.copy()
    mag = np.abs(v)
    scale = np.zeros(mag.shape)
    keep = mag > kappa
    scale[keep] = 1.0 - kappa / mag[keep]
    return v * scale


class _Block:
    """One row block with its cached factorisation of H^H H + rho I."""

    def __init__(self, H, g):
        self.H = np.ascontiguousarray(H)
        self.Hh_g = self.H.conj().T @ g
        self.m, self.n = self.H.shape
        self.rho = None
        self._chol = None

    def factor(self, rho):
        if rho == self.rho:
            return
        self.rho = rho
        if self.m < self.n:
            # Woodbury: (H^H H + rho I)^-1 = (I - H^H (rho I + H H^H)^-1 H) / rho
            gram = self.H @ self.H.conj().T
        else:
            gram = self.H.conj().T @ self.H
        gram[np.diag_indices_from(gram)] += rho
        self._chol = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)

    def solve(self, rhs):
        """Solve (H^H H + rho I) x = rhs with the cached factor."""
        if self.m < self.n:
            t = scipy.linalg.cho_solve(self._chol, self.H @ rhs, check_finite=False)
            return (rhs - self.H.conj().T @ t) / self.rho
        return scipy.linalg.cho_solve(self._chol, rhs, check_finite=False)

    def update(self, v, y):
        return self.solve(self.Hh_g + self.rho * (v - y))


def block_update(H_i, g_i, v, y_i, rho) -> np.ndarray:
    """Minimiser of 1/2 ||H_i u - g_i||^2 + rho/2 ||u - v + y_i||^2."""
    blk = _Block(np.asarray(H_i, dtype=complex), np.asarray(g_i, dtype=complex))
    blk.factor(float(rho))
    return blk.update(np.asarray(v, dtype=complex), np.asarray(y_i, dtype=complex))


def objective(blocks, v, lambda_r) -> float:
    fit = sum(float(np.sum(np.abs(H @ v - g) ** 2)) for H, g in blocks)
    return 0.5 * fit + lambda_r * float(np.sum(np.abs(v)))


def admm_solve(blocks, config: AdmmConfig, callback=None) -> tuple[np.ndarray, ConvergenceLog]:
    """Run consensus ADMM from v = 0, y_i = 0 and return the consensus variable.

    ``blocks`` is the output of :func:`partition_rows`.  Block updates run on
    ``config.workers`` threads with BLAS pinned to one thread so the iterate
    sequence does not depend on the worker count.
    """
    if not blocks:
        raise ValueError("no blocks")
    n = blocks[0][0].shape[1]
    N = len(blocks)
    bl = [_Block(np.asarray(H, dtype=complex), np.asarray(g, dtype=complex)) for H, g in blocks]
    rho = float(config.rho)
    v = np.zeros(n, complex)
    u = [np.zeros(n, complex) for _ in range(N)]
    y = [np.zeros(n, complex) for _ in range(N)]
    history = ConvergenceLog()
    floor = 1e-12 * math.sqrt(n * N)
    rho_bounds = (config.rho * 1e-4, config.rho * 1e4)

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        with threadpool_limits(limits=1, user_api="blas"):
            for b in bl:
                b.factor(rho)
            for it in range(1, config.max_iters + 1):
                if pool is None:
                    u = [b.update(v, yi) for b, yi in zip(bl, y)]
                else:
                    u = list(pool.map(lambda a: a[0].update(v, a[1]), zip(bl, y)))
                w = np.zeros(n, complex)
                for ui, yi in zip(u, y):
                    w += ui + yi
                w /= N
                v_prev = v
                v = soft_threshold_complex(w, config.lambda_r / (N * rho))
                for ui, yi in zip(u, y):
                    yi += ui - v

                r_pri = math.sqrt(sum(float(np.vdot(ui - v, ui - v).real) for ui in u))
                r_dual = rho * math.sqrt(N) * float(np.linalg.norm(v - v_prev))
                u_norm = math.sqrt(sum(float(np.vdot(ui, ui).real) for ui in u))
                y_norm = math.sqrt(sum(float(np.vdot(yi, yi).real) for yi in y))
                eps_pri = config.tol_primal * max(u_norm, math.sqrt(N) * float(np.linalg.norm(v))) + floor
                eps_dual = config.tol_dual * rho * y_norm + floor
                obj = objective(blocks, v, config.lambda_r)
                if not (np.isfinite(obj) and np.all(np.isfinite(v))):
                    raise SolverError(f"non-finite iterate at iteration {it}")
                history.append(obj, r_pri / max(eps_pri / config.tol_primal, floor),
                               r_dual / max(eps_dual / config.tol_dual, floor), rho)
                if callback is not None:
                    callback(AdmmState(u, y, v, rho, it))
                if r_pri <= eps_pri and r_dual <= eps_dual:
                    history.converged = True
                    break
                if config.adaptive_rho:
                    new_rho = rho
                    if r_pri > 10 * r_dual:
                        new_rho = min(2 * rho, rho_bounds[1])
                    elif r_dual > 10 * r_pri:
                        new_rho = max(rho / 2, rho_bounds[0])
                    if new_rho != rho:
                        for yi in y:
                            yi *= rho / new_rho
                        rho = new_rho
                        for b in bl:
                            b.factor(rho)
    finally:
        if pool is not None:
            pool.shutdown()
    log.info("ADMM stopped after %d iterations (converged=%s)", history.iterations, history.converged)
    return v, history
