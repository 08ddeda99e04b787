"""Grid-search maximum likelihood for (rho_U, rho_L) and the rolling-window estimator.

Marginal tables do not depend on the data, so the whole grid is tabulated
once into a :class:`~splitcop.copula.TableBank` and cached.  The data are
reduced to normal scores once; every cell then evaluates per-observation log
copula densities, which are summed over one or many windows.  Fitting many
independent datasets of equal length (Monte Carlo replicates) is the same
computation with non-overlapping windows.
"""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .copula import DEFAULT_M, TableBank, _bank_args, _block_logc, _mode_code, _window_sums, normal_scores
from .errors import ConfigError, NumericalError, ParameterError

MIN_OBS = 20
_BLOCK_POINTS = 4_000_000  # per-block scratch size, in doubles


@dataclass(frozen=True)
class GridSpec:
    """Square lattice of (rho_U, rho_L) values from ``lo`` to ``hi`` in steps of ``step``."""

    lo: float = -0.95
    hi: float = 0.95
    step: float = 0.01

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and math.isfinite(self.step)):
            raise ParameterError("grid bounds and step must be finite")
        if not self.lo < self.hi:
            raise ParameterError(f"grid needs lo < hi, got {self.lo}, {self.hi}")
        if self.step <= 0:
            raise ParameterError(f"grid step must be positive, got {self.step}")
        span = (self.hi - self.lo) / self.step
        if abs(span - round(span)) > 1e-9:
            raise ParameterError(f"(hi - lo) / step = {span} is not an integer")

    @property
    def size(self) -> int:
        return int(round((self.hi - self.lo) / self.step)) + 1

    def values(self) -> np.ndarray:
        return np.round(self.lo + self.step * np.arange(self.size), 10)

    def pairs(self) -> np.ndarray:
        """(size**2, 2) cells ordered lexicographically by (rho_u, rho_l)."""
        v = self.values()
        u, l = np.meshgrid(v, v, indexing="ij")
        return np.column_stack([u.ravel(), l.ravel()])


@dataclass(frozen=True)
class FitResult:
    rho_u_hat: float
    rho_l_hat: float
    loglik: float
    grid_argmax_unique: bool
    n_failed: int = 0


@dataclass(frozen=True)
class RollingResult:
    """One fit per window; windows advance by one observation."""

    window_centers: tuple
    fits: tuple
    window: int

    def __len__(self):
        return len(self.fits)

    @property
    def rho_u(self) -> np.ndarray:
        return np.array([f.rho_u_hat for f in self.fits])

    @property
    def rho_l(self) -> np.ndarray:
        return np.array([f.rho_l_hat for f in self.fits])

    @property
    def loglik(self) -> np.ndarray:
        return np.array([f.loglik for f in self.fits])


@functools.lru_cache(maxsize=8)
def _cached_bank(lo, hi, step, m, slopes):
    return TableBank.build(GridSpec(lo, hi, step).pairs(), m, slopes)


def grid_bank(grid: GridSpec, m: int = DEFAULT_M, slopes: str = "analytic") -> TableBank:
    """Marginal tables for every cell of ``grid``, built once per (grid, M) and cached."""
    return _cached_bank(grid.lo, grid.hi, grid.step, int(m), slopes)


def n_threads() -> int:
    raw = os.environ.get("SPLITCOP_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SPLITCOP_THREADS={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"SPLITCOP_THREADS must be at least 1, got {n}")
    return n


def _tie_rank(rho):
    """Rank of each cell under (|rho_u| + |rho_l|, rho_u, rho_l) ascending; 0 wins ties."""
    absum = np.round(np.abs(rho).sum(axis=1), 9)
    order = np.lexsort((rho[:, 1], rho[:, 0], absum))
    rank = np.empty(len(rho), dtype=np.int64)
    rank[order] = np.arange(len(rho))
    return rank


@njit(cache=True, nogil=True)
def _reduce_block(sums, c0, rank, best_ll, best_c, n_tied, n_fail):
    """Fold the window sums of cells c0.. into the running per-window argmax."""
    for k in range(sums.shape[0]):
        c = c0 + k
        for j in range(sums.shape[1]):
            s = sums[k, j]
            if not math.isfinite(s):
                n_fail[j] += 1
                continue
            b = best_c[j]
            if b < 0 or s > best_ll[j]:
                best_ll[j] = s
                best_c[j] = c
                n_tied[j] = 1
            elif s == best_ll[j]:
                n_tied[j] += 1
                if rank[c] < rank[b]:
                    best_c[j] = c


def _scan(bank: TableBank, zx, zy, starts, window, mode, threads=None):
    """Per-window argmax over every cell of ``bank``.

    Returns (best_ll, best_cell, n_tied, n_failed), one entry per window start.
    Cells are processed in fixed blocks and reduced in block order, so the
    result does not depend on the thread count.
    """
    nc = len(bank)
    npts = zx.shape[0]
    nw = starts.shape[0]
    rank = _tie_rank(bank.rho)
    blk = max(1, min(nc, _BLOCK_POINTS // max(npts, 1)))
    bounds = [(c0, min(nc, c0 + blk)) for c0 in range(0, nc, blk)]
    args = _bank_args(bank)

    def work(b):
        c0, c1 = b
        obs = np.empty((c1 - c0, npts))
        _block_logc(*args, c0, c1, zx, zy, mode, obs)
        sums = np.empty((c1 - c0, nw))
        _window_sums(obs, starts, window, sums)
        return sums

    best_ll = np.full(nw, -np.inf)
    best_c = np.full(nw, -1, dtype=np.int64)
    n_tied = np.zeros(nw, dtype=np.int64)
    n_fail = np.zeros(nw, dtype=np.int64)
    threads = n_threads() if threads is None else threads
    if threads <= 1 or len(bounds) == 1:
        for b in bounds:
            _reduce_block(work(b), b[0], rank, best_ll, best_c, n_tied, n_fail)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            # map yields in submission order: the reduction stays ordered
            for b, sums in zip(bounds, ex.map(work, bounds)):
                _reduce_block(sums, b[0], rank, best_ll, best_c, n_tied, n_fail)
    return best_ll, best_c, n_tied, n_fail


def _check_uniform_pairs(data, min_len):
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ParameterError("data must be an (n, 2) array of uniform pairs")
    if data.shape[0] == 0:
        raise ParameterError("data is empty")
    if data.shape[0] < min_len:
        raise ParameterError(f"need at least {min_len} observations, got {data.shape[0]}")
    ok = np.isfinite(data).all(1) & (data > 0).all(1) & (data < 1).all(1)
    if not ok.all():
        raise ParameterError(f"observation {int(np.flatnonzero(~ok)[0])} is not a pair inside (0, 1)^2")
    return data


def _scores(data):
    return (np.ascontiguousarray(normal_scores(data[:, 0])),
            np.ascontiguousarray(normal_scores(data[:, 1])))


def _results(bank, best_ll, best_c, n_tied, n_fail):
    out = []
    nc = len(bank)
    for j in range(best_c.shape[0]):
        if best_c[j] < 0:
            raise NumericalError(f"likelihood failed in all {nc} grid cells")
        ru, rl = bank.rho[best_c[j]]
        out.append(FitResult(float(ru), float(rl), float(best_ll[j]), bool(n_tied[j] == 1), int(n_fail[j])))
    return out


def _refine_cells(grid, centre, radius=0.06):
    v = grid.values()
    tol = radius + 1e-9
    u = v[np.abs(v - centre[0]) <= tol]
    l = v[np.abs(v - centre[1]) <= tol]
    uu, ll = np.meshgrid(u, l, indexing="ij")
    return np.column_stack([uu.ravel(), ll.ravel()])


def fit_grid(data, grid: GridSpec | None = None, *, m: int = DEFAULT_M, density_mode: str = "analytic",
             coarse_to_fine: bool = False, threads: int | None = None) -> FitResult:
    """Maximize the copula log-likelihood over every cell of ``grid``.

    Cells whose likelihood is not finite are skipped and counted.  Ties go to
    the cell with the smallest |rho_u| + |rho_l|, then the lexicographically
    smallest (rho_u, rho_l).  With ``coarse_to_fine`` a 0.05 scan is refined
    on ``grid`` within 0.06 of the best coarse cell instead of scanning the
    whole lattice.
    """
    grid = GridSpec() if grid is None else grid
    data = _check_uniform_pairs(data, MIN_OBS)
    mode = _mode_code(density_mode)
    zx, zy = _scores(data)
    n = data.shape[0]
    starts = np.zeros(1, dtype=np.int64)
    if coarse_to_fine:
        coarse = GridSpec(grid.lo, grid.hi, 0.05) if _aligned(grid.lo, grid.hi, 0.05) else grid
        cbank = grid_bank(coarse, m)
        first = _results(cbank, *_scan(cbank, zx, zy, starts, n, mode, threads))[0]
        bank = TableBank.build(_refine_cells(grid, (first.rho_u_hat, first.rho_l_hat)), m)
    else:
        bank = grid_bank(grid, m)
    return _results(bank, *_scan(bank, zx, zy, starts, n, mode, threads))[0]


def _aligned(lo, hi, step):
    span = (hi - lo) / step
    return abs(span - round(span)) <= 1e-9


def fit_many(datasets, grid: GridSpec | None = None, *, m: int = DEFAULT_M, density_mode: str = "analytic",
             threads: int | None = None) -> list:
    """Fit each dataset of a (reps, n, 2) array independently.

    Equivalent to calling :func:`fit_grid` per dataset, but every cell is
    visited once for all datasets.  A dataset whose cells all fail yields
    ``None`` instead of raising.
    """
    grid = GridSpec() if grid is None else grid
    arr = np.asarray(datasets, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ParameterError("datasets must have shape (reps, n, 2)")
    reps, n, _ = arr.shape
    flat = _check_uniform_pairs(arr.reshape(reps * n, 2), MIN_OBS)
    if n < MIN_OBS:
        raise ParameterError(f"need at least {MIN_OBS} observations per dataset, got {n}")
    zx, zy = _scores(flat)
    starts = np.arange(reps, dtype=np.int64) * n
    bank = grid_bank(grid, m)
    best_ll, best_c, n_tied, n_fail = _scan(bank, zx, zy, starts, n, _mode_code(density_mode), threads)
    out = []
    for j in range(reps):
        if best_c[j] < 0:
            out.append(None)
            continue
        ru, rl = bank.rho[best_c[j]]
        out.append(FitResult(float(ru), float(rl), float(best_ll[j]), bool(n_tied[j] == 1), int(n_fail[j])))
    return out


def fit_rolling(data, window: int = 100, grid: GridSpec | None = None, *, dates=None, m: int = DEFAULT_M,
                density_mode: str = "analytic", threads: int | None = None) -> RollingResult:
    """Fit every contiguous ``window``-observation slice of ``data``.

    The centre of the window starting at ``s`` is observation ``s + window // 2``;
    its date is attached when ``dates`` is given, otherwise its index.
    """
    grid = GridSpec() if grid is None else grid
    window = int(window)
    if window < MIN_OBS:
        raise ParameterError(f"window must be at least {MIN_OBS}, got {window}")
    data = np.asarray(data, dtype=float)
    if data.ndim == 2 and data.shape[0] < window:
        raise ParameterError(f"data length {data.shape[0]} is shorter than the window {window}")
    data = _check_uniform_pairs(data, window)
    n = data.shape[0]
    if dates is not None and len(dates) != n:
        raise ParameterError(f"{len(dates)} dates for {n} observations")
    zx, zy = _scores(data)
    starts = np.arange(n - window + 1, dtype=np.int64)
    bank = grid_bank(grid, m)
    fits = _results(bank, *_scan(bank, zx, zy, starts, window, _mode_code(density_mode), threads))
    centre = starts + window // 2
    labels = tuple(dates[i] for i in centre) if dates is not None else tuple(int(i) for i in centre)
    return RollingResult(labels, tuple(fits), window)
