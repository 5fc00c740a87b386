"""Finite codebooks for state-space discretisation.

A codebook is a small set of points in R^d together with optional cell
probabilities.  Random states are projected to their nearest point
(smallest index wins on ties), and three optimisers tune the points to
the sampled distribution: a fixed-point iteration on cell centroids, an
online stochastic-gradient pass, and a Newton solver for the standard
normal in one dimension where density and distribution function are
available in closed form.

Nearest-neighbour search is an exhaustive linear scan (blocked matrix
arithmetic with preallocated scratch, no per-sample allocation) with a
sorted-midpoint shortcut in d=1.  Codebooks are immutable; all queries
are pure functions and safe to call concurrently.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "Codebook",
    "OptimizerReport",
    "nearest_index",
    "nearest_indices",
    "distortion",
    "lloyd_optimize",
    "clvq_optimize",
    "newton_optimize_1d_normal",
    "save_codebook_csv",
    "load_codebook_csv",
]

log = logging.getLogger(__name__)

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class Codebook:
    """N points in R^d with optional probabilities, immutable once built."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.size == 0:
            raise ValueError("points must form a non-empty (N, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite codebook point")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("codebook points must be pairwise distinct")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != (len(pts),):
                raise ValueError("weights must have one entry per point")
            if np.any(w < 0.0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise ValueError("weights must be nonnegative and sum to 1")
            w = w.copy()
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_weights(self, weights) -> "Codebook":
        return Codebook(self.points, weights)


@dataclass
class OptimizerReport:
    """Convergence record of a codebook optimisation."""

    iterations: int
    final_distortion: float
    distortion_history: list[float] = field(default_factory=list)
    stationarity_residual: float = math.nan
    converged: bool = False


def _as_samples(samples, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("samples must form a non-empty (M, d) array")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"dimension mismatch: samples are {arr.shape[1]}-d, "
                         f"codebook is {dim}-d")
    return arr


def nearest_index(y, cb: Codebook) -> int:
    """Index of the codebook point closest to ``y`` (smallest index on ties)."""
    yv = np.asarray(y, dtype=float).reshape(-1)
    if yv.shape != (cb.dim,):
        raise ValueError(f"dimension mismatch: point is {yv.shape[0]}-d, "
                         f"codebook is {cb.dim}-d")
    d2 = ((cb.points - yv) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def _nearest_sorted_1d(y: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Sorted-midpoint search in d=1, tie-corrected to the linear-scan rule."""
    x = y[:, 0]
    p = points[:, 0]
    order = np.argsort(p, kind="stable")
    sp = p[order]
    mids = 0.5 * (sp[:-1] + sp[1:])
    pos = np.searchsorted(mids, x, side="left")
    idx = order[pos]
    if len(sp) > 1:
        # A sample on an exact midpoint is equidistant to the sorted pair
        # (pos, pos+1); the linear rule wants the smaller original index.
        right = np.minimum(pos + 1, len(sp) - 1)
        tie = (pos < len(mids)) & (
            np.abs(x - sp[pos]) == np.abs(x - sp[right])
        )
        if tie.any():
            idx = idx.copy()
            idx[tie] = np.minimum(order[pos[tie]], order[right[tie]])
    return idx


def nearest_indices(samples, cb: Codebook, block: int = 16384) -> np.ndarray:
    """Vectorised nearest-point assignment for an (M, d) sample block.

    Same tie rule as :func:`nearest_index`.  Work proceeds in blocks with a
    reused scratch buffer so the inner loop allocates nothing per sample.
    """
    y = _as_samples(samples, cb.dim)
    pts = cb.points
    if cb.dim == 1 and cb.n_points >= 16:
        return _nearest_sorted_1d(y, pts)
    m = y.shape[0]
    out = np.empty(m, dtype=np.intp)
    # argmin of |y|^2 - 2 y.p + |p|^2 over points; |y|^2 is constant per row
    half_p2 = 0.5 * (pts ** 2).sum(axis=1)
    scratch = np.empty((min(block, m), cb.n_points))
    for start in range(0, m, block):
        stop = min(start + block, m)
        buf = scratch[: stop - start]
        np.dot(y[start:stop], pts.T, out=buf)
        np.subtract(half_p2[None, :], buf, out=buf)
        np.argmin(buf, axis=1, out=out[start:stop])
    return out


def distortion(samples, cb: Codebook, p: float = 2.0) -> float:
    """Mean ``p``-norm projection error ``(E min_i |y - x_i|^p)^(1/p)``."""
    if p < 1.0:
        raise ValueError("p must be >= 1")
    y = _as_samples(samples, cb.dim)
    idx = nearest_indices(y, cb)
    err = np.sqrt(((y - cb.points[idx]) ** 2).sum(axis=1))
    return float(np.mean(err ** p) ** (1.0 / p))


def _quadratic_error(y: np.ndarray, pts: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return ((y - pts[idx]) ** 2).sum(axis=1)


def lloyd_optimize(
    samples,
    cb0: Codebook,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> tuple[Codebook, OptimizerReport]:
    """Fixed-point optimisation: assign cells, move points to cell means.

    Runs on the empirical measure of ``samples`` until the relative decrease
    of the quadratic distortion drops below ``tol`` or ``max_iter`` passes.
    The recorded distortion history is non-increasing.  A point whose cell
    empties is re-seeded at the sample currently farthest from its assigned
    point, which keeps the codebook size constant and strictly decreases
    distortion.  Returned weights are the empirical cell frequencies.
    """
    y = _as_samples(samples, cb0.dim)
    m, d = y.shape
    n = cb0.n_points
    if n > m:
        raise ValueError(f"cannot fit {n} points to {m} samples")
    if len(np.unique(y, axis=0)) < n:
        raise ValueError(f"need at least {n} distinct samples")
    pts = cb0.points.copy()

    history: list[float] = []
    prev_d2 = None
    converged = False
    idx = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        idx = nearest_indices(y, _view_codebook(pts))
        counts = np.bincount(idx, minlength=n)
        guard = 0
        while (counts == 0).any():
            sqd = _quadratic_error(y, pts, idx)
            far = int(np.argmax(sqd))
            hole = int(np.flatnonzero(counts == 0)[0])
            if sqd[far] == 0.0:
                # Fewer distinct samples than points; cannot split further.
                break
            pts[hole] = y[far]
            idx = nearest_indices(y, _view_codebook(pts))
            counts = np.bincount(idx, minlength=n)
            guard += 1
            if guard > n:
                break
        sqd = _quadratic_error(y, pts, idx)
        d2 = float(sqd.mean())
        history.append(math.sqrt(d2))
        if prev_d2 is not None and abs(prev_d2 - d2) <= tol * prev_d2:
            converged = True
            break
        prev_d2 = d2
        # centroid update
        sums = np.zeros((n, d))
        np.add.at(sums, idx, y)
        nonzero = counts > 0
        pts[nonzero] = sums[nonzero] / counts[nonzero, None]

    counts = np.bincount(idx, minlength=n)
    sums = np.zeros((n, d))
    np.add.at(sums, idx, y)
    residual = 0.0
    nonzero = counts > 0
    if nonzero.any():
        centroids = sums[nonzero] / counts[nonzero, None]
        residual = float(
            np.max(np.sqrt(((centroids - pts[nonzero]) ** 2).sum(axis=1)))
        )
    weights = counts / counts.sum()
    report = OptimizerReport(
        iterations=iterations,
        final_distortion=history[-1],
        distortion_history=history,
        stationarity_residual=residual,
        converged=converged,
    )
    if not converged:
        log.warning("lloyd_optimize stopped at max_iter=%d (last distortion %.3g)",
                    max_iter, history[-1])
    for a, b in zip(history, history[1:]):
        assert b <= a * (1.0 + 1e-12), "distortion increased during iteration"
    return Codebook(pts, weights), report


def _view_codebook(points: np.ndarray) -> Codebook:
    """Wrap raw points for querying without the distinctness cost."""
    cb = object.__new__(Codebook)
    object.__setattr__(cb, "points", points)
    object.__setattr__(cb, "weights", None)
    return cb


def clvq_optimize(
    sample_stream,
    cb0: Codebook,
    steps: int,
    a: float = 1.0,
    b: float | None = None,
    holdout: int = 4096,
) -> tuple[Codebook, OptimizerReport]:
    """Online codebook descent: pull the nearest point toward each sample.

    For the ``t``-th sample the nearest point moves by the fraction
    ``a / (b + t)`` of its offset (``b`` defaults to ``100 * N``; the
    harmonic schedule sums to infinity while its squares stay summable).
    After ``steps`` samples, up to ``holdout`` further samples estimate the
    distortion and cell weights of the final codebook.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    n, d = cb0.n_points, cb0.dim
    if b is None:
        b = 100.0 * n
    pts = cb0.points.copy()
    it = iter(sample_stream)
    for t in range(1, steps + 1):
        try:
            xi = next(it)
        except StopIteration:
            log.warning("clvq stream exhausted after %d of %d steps", t - 1, steps)
            break
        xv = np.asarray(xi, dtype=float).reshape(d)
        i = int(((pts - xv) ** 2).sum(axis=1).argmin())
        pts[i] += (a / (b + t)) * (xv - pts[i])

    if steps == 0:
        return cb0, OptimizerReport(iterations=0, final_distortion=math.nan)

    batch = []
    for _ in range(holdout):
        try:
            batch.append(np.asarray(next(it), dtype=float).reshape(d))
        except StopIteration:
            break
    weights = None
    final = math.nan
    residual = math.nan
    if batch:
        yb = np.asarray(batch)
        cb_tmp = _view_codebook(pts)
        idx = nearest_indices(yb, cb_tmp)
        counts = np.bincount(idx, minlength=n)
        weights = counts / counts.sum()
        final = float(np.sqrt(_quadratic_error(yb, pts, idx).mean()))
        nonzero = counts > 0
        sums = np.zeros((n, d))
        np.add.at(sums, idx, yb)
        cents = sums[nonzero] / counts[nonzero, None]
        residual = float(np.max(np.sqrt(((cents - pts[nonzero]) ** 2).sum(axis=1))))
    report = OptimizerReport(
        iterations=steps,
        final_distortion=final,
        distortion_history=[final] if not math.isnan(final) else [],
        stationarity_residual=residual,
        converged=True,
    )
    return Codebook(pts, weights), report


def _norm_pdf(x: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def newton_optimize_1d_normal(
    n: int, max_iter: int = 100, tol: float = 1e-12
) -> Codebook:
    """Quadratic-optimal ``n``-point codebook of the standard normal.

    Solves the stationarity system (each point the conditional mean of its
    midpoint-bounded cell) by a damped Newton iteration on the distortion
    gradient, using the closed-form normal density and distribution
    function.  The result is symmetric about zero and carries the exact
    cell probabilities as weights.  If the iteration has not met ``tol``
    after ``max_iter`` steps the last iterate is returned and a warning is
    logged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return Codebook(np.zeros((1, 1)), np.ones(1))

    # start at the distribution quantiles, symmetric by construction
    y = ndtri((2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n))

    def gradient_and_cells(yv):
        mids = 0.5 * (yv[:-1] + yv[1:])
        cdf = np.concatenate(([0.0], ndtr(mids), [1.0]))
        pdf = np.concatenate(([0.0], _norm_pdf(mids), [0.0]))
        mass = np.diff(cdf)  # cell probabilities
        mean = pdf[:-1] - pdf[1:]  # integral of u phi(u) over each cell
        grad = 2.0 * (yv * mass - mean)
        return grad, mass, pdf

    converged = False
    for _ in range(max_iter):
        grad, mass, pdf = gradient_and_cells(y)
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        gaps = np.diff(y)
        edge = 0.5 * pdf[1:-1] * gaps  # phi(mid) * (y_{i+1}-y_i) / 2
        h = np.zeros((n, n))
        diag = 2.0 * mass
        diag[:-1] -= edge
        diag[1:] -= edge
        h[np.arange(n), np.arange(n)] = diag
        h[np.arange(n - 1), np.arange(1, n)] = -edge
        h[np.arange(1, n), np.arange(n - 1)] = -edge
        step = np.linalg.solve(h, grad)
        scale = 1.0
        for _ in range(40):
            cand = y - scale * step
            if np.all(np.diff(cand) > 0):
                break
            scale *= 0.5
        y = y - scale * step
        y = 0.5 * (y - y[::-1])  # keep the exact symmetry of the optimum
    if not converged:
        grad, mass, _ = gradient_and_cells(y)
        log.warning("newton_optimize_1d_normal(%d): |grad|=%.2e after %d iters",
                    n, float(np.max(np.abs(grad))), max_iter)
    _, mass, _ = gradient_and_cells(y)
    return Codebook(y[:, None], mass)


def save_codebook_csv(cb: Codebook, path) -> None:
    """Write ``d,N`` header, then N coordinate rows, then optional weights."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([cb.dim, cb.n_points])
        for row in cb.points:
            writer.writerow([repr(float(v)) for v in row])
        if cb.weights is not None:
            for w in cb.weights:
                writer.writerow([repr(float(w))])


def load_codebook_csv(path) -> Codebook:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: empty codebook file")
    d, n = int(rows[0][0]), int(rows[0][1])
    if len(rows) not in (1 + n, 1 + 2 * n):
        raise ValueError(f"{path}: expected {n} point rows "
                         f"(optionally followed by {n} weight rows)")
    pts = np.array([[float(v) for v in row] for row in rows[1:1 + n]])
    if pts.shape != (n, d):
        raise ValueError(f"{path}: point block has shape {pts.shape}, "
                         f"want ({n}, {d})")
    weights = None
    if len(rows) == 1 + 2 * n:
        weights = np.array([float(row[0]) for row in rows[1 + n:]])
    return Codebook(pts, weights)
