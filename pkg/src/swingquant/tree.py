"""Quantized backward dynamic programming for swing contracts.

The factor state is collapsed to one small codebook per date, consecutive
codebooks are linked by an empirically estimated transition matrix, and
the contract is priced by backward induction over the residual volume
bounds reachable from the initial ones.  For integer bounds the optimal
purchase at every node is an endpoint of the admissible interval, always
0 or 1, which the recursion asserts rather than assumes.  Non-integer
bounds are priced by affine interpolation of the integer-vertex surface.

The grids quantize the volatility-scaled factor pair (sigma1*X1,
sigma2*X2): it is Markov, the log-spot exponent is its coordinate sum
(so the quadratic quantization metric matches the payoff's sensitivity),
and degenerate-volatility models collapse to a single point per date.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contracts import (
    GlobalConstraints,
    PremiumSurface,
    admissible_interval,
    advance_constraints,
    integer_vertices,
    reachable_set,
)
from .model import (
    TwoFactorParams,
    simulate_factor_paths,
    spot_and_payoff,
    spot_and_payoff_scaled,
)
from .quantizer import (
    Codebook,
    clvq_optimize,
    load_codebook_csv,
    lloyd_optimize,
    nearest_indices,
    save_codebook_csv,
)

__all__ = [
    "QuantTree",
    "DPTable",
    "Policy",
    "build_grids",
    "estimate_transitions",
    "build_tree",
    "quantized_dp_price",
    "premium_surface",
    "extract_and_value_policy",
    "save_tree",
    "load_tree",
]

log = logging.getLogger(__name__)

_ROW_TOL = 1e-9
TRANSITION_SCHEME = "joint-path-counting"


@dataclass
class QuantTree:
    """Per-date codebooks, transition matrices and payoff values."""

    params: TwoFactorParams
    grids: list[Codebook]
    transitions: list[np.ndarray]
    payoff_values: list[np.ndarray]

    def __post_init__(self) -> None:
        n = self.params.n
        if len(self.grids) != n:
            raise ValueError(f"expected {n} grids, got {len(self.grids)}")
        if len(self.transitions) != n - 1:
            raise ValueError(
                f"expected {n - 1} transition matrices, got {len(self.transitions)}"
            )
        if len(self.payoff_values) != n:
            raise ValueError("one payoff vector per date required")
        self.transitions = [np.asarray(t, dtype=float) for t in self.transitions]
        self.payoff_values = [
            np.asarray(v, dtype=float).reshape(-1) for v in self.payoff_values
        ]
        for k, t in enumerate(self.transitions):
            want = (self.grids[k].n_points, self.grids[k + 1].n_points)
            if t.shape != want:
                raise ValueError(f"transition {k} has shape {t.shape}, want {want}")
            rows = t.sum(axis=1)
            if np.any(t < -_ROW_TOL) or np.any(np.abs(rows - 1.0) > _ROW_TOL):
                raise ValueError(f"transition {k} is not row-stochastic")
        for k, v in enumerate(self.payoff_values):
            if v.shape != (self.grids[k].n_points,):
                raise ValueError(f"payoff vector {k} does not match grid {k}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite payoff at date {k}")

    @property
    def n(self) -> int:
        return self.params.n

    def width(self, k: int) -> int:
        return self.grids[k].n_points

    def root_weights(self) -> np.ndarray:
        w = self.grids[0].weights
        if w is None:
            if self.width(0) != 1:
                raise ValueError("date-0 grid needs weights when it has >1 point")
            return np.ones(1)
        return np.asarray(w)

    def chained_weights(self) -> list[np.ndarray]:
        """Date-0 law pushed through the transition matrices."""
        w = [self.root_weights()]
        for t in self.transitions:
            w.append(w[-1] @ t)
        return w


@dataclass
class DPTable:
    """Backward-induction values: per date, residual bounds -> node values."""

    layers: list[dict[GlobalConstraints, np.ndarray]]

    def value(self, k: int, q: GlobalConstraints) -> np.ndarray:
        return self.layers[k][q]


@dataclass
class Policy:
    """Chosen purchase per (date, residual bounds, node), all 0 or 1."""

    q0: GlobalConstraints
    n: int
    actions: dict[tuple[int, tuple[float, float]], np.ndarray] = field(
        default_factory=dict
    )

    def action(self, k: int, q: GlobalConstraints, node: int) -> int:
        return int(self.actions[(k, q.as_tuple())][node])


def _scaled_states(params: TwoFactorParams, paths: np.ndarray, k: int) -> np.ndarray:
    return paths[:, k, :] * params.vols


def build_grids(
    params: TwoFactorParams,
    n_bar: int,
    n_samples: int,
    seed: int,
    optimizer: str = "clvq-lloyd",
    *,
    max_fit_samples: int = 50_000,
    lloyd_max_iter: int = 60,
    lloyd_tol: float = 2e-6,
    clvq_steps: int | None = None,
    standardize: bool = True,
    paths: np.ndarray | None = None,
) -> list[Codebook]:
    """One optimized codebook of the scaled factor state per date.

    Date 0 always gets the single deterministic point (0, 0).  Later dates
    are fitted on a thinned subsample (at most ``max_fit_samples``) with the
    chosen optimizer: ``"lloyd"`` (seeded from spread samples),
    ``"clvq"`` (online pass only) or ``"clvq-lloyd"`` (online seeding, then
    fixed-point polish; the default).  Consecutive dates warm-start from the
    previous grid rescaled by the marginal standard deviations, which cuts
    the fixed-point iterations sharply.  Sample clouds with at most
    ``n_bar`` distinct points (degenerate volatility) collapse to exactly
    those points.  Non-convergence is logged and the last iterate kept.
    """
    if n_bar < 1:
        raise ValueError("n_bar must be >= 1")
    if n_samples < 10 * n_bar:
        raise ValueError("n_samples must be at least 10 * n_bar")
    if optimizer not in ("lloyd", "clvq", "clvq-lloyd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if paths is None:
        paths = simulate_factor_paths(
            params, n_samples, seed, antithetic=standardize,
            standardize=standardize,
        )
    rng = np.random.default_rng(seed ^ 0x9E3779B97F4A7C15)

    grids: list[Codebook] = [Codebook(np.zeros((1, 2)), np.ones(1))]
    prev_scale = None
    for k in range(1, params.n):
        z = _scaled_states(params, paths, k)
        stride = max(1, -(-len(z) // max_fit_samples))
        fit = z[::stride]
        uniq = np.unique(fit, axis=0)
        if len(uniq) <= n_bar:
            counts = _cell_counts(fit, uniq)
            grids.append(Codebook(uniq, counts / counts.sum()))
            prev_scale = None
            continue

        scale = fit.std(axis=0)
        init = None
        if prev_scale is not None and grids[-1].n_points == n_bar:
            ratio = np.where(prev_scale > 0,
                             scale / np.maximum(prev_scale, 1e-300), 1.0)
            cand = grids[-1].points * ratio
            if len(np.unique(cand, axis=0)) == n_bar:
                init = cand
        if init is None:
            picks = rng.choice(len(uniq), size=n_bar, replace=False)
            init = uniq[np.sort(picks)]
        if optimizer in ("clvq", "clvq-lloyd"):
            steps = clvq_steps if clvq_steps is not None else 30 * n_bar
            order = rng.permutation(len(fit))[: steps + 4096]
            seeded, _ = clvq_optimize(
                iter(fit[order]), Codebook(init), steps=min(steps, len(order))
            )
            if len(np.unique(seeded.points, axis=0)) == n_bar:
                init = seeded.points
        if optimizer == "clvq":
            counts = _cell_counts(fit, init)
            grids.append(Codebook(init, counts / counts.sum()))
        else:
            cb, report = lloyd_optimize(
                fit, Codebook(init), max_iter=lloyd_max_iter, tol=lloyd_tol
            )
            grids.append(cb)
            if not report.converged:
                log.info("grid %d: fixed-point pass hit max_iter "
                         "(distortion %.4g)", k, report.final_distortion)
        prev_scale = scale
    return grids


def _cell_counts(samples: np.ndarray, points: np.ndarray) -> np.ndarray:
    cb = Codebook(points)
    idx = nearest_indices(samples, cb)
    return np.bincount(idx, minlength=len(points)).astype(float)


def estimate_transitions(
    params: TwoFactorParams,
    grids: list[Codebook],
    n_samples: int,
    seed: int,
    *,
    standardize: bool = True,
    paths: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Row-stochastic matrices linking consecutive codebooks.

    Counts nearest-cell pairs along one shared simulated path set (the same
    seed reproduces the grid-construction set).  Rows never visited default
    to the marginal weight vector of the next grid, keeping every row a
    proper distribution; such rows are logged so callers can raise
    ``n_samples``.
    """
    if paths is None:
        paths = simulate_factor_paths(
            params, n_samples, seed, antithetic=standardize,
            standardize=standardize,
        )
    n = params.n
    transitions: list[np.ndarray] = []
    idx_prev = nearest_indices(_scaled_states(params, paths, 0), grids[0])
    for k in range(n - 1):
        idx_next = nearest_indices(_scaled_states(params, paths, k + 1), grids[k + 1])
        n_from, n_to = grids[k].n_points, grids[k + 1].n_points
        counts = np.bincount(
            idx_prev * n_to + idx_next, minlength=n_from * n_to
        ).reshape(n_from, n_to).astype(float)
        row_sums = counts.sum(axis=1)
        empty = row_sums == 0
        if empty.any():
            marginal = np.bincount(idx_next, minlength=n_to).astype(float)
            counts[empty] = marginal / marginal.sum()
            row_sums[empty] = 1.0
            log.warning(
                "transition %d: %d of %d rows unvisited, filled with the "
                "next-date marginal; consider raising n_samples",
                k, int(empty.sum()), n_from,
            )
        transitions.append(counts / row_sums[:, None])
        idx_prev = idx_next
    return transitions


def build_tree(
    params: TwoFactorParams,
    n_bar: int,
    n_samples: int,
    seed: int,
    optimizer: str = "clvq-lloyd",
    *,
    standardize: bool = True,
    calibrate_forward: bool = True,
    max_fit_samples: int = 50_000,
) -> QuantTree:
    """Full pipeline: simulate once, fit grids, estimate transitions.

    Grid weights are replaced by the date-0 law pushed through the
    estimated transitions (identical to the path-set marginals), so the
    stored weights, transition matrices and backward induction are mutually
    consistent to machine precision.

    With ``calibrate_forward`` (the default) each date's grid spots are
    rescaled by a constant so the weighted spot mean reprices the forward
    exactly.  Collapsing the spot exponential onto finitely many points
    otherwise undervalues its mean (a Jensen gap of order the squared
    per-date quantization error), which shows up as a spurious negative
    swap value for fully-saturated contracts; the correction factors are
    ``1 + O(distortion^2)`` and vanish as the grids refine.
    """
    paths = simulate_factor_paths(
        params, n_samples, seed, antithetic=standardize, standardize=standardize
    )
    grids = build_grids(
        params, n_bar, n_samples, seed, optimizer,
        max_fit_samples=max_fit_samples, standardize=standardize, paths=paths,
    )
    transitions = estimate_transitions(
        params, grids, n_samples, seed, standardize=standardize, paths=paths
    )
    weights = [np.ones(1)]
    for t in transitions:
        weights.append(weights[-1] @ t)
    grids = [g.with_weights(w) for g, w in zip(grids, weights)]
    payoffs = []
    for k in range(params.n):
        spot, _ = spot_and_payoff_scaled(params, k, grids[k].points)
        spot = np.atleast_1d(spot)
        if calibrate_forward:
            spot = spot * (params.forward[k] / float(grids[k].weights @ spot))
        discount = math.exp(-params.r * k * params.dt)
        payoffs.append(discount * (spot - params.strikes[k]))
    return QuantTree(params, grids, transitions, payoffs)


def _endpoint_actions(q: GlobalConstraints, remaining: int) -> list[float]:
    lo, hi = admissible_interval(q, remaining)
    if not (lo in (0.0, 1.0) and hi in (0.0, 1.0)):
        raise AssertionError(
            f"integer constraints produced non-binary endpoints [{lo}, {hi}]"
        )
    return [lo] if lo == hi else [lo, hi]


def quantized_dp_price(
    tree: QuantTree, q0: GlobalConstraints
) -> tuple[float, DPTable]:
    """Price the contract with integer bounds ``q0`` on the quantized tree.

    Backward induction over the residual bounds reachable from ``q0``; at
    each (date, bounds, node) the purchase is the better endpoint of the
    admissible interval.  Returns the root price and the full value table.
    Non-integer bounds are rejected; price those from
    :func:`premium_surface` via tile interpolation.
    """
    n = tree.n
    q0 = GlobalConstraints(q0.q_lo, min(q0.q_hi, float(n)))
    if not q0.is_integer:
        raise ValueError(
            f"{q0.as_tuple()} is not integer; interpolate the premium surface"
        )
    if q0.q_lo > n:
        raise ValueError(f"floor {q0.q_lo} cannot be met in {n} dates")

    layers: list[dict[GlobalConstraints, np.ndarray]] = [
        {} for _ in range(n + 1)
    ]
    layers[n] = {q: np.zeros(1) for q in reachable_set(q0, n, n)}
    for k in range(n - 1, -1, -1):
        rem = n - 1 - k
        v = tree.payoff_values[k]
        nxt = layers[k + 1]
        for q in reachable_set(q0, k, n):
            best = None
            for x in _endpoint_actions(q, rem):
                if k == n - 1:
                    cont = 0.0
                else:
                    cont = tree.transitions[k] @ nxt[advance_constraints(q, x, rem)]
                cand = x * v + cont
                best = cand if best is None else np.maximum(best, cand)
            layers[k][q] = best
    price = float(tree.root_weights() @ layers[0][q0])
    return price, DPTable(layers)


def _triangle_index(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (b * (b + 1)) // 2 + a


def premium_surface(tree: QuantTree) -> PremiumSurface:
    """Premium at every integer vertex, from one backward pass.

    Works over all integer bound pairs at every horizon (cost proportional
    to the pair count times the product of consecutive grid sizes), so the
    whole surface costs one induction instead of one per vertex.
    """
    n = tree.n
    values_next: np.ndarray | None = None  # (pairs at k+1, N_{k+1})
    for k in range(n - 1, -1, -1):
        m = n - k
        pairs = integer_vertices(m)
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        v = tree.payoff_values[k]
        n_k = tree.width(k)
        if k == n - 1:
            cont = np.zeros((len(integer_vertices(0)), n_k))
        else:
            cont = values_next @ tree.transitions[k].T
        allowed0 = a <= (m - 1)
        allowed1 = b >= 1
        # clip the index arithmetic so masked-out actions still gather
        # in-bounds (their values are discarded by the mask)
        child0 = _triangle_index(np.minimum(a, m - 1), np.minimum(b, m - 1))
        child1 = _triangle_index(np.maximum(a - 1, 0), np.clip(b - 1, 0, m - 1))
        neg = -np.inf
        cand0 = np.where(allowed0[:, None], cont[child0], neg)
        cand1 = np.where(allowed1[:, None], v[None, :] + cont[child1], neg)
        values_next = np.maximum(cand0, cand1)
        assert np.isfinite(values_next).all()
    root = tree.root_weights()
    surface_values = {
        (i, j): float(values_next[_triangle_index(np.array(i), np.array(j))] @ root)
        for (i, j) in integer_vertices(n)
    }
    return PremiumSurface(n=n, values=surface_values)


def extract_and_value_policy(
    tree: QuantTree,
    table: DPTable,
    q0: GlobalConstraints,
    n_paths: int,
    seed: int,
) -> tuple[Policy, float, float]:
    """Read the bang-bang policy off a value table and price it by simulation.

    The policy takes the smallest maximising endpoint at every (date,
    bounds, node).  Valuation runs on fresh exact-model paths with an
    independent seed: states are projected to the grids only to look up
    decisions, payoffs come from the exact states.  Every simulated
    schedule satisfies the global bounds; a violation would mean the
    reachable-set bookkeeping is broken and raises immediately.

    Returns ``(policy, mc_value, std_err)``.
    """
    n = tree.n
    q0 = GlobalConstraints(q0.q_lo, min(q0.q_hi, float(n)))
    if not q0.is_integer:
        raise ValueError("policies are extracted for integer bounds")

    policy = Policy(q0=q0, n=n)
    for k in range(n):
        rem = n - 1 - k
        v = tree.payoff_values[k]
        for q in reachable_set(q0, k, n):
            actions = _endpoint_actions(q, rem)
            if len(actions) == 1:
                act = np.full(tree.width(k), int(actions[0]), dtype=np.int8)
            else:
                conts = []
                for x in actions:
                    if k == n - 1:
                        cont = np.zeros(tree.width(k))
                    else:
                        nxt = table.layers[k + 1][advance_constraints(q, x, rem)]
                        cont = tree.transitions[k] @ nxt
                    conts.append(x * v + cont)
                # smallest maximiser: buy only on strict improvement
                act = (conts[1] > conts[0]).astype(np.int8)
            policy.actions[(k, q.as_tuple())] = act

    paths = simulate_factor_paths(tree.params, n_paths, seed)
    lo0, hi0 = int(q0.q_lo), int(q0.q_hi)
    bought = np.zeros(n_paths, dtype=np.int64)
    value = np.zeros(n_paths)
    for k in range(n):
        cap = n - k
        z = _scaled_states(tree.params, paths, k)
        node = nearest_indices(z, tree.grids[k])
        _, pay = spot_and_payoff(tree.params, k, paths[:, k, :])
        acts = np.zeros(n_paths, dtype=np.int8)
        for purchased in np.unique(bought):
            key = (
                float(max(lo0 - purchased, 0)),
                float(min(max(hi0 - purchased, 0), cap)),
            )
            mask = bought == purchased
            acts[mask] = policy.actions[(k, key)][node[mask]]
        value += acts * pay
        bought += acts
    if not ((bought >= lo0) & (bought <= hi0)).all():
        raise AssertionError("simulated schedule violated the global bounds")
    mc_value = float(value.mean())
    std_err = float(value.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return policy, mc_value, std_err


# -- persistence -------------------------------------------------------------


def _params_to_dict(params: TwoFactorParams) -> dict:
    return {
        "alpha1": params.alpha1,
        "alpha2": params.alpha2,
        "sigma1": params.sigma1,
        "sigma2": params.sigma2,
        "rho": params.rho,
        "r": params.r,
        "T": params.T,
        "n": params.n,
        "forward": [float(v) for v in params.forward],
        "strike": [float(v) for v in params.strikes],
    }


def save_tree(tree: QuantTree, directory, manifest_extra: dict | None = None) -> None:
    """Persist grids, transitions and payoffs as CSV plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, grid in enumerate(tree.grids):
        save_codebook_csv(grid, directory / f"grid_{k:03d}.csv")
    for k, t in enumerate(tree.transitions):
        np.savetxt(directory / f"transition_{k:03d}.csv", t, delimiter=",",
                   fmt="%.17g")
    with (directory / "payoffs.csv").open("w") as fh:
        fh.write("date,node,value\n")
        for k, v in enumerate(tree.payoff_values):
            for i, val in enumerate(v):
                fh.write(f"{k},{i},{float(val)!r}\n")
    manifest = {
        "model": _params_to_dict(tree.params),
        "grid_sizes": [g.n_points for g in tree.grids],
        "transition_scheme": TRANSITION_SCHEME,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )


def load_tree(directory) -> tuple[QuantTree, dict]:
    """Restore a tree saved by :func:`save_tree`; returns (tree, manifest)."""
    from .model import params_from_dict

    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    params = params_from_dict(manifest["model"], base_dir=directory)
    n = params.n
    grids = [load_codebook_csv(directory / f"grid_{k:03d}.csv") for k in range(n)]
    transitions = [
        np.loadtxt(directory / f"transition_{k:03d}.csv", delimiter=",", ndmin=2)
        for k in range(n - 1)
    ]
    payoffs: list[list[float]] = [[] for _ in range(n)]
    lines = (directory / "payoffs.csv").read_text().strip().splitlines()[1:]
    for line in lines:
        k, i, val = line.split(",")
        payoffs[int(k)].append(float(val))
    return QuantTree(params, grids, transitions, payoffs), manifest
