"""Shared builders for test instances."""
import numpy as np

from swingquant.model import TwoFactorParams
from swingquant.oracle import ScenarioLattice
from swingquant.quantizer import Codebook
from swingquant.tree import QuantTree


def random_lattice(rng, n=None, max_branch=3, payoff_scale=1.0):
    """A random layered lattice with unit-interval payoffs and random rows."""
    if n is None:
        n = int(rng.integers(1, 5))
    widths = [1] + [int(rng.integers(1, max_branch + 1)) for _ in range(n - 1)]
    payoffs = [rng.uniform(-payoff_scale, payoff_scale, size=w) for w in widths]
    transitions = []
    for k in range(n - 1):
        raw = rng.uniform(0.05, 1.0, size=(widths[k], widths[k + 1]))
        transitions.append(raw / raw.sum(axis=1, keepdims=True))
    return ScenarioLattice(payoffs, transitions)


def deterministic_lattice(payoffs):
    """Single-node-per-level lattice with the given payoff sequence."""
    n = len(payoffs)
    return ScenarioLattice(
        [[float(v)] for v in payoffs],
        [np.ones((1, 1)) for _ in range(n - 1)],
    )


def integer_pairs(n):
    return [(i, j) for j in range(n + 1) for i in range(j + 1)]


def flat_params(n=10, T=None, forward=20.0, strike=20.0, r=0.0,
                alpha1=0.21, alpha2=5.4, sigma1=0.36, sigma2=1.11, rho=-0.11):
    """Two-factor parameters with flat curves (defaults: daily steps)."""
    if T is None:
        T = n / 365
    fwd = np.full(n, forward) if np.isscalar(forward) else np.asarray(forward)
    stk = np.full(n, strike) if np.isscalar(strike) else np.asarray(strike)
    return TwoFactorParams(alpha1=alpha1, alpha2=alpha2, sigma1=sigma1,
                           sigma2=sigma2, rho=rho, r=r, T=T, n=n,
                           forward=fwd, strikes=stk)


def random_quant_tree(rng, n=None, max_points=3):
    """Synthetic quantized tree with arbitrary payoffs for DP validation."""
    if n is None:
        n = int(rng.integers(1, 5))
    params = flat_params(n=n, sigma1=0.0, sigma2=0.0)
    widths = [1] + [int(rng.integers(1, max_points + 1)) for _ in range(n - 1)]
    grids = [Codebook(rng.normal(size=(w, 2))) for w in widths]
    transitions = []
    for k in range(n - 1):
        raw = rng.uniform(0.05, 1.0, size=(widths[k], widths[k + 1]))
        transitions.append(raw / raw.sum(axis=1, keepdims=True))
    payoffs = [rng.uniform(-1, 1, size=w) for w in widths]
    return QuantTree(params, grids, transitions, payoffs)


def tree_as_lattice(tree):
    return ScenarioLattice(tree.payoff_values, tree.transitions)
