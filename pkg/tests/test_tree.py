"""Quantized pricing engine tests."""
import math

import numpy as np
import pytest

from helpers import (
    flat_params,
    integer_pairs,
    random_quant_tree,
    tree_as_lattice,
)
from swingquant.contracts import GlobalConstraints, interpolate_on_tile
from swingquant.model import closed_form_strip
from swingquant.oracle import price_lattice_bruteforce
from swingquant.quantizer import Codebook, distortion
from swingquant.tree import (
    QuantTree,
    build_grids,
    build_tree,
    estimate_transitions,
    extract_and_value_policy,
    load_tree,
    premium_surface,
    quantized_dp_price,
    save_tree,
)


def gc(lo, hi):
    return GlobalConstraints(lo, hi)


make_params = flat_params


@pytest.fixture(scope="module")
def small_tree():
    params = make_params(n=10)
    return build_tree(params, n_bar=20, n_samples=100_000, seed=2024)


class TestBuildGrids:
    def test_single_point_grids_are_zero_mean(self):
        params = make_params(n=4)
        grids = build_grids(params, n_bar=1, n_samples=20_000, seed=5)
        assert len(grids) == 4
        for g in grids:
            assert g.n_points == 1
            # standardized sampling pins the mean of the fitted cloud at 0
            np.testing.assert_allclose(g.points, 0.0, atol=1e-10)

    def test_degenerate_vol_collapses(self):
        params = make_params(n=5, sigma1=0.0, sigma2=0.0)
        grids = build_grids(params, n_bar=8, n_samples=5_000, seed=6)
        for g in grids:
            assert g.n_points == 1
            np.testing.assert_array_equal(g.points, [[0.0, 0.0]])

    def test_distortion_decreases_with_size(self):
        params = make_params(n=4)
        paths = None
        from swingquant.model import simulate_factor_paths
        paths = simulate_factor_paths(params, 40_000, seed=7,
                                      antithetic=True, standardize=True)
        coarse = build_grids(params, 10, 40_000, seed=7, paths=paths)
        fine = build_grids(params, 50, 40_000, seed=7, paths=paths)
        for k in range(1, 4):
            z = paths[:, k, :] * params.vols
            assert distortion(z, fine[k]) < distortion(z, coarse[k])

    def test_sample_floor_enforced(self):
        params = make_params(n=3)
        with pytest.raises(ValueError):
            build_grids(params, n_bar=100, n_samples=500, seed=1)


class TestEstimateTransitions:
    def test_rows_sum_to_one(self, small_tree):
        for t in small_tree.transitions:
            np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-9)
            assert (t >= 0).all()

    def test_deterministic_chain_identity(self):
        params = make_params(n=4, sigma1=0.0, sigma2=0.0)
        grids = build_grids(params, 5, 5_000, seed=3)
        trans = estimate_transitions(params, grids, 5_000, seed=3)
        for t in trans:
            np.testing.assert_array_equal(t, [[1.0]])

    def test_fast_reversion_decorrelates(self):
        # near-instant mean reversion makes consecutive states independent,
        # so every row approaches the next-date marginal law
        params = make_params(n=3, alpha1=4000.0, alpha2=5000.0, rho=0.0)
        from swingquant.model import simulate_factor_paths
        paths = simulate_factor_paths(params, 1_000_000, seed=11,
                                      antithetic=True, standardize=True)
        grids = build_grids(params, 4, 1_000_000, seed=11, paths=paths)
        trans = estimate_transitions(params, grids, 1_000_000, seed=11,
                                     paths=paths)
        from swingquant.quantizer import nearest_indices
        for k, t in enumerate(trans):
            z = paths[:, k + 1, :] * params.vols
            idx = nearest_indices(z, grids[k + 1])
            marginal = np.bincount(idx, minlength=grids[k + 1].n_points)
            marginal = marginal / marginal.sum()
            for row in t:
                tv = 0.5 * np.abs(row - marginal).sum()
                assert tv <= 0.05


class TestQuantizedDP:
    def test_one_step_strip_and_swap(self):
        rng = np.random.default_rng(21)
        params = make_params(n=1)
        pts = rng.normal(size=(4, 2))
        w = np.array([0.1, 0.2, 0.3, 0.4])
        v = rng.uniform(-1, 1, size=4)
        tree = QuantTree(params, [Codebook(pts, w)], [], [v])
        price_opt, _ = quantized_dp_price(tree, gc(0, 1))
        assert price_opt == pytest.approx(float(w @ np.maximum(v, 0.0)), abs=1e-14)
        price_forced, _ = quantized_dp_price(tree, gc(1, 1))
        assert price_forced == pytest.approx(float(w @ v), abs=1e-14)

    def test_matches_bruteforce_on_random_trees(self):
        rng = np.random.default_rng(77)
        for _ in range(40):
            tree = random_quant_tree(rng)
            lat = tree_as_lattice(tree)
            n = tree.n
            hi = int(rng.integers(0, n + 1))
            lo = int(rng.integers(0, hi + 1))
            got, _ = quantized_dp_price(tree, gc(lo, hi))
            want = price_lattice_bruteforce(lat, gc(lo, hi))
            assert abs(got - want) <= 1e-12

    def test_non_integer_rejected(self, small_tree):
        with pytest.raises(ValueError):
            quantized_dp_price(small_tree, gc(0.5, 2.0))

    def test_built_tree_agrees_with_oracle_dp(self, small_tree):
        # the pipeline tree, viewed as a plain scenario lattice, must price
        # identically under the independent oracle induction
        from swingquant.oracle import price_lattice_dp

        lat = tree_as_lattice(small_tree)
        for (i, j) in integer_pairs(small_tree.n):
            got, _ = quantized_dp_price(small_tree, gc(i, j))
            want = price_lattice_dp(lat, gc(i, j))
            assert got == pytest.approx(want, rel=1e-11, abs=1e-11)

    def test_table_zero_corner(self, small_tree):
        _, table = quantized_dp_price(small_tree, gc(0, 4))
        for k, layer in enumerate(table.layers):
            q00 = gc(0, 0)
            if q00 in layer:
                np.testing.assert_array_equal(layer[q00], 0.0)

    def test_cap_clamped_to_horizon(self, small_tree):
        a, _ = quantized_dp_price(small_tree, gc(0, 10))
        b, _ = quantized_dp_price(small_tree, gc(0, 15))
        assert a == b


class TestPremiumSurface:
    def test_matches_pointwise_dp(self, small_tree):
        surf = premium_surface(small_tree)
        n = small_tree.n
        assert surf.complete
        for (i, j) in integer_pairs(n):
            want, _ = quantized_dp_price(small_tree, gc(i, j))
            assert surf.values[(i, j)] == pytest.approx(want, rel=1e-11, abs=1e-11)

    def test_corner_identities(self, small_tree):
        surf = premium_surface(small_tree)
        n = small_tree.n
        weights = small_tree.chained_weights()
        swap = sum(float(w @ v) for w, v in zip(weights, small_tree.payoff_values))
        strip = sum(float(w @ np.maximum(v, 0.0))
                    for w, v in zip(weights, small_tree.payoff_values))
        assert surf.values[(0, 0)] == 0.0
        assert surf.values[(n, n)] == pytest.approx(swap, rel=1e-11, abs=1e-11)
        assert surf.values[(0, n)] == pytest.approx(strip, rel=1e-11, abs=1e-11)

    def test_shape_properties(self, small_tree):
        surf = premium_surface(small_tree)
        n = small_tree.n
        vals = surf.values
        for (i, j) in integer_pairs(n):
            if (i + 1, j) in vals:
                assert vals[(i + 1, j)] <= vals[(i, j)] + 1e-9
            if (i, j + 1) in vals:
                assert vals[(i, j + 1)] >= vals[(i, j)] - 1e-9
        for (i, j) in integer_pairs(n):
            for di, dj in ((1, 0), (0, 1), (1, 1)):
                a = (i - di, j - dj)
                c = (i + di, j + dj)
                if a in vals and c in vals:
                    assert vals[(i, j)] >= (vals[a] + vals[c]) / 2 - 1e-9

    def test_interpolation_of_surface(self, small_tree):
        surf = premium_surface(small_tree)
        # interpolated premium between vertices stays within the vertex hull
        q = gc(1.25, 3.75)
        p = interpolate_on_tile(surf, q)
        lo = min(surf.values[v] for v in ((1, 3), (1, 4), (2, 4), (2, 3)))
        hi = max(surf.values[v] for v in ((1, 3), (1, 4), (2, 4), (2, 3)))
        assert lo - 1e-12 <= p <= hi + 1e-12


class TestPolicy:
    def test_deterministic_model_picks_best_dates(self):
        strikes = np.array([19.0, 21.0, 18.0, 20.5, 19.5])
        params = make_params(n=5, sigma1=0.0, sigma2=0.0, strike=strikes)
        tree = build_tree(params, n_bar=1, n_samples=2_000, seed=9)
        price, table = quantized_dp_price(tree, gc(2, 2))
        assert price == pytest.approx(3.0, abs=1e-12)  # payoffs 2 and 1
        policy, mc, se = extract_and_value_policy(tree, table, gc(2, 2),
                                                  n_paths=100, seed=10)
        assert mc == pytest.approx(3.0, abs=1e-12)
        assert se == pytest.approx(0.0, abs=1e-12)
        # the deterministic trajectory buys exactly at dates 0 and 2
        assert policy.actions[(0, (2.0, 2.0))][0] == 1
        assert policy.actions[(1, (1.0, 1.0))][0] == 0
        assert policy.actions[(2, (1.0, 1.0))][0] == 1
        assert policy.actions[(3, (0.0, 0.0))][0] == 0
        assert policy.actions[(4, (0.0, 0.0))][0] == 0

    def test_actions_are_binary(self, small_tree):
        _, table = quantized_dp_price(small_tree, gc(3, 7))
        policy, _, _ = extract_and_value_policy(small_tree, table, gc(3, 7),
                                                n_paths=500, seed=12)
        for arr in policy.actions.values():
            assert set(np.unique(arr)).issubset({0, 1})

    def test_nonnegative_payoffs_saturate(self):
        params = make_params(n=8, strike=0.0)
        tree = build_tree(params, n_bar=10, n_samples=50_000, seed=13)
        _, table = quantized_dp_price(tree, gc(2, 5))
        policy, _, _ = extract_and_value_policy(tree, table, gc(2, 5),
                                                n_paths=2_000, seed=14)
        # replay to count purchases per path is internal; the valuation
        # asserts bounds, here we check saturation via the policy itself
        from swingquant.model import simulate_factor_paths, spot_and_payoff
        from swingquant.quantizer import nearest_indices
        paths = simulate_factor_paths(params, 2_000, seed=14)
        bought = np.zeros(2_000, dtype=int)
        for k in range(8):
            z = paths[:, k, :] * params.vols
            node = nearest_indices(z, tree.grids[k])
            acts = np.zeros(2_000, dtype=int)
            for purchased in np.unique(bought):
                key = (float(max(2 - purchased, 0)),
                       float(min(max(5 - purchased, 0), 8 - k)))
                mask = bought == purchased
                acts[mask] = policy.actions[(k, key)][node[mask]]
            bought += acts
        assert (bought == 5).all()

    def test_policy_value_bracketed_and_converging(self):
        params = make_params(n=8)
        errs = []
        for n_bar in (10, 50, 200):
            tree = build_tree(params, n_bar=n_bar, n_samples=200_000, seed=15,
                              max_fit_samples=30_000)
            price, table = quantized_dp_price(tree, gc(2, 6))
            policy, mc, se = extract_and_value_policy(
                tree, table, gc(2, 6), n_paths=40_000, seed=16
            )
            # feasible-strategy value cannot beat the true price; allow the
            # quantization bias of the DP price plus MC noise
            bias_budget = 0.25
            assert mc <= price + 3 * se + bias_budget
            errs.append(abs(mc - price))
        assert errs[2] < errs[0]


class TestPersistence:
    def test_round_trip(self, small_tree, tmp_path):
        save_tree(small_tree, tmp_path / "tree", {"seed": 2024})
        back, manifest = load_tree(tmp_path / "tree")
        assert manifest["seed"] == 2024
        assert manifest["transition_scheme"] == "joint-path-counting"
        assert back.n == small_tree.n
        for a, b in zip(back.grids, small_tree.grids):
            np.testing.assert_array_equal(a.points, b.points)
            np.testing.assert_allclose(a.weights, b.weights, atol=1e-15)
        for a, b in zip(back.transitions, small_tree.transitions):
            np.testing.assert_array_equal(a, b)
        p1, _ = quantized_dp_price(back, gc(2, 6))
        p2, _ = quantized_dp_price(small_tree, gc(2, 6))
        assert p1 == pytest.approx(p2, rel=1e-12)


class TestStripConvergence:
    def test_error_not_reduced_by_halving_grid(self):
        params = make_params(n=10)
        target = closed_form_strip(params)
        errs = {}
        for n_bar in (8, 16):
            tree = build_tree(params, n_bar=n_bar, n_samples=200_000, seed=17)
            surf = premium_surface(tree)
            errs[n_bar] = abs(surf.values[(0, 10)] - target)
        assert errs[8] >= errs[16] - 1e-3
