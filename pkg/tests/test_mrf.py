import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grapl.errors import FormatError
from grapl.imagegrid import Image, extract_patch_grid
from grapl.initializers import PatchLabeling
from grapl.mrf import (AffinityMetric, PairwiseGraph, UnaryCosts,
                       alpha_expansion, build_pairwise_graph,
                       compute_affinities, compute_sigma, energy, full_pairs,
                       lattice_pairs, load_gple, make_graph, save_gple,
                       unary_costs)

from conftest import random_image


def flat_color_image(colors, patch=6):
    """One flat-colored patch per entry of the colors grid."""
    colors = np.asarray(colors, dtype=np.float64)
    d = colors.shape[0]
    data = np.repeat(np.repeat(colors, patch, axis=0), patch, axis=1)
    return Image(data), d


def brute_force_energy_min(costs, p, q, w, k):
    n = costs.shape[0]
    best = np.inf
    for lab in itertools.product(range(1, k + 1), repeat=n):
        f = np.array(lab)
        e = costs[np.arange(n), f - 1].sum() + w[f[p] != f[q]].sum()
        best = min(best, e)
    return best


class TestAffinities:
    def test_identical_patches_zero(self):
        img, d = flat_color_image([[(0.3, 0.3, 0.3)] * 2] * 2)
        grid = extract_patch_grid(img, d)
        aff = compute_affinities(grid, AffinityMetric("mean_color"))
        assert np.allclose(aff, 0.0)

    def test_black_white_mean_color_sqrt3(self):
        img, d = flat_color_image([[(0, 0, 0), (1, 1, 1)]] * 2)
        grid = extract_patch_grid(img, d)
        aff = compute_affinities(grid, AffinityMetric("mean_color"))
        assert aff[0, 1] == pytest.approx(np.sqrt(3.0), abs=1e-12)
        assert aff[0, 2] == pytest.approx(0.0, abs=1e-12)

    def test_position_metric_equals_center_distance(self):
        grid = extract_patch_grid(random_image(30, 40), 4)
        aff = compute_affinities(grid, AffinityMetric("position"))
        delta = grid.centers[:, None, :] - grid.centers[None, :, :]
        dist = np.sqrt((delta ** 2).sum(axis=2))
        assert np.array_equal(aff, dist)

    def test_symmetric_zero_diagonal(self):
        grid = extract_patch_grid(random_image(30, 30, seed=4), 3)
        aff = compute_affinities(grid, AffinityMetric("mean_color"))
        assert np.array_equal(aff, aff.T)
        assert (np.diag(aff) == 0).all()

    def test_embedding_dimension_mismatch(self):
        grid = extract_patch_grid(random_image(30, 30), 3)
        with pytest.raises(ValueError):
            compute_affinities(
                grid, AffinityMetric("embedding", np.zeros((5, 4))))


class TestSigma:
    def test_all_equal_gives_zero(self):
        aff = np.full((4, 4), 2.0)
        np.fill_diagonal(aff, 0.0)
        assert compute_sigma(aff) == 0.0

    def test_three_patch_hand_value(self):
        # unordered pair affinities {0, 1, 2}: population std = sqrt(2/3)
        aff = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0], [1.0, 2.0, 0.0]])
        assert compute_sigma(aff) == pytest.approx(np.sqrt(2.0 / 3.0), abs=1e-12)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.random((12, 12))
        aff = (a + a.T) / 2
        np.fill_diagonal(aff, 0.0)
        iu = np.triu_indices(12, 1)
        vals = aff[iu]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert compute_sigma(aff) == pytest.approx(np.sqrt(var), abs=1e-9)

    def test_single_patch_rejected(self):
        with pytest.raises(ValueError):
            compute_sigma(np.zeros((1, 1)))


class TestPairwiseGraph:
    def test_adjacent_uniform_phi_is_inverse_width(self):
        # zero affinity, horizontal neighbors of 15px-wide patches
        img = random_image(20, 60)
        grid = extract_patch_grid(img, 4)  # patch 5x15
        aff = np.zeros((16, 16))
        g = build_pairwise_graph(grid, aff, sigma=1.0, lam=1.0, topology="lattice")
        horizontal = (g.q == g.p + 1)
        np.testing.assert_allclose(g.w[horizontal], 1.0 / 15.0)

    def test_kernel_at_aff_sq_two_sigma(self):
        img = random_image(30, 30)
        grid = extract_patch_grid(img, 3)
        sigma = 0.7
        aff = np.full((9, 9), np.sqrt(2 * sigma))
        np.fill_diagonal(aff, 0.0)
        g = build_pairwise_graph(grid, aff, sigma=sigma, lam=1.0, topology="full")
        delta = grid.centers[g.p] - grid.centers[g.q]
        dist = np.sqrt((delta ** 2).sum(axis=1))
        np.testing.assert_allclose(g.w, np.exp(-1.0) / dist)

    def test_lambda_zero_all_weights_zero(self):
        grid = extract_patch_grid(random_image(30, 30), 3)
        aff = compute_affinities(grid, AffinityMetric("mean_color"))
        g = build_pairwise_graph(grid, aff, sigma=1.0, lam=0.0)
        assert (g.w == 0).all()

    def test_edge_counts(self):
        grid = extract_patch_grid(random_image(40, 40), 4)
        aff = np.zeros((16, 16))
        full = build_pairwise_graph(grid, aff, 1.0, 1.0, topology="full")
        lat = build_pairwise_graph(grid, aff, 1.0, 1.0, topology="lattice")
        assert full.n_edges == 16 * 15 // 2
        assert lat.n_edges == 2 * 4 * 3
        assert not (full.p == full.q).any()

    def test_sigma_zero_rejected_for_nonuniform(self):
        grid = extract_patch_grid(random_image(30, 30), 3)
        with pytest.raises(ValueError):
            build_pairwise_graph(grid, np.zeros((9, 9)), sigma=0.0, lam=1.0)

    def test_make_graph_degenerate_sigma_falls_back(self, caplog):
        img, d = flat_color_image([[(0.5, 0.5, 0.5)] * 3] * 3)
        grid = extract_patch_grid(img, d)
        with caplog.at_level("WARNING", logger="grapl.mrf"):
            g = make_graph(grid, AffinityMetric("mean_color"), lam=2.0)
        assert "degenerate" in caplog.text
        delta = grid.centers[g.p] - grid.centers[g.q]
        dist = np.sqrt((delta ** 2).sum(axis=1))
        np.testing.assert_allclose(g.w, 2.0 / dist)

    def test_uniform_lattice_metric(self):
        grid = extract_patch_grid(random_image(30, 30, seed=2), 3)
        g = make_graph(grid, AffinityMetric("uniform_lattice"), lam=3.0)
        assert g.topology == "lattice"
        delta = grid.centers[g.p] - grid.centers[g.q]
        dist = np.sqrt((delta ** 2).sum(axis=1))
        np.testing.assert_allclose(g.w, 3.0 / dist)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(0.1, 4.0))
    def test_phi_decreasing_in_affinity(self, a1, a2, sigma):
        # fixed distance; larger affinity never increases the kernel
        lo, hi = sorted((a1, a2))
        k_lo = np.exp(-lo * lo / (2 * sigma))
        k_hi = np.exp(-hi * hi / (2 * sigma))
        assert k_hi <= k_lo


class TestUnaryCosts:
    def test_prob_one_costs_zero(self):
        u = unary_costs(np.array([[1.0, 0.0]]))
        assert u.costs[0, 0] == 0.0

    def test_prob_inv_e_costs_one(self):
        p = np.exp(-1.0)
        u = unary_costs(np.array([[p, 1.0 - p]]))
        assert u.costs[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_prob_zero_clamped(self):
        u = unary_costs(np.array([[0.0, 1.0]]))
        assert u.costs[0, 0] == pytest.approx(-np.log(1e-12), abs=1e-9)
        assert np.isfinite(u.costs).all()


class TestEnergy:
    def _graph(self, n, p, q, w):
        return PairwiseGraph(p=np.asarray(p, np.int32), q=np.asarray(q, np.int32),
                             w=np.asarray(w, float), sigma=1.0, lam=1.0,
                             topology="full", n_patches=n)

    def test_constant_labeling_no_pairwise(self):
        g = self._graph(3, [0, 0, 1], [1, 2, 2], [1.0, 2.0, 3.0])
        u = UnaryCosts(np.zeros((3, 2)))
        lab = PatchLabeling(np.array([1, 1, 1], np.int32), 2)
        total, un, pw = energy(lab, u, g)
        assert (total, un, pw) == (0.0, 0.0, 0.0)

    def test_single_cut_edge(self):
        g = self._graph(2, [0], [1], [3.0])
        u = UnaryCosts(np.zeros((2, 2)))
        lab = PatchLabeling(np.array([1, 2], np.int32), 2)
        assert energy(lab, u, g).total == 3.0

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(5)
        n, k = 4, 3
        costs = rng.random((n, k))
        p, q = full_pairs(n)
        w = rng.random(len(p))
        g = self._graph(n, p, q, w)
        u = UnaryCosts(costs)
        for lab in itertools.product(range(1, k + 1), repeat=n):
            f = np.array(lab)
            expect_u = sum(costs[i, f[i] - 1] for i in range(n))
            expect_p = sum(wi for pi, qi, wi in zip(p, q, w) if f[pi] != f[qi])
            got = energy(PatchLabeling(f.astype(np.int32), k), u, g)
            assert got.total == pytest.approx(expect_u + expect_p, abs=1e-12)
            assert got.total == pytest.approx(got.unary + got.pairwise, abs=1e-12)


class TestAlphaExpansion:
    def _random_instance(self, rng, n, k):
        costs = rng.uniform(0, 5, (n, k))
        p, q = full_pairs(n)
        w = rng.uniform(0, 2, len(p))
        w[rng.random(len(p)) < 0.3] = 0.0
        init = PatchLabeling(rng.integers(1, k + 1, n).astype(np.int32), k)
        graph = PairwiseGraph(p=p, q=q, w=w, sigma=1.0, lam=1.0,
                              topology="full", n_patches=n)
        return UnaryCosts(costs), graph, init

    def test_binary_reaches_global_minimum(self):
        rng = np.random.default_rng(17)
        for _ in range(40):
            n = int(rng.integers(2, 13))
            u, g, init = self._random_instance(rng, n, 2)
            out = alpha_expansion(u, g, init, 2)
            assert energy(out, u, g).total == brute_force_energy_min(
                u.costs, g.p, g.q, g.w, 2)

    def test_multilabel_within_factor_two_and_monotone(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            n = int(rng.integers(2, 9))
            k = int(rng.integers(3, 5))
            u, g, init = self._random_instance(rng, n, k)
            out = alpha_expansion(u, g, init, k)
            e_out = energy(out, u, g).total
            assert e_out <= energy(init, u, g).total + 1e-12
            assert e_out <= 2 * brute_force_energy_min(u.costs, g.p, g.q, g.w, k) + 1e-9

    def test_lambda_zero_returns_argmax(self):
        rng = np.random.default_rng(31)
        n, k = 20, 5
        probs = rng.dirichlet(np.ones(k), size=n)
        u = unary_costs(probs)
        p, q = full_pairs(n)
        g = PairwiseGraph(p=p, q=q, w=np.zeros(len(p)), sigma=1.0, lam=0.0,
                          topology="full", n_patches=n)
        init = PatchLabeling(rng.integers(1, k + 1, n).astype(np.int32), k)
        out = alpha_expansion(u, g, init, k)
        assert np.array_equal(out.labels, probs.argmax(axis=1) + 1)

    def test_zero_unaries_huge_weights_constant(self):
        n = 9
        p, q = full_pairs(n)
        g = PairwiseGraph(p=p, q=q, w=np.full(len(p), 100.0), sigma=1.0,
                          lam=1.0, topology="full", n_patches=n)
        u = UnaryCosts(np.zeros((n, 3)))
        init = PatchLabeling((np.arange(n) % 3 + 1).astype(np.int32), 3)
        out = alpha_expansion(u, g, init, 3)
        assert len(np.unique(out.labels)) == 1


class TestGple:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        vectors = rng.normal(size=(16, 6)).astype(np.float32)
        p = tmp_path / "emb.gple"
        save_gple(p, 4, vectors)
        d, back = load_gple(p, expected_d=4)
        assert d == 4
        np.testing.assert_allclose(back, vectors.astype(np.float64))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.gple"
        p.write_bytes(b"NOPE" + b"\0" * 28)
        with pytest.raises(FormatError, match="magic"):
            load_gple(p)

    def test_bad_version(self, tmp_path):
        import struct
        p = tmp_path / "v9.gple"
        p.write_bytes(struct.pack("<4sIII", b"GPLE", 9, 2, 2) + b"\0" * 64)
        with pytest.raises(FormatError, match="version"):
            load_gple(p)

    def test_grid_mismatch(self, tmp_path):
        p = tmp_path / "emb.gple"
        save_gple(p, 4, np.zeros((16, 3), np.float32))
        with pytest.raises(FormatError, match="grid side"):
            load_gple(p, expected_d=8)

    def test_truncated_payload(self, tmp_path):
        import struct
        p = tmp_path / "short.gple"
        p.write_bytes(struct.pack("<4sIII", b"GPLE", 1, 2, 3) + b"\0" * 10)
        with pytest.raises(FormatError, match="payload"):
            load_gple(p)
