import numpy as np
import pytest

from uqdvr import density, volcore
from uqdvr.density import (
    KdeConfig,
    build_distribution_volume,
    downsample_hixel,
    estimate_quantiles,
    fit_gaussian,
    fit_gmm_em,
    fit_mean,
    fit_uniform,
    kde_cdf,
    quantile_volumes_multi,
    silverman_bandwidth,
)
from uqdvr.volcore import EnsembleVolume, QuantileModel, ScalarGrid, VolumeError, voxel_pdf


def make_ensemble(values_per_member, dims):
    members = [ScalarGrid(dims, (1, 1, 1), (0, 0, 0), v) for v in values_per_member]
    return EnsembleVolume(tuple(members))


class TestEstimateQuantiles:
    def test_constant_samples_collapse(self):
        pdf = estimate_quantiles(np.full(20, 3.5), 0.25)
        assert np.all(pdf.boundaries == 3.5)

    def test_octile_count(self):
        pdf = estimate_quantiles(np.random.default_rng(0).normal(size=100), 0.125)
        assert pdf.q == 8
        assert pdf.boundaries.size == 9

    def test_uniform_law_of_large_numbers(self):
        rng = np.random.default_rng(42)
        s = rng.random(10**6)
        pdf = estimate_quantiles(s, 0.25)
        # Interior boundaries converge to the analytic quantiles; the two
        # outermost sit at the lattice edges, 3 bandwidths past the data.
        np.testing.assert_allclose(pdf.boundaries[1:-1], [0.25, 0.5, 0.75], atol=0.01)
        pad = 3 * silverman_bandwidth(s) + 0.01
        assert abs(pdf.boundaries[0] - 0.0) < pad
        assert abs(pdf.boundaries[-1] - 1.0) < pad

    def test_rejects_bad_inputs(self):
        with pytest.raises(VolumeError):
            estimate_quantiles([1.0], 0.5)
        with pytest.raises(VolumeError):
            estimate_quantiles([1.0, 2.0], 0.3)

    def test_monotone_boundaries_for_any_input(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            n = int(rng.integers(2, 200))
            s = rng.normal(rng.uniform(-5, 5), rng.uniform(0.01, 3), n)
            pdf = estimate_quantiles(s, 0.125)
            assert np.all(np.diff(pdf.boundaries) >= 0)

    def test_piecewise_cdf_matches_kde_cdf_at_boundaries(self):
        rng = np.random.default_rng(8)
        s = np.concatenate([rng.normal(0, 1, 400), rng.normal(4, 0.5, 200)])
        cfg = KdeConfig()
        pdf = estimate_quantiles(s, 0.125, cfg)
        x, cdf = kde_cdf(s, cfg)
        masses = np.arange(pdf.q + 1) * pdf.qval
        at_boundaries = np.interp(pdf.boundaries, x, cdf)
        np.testing.assert_allclose(at_boundaries, masses, atol=1e-9)

    def test_binned_path_agrees_with_exact_path(self):
        rng = np.random.default_rng(10)
        s = rng.normal(1.0, 0.3, 5000)  # just over the binned threshold
        exact = density._batch_quantiles(s[None, :4000], 0.125, KdeConfig())[0]
        binned = estimate_quantiles(s, 0.125).boundaries
        np.testing.assert_allclose(exact[1:-1], binned[1:-1], atol=0.02)

    def test_wasserstein_shrinks_with_sample_count(self):
        rng = np.random.default_rng(12)
        masses = np.arange(9) / 8
        u = np.linspace(0, 1, 2001)

        def w1(pdf):
            est = np.interp(u, masses, pdf.boundaries)
            return np.mean(np.abs(est - u))

        dists = []
        for n in (10**2, 10**4, 10**6):
            pdf = estimate_quantiles(rng.random(n), 0.125)
            dists.append(w1(pdf))
        assert dists[0] > dists[1] > dists[2]


class TestMomentFits:
    def test_constant_data(self):
        assert fit_mean([1, 1, 1]) == 1.0
        assert fit_uniform([1, 1, 1]) == (1.0, 0.0)
        assert fit_gaussian([1, 1, 1]) == (1.0, 0.0)

    def test_two_point_range(self):
        assert fit_uniform([0.0, 1.0]) == (0.5, 1.0)

    def test_gaussian_consistency(self):
        rng = np.random.default_rng(77)
        s = rng.normal(2.0, 0.5, 10**5)
        mu, sg = fit_gaussian(s)
        assert abs(mu - 2.0) < 0.01
        assert abs(sg - 0.5) < 0.01

    def test_empty_rejected(self):
        for f in (fit_mean, fit_uniform, fit_gaussian):
            with pytest.raises(VolumeError):
                f([])


class TestGmmEm:
    def test_k1_matches_fit_gaussian(self):
        rng = np.random.default_rng(3)
        s = rng.normal(size=500)
        g = fit_gmm_em(s, 1)
        mu, sg = fit_gaussian(s)
        assert abs(g.means[0] - mu) < 1e-9
        assert abs(g.sigmas[0] - sg) < 1e-9
        assert g.weights[0] == 1.0

    def test_two_separated_clusters(self):
        rng = np.random.default_rng(4)
        a = rng.normal(0.0, 0.3, 400)
        b = rng.normal(10.0, 0.3, 400)
        s = np.concatenate([a, b])
        g = fit_gmm_em(s, 2).sorted_by_mean()
        np.testing.assert_allclose(g.means, [a.mean(), b.mean()], atol=0.1)
        np.testing.assert_allclose(g.weights, [0.5, 0.5], atol=0.05)

    def test_identical_samples_no_nan(self):
        g = fit_gmm_em(np.full(10, 2.0), 2)
        assert np.all(np.isfinite(g.means))
        assert np.all(np.isfinite(g.sigmas))
        assert np.all(g.sigmas <= 1e-10)

    def test_log_likelihood_nondecreasing(self):
        rng = np.random.default_rng(6)
        s = np.concatenate([rng.normal(-1, 0.5, 300), rng.normal(2, 0.8, 300)])
        trace = []
        fit_gmm_em(s, 3, trace=trace)
        assert len(trace) >= 2
        assert np.all(np.diff(trace) >= -1e-12)

    def test_k_larger_than_sample_count(self):
        with pytest.raises(VolumeError):
            fit_gmm_em([1.0, 2.0], 3)


class TestBuildVolume:
    def test_zero_noise_quantile_volume(self):
        dims = (3, 3, 3)
        gt = np.random.default_rng(1).random(27)
        ens = make_ensemble([gt] * 5, dims)
        vol = build_distribution_volume(ens, "quantile", qval=0.25)
        np.testing.assert_array_equal(vol.model.boundaries, np.tile(gt[:, None], (1, 5)))

    def test_m50_octile_volume_round_trips(self, tmp_path):
        rng = np.random.default_rng(2)
        dims = (4, 4, 4)
        members = [rng.normal(0.5, 0.1, 64) for _ in range(50)]
        ens = make_ensemble(members, dims)
        vol = build_distribution_volume(ens, "quantile", qval=0.125)
        assert vol.model.boundaries.shape == (64, 9)
        p = tmp_path / "v.qvol"
        volcore.save_qvol(vol, p)
        back = volcore.load_qvol(p)  # validates all invariants on load
        assert back.model.q == 8

    def test_determinism(self):
        rng = np.random.default_rng(3)
        dims = (3, 2, 2)
        members = [rng.normal(0, 1, 12) for _ in range(20)]
        ens = make_ensemble(members, dims)
        a = build_distribution_volume(ens, "quantile", qval=0.25, seed=9)
        b = build_distribution_volume(ens, "quantile", qval=0.25, seed=9)
        assert np.array_equal(a.model.boundaries, b.model.boundaries)
        ga = build_distribution_volume(ens, "gmm", k=2, seed=9)
        gb = build_distribution_volume(ens, "gmm", k=2, seed=9)
        assert np.array_equal(ga.model.means, gb.model.means)

    def test_thread_count_does_not_change_results(self):
        rng = np.random.default_rng(13)
        dims = (4, 3, 2)
        members = [rng.normal(0, 1, 24) for _ in range(16)]
        ens = make_ensemble(members, dims)
        a = build_distribution_volume(ens, "quantile", qval=0.25, threads=1)
        b = build_distribution_volume(ens, "quantile", qval=0.25, threads=4)
        assert np.array_equal(a.model.boundaries, b.model.boundaries)

    def test_parametric_fits_match_scalar_helpers(self):
        rng = np.random.default_rng(4)
        members = [rng.normal(0, 1, 8) for _ in range(10)]
        ens = make_ensemble(members, (2, 2, 2))
        stacked = ens.stacked()
        g = build_distribution_volume(ens, "gaussian")
        u = build_distribution_volume(ens, "uniform")
        m = build_distribution_volume(ens, "mean")
        for vox in range(8):
            mu, sg = fit_gaussian(stacked[vox])
            assert abs(g.model.mean[vox] - mu) < 1e-12
            assert abs(g.model.sigma[vox] - sg) < 1e-12
            c, w = fit_uniform(stacked[vox])
            assert abs(u.model.center[vox] - c) < 1e-12
            assert abs(u.model.width[vox] - w) < 1e-12
            assert abs(m.model.values[vox] - fit_mean(stacked[vox])) < 1e-12

    def test_multi_qval_matches_single(self):
        rng = np.random.default_rng(5)
        members = [rng.normal(0, 1, 8) for _ in range(25)]
        ens = make_ensemble(members, (2, 2, 2))
        multi = quantile_volumes_multi(ens, [0.5, 0.125])
        single = build_distribution_volume(ens, "quantile", qval=0.125)
        np.testing.assert_allclose(
            multi[0.125].model.boundaries, single.model.boundaries, atol=1e-12
        )

    def test_mean_only_allows_single_member(self):
        ens = make_ensemble([np.zeros(8)], (2, 2, 2))
        build_distribution_volume(ens, "mean")
        with pytest.raises(VolumeError):
            build_distribution_volume(ens, "quantile", qval=0.5)


class TestHixel:
    def test_constant_volume(self):
        hi = ScalarGrid((8, 8, 8), (1, 1, 1), (0, 0, 0), np.full(512, 0.4))
        vol, mean = downsample_hixel(hi, (2, 2, 2), "quantile", qval=0.25)
        assert mean.dims == (4, 4, 4)
        assert np.all(mean.values == 0.4)
        assert np.all(vol.model.boundaries == 0.4)

    def test_hand_computed_empirical_quartiles(self):
        hi = ScalarGrid((4, 1, 1), (1, 1, 1), (0, 0, 0), [0.0, 1.0, 2.0, 3.0])
        vol, mean = downsample_hixel(hi, (4, 1, 1), "samples")
        pdf = voxel_pdf(vol, (0, 0, 0), qval=0.25)
        np.testing.assert_allclose(pdf.boundaries, [0.0, 0.75, 1.5, 2.25, 3.0])
        assert mean.values[0] == 1.5

    def test_brick_sample_gathering_order(self):
        # Values equal to their x index: every 2x2x2 brick collects its own x pair.
        nx, ny, nz = 4, 2, 2
        vals = np.array([x for z in range(nz) for y in range(ny) for x in range(nx)], float)
        hi = ScalarGrid((nx, ny, nz), (1, 1, 1), (0, 0, 0), vals)
        vol, mean = downsample_hixel(hi, (2, 2, 2), "uniform")
        np.testing.assert_allclose(mean.values, [0.5, 2.5])
        np.testing.assert_allclose(vol.model.center, [0.5, 2.5])
        np.testing.assert_allclose(vol.model.width, [1.0, 1.0])

    def test_indivisible_dims_rejected(self):
        hi = ScalarGrid((5, 4, 4), (1, 1, 1), (0, 0, 0), np.zeros(80))
        with pytest.raises(VolumeError):
            downsample_hixel(hi, (2, 2, 2), "mean")

    def test_low_res_geometry(self):
        hi = ScalarGrid((8, 8, 8), (0.5, 1.0, 2.0), (1, 2, 3), np.zeros(512))
        vol, mean = downsample_hixel(hi, (4, 4, 4), "mean")
        assert vol.dims == (2, 2, 2)
        assert vol.spacing == (2.0, 4.0, 8.0)
        assert vol.origin == (1 + 0.75, 2 + 1.5, 3 + 3.0)


class TestKdeConfig:
    def test_validation(self):
        with pytest.raises(VolumeError):
            KdeConfig(bandwidth=-1.0)
        with pytest.raises(VolumeError):
            KdeConfig(lattice=32)

    def test_explicit_bandwidth_used(self):
        s = np.array([0.0, 1.0])
        x, _ = kde_cdf(s, KdeConfig(bandwidth=0.5))
        assert abs(x[0] - (0.0 - 1.5)) < 1e-12
        assert abs(x[-1] - (1.0 + 1.5)) < 1e-12
