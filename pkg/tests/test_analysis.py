import numpy as np
import pytest
from scipy import stats
from sklearn.mixture import GaussianMixture

from pfvae.analysis import (
    DensityGrid,
    LatentTable,
    bic,
    class_means,
    fit_gmm,
    gmm_parameter_count,
    high_density_regions,
    kde_grid,
    multimodality_score,
    pgm_bytes,
    read_latents,
    select_per_class,
    write_class_means,
    write_latents,
)


def blobs(rng, centres, n=150, sd=0.3):
    return np.vstack([rng.normal(c, sd, size=(n, 2)) for c in centres])


class TestGmm:
    def test_single_component_is_mle(self, rng):
        X = rng.multivariate_normal([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]], size=500)
        fit = fit_gmm(X, 1)
        cov = np.cov(X.T, bias=True)
        assert np.allclose(fit.means[0], X.mean(axis=0))
        assert np.allclose(fit.covs[0], cov, atol=1e-5)
        ref = stats.multivariate_normal(X.mean(axis=0), cov).logpdf(X).sum()
        assert fit.loglik == pytest.approx(ref, rel=1e-6)

    def test_matches_sklearn(self, rng):
        X = blobs(rng, [(0, 0), (4, 0), (0, 4)])
        ours = fit_gmm(X, 3, restarts=10)
        ref = GaussianMixture(3, covariance_type="full", n_init=10, tol=1e-10, max_iter=500,
                              reg_covar=1e-6, random_state=0).fit(X)
        assert ours.loglik == pytest.approx(ref.score(X) * X.shape[0], rel=1e-4)

    def test_bic_matches_sklearn(self, rng):
        X = blobs(rng, [(0, 0), (3, 3)])
        ref = GaussianMixture(2, covariance_type="full", n_init=5, tol=1e-10, max_iter=500,
                              random_state=0).fit(X)
        ours = fit_gmm(X, 2, restarts=5)
        assert bic(ours.loglik, 2, X.shape[0], 2) == pytest.approx(ref.bic(X), rel=1e-4)

    def test_parameter_count(self):
        assert gmm_parameter_count(1, 2) == 5
        assert gmm_parameter_count(10, 2) == 59
        assert gmm_parameter_count(3, 3) == 29

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError):
            fit_gmm(rng.normal(size=(5, 2)), 10)

    def test_deterministic(self, rng):
        X = blobs(rng, [(0, 0), (3, 0)], n=60)
        assert fit_gmm(X, 4, restarts=3, seed=1).loglik == fit_gmm(X, 4, restarts=3, seed=1).loglik


class TestMultimodality:
    def test_clustered_is_positive(self, rng):
        X = blobs(rng, [(np.cos(a) * 5, np.sin(a) * 5) for a in np.linspace(0, 2 * np.pi, 10, endpoint=False)],
                  n=100)
        assert multimodality_score(X, restarts=5) > 100

    def test_gaussian_is_negative(self, rng):
        X = rng.multivariate_normal([0, 0], [[1.0, 0.3], [0.3, 0.5]], size=1000)
        assert multimodality_score(X, restarts=5) < 0


class TestDensity:
    def test_matches_scipy_at_centres(self, rng):
        X = rng.normal(size=(200, 2))
        g = kde_grid(X, (-4, 4, -3, 3), 20)
        assert g.xs[0] == pytest.approx(-3.8) and g.ys[0] == pytest.approx(-2.85)
        ref = stats.gaussian_kde(X.T)([[g.xs[3]], [g.ys[7]]])[0]
        assert g.density[7, 3] == pytest.approx(ref)

    def test_mass(self, rng):
        g = kde_grid(rng.normal(size=(300, 2)), None, 100)
        assert np.all(g.density >= 0)
        assert 0.9 <= g.mass() <= 1.0 + 1e-9

    def test_rejects_non_2d(self, rng):
        with pytest.raises(ValueError):
            kde_grid(rng.normal(size=(50, 3)))

    def test_regions(self, rng):
        assert high_density_regions(kde_grid(rng.normal(size=(400, 2)))) == 1
        assert high_density_regions(kde_grid(blobs(rng, [(-5, 0), (5, 0), (0, 6)]))) == 3

    def test_pgm(self):
        d = np.array([[0.0, 1.0, 2.0], [4.0, 0.0, 0.0]])
        raw = pgm_bytes(DensityGrid(np.arange(3.0), np.arange(2.0), d))
        assert raw.startswith(b"P5\n3 2\n255\n")
        assert list(raw[-6:]) == [255, 0, 0, 0, 64, 128]


class TestLatentFiles:
    def test_select_per_class(self):
        labels = np.array([3, 1, 3, 3, 0, 1])
        assert list(select_per_class(labels, 2)) == [0, 1, 2, 4, 5]

    def test_round_trip_and_means(self, tmp_path, rng):
        n = 30
        z0 = rng.normal(size=(n, 2))
        t = LatentTable(np.arange(n), np.arange(n) % 10, z0, z0 + 1.0, rng.normal(size=n))
        write_latents(tmp_path / "l.csv", t)
        head = (tmp_path / "l.csv").read_text().splitlines()[0]
        assert head == "idx,label,z0_0,z0_1,zK_0,zK_1,sum_logdet"
        back = read_latents(tmp_path / "l.csv")
        assert np.array_equal(back.zK, t.zK) and np.array_equal(back.labels, t.labels)
        write_class_means(tmp_path / "m.csv", t)
        rows = np.loadtxt(tmp_path / "m.csv", delimiter=",", skiprows=1)
        for d, mean in class_means(t).items():
            assert np.allclose(rows[d, 2:], t.zK[t.labels == d].mean(axis=0))
            assert np.allclose(mean, rows[d, 2:])
