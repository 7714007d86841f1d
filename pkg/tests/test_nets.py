import numpy as np
import pytest

from pfvae import gradcore as gc
from pfvae.elbo import flow_elbo
from pfvae.nets import (
    GaussianLatent,
    MlpConfig,
    ModelConfig,
    VaeModel,
    decode,
    encode,
    forward_latents,
    init_weights,
    reparameterize,
)
from pfvae.flows import stack_forward

PAPER = ModelConfig()
SMALL = ModelConfig(input_dim=16, hidden_dims=(8, 8), latent_dim=2, flow_length=2)


def zero_weights(model):
    for p in model.parameters():
        if not p.name.startswith("flows"):
            p.value = np.zeros_like(p.value)


class TestInitWeights:
    cfg = MlpConfig(784, (10, 10), 2)

    def test_same_seed_identical(self):
        a, b = init_weights(self.cfg, 7), init_weights(self.cfg, 7)
        assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a, b))

    def test_bounds_and_zero_bias(self):
        for (W, b), (fi, fo) in zip(init_weights(self.cfg, 3), self.cfg.layer_dims):
            assert np.all(np.abs(W) <= np.sqrt(6 / (fi + fo)))
            assert not np.any(b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(init_weights(self.cfg, 1)[0][0], init_weights(self.cfg, 2)[0][0])

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            MlpConfig(4, (0,), 2)


class TestEncode:
    def test_paper_latent_dims(self, rng):
        model = VaeModel(PAPER, seed=0)
        lat = encode(model, rng.uniform(size=784))
        assert lat.mu.shape == (1, 2) and lat.logvar.shape == (1, 2)

    def test_paper_architecture(self):
        model = VaeModel(PAPER, seed=0)
        enc = [W.value.shape for W, _ in model.encoder.layers]
        dec = [W.value.shape for W, _ in model.decoder.layers]
        assert enc == [(784, 10), (10, 10), (10, 10), (10, 10)]
        assert dec == [(2, 10), (10, 10), (10, 10), (10, 10), (10, 784)]
        assert len(model.flows) == 4

    def test_deterministic(self, rng):
        model = VaeModel(SMALL, seed=0)
        x = rng.uniform(size=16)
        a, b = encode(model, x), encode(model, x)
        assert a.mu.value.tobytes() == b.mu.value.tobytes()
        assert a.logvar.value.tobytes() == b.logvar.value.tobytes()

    def test_zero_weights(self, rng):
        model = VaeModel(SMALL, seed=0)
        zero_weights(model)
        lat = encode(model, rng.uniform(size=16))
        assert not np.any(lat.mu.value) and not np.any(lat.logvar.value)

    def test_logvar_clamped(self, rng):
        model = VaeModel(SMALL, seed=0)
        model.logvar_head.layers[0][1].value = np.full((1, 2), 50.0)
        assert np.all(encode(model, rng.uniform(size=16)).logvar.value == 10.0)

    def test_shape_mismatch(self):
        with pytest.raises(gc.ShapeError):
            encode(VaeModel(SMALL, seed=0), np.zeros(15))

    def test_array_route_matches(self, rng):
        model = VaeModel(SMALL, seed=4)
        X = rng.uniform(size=(5, 16))
        mu, lv = model.encode_array(X)
        for i in range(5):
            lat = encode(model, X[i])
            np.testing.assert_allclose(mu[i], lat.mu.value[0], rtol=1e-13)
            np.testing.assert_allclose(lv[i], lat.logvar.value[0], rtol=1e-13)


class TestReparameterize:
    def test_eps_zero(self):
        lat = GaussianLatent(gc.constant([[0.3, -1.0]]), gc.constant([[0.5, 2.0]]))
        np.testing.assert_array_equal(reparameterize(lat, np.zeros(2)).value, [[0.3, -1.0]])

    def test_unit_variance(self):
        lat = GaussianLatent(gc.constant([[0.0, 0.0]]), gc.constant([[0.0, 0.0]]))
        np.testing.assert_array_equal(reparameterize(lat, [0.7, -0.2]).value, [[0.7, -0.2]])

    def test_grad_wrt_logvar(self, rng):
        mu = gc.Parameter("mu", rng.normal(size=(1, 2)))
        lv = gc.Parameter("lv", rng.normal(size=(1, 2)))
        eps = rng.normal(size=2)
        err = gc.finite_diff_check(
            lambda: gc.sum(gc.square(reparameterize(GaussianLatent(mu, lv), eps))), [mu, lv])
        assert err < 1e-5

    def test_sample_moments(self, rng):
        mu, lv = np.array([0.5, -1.0]), np.array([0.3, -0.7])
        n = 100_000
        z = mu + rng.standard_normal((n, 2)) * np.exp(0.5 * lv)
        var = np.exp(lv)
        assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * np.sqrt(var / n))
        # sd of the sample variance of a normal is var * sqrt(2 / (n - 1))
        assert np.all(np.abs(z.var(axis=0, ddof=1) - var) < 3 * var * np.sqrt(2 / (n - 1)))
        lat = GaussianLatent(gc.constant(mu[None]), gc.constant(lv[None]))
        e = rng.standard_normal(2)
        np.testing.assert_allclose(reparameterize(lat, e).value[0], mu + e * np.exp(0.5 * lv))


class TestDecode:
    def test_range(self, rng):
        model = VaeModel(SMALL, seed=0)
        for _ in range(20):
            out = decode(model, rng.normal(0, 5, size=2)).value
            assert np.all((out > 0) & (out < 1))

    def test_zero_weights_half(self):
        model = VaeModel(SMALL, seed=0)
        zero_weights(model)
        np.testing.assert_array_equal(decode(model, np.array([1.0, -3.0])).value, np.full((1, 16), 0.5))

    def test_deterministic(self):
        model = VaeModel(SMALL, seed=0)
        z = np.array([0.2, 0.1])
        assert decode(model, z).value.tobytes() == decode(model, z).value.tobytes()

    def test_array_route_matches(self, rng):
        model = VaeModel(SMALL, seed=1)
        Z = rng.normal(size=(4, 2))
        out = model.decode_array(Z)
        for i in range(4):
            np.testing.assert_allclose(out[i], decode(model, Z[i]).value[0], rtol=1e-13)


@pytest.mark.parametrize("cfg", [
    ModelConfig(9, (5,), 3, 3), ModelConfig(16, (8, 8), 2, 0), ModelConfig(4, (), 1, 2), PAPER,
])
def test_end_to_end_shapes(cfg, rng):
    model = VaeModel(cfg, seed=0)
    lat = encode(model, rng.uniform(size=cfg.input_dim))
    z0 = reparameterize(lat, rng.standard_normal(cfg.latent_dim))
    x_hat = decode(model, stack_forward(model.flows, z0).zK).value
    assert x_hat.shape == (1, cfg.input_dim)
    assert np.all((x_hat > 0) & (x_hat < 1))


def test_forward_latents_matches_graph(rng):
    model = VaeModel(SMALL, seed=2)
    for p in model.flows.parameters():
        p.value = rng.normal(size=p.value.shape)
    X, E = rng.uniform(size=(3, 16)), rng.standard_normal((3, 2))
    _, _, z0, zK, sld = forward_latents(model, X, E)
    for i in range(3):
        lat = encode(model, X[i])
        g0 = reparameterize(lat, E[i])
        res = stack_forward(model.flows, g0)
        np.testing.assert_allclose(z0[i], g0.value[0], rtol=1e-12)
        np.testing.assert_allclose(zK[i], res.zK.value[0], rtol=1e-12)
        assert sld[i] == pytest.approx(float(res.sum_logdet.value), rel=1e-10, abs=1e-14)


def test_same_seed_bit_identical_forward(rng):
    x, e = rng.uniform(size=16), rng.standard_normal(2)
    a = flow_elbo(VaeModel(SMALL, seed=9), x, e).values()
    b = flow_elbo(VaeModel(SMALL, seed=9), x, e).values()
    assert a == b
