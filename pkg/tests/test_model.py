import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bilinear_reference, cola_reference
from wavefront.diffcore import (Parameter, ShapeError, Tensor, finite_diff_gradient, gradient, ops,
                                relative_error)
from wavefront.frontend import make_frontend
from wavefront.model import (Backbone, EncoderConfig, bilinear_similarity, classify, cola_loss,
                             contrastive_loss, encode, identification_accuracy, init_bilinear,
                             init_classifier, init_encoder, init_projection, project)

SMALL = EncoderConfig(channels=(2, 3), embed_dim=8)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestEncoder:
    def test_zero_map_gives_bias(self, rng):
        params = init_encoder(EncoderConfig(), rng)
        params["encoder.fc.bias"].value.data = rng.normal(size=128)
        h = encode(np.zeros((96, 64)), params, EncoderConfig()).data
        np.testing.assert_array_equal(h, params["encoder.fc.bias"].data)

    def test_batch_permutation(self, rng):
        params = init_encoder(SMALL, rng)
        x = rng.normal(size=(5, 12, 10))
        perm = rng.permutation(5)
        np.testing.assert_allclose(encode(x[perm], params, SMALL).data, encode(x, params, SMALL).data[perm],
                                   rtol=1e-12, atol=1e-14)

    def test_receptive_floor(self, rng):
        params = init_encoder(EncoderConfig(), rng)
        with pytest.raises(ShapeError):
            encode(np.zeros((15, 64)), params, EncoderConfig())

    def test_embed_dim_floor(self):
        with pytest.raises(ValueError):
            EncoderConfig(embed_dim=4)

    def test_gradient_first_conv(self, rng):
        params = init_encoder(SMALL, rng)
        x = rng.normal(size=(2, 8, 8))
        sub = {"encoder.conv0.weight": params["encoder.conv0.weight"]}

        def program(inputs, _):
            return ops.sum(encode(inputs, params, SMALL))

        exact = gradient(program, x, sub)
        approx = finite_diff_gradient(program, x, sub)
        assert relative_error(exact["encoder.conv0.weight"], approx["encoder.conv0.weight"]) <= 1e-3

    def test_backbone_output(self, rng):
        front = make_frontend("melfbank")
        cfg = EncoderConfig(channels=(4, 4), embed_dim=16)
        bb = Backbone(front, cfg, init_encoder(cfg, rng))
        assert bb(np.zeros((2, 1600))).shape == (2, 16)
        assert set(bb.params) == set(bb.encoder_params)


class TestProjection:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_output_range(self, seed):
        r = np.random.default_rng(seed)
        params = init_projection(16, 12, r)
        z = project(r.normal(scale=50.0, size=(4, 16)), params).data
        assert np.max(np.abs(z)) < 1.0

    def test_layernorm_standardizes(self, rng):
        params = init_projection(16, 12, rng)
        pre = rng.normal(size=(3, 16)) @ params["head.proj.weight"].data
        z = project(rng.normal(size=(3, 16)), params).data
        assert z.shape == (3, 12)
        ln = ops.layer_norm(pre, np.ones(12), np.zeros(12)).data
        np.testing.assert_allclose(ln.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(ln.var(axis=1), 1.0, rtol=1e-3)

    def test_deterministic(self):
        h = np.linspace(-1, 1, 16)
        a = project(h, init_projection(16, 8, np.random.default_rng(4))).data
        b = project(h, init_projection(16, 8, np.random.default_rng(4))).data
        np.testing.assert_array_equal(a, b)


class TestBilinear:
    def test_identity_examples(self):
        e1, e2 = np.eye(4)[0], np.eye(4)[1]
        assert bilinear_similarity(e1, e1, np.eye(4)).item() == 1.0
        assert bilinear_similarity(e1, e2, np.eye(4)).item() == 0.0

    def test_matches_double_loop(self, rng):
        z, zp, w = rng.normal(size=4), rng.normal(size=4), rng.normal(size=(4, 4))
        assert bilinear_similarity(z, zp, w).item() == pytest.approx(bilinear_reference(z, w, zp), rel=1e-12)

    def test_batch_matrix(self, rng):
        za, zp, w = rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), rng.normal(size=(5, 5))
        s = bilinear_similarity(za, zp, w).data
        for i in range(3):
            for j in range(3):
                assert s[i, j] == pytest.approx(bilinear_reference(za[i], w, zp[j]), rel=1e-12)

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            bilinear_similarity(np.ones(3), np.ones(4), np.eye(4))

    def test_init_square(self, rng):
        assert init_bilinear(7, rng)["head.bilinear"].shape == (7, 7)


class TestColaLoss:
    @pytest.mark.parametrize("batch", [2, 8, 64])
    def test_identical_embeddings(self, rng, batch):
        z = np.tile(rng.normal(size=6), (batch, 1))
        loss = cola_loss(z, z, rng.normal(size=(6, 6))).item()
        assert abs(loss - np.log(batch)) <= 1e-12

    def test_single_item(self, rng):
        z = rng.normal(size=(1, 6))
        assert cola_loss(z, z, rng.normal(size=(6, 6))).item() == 0.0

    def test_matches_loop(self, rng):
        za, zp, w = rng.normal(size=(4, 5)), rng.normal(size=(4, 5)), rng.normal(size=(5, 5))
        assert cola_loss(za, zp, w).item() == pytest.approx(cola_reference(za, zp, w), rel=1e-12)

    def test_shift_invariance(self, rng):
        s = rng.normal(size=(6, 6))
        base = contrastive_loss(s).item()
        for c in (-3.0, 0.5, 40.0):
            assert abs(contrastive_loss(s + c).item() - base) <= 1e-9

    def test_bounds(self, rng):
        s = rng.normal(size=(8, 8))
        loss = contrastive_loss(s).item()
        assert loss >= 0.0
        assert contrastive_loss(np.zeros((8, 8))).item() == pytest.approx(np.log(8))

    def test_empty_batch(self):
        with pytest.raises(ShapeError):
            cola_loss(np.zeros((0, 4)), np.zeros((0, 4)), np.eye(4))

    def test_gradient(self, rng):
        params = {"w": Parameter("w", rng.normal(size=(3, 3)))}
        za, zp = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))

        def program(_, p):
            return cola_loss(za, zp, p["w"].value)

        assert relative_error(gradient(program, None, params)["w"],
                              finite_diff_gradient(program, None, params)["w"]) <= 1e-3

    def test_identification_accuracy(self):
        s = np.array([[3.0, 1.0, 0.0], [0.0, 2.0, 5.0], [1.0, 0.0, 4.0]])
        assert identification_accuracy(s) == pytest.approx(2 / 3)


class TestClassifier:
    def test_zero_weights_give_bias(self, rng):
        head = init_classifier(8, 3, rng)
        head["head.cls.weight"].value.data = np.zeros((8, 3))
        head["head.cls.bias"].value.data = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(classify(rng.normal(size=(4, 8)), head).data, np.tile([1.0, -2.0, 0.5], (4, 1)))

    def test_confident_logits_loss_vanishes(self):
        logits = np.array([[200.0, 0.0], [0.0, 200.0]])
        assert ops.softmax_cross_entropy(logits, np.array([0, 1])).item() < 1e-80

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            classify(np.zeros((2, 5)), init_classifier(8, 3, rng))

    def test_gradient(self, rng):
        head = init_classifier(6, 3, rng)
        h, y = rng.normal(size=(5, 6)), np.array([0, 1, 2, 1, 0])

        def program(_, p):
            return ops.softmax_cross_entropy(classify(h, p), y)

        exact, approx = gradient(program, None, head), finite_diff_gradient(program, None, head)
        for name in head:
            assert relative_error(exact[name], approx[name]) <= 1e-3
