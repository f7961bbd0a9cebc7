import numpy as np
import pytest

from oracles import ema_reference, pcen_reference
from wavefront import filterbank as fb
from wavefront import frontend as fe
from wavefront.diffcore import Parameter, finite_diff_gradient, gradient, ops, relative_error

FS = 16000


def tone(hz, n=16000, phase=0.0):
    return np.sin(2 * np.pi * hz * np.arange(n) / FS + phase)


class TestLogMel:
    def test_silence(self):
        out = fe.log_mel_forward(np.zeros(4000)).data
        np.testing.assert_allclose(out, np.log(1e-6))

    def test_shape(self):
        assert fe.log_mel_forward(np.zeros(16000)).shape == (100, 64)

    def test_tone_argmax_channel(self):
        out = fe.log_mel_forward(0.5 * tone(1000.0)).data
        centres = fb.mel_points(66)[1:-1]
        expected = int(np.argmin(np.abs(centres - 1000.0)))
        assert int(np.argmax(out[10:-10].mean(axis=0))) == expected

    def test_too_short(self):
        with pytest.raises(ValueError):
            fe.log_mel_forward(np.zeros(399))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 2000))
        batched = fe.log_mel_forward(x).data
        for b in range(3):
            np.testing.assert_allclose(batched[b], fe.log_mel_forward(x[b]).data)


class TestSincNet:
    params = fb.init_params("mel", "sinc", 64)

    def test_zero_in_zero_out(self):
        np.testing.assert_array_equal(fe.sincnet_forward(np.zeros(3200), self.params).data, 0.0)

    def test_positive_homogeneity(self):
        x = np.random.default_rng(1).normal(size=3200)
        a = fe.sincnet_forward(x, self.params).data
        b = fe.sincnet_forward(2.5 * x, self.params).data
        np.testing.assert_allclose(b, 2.5 * a, rtol=1e-10, atol=1e-12)

    def test_tone_excites_containing_band(self):
        out = fe.sincnet_forward(tone(2000.0), self.params).data
        winner = int(np.argmax(out[10:-10].mean(axis=0)))
        assert self.params.f1s[winner] * FS <= 2000.0 <= self.params.f2s[winner] * FS

    def test_shape(self):
        assert fe.sincnet_forward(np.zeros(15360), self.params).shape == (96, 64)

    def test_constraint_violation(self):
        bad = fb.SincParams(np.array([0.3]), np.array([0.2]))
        with pytest.raises(ValueError):
            fe.sincnet_forward(np.zeros(800), bad)


class TestGaussianPool:
    def test_constant_preserved(self):
        x = np.full((1, 3, 2000), 1.7)
        out = fe.gaussian_lowpass_pool(x, fe.PoolParams(np.array([5.0, 40.0, 200.0]))).data
        np.testing.assert_allclose(out, 1.7, rtol=1e-12)

    def test_impulse_gives_sampled_gaussian(self):
        x = np.zeros((1, 1, 1001))
        x[0, 0, 500] = 1.0
        width = 12.0
        out = fe.gaussian_lowpass_pool(x, fe.PoolParams(np.array([width]), stride=1)).data[0, 0]
        t = np.arange(-200, 201)
        g = np.exp(-t**2 / (2 * width**2))
        np.testing.assert_allclose(out[300:701], g[::-1] / g.sum(), atol=1e-15)

    def test_wider_is_smoother(self):
        x = np.random.default_rng(2).normal(size=(1, 1, 8000)) ** 2
        tv = []
        for w in (20.0, 40.0):
            out = fe.gaussian_lowpass_pool(x, fe.PoolParams(np.array([w]), stride=1)).data[0, 0]
            tv.append(np.abs(np.diff(out)).sum())
        assert tv[1] < tv[0]

    def test_stride_frame_count(self):
        x = np.ones((2, 4, 15360))
        assert fe.gaussian_lowpass_pool(x, fe.PoolParams.default(4)).shape == (2, 4, 96)


class TestPcen:
    def test_ema_examples(self):
        rng = np.random.default_rng(3)
        e = rng.uniform(0, 2, size=(12, 4))
        np.testing.assert_array_equal(fe.pcen_ema(e, np.ones(4)).data, e)
        np.testing.assert_array_equal(fe.pcen_ema(e, np.zeros(4)).data, np.broadcast_to(e[0], e.shape))
        np.testing.assert_allclose(fe.pcen_ema(np.full((9, 4), 0.3), rng.uniform(size=4)).data, 0.3,
                                   rtol=1e-15)

    def test_ema_matches_loop(self):
        rng = np.random.default_rng(4)
        e, s = rng.uniform(size=(20, 5)), rng.uniform(size=5)
        np.testing.assert_allclose(fe.pcen_ema(e, s).data, ema_reference(e, s), rtol=1e-13)

    def test_identity_settings(self):
        e = np.random.default_rng(5).uniform(size=(10, 8))
        p = fe.PcenParams(alpha=np.zeros(8), delta=np.zeros(8), r=np.ones(8), s=np.full(8, 0.3))
        np.testing.assert_allclose(fe.pcen_forward(e, p).data, e, atol=1e-12)

    def test_zero_map(self):
        out = fe.pcen_forward(np.zeros((6, 4)), fe.PcenParams.default(4)).data
        np.testing.assert_array_equal(out, 0.0)

    def test_small_map_matches_loop(self):
        e = np.random.default_rng(6).uniform(size=(3, 2))
        p = fe.PcenParams(alpha=np.full(2, 0.98), delta=np.full(2, 2.0), r=np.full(2, 0.5), s=np.full(2, 0.5))
        ref = pcen_reference(e, p.alpha, p.delta, p.r, p.s)
        np.testing.assert_allclose(fe.pcen_forward(e, p).data, ref, rtol=1e-12)

    def test_negative_input(self):
        with pytest.raises(ValueError):
            fe.pcen_forward(-np.ones((2, 2)), fe.PcenParams.default(2))

    def test_monotone_in_last_cell(self):
        rng = np.random.default_rng(7)
        e = rng.uniform(size=(8, 3))
        p = fe.PcenParams(alpha=np.full(3, 0.9), delta=np.full(3, 2.0), r=np.full(3, 0.5), s=np.full(3, 0.2))
        values = []
        for v in np.linspace(0, 5, 30):
            e[-1, 1] = v
            values.append(fe.pcen_forward(e, p).data[-1, 1])
        assert np.all(np.diff(values) >= 0)


class TestLeaf:
    gabor = fb.init_params("mel", "gabor", 64)
    pool = fe.PoolParams.default(64)
    pcen = fe.PcenParams.default(64)

    def test_zero_in_zero_out(self):
        out = fe.leaf_forward(np.zeros(3200), self.gabor, self.pool, self.pcen).data
        np.testing.assert_array_equal(out, 0.0)

    def test_shape_960ms(self):
        assert fe.leaf_forward(np.zeros(15360), self.gabor, self.pool, self.pcen).shape == (96, 64)

    @pytest.mark.parametrize("channel", [10, 30, 50])
    def test_tone_at_centre_wins(self, channel):
        hz = self.gabor.etas[channel] * FS
        energy = fe.leaf_forward(tone(hz, 8000), self.gabor, self.pool, None).data
        assert int(np.argmax(energy[10:-10].mean(axis=0))) == channel

    def test_phase_invariance(self):
        rng = np.random.default_rng(8)
        runs = [fe.leaf_forward(tone(1000.0, 6400, phase), self.gabor, self.pool, None).data[5:-5]
                for phase in rng.uniform(0, 2 * np.pi, 8)]
        ref = runs[0]
        active = ref > 1e-3 * ref.max()
        for run in runs[1:]:
            assert np.max(np.abs(run - ref)[active] / ref[active]) <= 1e-2


class TestFrontendObjects:
    @pytest.mark.parametrize("n", [400, 8000, 15360, 16001])
    def test_all_frontends_share_shape(self, n):
        x = np.random.default_rng(9).normal(size=n) * 0.1
        shapes = {kind: fe.make_frontend(kind)(x).shape for kind in fe.FRONTENDS}
        assert len(set(shapes.values())) == 1
        assert shapes["leaf"] == (fe.num_frames(n), 64)

    def test_melfbank_requires_mel_init(self):
        with pytest.raises(ValueError):
            fe.make_frontend("melfbank", "uniform")

    def test_fixed_pcen_not_trainable(self):
        frozen = fe.make_frontend("leaf-fixed-pcen")
        learned = fe.make_frontend("leaf")
        for name in ("alpha", "delta", "r", "s"):
            assert not frozen.params[f"frontend.pcen.{name}"].trainable
            assert learned.params[f"frontend.pcen.{name}"].trainable
        assert frozen.params["frontend.gabor.eta"].trainable

    def test_sinc_band_projection(self):
        f = fe.make_frontend("sincnet", n_filters=3)
        band = f.params["frontend.sinc.band"]
        band.value.data = np.array([[0.3, 0.2], [-0.1, 0.7], [0.25, 0.25]])
        band.project()
        lo, hi = band.data[:, 0], band.data[:, 1]
        assert np.all(lo >= 0) and np.all(hi <= 0.5) and np.all(hi - lo >= fe.SINC_MIN_GAP - 1e-15)
        np.testing.assert_allclose(band.data[0], [0.2, 0.3])

    def test_gabor_boxes(self):
        f = fe.make_frontend("leaf", n_filters=2)
        eta = f.params["frontend.gabor.eta"]
        eta.value.data = np.array([-1.0, 1.0])
        eta.project()
        np.testing.assert_array_equal(eta.data, [fb.RANDOM_LOW, fb.RANDOM_HIGH])

    @pytest.mark.parametrize("init", ["mel", "uniform", "truncn"])
    def test_filter_params_round_trip(self, init):
        f = fe.make_frontend("leaf", fb.InitScheme(init, 2), n_filters=8)
        expected = fb.init_params(fb.InitScheme(init, 2), "gabor", 8)
        np.testing.assert_array_equal(f.filter_params().etas, np.clip(expected.etas, fb.RANDOM_LOW, fb.RANDOM_HIGH))


class TestFrontendGradients:
    @pytest.mark.parametrize("kind", ["sincnet", "leaf"])
    def test_all_parameters(self, kind):
        f = fe.make_frontend(kind, fb.InitScheme("uniform", 1), n_filters=3, width=31, stride=16)
        # move PCEN away from its uniform init so per-channel gradients differ
        rng = np.random.default_rng(10)
        for name, p in f.params.items():
            if name.startswith("frontend.pcen"):
                p.value.data = p.data * rng.uniform(0.8, 1.0, size=p.shape)
            if name == "frontend.pool.width":
                p.value.data = rng.uniform(3.0, 8.0, size=p.shape)
            if name == "frontend.sinc.band":
                # keep cutoffs clear of 0 and Nyquist so +-eps stays feasible
                p.value.data = np.sort(rng.uniform(0.05, 0.45, size=p.shape), axis=1)
        x = rng.normal(size=(2, 96))
        weights = rng.normal(size=f(x).shape)

        def program(inputs, params):
            return ops.sum(f(inputs) * weights)

        exact = gradient(program, x, f.params)
        approx = finite_diff_gradient(program, x, f.params)
        assert set(exact) == {n for n, p in f.params.items() if p.trainable}
        for name in exact:
            assert relative_error(exact[name], approx[name]) <= 1e-3, name
