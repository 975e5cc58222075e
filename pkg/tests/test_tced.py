import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpool import verify
from tpool.errors import ConfigError, FormatError, NumericError, ShapeError
from tpool.seqdata import Dataset, FeatureSequence, LabelSequence, synth_covariance_dataset
from tpool.tced import (TrainConfig, build_model, conv1d, cross_entropy, forward, load_model,
                        loss_and_grads, predict, save_model, softmax, timedense_softmax, train,
                        upsample_nn)
from tpool.tced.checkpoint import dumps, loads
from tpool.tced.optim import Adam, clip_global_norm


def tiny_cfg(**kw):
    base = dict(filters=(6,), kernel_size=3, window=3, epochs=5)
    base.update(kw)
    return TrainConfig(**base)


class TestConv1d:
    def test_hand_example(self):
        out = conv1d([[1.0], [2.0], [3.0], [4.0]], [[[1.0, 0.0, -1.0]]], [0.0])
        np.testing.assert_array_equal(out.ravel(), [-2, -2, -2, 3])

    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(7, 3))
        np.testing.assert_array_equal(conv1d(x, np.eye(3)[:, :, None], np.zeros(3)), x)

    def test_constant_bias(self):
        out = conv1d(np.ones((5, 2)), np.zeros((4, 2, 3)), np.arange(4.0))
        np.testing.assert_array_equal(out, np.tile(np.arange(4.0), (5, 1)))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv1d(np.ones((5, 2)), np.zeros((4, 3, 3)), np.zeros(4))


class TestUpsample:
    def test_even(self):
        np.testing.assert_array_equal(upsample_nn([[1.0], [2.0]], 4).ravel(), [1, 1, 2, 2])

    def test_odd_crop(self):
        np.testing.assert_array_equal(upsample_nn([[1.0], [2.0]], 3).ravel(), [1, 1, 2])

    @pytest.mark.parametrize("target", [2, 5])
    def test_out_of_range(self, target):
        with pytest.raises(ShapeError):
            upsample_nn([[1.0], [2.0]], target)


class TestSoftmax:
    def test_uniform(self):
        p = timedense_softmax(np.ones((3, 5)), np.zeros((4, 5)), np.zeros(4))
        np.testing.assert_allclose(p, 0.25)

    def test_cross_entropy_ln2(self):
        assert cross_entropy(np.zeros((1, 2)), np.array([0])) == pytest.approx(0.693147, abs=1e-6)

    @given(st.floats(-100, 100))
    def test_shift_invariance(self, c):
        z = np.array([[0.5, -1.0, 2.0]])
        np.testing.assert_allclose(softmax(z + c), softmax(z), rtol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            timedense_softmax(np.ones((2, 3)), np.zeros((2, 4)), np.zeros(2))


class TestBuildModel:
    def test_deterministic(self):
        a = build_model(TrainConfig(), 128, 18)
        b = build_model(TrainConfig(), 128, 18)
        assert a.params.keys() == b.params.keys()
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])
        c = build_model(TrainConfig(seed=1), 128, 18)
        assert not np.array_equal(a.params["enc0.conv.kernel"], c.params["enc0.conv.kernel"])

    def test_default_parameter_count(self):
        # convs 128->64->96, decoders 96->96->64, dense 64->18; no pooling weights for max
        expected = (64 * 128 * 25 + 64) + (96 * 64 * 25 + 96) + (96 * 96 * 25 + 96) \
            + (64 * 96 * 25 + 64) + (18 * 64 + 18)
        assert build_model(TrainConfig(), 128, 18).n_parameters() == expected

    def test_compact_width(self):
        m = build_model(TrainConfig(pooling="decoupled_compact", filters=(64,), kernel_size=3), 5, 2)
        assert m.params["dec0.conv.kernel"].shape == (64, 2144, 3)

    def test_single_level_layout(self):
        m = build_model(tiny_cfg(pooling="coupled", pool_power=True, normalization="l2"), 4, 3)
        assert [s.kind for s in m.layers] == [
            "conv1d", "activation", "pooling", "activation", "normalize",
            "upsample", "conv1d", "activation", "timedense", "softmax"]
        np.testing.assert_array_equal(m.params["enc0.pool.omega"], np.full(3, 1 / 3))
        assert m.params["enc0.power.theta"].tolist() == [1.0]

    def test_glorot_bound(self):
        m = build_model(tiny_cfg(), 4, 3)
        limit = math.sqrt(6.0 / (4 * 3 + 6 * 3))
        assert np.abs(m.params["enc0.conv.kernel"]).max() <= limit
        assert not m.params["enc0.conv.bias"].any()

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            TrainConfig(clip_norm=0)
        with pytest.raises(ConfigError):
            TrainConfig(kernel_size=4)
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)


class TestForward:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 40), st.sampled_from(["max", "decoupled_compact", "coupled"]))
    def test_shape_and_normalisation(self, T, kind):
        m = build_model(tiny_cfg(pooling=kind, filters=(4, 5)), 3, 4)
        p = forward(m, np.random.default_rng(T).normal(size=(T, 3)))
        assert p.shape == (T, 4)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_zero_dense_uniform(self):
        m = build_model(tiny_cfg(), 3, 4)
        m.params["dense.weight"][:] = 0
        p = forward(m, np.random.default_rng(0).normal(size=(9, 3)))
        np.testing.assert_allclose(p, 0.25)
        assert not predict(m, np.ones((9, 3))).any()

    def test_input_width_mismatch(self):
        with pytest.raises(ShapeError):
            forward(build_model(tiny_cfg(), 3, 2), np.ones((5, 4)))

    def test_shift_covariance(self):
        m = build_model(tiny_cfg(filters=(4, 4), pooling="decoupled_compact"), 2, 3)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(96, 2))
        shifted = np.vstack([rng.normal(size=(4, 2)), x])
        a, b = forward(m, x), forward(m, shifted)
        np.testing.assert_allclose(b[4 + 30:4 + 66], a[30:66], rtol=1e-12, atol=1e-15)


class TestLoss:
    def test_uniform_ln3(self):
        m = build_model(tiny_cfg(), 2, 3)
        m.params["dense.weight"][:] = 0
        loss, _ = loss_and_grads(m, np.ones((6, 2)), np.array([0, 1, 2, 0, 1, 2]))
        assert loss == pytest.approx(1.098612, abs=1e-6)

    def test_perfect_predictions(self):
        m = build_model(tiny_cfg(), 2, 3)
        m.params["dense.weight"][:] = 0
        m.params["dense.bias"][:] = [40.0, 0.0, 0.0]
        loss, _ = loss_and_grads(m, np.ones((6, 2)), np.zeros(6, int))
        assert loss <= 1e-6

    def test_nonfinite_names_layer(self):
        m = build_model(tiny_cfg(), 2, 3)
        m.params["dec0.conv.bias"][0] = np.inf
        with pytest.raises(NumericError, match="dec0.conv"):
            loss_and_grads(m, np.ones((6, 2)), np.zeros(6, int))

    def test_label_mismatch(self):
        with pytest.raises(ShapeError):
            loss_and_grads(build_model(tiny_cfg(), 2, 3), np.ones((6, 2)), np.zeros(5, int))

    @pytest.mark.parametrize("pool, act", [("decoupled_compact", "rpn"), ("max", "nrelu"),
                                           ("coupled", "swish")])
    def test_gradient_spot_check(self, pool, act):
        r = verify.gradient_audit(pool, act)
        assert r.passed, r


def _one_seq_dataset(seed=0, T=40):
    return synth_covariance_dataset(seed, 1, T, 4, (5, 10), 0.9)


class TestTrain:
    def test_deterministic(self):
        ds = synth_covariance_dataset(2, 3, 30, 4, (5, 10), 0.9)
        cfg = tiny_cfg(pooling="decoupled_compact", epochs=3)
        m0 = build_model(cfg, 4, 2)
        a, ha = train(m0, ds, cfg)
        b, hb = train(m0, ds, cfg)
        assert ha == hb
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_order_invariance(self):
        ds = synth_covariance_dataset(2, 4, 30, 4, (5, 10), 0.9)
        rev = Dataset(ds.items[::-1], ds.C)
        cfg = tiny_cfg(epochs=2)
        m0 = build_model(cfg, 4, 2)
        a, _ = train(m0, ds, cfg)
        b, _ = train(m0, rev, cfg)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_overfit_single_sequence(self):
        ds = _one_seq_dataset()
        cfg = tiny_cfg(epochs=200, filters=(8,), pooling="decoupled_compact")
        _, hist = train(build_model(cfg, 4, 2), ds, cfg)
        assert hist[-1]["loss"] <= 0.5 * hist[0]["loss"]

    def test_does_not_mutate_input(self):
        ds = _one_seq_dataset()
        cfg = tiny_cfg(epochs=2)
        m0 = build_model(cfg, 4, 2)
        before = {k: v.copy() for k, v in m0.params.items()}
        train(m0, ds, cfg)
        for k, v in before.items():
            np.testing.assert_array_equal(m0.params[k], v)

    def test_callback_stops(self):
        cfg = tiny_cfg(epochs=50)
        _, hist = train(build_model(cfg, 4, 2), _one_seq_dataset(), cfg,
                        callback=lambda epoch, model, rec: epoch == 3)
        assert [r["epoch"] for r in hist] == [1, 2, 3]

    def test_history_columns(self):
        cfg = tiny_cfg(epochs=1)
        _, hist = train(build_model(cfg, 4, 2), _one_seq_dataset(), cfg)
        assert set(hist[0]) == {"epoch", "loss", "acc", "edit", "f1"}


class TestOptim:
    def test_adam_first_step(self):
        # bias correction makes the first step lr * sign(g)
        p = {"w": np.array([1.0, -1.0])}
        Adam(0.1).step(p, {"w": np.array([0.3, -2.0])})
        np.testing.assert_allclose(p["w"], [0.9, -0.9], rtol=1e-6)

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])
        g = {"a": np.array([0.3])}
        clip_global_norm(g, 1.0)
        assert g["a"][0] == 0.3


class TestCheckpoint:
    def model(self):
        cfg = tiny_cfg(pooling="decoupled", activation="rpn")
        return build_model(cfg, 3, 2)

    def test_round_trip(self, tmp_path):
        m = self.model()
        save_model(m, tmp_path / "a.tpck")
        back = load_model(tmp_path / "a.tpck")
        save_model(back, tmp_path / "b.tpck")
        assert (tmp_path / "a.tpck").read_bytes() == (tmp_path / "b.tpck").read_bytes()
        x = np.random.default_rng(0).normal(size=(11, 3))
        assert forward(m, x).tobytes() == forward(back, x).tobytes()
        assert back.config == m.config

    def test_truncated(self):
        buf = dumps(self.model())
        for n in (0, 3, 10, len(buf) // 2, len(buf) - 1):
            with pytest.raises(FormatError):
                loads(buf[:n])

    def test_version(self):
        buf = bytearray(dumps(self.model()))
        buf[4] = 2
        with pytest.raises(FormatError, match="version"):
            loads(bytes(buf))

    def test_checksum(self):
        buf = bytearray(dumps(self.model()))
        buf[-10] ^= 0xFF
        with pytest.raises(FormatError):
            loads(bytes(buf))

    def test_trailing_bytes(self):
        with pytest.raises(FormatError):
            loads(dumps(self.model()) + b"\0")


def test_label_sequence_feeds_train():
    x = FeatureSequence(np.random.default_rng(0).normal(size=(12, 2)))
    y = LabelSequence(np.r_[np.zeros(6, int), np.ones(6, int)], 2)
    cfg = tiny_cfg(epochs=1)
    model, _ = train(build_model(cfg, 2, 2), Dataset([(x, y)], 2), cfg)
    assert predict(model, x.frames).shape == (12,)
