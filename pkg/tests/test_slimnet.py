"""Slimmable network tests.

The slicing oracle is a standalone network: copy a sub-model's sliced
weights into a freshly assembled plain-numpy forward pass of exactly
those widths, and require identical outputs.  The oracle path never
touches the autodiff engine or the slicing code.
"""

import math

import numpy as np
import pytest

from slimadapt import autodiff as ad
from slimadapt.errors import ConfigError, UsageError
from slimadapt.slimnet import (
    Architecture,
    ParamStore,
    adabn_recalibrate,
    flops_per_sample,
)

ARCH = Architecture(input_dim=6, block_max_widths=(16, 24), layers_per_block=2, class_count=3)


@pytest.fixture
def store():
    return ParamStore(ARCH, np.random.default_rng(0))


def standalone_forward(store, widths, x, head="s"):
    """Plain-numpy train-mode forward of a freshly 'built' network whose
    weights are copied out of the sliced store regions."""
    arch = store.arch
    h = np.asarray(x, dtype=np.float64)
    prev = arch.input_dim
    for i, w in enumerate(widths):
        for j in range(arch.layers_per_block):
            in_w = prev if j == 0 else w
            base = f"f.b{i}.l{j}"
            weight = store[f"{base}.w"].data[:in_w, :w].copy()
            bias = store[f"{base}.b"].data[:w].copy()
            gamma = store[f"{base}.bn_g"].data[:w].copy()
            beta = store[f"{base}.bn_b"].data[:w].copy()
            h = h @ weight + bias
            mu, var = h.mean(axis=0), h.var(axis=0)
            h = gamma * (h - mu) / np.sqrt(var + 1e-5) + beta
            h = np.maximum(h, 0.0)
        prev = w
    cw = store[f"c.{head}.w"].data[: widths[-1]].copy()
    cb = store[f"c.{head}.b"].data.copy()
    return h @ cw + cb


def sliced_logits(store, widths, x, head="s"):
    model = store.slice(store.arch.make_config(widths))
    with ad.no_grad():
        feats = model.features(x, mode="train")
        return model.head_logits(feats, head).data


class TestConfigs:
    def test_full_and_smallest(self):
        assert ARCH.full_config().widths == (16, 24)
        assert ARCH.smallest_config().widths == (2, 3)

    def test_illegal_widths_rejected(self):
        with pytest.raises(ConfigError):
            ARCH.make_config((1, 24))  # below 1/8 of 16
        with pytest.raises(ConfigError):
            ARCH.make_config((16, 25))
        with pytest.raises(ConfigError):
            ARCH.make_config((16,))

    def test_classifier_heads_are_disjoint_tensors(self, store):
        ids = {id(store[f"c.{h}.w"]) for h in ("s", "t", "a")}
        assert len(ids) == 3


class TestSlicing:
    def test_full_config_identical_to_full_forward(self, store):
        x = np.random.default_rng(1).normal(size=(8, ARCH.input_dim))
        full = sliced_logits(store, ARCH.block_max_widths, x)
        again = sliced_logits(store, ARCH.block_max_widths, x)
        np.testing.assert_array_equal(full, again)

    def test_standalone_copy_oracle(self, store):
        rng = np.random.default_rng(2)
        for _ in range(50):
            widths = tuple(
                int(rng.integers(lo, hi + 1))
                for lo, hi in zip(ARCH.min_widths(), ARCH.block_max_widths)
            )
            x = rng.normal(size=(5, ARCH.input_dim))
            got = sliced_logits(store, widths, x)
            want = standalone_forward(store, widths, x)
            np.testing.assert_allclose(got, want, atol=1e-12, rtol=0)

    def test_forward_is_pure(self, store):
        x = np.random.default_rng(3).normal(size=(4, ARCH.input_dim))
        a = sliced_logits(store, (8, 12), x)
        b = sliced_logits(store, (8, 12), x)
        np.testing.assert_array_equal(a, b)

    def test_gradients_zero_outside_sliced_region(self, store):
        x = np.random.default_rng(4).normal(size=(6, ARCH.input_dim))
        widths = (8, 12)
        model = store.slice(ARCH.make_config(widths))
        feats = model.features(x, mode="train")
        loss = model.probs(feats, "s").sum()
        grads = ad.backward(loss)
        w0 = grads[store["f.b0.l0.w"]]
        assert np.all(w0[:, widths[0]:] == 0)
        assert np.any(w0[:, : widths[0]] != 0)
        w1 = grads[store["f.b1.l0.w"]]
        assert np.all(w1[widths[0]:, :] == 0)
        assert np.all(w1[:, widths[1]:] == 0)
        cw = grads[store["c.s.w"]]
        assert np.all(cw[widths[1]:, :] == 0)


class TestHeads:
    def test_probability_heads_are_distributions(self, store):
        x = np.random.default_rng(5).normal(size=(7, ARCH.input_dim))
        model = store.slice(ARCH.make_config((8, 12)))
        with ad.no_grad():
            feats = model.features(x, mode="train")
            for head in ("s", "t", "a", "st", "task"):
                p = model.probs(feats, head).data
                assert np.all(p >= 0)
                np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_st_head_halves_equal_when_heads_identical(self, store):
        store.params["c.t.w"] = ad.Tensor(store["c.s.w"].data.copy(), requires_grad=True)
        store.params["c.t.b"] = ad.Tensor(store["c.s.b"].data.copy(), requires_grad=True)
        x = np.random.default_rng(6).normal(size=(5, ARCH.input_dim))
        model = store.slice(ARCH.full_config())
        with ad.no_grad():
            feats = model.features(x, mode="train")
            p = model.probs(feats, "st").data
        k = ARCH.class_count
        np.testing.assert_allclose(p[:, :k], p[:, k:], atol=1e-12)

    def test_joint_softmax_dilutes_per_class_mass(self, store):
        # For any finite logits, the 2K-way softmax puts strictly less mass
        # on class k than the K-way softmax over the same source logits.
        x = np.random.default_rng(7).normal(size=(5, ARCH.input_dim))
        model = store.slice(ARCH.full_config())
        with ad.no_grad():
            feats = model.features(x, mode="train")
            g_s = model.probs(feats, "s").data
            g_st = model.probs(feats, "st").data
        assert np.all(g_st[:, : ARCH.class_count] < g_s)

    def test_zero_input_zero_params_gives_zero_features(self):
        arch = Architecture(input_dim=4, block_max_widths=(8,), layers_per_block=1, class_count=2)
        store = ParamStore(arch, np.random.default_rng(0))
        x = np.zeros((3, 4))
        model = store.slice(arch.full_config())
        with ad.no_grad():
            feats = model.features(x, mode="train")
        np.testing.assert_allclose(feats.data, 0.0, atol=1e-12)

    def test_single_row_train_batch_rejected(self, store):
        model = store.slice(ARCH.full_config())
        with pytest.raises(UsageError):
            model.features(np.ones((1, ARCH.input_dim)), mode="train")

    def test_eval_without_recalibration_rejected(self, store):
        model = store.slice(ARCH.full_config())
        with pytest.raises(UsageError):
            model.features(np.ones((4, ARCH.input_dim)), mode="eval")


class TestFlops:
    def test_single_layer_hand_count(self):
        arch = Architecture(input_dim=4, block_max_widths=(8,), layers_per_block=1, class_count=2)
        # 4*8 mult-adds * 2 for the layer, plus 2*K*feature for the head
        assert flops_per_sample(arch, (8,)) == 2 * 4 * 8 + 2 * 2 * 8

    def test_full_ratio_is_one(self):
        cfg = ARCH.full_config()
        assert cfg.flops / ARCH.full_config().flops == 1.0

    def test_one_eighth_channels_near_one_64th_flops(self):
        # Deep MLP dominated by hidden-hidden layers: scaling every width
        # by 1/8 scales FLOPs by ~1/64.
        arch = Architecture(input_dim=4, block_max_widths=(256, 256), layers_per_block=4,
                            class_count=4)
        ratio = arch.smallest_config().flops / arch.full_config().flops
        assert abs(ratio * 64 - 1.0) < 0.05

    def test_monotone_in_every_block(self):
        base = ARCH.make_config((8, 12))
        for b in range(ARCH.n_blocks):
            widths = list(base.widths)
            widths[b] += 1
            assert ARCH.make_config(widths).flops > base.flops


class TestAdaBN:
    def test_single_batch_consistency_with_train_forward(self, store):
        # Recalibrating on exactly one train batch makes eval equal train.
        x = np.random.default_rng(8).normal(size=(32, ARCH.input_dim))
        model = store.slice(ARCH.make_config((8, 12)))
        adabn_recalibrate(model, x, batch_size=64)
        with ad.no_grad():
            train_out = model.features(x, mode="train").data
            eval_out = model.features(x, mode="eval").data
        np.testing.assert_allclose(eval_out, train_out, atol=1e-9)

    def test_idempotent(self, store):
        x = np.random.default_rng(9).normal(size=(50, ARCH.input_dim))
        model = store.slice(ARCH.make_config((4, 20)))
        s1 = adabn_recalibrate(model, x, batch_size=16)
        s2 = adabn_recalibrate(model, x, batch_size=16)
        for a, b in zip(s1.means, s2.means):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(s1.variances, s2.variances):
            np.testing.assert_array_equal(a, b)

    def test_order_invariant_within_tolerance(self, store):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(64, ARCH.input_dim))
        model = store.slice(ARCH.make_config((8, 12)))
        s1 = adabn_recalibrate(model, x, batch_size=16)
        perm = rng.permutation(len(x))
        s2 = adabn_recalibrate(store.slice(ARCH.make_config((8, 12))), x[perm], batch_size=16)
        for a, b in zip(s1.means, s2.means):
            np.testing.assert_allclose(a, b, atol=1e-10)
        for a, b in zip(s1.variances, s2.variances):
            np.testing.assert_allclose(a, b, atol=1e-10)

    def test_stats_are_per_config(self, store):
        # Different widths see different activations on asymmetric data.
        rng = np.random.default_rng(11)
        x = rng.normal(size=(40, ARCH.input_dim)) + np.arange(ARCH.input_dim)
        wide = store.slice(ARCH.make_config((16, 24)))
        narrow = store.slice(ARCH.make_config((2, 3)))
        s_wide = adabn_recalibrate(wide, x)
        s_narrow = adabn_recalibrate(narrow, x)
        assert s_wide.means[0].shape != s_narrow.means[0].shape
        # The first layer's leading columns coincide (the input is never
        # sliced); from the second layer on the active fan-in differs.
        assert not np.allclose(s_wide.means[1][:2], s_narrow.means[1])

    def test_variances_nonnegative(self, store):
        x = np.random.default_rng(12).normal(size=(30, ARCH.input_dim))
        model = store.slice(ARCH.make_config((8, 12)))
        stats = adabn_recalibrate(model, x)
        for v in stats.variances:
            assert np.all(v >= 0)

    def test_empty_data_rejected(self, store):
        model = store.slice(ARCH.full_config())
        with pytest.raises(UsageError):
            adabn_recalibrate(model, np.zeros((0, ARCH.input_dim)))

    def test_predict_shape_and_normalization(self, store):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(25, ARCH.input_dim))
        model = store.slice(ARCH.make_config((8, 12)))
        adabn_recalibrate(model, x)
        p = model.predict(x, head="a", batch_size=7)
        assert p.shape == (25, ARCH.class_count)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
