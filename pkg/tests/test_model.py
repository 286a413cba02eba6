import numpy as np
import pytest

from maskclr import autodiff as ad
from maskclr import losses
from maskclr.augment import ViewPair
from maskclr.errors import ConfigurationError, ContractError, DimensionError
from maskclr.model import (
    ContrastiveModel,
    ModelConfig,
    apply_mask,
    conv_plan,
    forward_pair,
    load_checkpoint,
    save_checkpoint,
    views_to_arrays,
)

SMALL = ModelConfig(full_size=(24, 36), crop_size=12, d_hidden=16, classes=3)


def small_model(seed=0, mask_mode="hard", mode="dual"):
    cfg = ModelConfig(
        mode=mode, full_size=(24, 36), crop_size=12, d_hidden=16, classes=3, mask_mode=mask_mode
    )
    return ContrastiveModel(cfg, seed=seed)


def random_batch(n=2, cfg=SMALL, seed=0):
    rng = np.random.default_rng(seed)
    full = ad.Tensor(rng.random((n, 3, *cfg.full_size)))
    crop = ad.Tensor(rng.random((n, 3, cfg.crop_size, cfg.crop_size)))
    return full, crop


class TestGeometry:
    def test_plan_handles_default_sizes(self):
        plan, out = conv_plan(120, 190, 3)
        assert len(plan) == 3 and min(out) >= 1
        plan, out = conv_plan(32, 32, 3)
        assert len(plan) == 3 and min(out) >= 1

    def test_too_small_input_rejected(self):
        with pytest.raises(ConfigurationError):
            conv_plan(2, 2, 3)

    def test_encoder_rejects_wrong_geometry(self):
        m = small_model()
        _, crop = random_batch()
        with pytest.raises(DimensionError):
            m.encoder_full(crop)

    def test_default_sizes_cross_rejected(self):
        m = ContrastiveModel(ModelConfig(), seed=0)  # 120x190 full, 32x32 crop
        rng = np.random.default_rng(0)
        crop = ad.Tensor(rng.random((1, 3, 32, 32)))
        full = ad.Tensor(rng.random((1, 3, 120, 190)))
        with pytest.raises(DimensionError):
            m.encoder_full(crop)
        with pytest.raises(DimensionError):
            m.encoder_crop(full)

    def test_encode_deterministic(self):
        m = small_model()
        full, _ = random_batch()
        a = m.encoder_full(full).data
        b = m.encoder_full(full).data
        assert np.array_equal(a, b)


class TestProjection:
    def test_output_has_32_features(self):
        m = small_model()
        full, crop = random_batch(n=3)
        r = m.forward_batch(full, crop)
        assert r.z_full.shape == (3, 32)
        assert r.z_crop.shape == (3, 32)

    def test_identity_configured_head_passes_input_through(self):
        m = small_model()
        head = m.proj_full
        head.fc0.w.data = np.eye(16, 16)
        head.fc0.b.data[:] = 0.0
        head.fc1.w.data = np.eye(16, 32)[:, :32] * 0.0
        head.fc1.w.data[:16, :16] = np.eye(16)
        head.fc1.b.data[:] = 0.0
        h = ad.Tensor(np.abs(np.random.default_rng(0).random((2, 16))))  # encoder output is >= 0
        z = head(h)
        assert np.allclose(z.data[:, :16], h.data, atol=1e-12)

    def test_gradient_check(self):
        m = small_model(mask_mode="soft")
        h = ad.Tensor(np.random.default_rng(1).random((2, 16)))
        params = list(m.proj_full.params().values())

        def f(p):
            return ad.tensor_sum(ad.sigmoid(m.proj_full(h)))

        assert ad.finite_diff_check(f, params) < 1e-4


class TestAttentionMask:
    def _with_fixed_logits(self, logits_row):
        m = small_model()
        att = m.attention
        att.fc0.w.data[:] = 0.0
        att.fc0.b.data[:] = 0.0
        att.fc1.w.data[:] = 0.0
        att.fc1.b.data = np.asarray(logits_row, dtype=np.float64)
        return m

    def test_strong_positive_logits_give_ones(self):
        m = self._with_fixed_logits(np.full(32, 8.0))
        z = ad.Tensor(np.random.default_rng(0).random((2, 32)))
        assert np.all(m.attention_mask(z).data == 1.0)

    def test_strong_negative_logits_give_zeros(self):
        m = self._with_fixed_logits(np.full(32, -8.0))
        z = ad.Tensor(np.random.default_rng(0).random((2, 32)))
        assert np.all(m.attention_mask(z).data == 0.0)

    def test_alternating_logits_give_alternating_mask(self):
        pattern = np.tile([2.0, -2.0], 16)
        m = self._with_fixed_logits(pattern)
        z = ad.Tensor(np.random.default_rng(0).random((1, 32)))
        assert np.array_equal(m.attention_mask(z).data[0], np.tile([1.0, 0.0], 16))

    def test_mask_entries_always_binary(self):
        m = small_model(seed=3)
        for seed in range(5):
            _, crop = random_batch(n=4, seed=seed)
            full, _ = random_batch(n=4, seed=seed)
            r = m.forward_batch(full, crop)
            assert np.all((r.mask.data == 0.0) | (r.mask.data == 1.0))


class TestApplyMask:
    def test_all_ones_identity(self):
        z = ad.Tensor(np.random.default_rng(0).random((2, 4)))
        out = apply_mask(z, ad.Tensor(np.ones((2, 4))))
        assert np.array_equal(out.data, z.data)

    def test_elementwise_product(self):
        z = ad.Tensor([[2.0, 3.0, 4.0]])
        mask = ad.Tensor([[1.0, 0.0, 1.0]])
        assert np.array_equal(apply_mask(z, mask).data, [[2.0, 0.0, 4.0]])

    def test_all_zero_mask_flags_downstream_degeneracy(self):
        z = ad.Tensor([[2.0, 3.0], [1.0, 1.0]])
        mask = ad.Tensor([[0.0, 0.0], [1.0, 1.0]])
        masked = apply_mask(z, mask)
        _, _, dropped = losses.filter_degenerate_pairs(masked, masked)
        assert dropped == 1

    def test_non_binary_mask_rejected(self):
        z = ad.Tensor([[1.0, 2.0]])
        with pytest.raises(ContractError):
            apply_mask(z, ad.Tensor([[0.5, 1.0]]))


class TestClassifier:
    def test_zero_weights_give_uniform_softmax(self):
        m = small_model()
        for layer in (m.classifier.fc0, m.classifier.fc1):
            layer.w.data[:] = 0.0
            layer.b.data[:] = 0.0
        z = ad.Tensor(np.random.default_rng(0).random((2, 32)))
        probs = ad.softmax(m.classifier(z), axis=1)
        assert np.allclose(probs.data, 1.0 / 3.0, atol=1e-12)

    def test_default_config_has_eleven_classes(self):
        m = ContrastiveModel(ModelConfig(), seed=0)
        z = ad.Tensor(np.random.default_rng(0).random((1, 32)))
        assert m.classifier(z).shape == (1, 11)

    def test_gradient_check(self):
        m = small_model()
        z = ad.Tensor(np.random.default_rng(2).random((3, 32)))
        params = list(m.classifier.params().values())
        err = ad.finite_diff_check(
            lambda p: losses.cross_entropy(m.classifier(z), [0, 1, 2]), params
        )
        assert err < 1e-4


class TestForward:
    def test_mask_sharing_is_bit_exact(self):
        m = small_model(seed=5)
        full, crop = random_batch(n=4, seed=6)
        r = m.forward_batch(full, crop)
        assert np.array_equal(r.z_full_masked.data, r.z_full.data * r.mask.data)
        assert np.array_equal(r.z_crop_masked.data, r.z_crop.data * r.mask.data)

    def test_all_ones_mask_leaves_projections_unchanged(self):
        m = small_model(seed=7)
        m.attention.fc1.b.data[:] = 50.0  # force all-ones mask
        full, crop = random_batch(n=2, seed=8)
        r = m.forward_batch(full, crop)
        assert np.array_equal(r.z_full_masked.data, r.z_full.data)
        assert np.array_equal(r.z_crop_masked.data, r.z_crop.data)

    def test_replay_is_deterministic(self):
        m = small_model(seed=9)
        rng = np.random.default_rng(10)
        pair = ViewPair(full=rng.random((24, 36, 3)), crop=rng.random((12, 12, 3)))
        a = forward_pair(m, pair)
        b = forward_pair(m, pair)
        for t1, t2 in zip(a, b):
            assert np.array_equal(t1.data, t2.data)

    def test_forward_pair_returns_five_vectors(self):
        m = small_model(seed=11)
        rng = np.random.default_rng(12)
        pair = ViewPair(full=rng.random((24, 36, 3)), crop=rng.random((12, 12, 3)))
        z_i, z_j, logits_i, logits_j, mask = forward_pair(m, pair)
        assert z_i.shape == (32,) and z_j.shape == (32,)
        assert logits_i.shape == (3,) and logits_j.shape == (3,)
        assert np.all((mask.data == 0.0) | (mask.data == 1.0))

    def test_shared_mode_uses_one_encoder_and_ones_mask(self):
        m = small_model(mode="shared")
        rng = np.random.default_rng(13)
        full = ad.Tensor(rng.random((2, 3, 24, 36)))
        both = m.forward_batch(full, full)
        assert np.all(both.mask.data == 1.0)
        assert np.array_equal(both.z_full.data, both.z_crop.data)


class TestStraightThrough:
    def test_thresholded_backward_equals_identity_sigmoid_backward(self):
        # downstream linear in the mask so both builds receive the same
        # upstream gradient; the two backward passes must agree bit for bit
        logits = np.random.default_rng(14).normal(size=(2, 8))
        weights = np.random.default_rng(15).normal(size=(2, 8))

        hard_in = ad.Tensor(logits.copy(), requires_grad=True)
        ad.tensor_sum(ad.hard_threshold(ad.sigmoid(hard_in)) * weights).backward()

        soft_in = ad.Tensor(logits.copy(), requires_grad=True)
        ad.tensor_sum(ad.sigmoid(soft_in) * weights).backward()

        assert np.array_equal(hard_in.grad, soft_in.grad)

    def test_soft_build_full_loss_matches_finite_differences(self):
        m = small_model(seed=16, mask_mode="soft")
        full, crop = random_batch(n=2, seed=17)
        labels = [0, 2]

        def f(p):
            r = m.forward_batch(full, crop)
            contrastive = losses.nt_xent(r.z_full_masked, r.z_crop_masked, 0.5)
            logits = ad.concat([r.logits_full, r.logits_crop], axis=0)
            supervised = losses.cross_entropy(logits, labels + labels)
            return losses.total_loss(contrastive, supervised, 1.0)

        params = list(m.params().values())
        err = ad.finite_diff_check(f, params, max_coords_per_param=4)
        assert err < 1e-4


class TestCheckpoint:
    def test_round_trip_is_byte_identical(self, tmp_path):
        m = small_model(seed=18)
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        cid1 = save_checkpoint(p1, m, meta={"note": "x"})
        loaded, _, meta = load_checkpoint(p1)
        assert meta == {"note": "x"}
        cid2 = save_checkpoint(p2, loaded, meta={"note": "x"})
        assert p1.read_bytes() == p2.read_bytes()
        assert cid1 == cid2

    def test_loaded_model_reproduces_outputs(self, tmp_path):
        m = small_model(seed=19)
        full, crop = random_batch(n=2, seed=20)
        want = m.forward_batch(full, crop).z_full.data
        save_checkpoint(tmp_path / "m.json", m)
        loaded, _, _ = load_checkpoint(tmp_path / "m.json")
        got = loaded.forward_batch(full, crop).z_full.data
        assert np.array_equal(want, got)

    def test_optimizer_state_round_trips(self, tmp_path):
        m = small_model(seed=21)
        opt = ad.AdamState(lr=0.01)
        params = list(m.params().values())
        ad.adam_step(params, [np.ones_like(p.data) for p in params], opt)
        save_checkpoint(tmp_path / "o.json", m, optimizer=opt)
        _, loaded_opt, _ = load_checkpoint(tmp_path / "o.json")
        assert loaded_opt["step"] == 1
        assert all(np.array_equal(a, b) for a, b in zip(loaded_opt["m"], opt.m))

    def test_non_checkpoint_file_rejected(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"hello": 1}')
        with pytest.raises(ConfigurationError):
            load_checkpoint(path)


class TestViewsToArrays:
    def test_dual_keeps_crop_native(self):
        rng = np.random.default_rng(22)
        pair = ViewPair(full=rng.random((24, 36, 3)), crop=rng.random((12, 12, 3)))
        full, crop = views_to_arrays([pair], SMALL)
        assert full.shape == (1, 3, 24, 36)
        assert crop.shape == (1, 3, 12, 12)
        assert np.array_equal(crop[0, 0], pair.crop[:, :, 0])

    def test_shared_resizes_crop_to_full_geometry(self):
        cfg = ModelConfig(mode="shared", full_size=(24, 36), crop_size=12, classes=3)
        rng = np.random.default_rng(23)
        pair = ViewPair(full=rng.random((24, 36, 3)), crop=rng.random((12, 12, 3)))
        _, crop = views_to_arrays([pair], cfg)
        assert crop.shape == (1, 3, 24, 36)
