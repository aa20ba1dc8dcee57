import math

import numpy as np
import pytest

import hidflow.autodiff as ad
from hidflow.autodiff import Tensor
from hidflow.errors import DataError
from hidflow.flow import FlowTrace
from hidflow.model import DenoiserModel, ModelConfig
from hidflow.synthetic import bump_dataset
from hidflow.training import (ParameterStore, TrainConfig, adam_step, augment,
                              make_patches, nll_loss, rec_loss, total_loss, train,
                              train_step)

LOG_2PI = math.log(2.0 * math.pi)


def _tiny_model(seed=0, dtype=np.float32):
    return DenoiserModel(ModelConfig(bands=4, width=8, stages=2, window=2, heads=2,
                                     flow_steps=2), seed=seed, dtype=dtype)


class TestNll:
    def test_standard_normal_at_mode(self):
        trace = FlowTrace(z=Tensor(np.zeros((2, 2, 1))), logdet=Tensor(np.asarray(0.0)))
        assert float(nll_loss(trace).data) == pytest.approx(2.0 * LOG_2PI, abs=1e-12)

    def test_identity_model_closed_form(self):
        model = _tiny_model(dtype=np.float64)
        x = np.random.default_rng(0).uniform(0, 1, (4, 4, 4))
        y = np.random.default_rng(1).uniform(0, 1, (4, 4, 4))
        nll = float(nll_loss(model.flow_forward(x, y)).data)
        want = 0.5 * np.sum(x * x) + 0.5 * x.size * LOG_2PI
        assert abs(nll - want) < 1e-9

    def test_density_normalizes(self):
        from hidflow.verify import density_check
        result = density_check(seed=3, points=161)
        assert result.passed, result.detail


class TestRec:
    def test_zero_for_identical(self):
        x = Tensor(np.random.default_rng(0).uniform(0, 1, (3, 3, 2)))
        assert float(rec_loss(x, x).data) == 0.0

    def test_uniform_offset(self):
        x = Tensor(np.random.default_rng(1).uniform(0, 1, (3, 3, 2)))
        x_hat = ad.add(x, 0.5)
        assert float(rec_loss(x_hat, x).data) == pytest.approx(0.5, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(0, 1, (4, 5, 3)), rng.normal(0, 1, (4, 5, 3))
        got = float(rec_loss(Tensor(a), Tensor(b)).data)
        assert got == pytest.approx(np.mean(np.abs(a - b)), abs=1e-12)


class TestTotal:
    def test_default_weights(self):
        cfg = TrainConfig()
        assert total_loss(10.0, 0.2, cfg) == pytest.approx(0.21, abs=1e-12)

    def test_zero_nll_weight(self):
        cfg = TrainConfig(lambda_nll=0.0)
        assert total_loss(123.0, 0.7, cfg) == pytest.approx(0.7, abs=1e-12)

    def test_zero_rec_weight(self):
        cfg = TrainConfig(lambda_rec=0.0)
        assert total_loss(10.0, 0.7, cfg) == pytest.approx(0.01, abs=1e-12)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        store = ParameterStore({"p": p})
        cfg = TrainConfig(lr=2e-4)
        adam_step(store, {"p": np.array([1.0])}, cfg)
        # bias-corrected m/sqrt(v) == 1 at step 1, so |update| == lr/(1+eps)
        assert abs(1.0 - float(p.data[0])) == pytest.approx(cfg.lr, rel=1e-6)
        assert store.step_count == 1

    def test_zero_gradients_leave_parameters(self):
        p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        store = ParameterStore({"p": p})
        cfg = TrainConfig()
        for _ in range(5):
            adam_step(store, {"p": np.zeros(2)}, cfg)
        assert np.array_equal(p.data, np.array([3.0, -2.0]))

    def test_nonfinite_gradient_skips_step(self, caplog):
        p = Tensor(np.array([1.0]), requires_grad=True)
        store = ParameterStore({"p": p})
        adam_step(store, {"p": np.array([np.nan])}, TrainConfig())
        assert store.step_count == 0
        assert np.array_equal(p.data, np.array([1.0]))

    def test_two_seeded_runs_bit_identical(self):
        def run():
            model = _tiny_model(seed=5)
            store = ParameterStore(model.named_params())
            cfg = TrainConfig(seed=5, lr=1e-3)
            rng = np.random.default_rng(5)
            for _ in range(10):
                clean = rng.uniform(0, 1, (2, 4, 4, 4)).astype(np.float32)
                noisy = clean + rng.normal(0, 0.1, clean.shape).astype(np.float32)
                zh = rng.normal(0, 1, clean.shape).astype(np.float32)
                train_step(model, store, clean, noisy.astype(np.float32), zh, cfg)
            return {k: p.data.copy() for k, p in store.params.items()}

        a, b = run(), run()
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestPatches:
    def test_count_512(self):
        cube = np.zeros((512, 512, 1), dtype=np.float32)
        assert len(make_patches(cube, 64, 16)) == 29 * 29

    def test_single_patch(self):
        assert len(make_patches(np.zeros((64, 64, 2)), 64, 16)) == 1

    def test_80_gives_four(self):
        assert len(make_patches(np.zeros((80, 80, 2)), 64, 16)) == 4

    def test_too_small(self):
        with pytest.raises(DataError):
            make_patches(np.zeros((32, 32, 2)), 64, 16)


class TestAugment:
    def test_identity_and_involutions(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0, 1, (8, 8, 3))
        assert np.array_equal(np.rot90(p, 4, axes=(0, 1)), p)
        assert np.array_equal(p[:, ::-1][:, ::-1], p)
        assert np.array_equal(p[::-1][::-1], p)

    def test_deterministic_given_seed(self):
        p = np.random.default_rng(1).uniform(0, 1, (8, 8, 3))
        assert np.array_equal(augment(p, 42, 1, 2), augment(p, 42, 1, 2))

    def test_spectral_axis_untouched(self):
        p = np.random.default_rng(2).uniform(0, 1, (8, 8, 3))
        for seed in range(24):
            out = augment(p, seed)
            assert out.shape == p.shape
            # every output spectrum exists somewhere in the input
            flat_in = {tuple(v) for v in p.reshape(-1, 3)}
            assert all(tuple(v) in flat_in for v in out.reshape(-1, 3))

    def test_all_twelve_variants_reachable(self):
        p = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
        seen = {augment(p, s).tobytes() for s in range(300)}
        assert len(seen) == 8  # 12 combos collapse to the 8 dihedral elements


class TestTrainLoop:
    def _data(self, n=6, hw=16, bands=4, seed=3):
        return bump_dataset(n, hw, hw, bands, seed)

    def test_zero_weights_freeze_parameters(self):
        model = _tiny_model(seed=1)
        before = {k: p.data.copy() for k, p in model.named_params().items()}
        cfg = TrainConfig(lambda_nll=0.0, lambda_rec=0.0, seed=1, patch_size=16,
                          batch_size=2, epochs_gaussian=1, epochs_mixture=0,
                          max_steps=4)
        train(model, self._data(), cfg)
        after = model.named_params()
        assert all(np.array_equal(before[k], after[k].data) for k in before)

    def test_loss_trend_decreases(self):
        model = _tiny_model(seed=2)
        cfg = TrainConfig(seed=2, patch_size=16, batch_size=4, sigma=50.0,
                          epochs_gaussian=60, epochs_mixture=0, max_steps=120)
        result = train(model, self._data(n=8), cfg)
        losses = np.array(result.step_losses)
        assert len(losses) == 120
        # 50-step moving average trend: end of training vs start
        head = losses[:50].mean()
        tail = losses[-50:].mean()
        assert tail < head

    def test_resume_reproduces_trajectory(self, tmp_path):
        from hidflow import io as hio

        data = self._data(n=4)
        cfg = TrainConfig(seed=7, patch_size=16, batch_size=2, epochs_gaussian=2,
                          epochs_mixture=0, max_steps=6)

        model_a = _tiny_model(seed=7)
        train(model_a, data, cfg)

        cfg_half = TrainConfig(seed=7, patch_size=16, batch_size=2, epochs_gaussian=2,
                               epochs_mixture=0, max_steps=3)
        model_b = _tiny_model(seed=7)
        result_half = train(model_b, data, cfg_half)
        ckpt = tmp_path / "half.hfck"
        hio.save_checkpoint(str(ckpt), model_b, result_half.store)

        model_c, store_c, _ = hio.restore_model(str(ckpt))
        train(model_c, data, cfg, store=store_c)

        pa = model_a.named_params()
        pc = model_c.named_params()
        assert all(np.array_equal(pa[k].data, pc[k].data) for k in pa)

    def test_validation_psnr_logged(self):
        model = _tiny_model(seed=4)
        data = self._data(n=5)
        cfg = TrainConfig(seed=4, patch_size=16, batch_size=2, epochs_gaussian=1,
                          epochs_mixture=0, max_steps=2)
        result = train(model, data[:4], cfg, val_cubes=data[4:])
        assert np.isfinite(result.history[-1]["val_psnr"])

    def test_mixture_phase_runs(self):
        model = _tiny_model(seed=6)
        cfg = TrainConfig(seed=6, patch_size=16, batch_size=2, epochs_gaussian=1,
                          epochs_mixture=1, max_steps=None)
        result = train(model, self._data(n=4), cfg)
        phases = {h["phase"] for h in result.history}
        assert phases == {0, 1}


def test_gradients_match_finite_differences_tiny_model():
    from hidflow.verify import gradient_check
    result = gradient_check(seed=1, max_entries_per_group=6)
    assert result.passed, result.detail
