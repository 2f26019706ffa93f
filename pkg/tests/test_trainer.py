import numpy as np
import pytest

from recistseg import dataio, synthgen, trainer
from recistseg.errors import EmptyDataset
from recistseg.model import SegModelPair, forward, init_params
from recistseg.trainer import TrainConfig, adamax_step, predict, train


def tiny_dataset(n=8, seed=3):
    spec = synthgen.SynthSpec(image_size=24, radius_range=(4.0, 7.0),
                              noise_sigma=0.08, seed=seed)
    samples = synthgen.generate(spec, n)
    return dataio.attach_supervision(samples)


class TestAdamax:
    def test_zero_gradient_no_change(self):
        theta = [np.array([1.0, -2.0])]
        g = [np.zeros(2)]
        m = [np.zeros(2)]
        u = [np.zeros(2)]
        adamax_step(theta, g, m, u, t=1, lr=1e-2)
        assert np.array_equal(theta[0], [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        g_val = 0.37
        theta = [np.array([0.0])]
        g = [np.array([g_val])]
        m = [np.zeros(1)]
        u = [np.zeros(1)]
        adamax_step(theta, g, m, u, t=1, lr=1e-3)
        # m = (1-b1)g, u = |g|, bias correction cancels (1-b1):
        # delta = lr * g / (|g| + eps) ~ lr * sign(g)
        assert theta[0][0] == pytest.approx(-1e-3, rel=1e-6)

    def test_five_steps_match_reference_recurrence(self):
        # quadratic f(x) = 0.5 x^2, grad = x
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.1
        x_ref = 1.0
        m_ref = u_ref = 0.0
        xs = []
        for t in range(1, 6):
            g = x_ref
            m_ref = b1 * m_ref + (1 - b1) * g
            u_ref = max(b2 * u_ref, abs(g))
            x_ref = x_ref - (lr / (1 - b1 ** t)) * m_ref / (u_ref + eps)
            xs.append(x_ref)

        theta = [np.array([1.0])]
        m = [np.zeros(1)]
        u = [np.zeros(1)]
        for t in range(1, 6):
            g = [theta[0].copy()]
            adamax_step(theta, g, m, u, t=t, lr=lr)
            assert theta[0][0] == pytest.approx(xs[t - 1], abs=1e-12)


class TestPredict:
    def test_zero_params_all_foreground_at_half(self):
        pair = SegModelPair(init_params(0, (1, 4, 1)), init_params(1, (1, 4, 1)))
        for p in (pair.params_q, pair.params_c):
            for k in p.kernels:
                k[:] = 0
        img = np.random.default_rng(0).uniform(0, 1, (8, 8))
        m_hat, mask = predict(pair, img, threshold=0.5)
        assert np.all(m_hat == 0.5)
        assert np.all(mask == 1)  # ties at the threshold are foreground

    def test_threshold_above_one_empty(self):
        pair = SegModelPair(init_params(2, (1, 4, 1)), init_params(3, (1, 4, 1)))
        img = np.random.default_rng(1).uniform(0, 1, (8, 8))
        _, mask = predict(pair, img, threshold=1.1)
        assert mask.sum() == 0

    def test_mask_is_thresholded_ensemble(self):
        pair = SegModelPair(init_params(4, (1, 6, 1)), init_params(5, (1, 6, 1)))
        img = np.random.default_rng(2).uniform(0, 1, (10, 10))
        m_hat, mask = predict(pair, img, threshold=0.5)
        q_hat, _ = forward(pair.params_q, img)
        c_hat, _ = forward(pair.params_c, img)
        assert np.array_equal(m_hat, (q_hat + c_hat) / 2)
        assert np.array_equal(mask, (m_hat >= 0.5).astype(np.uint8))


class TestTrain:
    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDataset):
            train([], TrainConfig())

    def test_lambda_zero_consistency_column_zero(self):
        samples = tiny_dataset()
        cfg = TrainConfig(lam=0.0, prepare_epochs=3, total_epochs=3,
                          layout=(1, 4, 1), batch_size=4, seed=0)
        _, history = train(samples, cfg, val_samples=[])
        assert all(row["loss_con"] == 0.0 for row in history)

    def test_determinism_same_seed(self):
        samples = tiny_dataset()
        cfg = TrainConfig(lam=0.4, prepare_epochs=2, total_epochs=4,
                          layout=(1, 4, 1), batch_size=4, seed=7)
        pair1, hist1 = train(tiny_dataset(), cfg, val_samples=samples)
        pair2, hist2 = train(tiny_dataset(), cfg, val_samples=samples)
        assert hist1 == hist2
        for a, b in zip(pair1.params_q.arrays(), pair2.params_q.arrays()):
            assert np.array_equal(a, b)
        for a, b in zip(pair1.params_c.arrays(), pair2.params_c.arrays()):
            assert np.array_equal(a, b)

    def test_prepare_phase_ignores_consistency(self):
        # during the preparation phase the parameters must evolve exactly as
        # if the consistency weight were zero
        cfg_a = TrainConfig(lam=0.7, prepare_epochs=3, total_epochs=3,
                            layout=(1, 4, 1), batch_size=4, seed=5)
        cfg_b = TrainConfig(lam=0.0, prepare_epochs=3, total_epochs=3,
                            layout=(1, 4, 1), batch_size=4, seed=5)
        pair_a, _ = train(tiny_dataset(), cfg_a, val_samples=[])
        pair_b, _ = train(tiny_dataset(), cfg_b, val_samples=[])
        for a, b in zip(pair_a.params_q.arrays(), pair_b.params_q.arrays()):
            assert np.array_equal(a, b)
        for a, b in zip(pair_a.params_c.arrays(), pair_b.params_c.arrays()):
            assert np.array_equal(a, b)

    def test_history_schema_and_phases(self):
        cfg = TrainConfig(lam=0.4, prepare_epochs=2, total_epochs=4,
                          layout=(1, 4, 1), batch_size=4, seed=1)
        samples = tiny_dataset()
        _, history = train(samples, cfg, val_samples=samples)
        assert [row["epoch"] for row in history] == [0, 1, 2, 3]
        assert [row["phase"] for row in history] == ["prepare"] * 2 + ["cotrain"] * 2
        assert all(row["loss_con"] == 0.0 for row in history[:2])
        assert all(np.isfinite(row["val_dice_ens"]) for row in history)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(prepare_epochs=5, total_epochs=3)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(region_mode="bogus")
        with pytest.raises(ValueError):
            TrainConfig(lam=-1.0)
