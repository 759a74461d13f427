"""
参数化 PINN 测试 - 硬初始条件、动量残差、配点采样、优化器与训练循环
"""

import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from autodiff_engine import evaluate_loss, init_model
from fdm_solver import FdmConfig, momentum_ode_oracle
from napinn import (AdamOptimizer, CollocationConfig, CollocationSet, TrainConfig, clip_gradient,
                    hard_ic_velocity, learning_rate_at, momentum_residual, predict_velocity,
                    sample_collocation, sample_training_sets, train)
from tank_model import DomainBounds, TankNetworkConfig, equilibrium_velocity

SMALL_TRAIN = TrainConfig(layer_sizes=(3, 16, 16, 1), n_epochs=200,
                          lr_schedule=((1, 1e-2), (101, 1e-3)), val_every=20, seed=0)


@pytest.fixture(scope='module')
def small_run():
    bounds, physics = DomainBounds(), TankNetworkConfig()
    train_set, val_set = sample_training_sets(bounds, CollocationConfig(n_train=256, n_val=128), seed=0)
    model, log = train(train_set, val_set, SMALL_TRAIN, physics, bounds)
    return model, log, train_set, val_set


class TestHardInitialCondition:
    def test_exact_at_time_zero(self, bounds):
        rng = np.random.default_rng(0)
        for seed in range(100):
            model = init_model((3, 8, 8, 1), bounds, seed=seed)
            dh, v0 = rng.uniform(0, 2), rng.uniform(0, 8)
            v_hat, _ = hard_ic_velocity(model, dh, 0.0, v0)
            assert v_hat == v0

    def test_zero_model_keeps_initial_velocity(self, zero_model):
        v_hat, dv_dt = hard_ic_velocity(zero_model, 1.0, 0.5, 2.0)
        assert v_hat == 2.0
        assert dv_dt == 0.0

    def test_time_derivative_against_finite_difference(self, small_model):
        step = 1e-6
        for dh, t, v0 in [(0.5, 0.3, 1.0), (1.8, 0.9, 6.0), (0.0, 0.5, 0.0)]:
            _, dv_dt = hard_ic_velocity(small_model, dh, t, v0)
            plus, _ = hard_ic_velocity(small_model, dh, t + step, v0)
            minus, _ = hard_ic_velocity(small_model, dh, t - step, v0)
            assert dv_dt == pytest.approx((plus - minus) / (2 * step), rel=1e-6, abs=1e-8)


class TestMomentumResidual:
    def test_at_rest_without_head(self, physics):
        assert momentum_residual(0.0, 0.0, 0.0, physics) == 0.0

    def test_equilibrium(self, physics):
        v = equilibrium_velocity(1.0, physics)
        assert abs(momentum_residual(v, 0.0, 1.0, physics)) <= 1e-12

    def test_head_only(self, physics):
        assert momentum_residual(0.0, 0.0, 1.0, physics) == pytest.approx(-9.81)

    def test_friction_is_odd(self, physics):
        for v in (0.3, 2.0, 7.5):
            assert momentum_residual(-v, 0.0, 0.0, physics) == -momentum_residual(v, 0.0, 0.0, physics)


class TestCollocation:
    def test_boundary_enrichment_counts(self, bounds):
        batch = sample_collocation(1000, bounds, 0.1, 0.1, seed=0)
        assert np.count_nonzero(batch.dh == 0.0) == 100
        assert np.count_nonzero(batch.v0 == 0.0) == 100

    def test_count_rounds_up(self, bounds):
        batch = sample_collocation(25, bounds, 0.1, 0.1, seed=0)
        assert np.count_nonzero(batch.dh == 0.0) == 3
        assert np.count_nonzero(sample_collocation(20000, bounds, 0.1, 0.1, seed=1).v0 == 0.0) == 2000

    def test_within_domain(self, bounds):
        batch = sample_collocation(2000, bounds, 0.1, 0.1, seed=4)
        assert len(batch) == 2000
        assert np.all((batch.dh >= 0) & (batch.dh <= bounds.dh_train))
        assert np.all((batch.t >= 0) & (batch.t <= bounds.time_window))
        assert np.all((batch.v0 >= 0) & (batch.v0 <= bounds.v0_max))

    def test_seeded(self, bounds):
        a = sample_collocation(100, bounds, 0.1, 0.1, seed=5)
        b = sample_collocation(100, bounds, 0.1, 0.1, seed=5)
        c = sample_collocation(100, bounds, 0.1, 0.1, seed=6)
        assert np.array_equal(a.t, b.t) and np.array_equal(a.dh, b.dh)
        assert not np.array_equal(a.t, c.t)

    def test_train_and_validation_sets_differ(self, bounds):
        train_set, val_set = sample_training_sets(bounds, CollocationConfig(n_train=50, n_val=50), seed=0)
        assert not np.array_equal(train_set.t, val_set.t)

    def test_frozen(self, small_batch):
        with pytest.raises(ValueError):
            small_batch.t[0] = 0.0

    @pytest.mark.parametrize('n, r_h0', [(0, 0.1), (10, 1.0), (10, -0.1)])
    def test_rejects_invalid(self, bounds, n, r_h0):
        with pytest.raises(ValueError):
            sample_collocation(n, bounds, r_h0, 0.1, seed=0)


class TestOptimizer:
    def test_learning_rate_milestones(self):
        schedule = TrainConfig().lr_schedule
        assert learning_rate_at(schedule, 1) == 1e-3
        assert learning_rate_at(schedule, 10000) == 1e-3
        assert learning_rate_at(schedule, 10001) == 1e-4
        assert learning_rate_at(schedule, 20001) == 1e-5
        assert learning_rate_at(schedule, 30000) == 1e-5

    def test_clip_large_gradient(self):
        grad, norm = clip_gradient(np.array([3.0, 4.0]), 1.0)
        assert norm == 5.0
        np.testing.assert_allclose(grad, [0.6, 0.8])

    def test_small_gradient_untouched(self):
        grad, norm = clip_gradient(np.array([0.3, 0.4]), 1.0)
        assert norm == pytest.approx(0.5)
        assert grad.tolist() == [0.3, 0.4]

    def test_first_adam_step_follows_sign(self):
        optimizer = AdamOptimizer(2)
        params = optimizer.step(np.zeros(2), np.array([2.0, -3.0]), 1e-3)
        np.testing.assert_allclose(params, [-1e-3, 1e-3], rtol=1e-6)
        assert optimizer.step_count == 1

    @pytest.mark.parametrize('kwargs', [
        {'lr_schedule': ((2, 1e-3),)},
        {'lr_schedule': ((1, 1e-3), (1, 1e-4))},
        {'lr_schedule': ((1, 0.0),)},
        {'n_epochs': 0},
        {'clip_norm': 0.0},
        {'val_every': 0},
    ])
    def test_train_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_collocation_config_validation(self):
        with pytest.raises(ValueError):
            CollocationConfig(n_train=0)
        with pytest.raises(ValueError):
            CollocationConfig(r_v0=1.0)


class TestTraining:
    def test_log_layout(self, small_run):
        _, log, _, _ = small_run
        assert list(log.columns) == ['epoch', 'train_loss', 'val_loss', 'lr']
        assert log['epoch'].tolist() == list(range(1, 201))
        assert log['val_loss'].notna().sum() == 10
        assert log.loc[log['epoch'] == 101, 'lr'].item() == 1e-3

    def test_loss_decreases(self, small_run):
        _, log, _, _ = small_run
        assert log['train_loss'].iloc[-1] < log['train_loss'].iloc[0]

    def test_returns_best_validation_snapshot(self, small_run, physics, bounds):
        model, log, _, val_set = small_run
        best = evaluate_loss(model, val_set, physics)
        initial = evaluate_loss(init_model(SMALL_TRAIN.layer_sizes, bounds, SMALL_TRAIN.seed), val_set, physics)
        assert best <= initial
        assert best <= log['val_loss'].min()
        assert best <= log['val_loss'].dropna().iloc[-1]

    def test_reproducible(self, small_run, physics, bounds):
        model, log, train_set, val_set = small_run
        again, again_log = train(train_set, val_set, SMALL_TRAIN, physics, bounds)
        assert np.array_equal(again.get_flat(), model.get_flat())
        assert again_log['train_loss'].tolist() == log['train_loss'].tolist()

    def test_non_finite_loss_aborts_with_snapshot(self, small_model, physics, bounds, caplog):
        bad = CollocationSet(dh=[0.5, np.inf], t=[0.5, 0.5], v0=[0.0, 0.0])
        val_set = sample_collocation(16, bounds, 0.1, 0.1, seed=1)
        cfg = TrainConfig(layer_sizes=small_model.layer_sizes, n_epochs=5)
        model, log = train(bad, val_set, cfg, physics, bounds, initial=small_model)
        assert len(log) == 0
        assert np.array_equal(model.get_flat(), small_model.get_flat())
        assert '非有限' in caplog.text


class TestPredictVelocity:
    def test_time_zero_returns_initial_velocity(self, small_model):
        assert predict_velocity(small_model, 1.0, 3.5, 0.0) == 3.5

    def test_zero_model(self, zero_model):
        assert predict_velocity(zero_model, 1.0, 2.0, 0.5) == 2.0

    def test_out_of_domain_is_clamped(self, small_model, caplog):
        inside = predict_velocity(small_model, 2.0, 1.0, 0.5)
        outside = predict_velocity(small_model, 3.0, 1.0, 0.5)
        assert outside == inside
        assert '超出训练域' in caplog.text

    def test_output_non_negative(self, bounds):
        rng = np.random.default_rng(2)
        for seed in range(20):
            model = init_model((3, 8, 1), bounds, seed=seed)
            assert predict_velocity(model, rng.uniform(0, 2), 0.0, rng.uniform(0, 1)) >= 0.0


@pytest.mark.slow
class TestTrainedModel:
    def test_zero_flow_stays_near_zero(self, trained_model):
        for t in np.linspace(0.0, trained_model.bounds.time_window, 11):
            assert predict_velocity(trained_model, 0.0, 0.0, t) <= 5e-3

    def test_matches_oracle_from_moving_start(self, trained_model, physics):
        window = trained_model.bounds.time_window
        _, oracle = momentum_ode_oracle(3.0, 2.0, window, physics, FdmConfig(dt=window))
        assert abs(predict_velocity(trained_model, 2.0, 3.0, window) - oracle[-1]) <= 2e-2
