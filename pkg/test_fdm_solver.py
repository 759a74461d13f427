"""
参考有限差分求解器测试 - 动量单步、固定水头积分、质量更新与整体仿真
"""

import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from fdm_solver import (FdmConfig, FrictionDiagnostics, Trajectory, fdm_simulate, mass_step,
                        momentum_ode_oracle, momentum_step_reference)
from tank_model import SystemState, TankNetworkConfig, equilibrium_velocity

NOMINAL = [2.0, 0, 0, 0, 0, 0]


@pytest.fixture
def cfg():
    return TankNetworkConfig()


@pytest.fixture
def fdm():
    return FdmConfig()


class TestMomentumStep:
    def test_no_driving_force(self, cfg, fdm):
        assert momentum_step_reference(0.0, 0.0, 1.0, cfg, fdm) == 0.0

    @pytest.mark.parametrize('dh', [0.5, 1.0, 2.0])
    @pytest.mark.parametrize('dt', [0.01, 0.2, 1.0])
    def test_equilibrium_is_fixed_point(self, cfg, fdm, dh, dt):
        v_eq = equilibrium_velocity(dh, cfg)
        assert momentum_step_reference(v_eq, dh, dt, cfg, fdm) == pytest.approx(v_eq, abs=1e-8)

    def test_large_step_reaches_equilibrium(self, cfg, fdm):
        v = momentum_step_reference(0.0, 1.0, 1e6, cfg, fdm)
        assert v == pytest.approx(4.4294, abs=1e-4)

    def test_monotone_in_head(self, cfg, fdm):
        heads = np.linspace(0.0, 2.0, 21)
        for v_n in (0.0, 2.0, 6.0):
            values = [momentum_step_reference(v_n, dh, 0.5, cfg, fdm) for dh in heads]
            assert np.all(np.diff(values) >= 0.0)

    def test_converges_at_unit_step(self, cfg, fdm):
        diagnostics = FrictionDiagnostics()
        momentum_step_reference(0.0, 2.0, 1.0, cfg, fdm, diagnostics)
        momentum_step_reference(6.0, 0.1, 1.0, cfg, fdm, diagnostics)
        assert diagnostics.calls == 2
        assert diagnostics.converged

    def test_non_convergence_is_flagged(self, cfg, caplog):
        strict = FdmConfig(friction_iter_max=1, friction_relaxation=1.0)
        diagnostics = FrictionDiagnostics()
        v = momentum_step_reference(0.0, 2.0, 1.0, cfg, strict, diagnostics)
        assert v >= 0.0
        assert diagnostics.non_converged == 1
        assert '未收敛' in caplog.text


class TestOracle:
    def test_zero_solution(self, cfg, fdm):
        times, v = momentum_ode_oracle(0.0, 0.0, 1.0, cfg, fdm)
        assert np.all(v == 0.0)
        assert times[0] == 0.0 and times[-1] == 1.0

    def test_sample_count(self, cfg, fdm):
        times, v = momentum_ode_oracle(0.0, 1.0, 1.0, cfg, fdm)
        assert times.size == v.size == fdm.substeps_per_dt + 1

    def test_decay_from_above(self, cfg, fdm):
        _, v = momentum_ode_oracle(6.0, 1.0, 1.0, cfg, fdm)
        # 平台段允许舍入级别的噪声
        assert np.all(np.diff(v) <= 1e-12)
        assert v[1] < v[0]
        assert v[-1] > 4.4294

    def test_rise_from_rest(self, cfg, fdm):
        _, v = momentum_ode_oracle(0.0, 1.0, 1.0, cfg, fdm)
        increments = np.diff(v)
        assert np.all(increments >= -1e-12)
        assert np.all(increments[:10] > 0.0)
        # 凹增长：增量单调不增（容差覆盖摩擦迭代的收敛误差）
        assert np.all(np.diff(increments) <= 1e-9)
        assert v[-1] == pytest.approx(4.4294, abs=1e-4)


class TestMassStep:
    def test_hand_evaluated_update(self, cfg):
        state = SystemState.at_rest(NOMINAL)
        h = mass_step(state, np.array([1.0, 0, 0, 0, 0]), np.zeros(5), 1.0, cfg)
        assert h[0] == pytest.approx(1.99937168, abs=1e-8)
        assert h[1] == pytest.approx(0.00062832, abs=1e-8)
        assert np.all(h[2:] == 0.0)

    def test_zero_velocity_unchanged(self, cfg):
        state = SystemState.at_rest([1.5, 0.5, 0, 0, 0.3, 0])
        h = mass_step(state, np.zeros(5), np.zeros(5), 1.0, cfg)
        assert np.array_equal(h, state.h)

    def test_conserves_volume(self, cfg):
        rng = np.random.default_rng(5)
        for _ in range(20):
            state = SystemState.at_rest(rng.uniform(0.5, 1.5, 6))
            h = mass_step(state, rng.uniform(0, 6, 5), np.zeros(5), 1.0, cfg)
            assert abs(h.sum() - state.h.sum()) <= 1e-12 * state.h.sum()

    def test_void_gates_flux(self, cfg):
        state = SystemState.at_rest([2.0, 0, 0, 0, 0, 0])
        h = mass_step(state, np.ones(5), np.array([0, 1, 1, 1, 1.0]), 1.0, cfg)
        assert h[2:].tolist() == [0.0] * 4

    def test_outflow_limited_to_available_water(self, cfg):
        state = SystemState.at_rest([1e-5, 0, 0, 0, 0, 0])
        h = mass_step(state, np.array([5.0, 0, 0, 0, 0]), np.zeros(5), 1.0, cfg)
        assert h[0] == 0.0
        assert h[1] == pytest.approx(1e-5, rel=1e-12)

    def test_overflow_returned_upstream(self, cfg):
        state = SystemState.at_rest([2.0, 2.0, 0, 0, 0, 0])
        h = mass_step(state, np.array([5.0, 0, 0, 0, 0]), np.zeros(5), 1.0, cfg)
        assert np.all(h <= cfg.tank_height)
        assert h.sum() == pytest.approx(4.0, rel=1e-12)

    def test_full_tanks_never_exceed_height(self, cfg):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            levels = rng.uniform(1.5, 2.0, 6)
            levels[rng.integers(0, 6)] = cfg.tank_height
            state = SystemState.at_rest(levels)
            h = mass_step(state, rng.uniform(0, 8, 5), np.zeros(5), 1.0, cfg)
            assert h.max() <= cfg.tank_height
            assert h.min() >= 0.0
            assert abs(h.sum() - state.h.sum()) <= 1e-12 * state.h.sum()


class TestSimulate:
    def test_zero_initial_state(self, cfg, fdm):
        traj = fdm_simulate(SystemState.at_rest([0.0] * 6), cfg, fdm.with_dt(1.0, 20.0))
        assert np.all(traj.levels == 0.0)
        assert np.all(traj.velocities == 0.0)

    def test_row_count_and_grid(self, cfg, fdm):
        traj = fdm_simulate(SystemState.at_rest(NOMINAL), cfg, fdm.with_dt(1.0, 10.0))
        assert traj.n_steps == 11
        assert np.array_equal(traj.times, np.arange(11) * 1.0)

    def test_exact_mass_conservation(self, cfg, fdm):
        traj = fdm_simulate(SystemState.at_rest(NOMINAL), cfg, fdm.with_dt(1.0, 1000.0))
        drift = np.abs(traj.levels.sum(axis=1) - 2.0)
        assert drift.max() <= 1e-12 * 2.0

    def test_invariants_hold(self, cfg, fdm):
        traj = fdm_simulate(SystemState.at_rest([1.0, 0.5, 0.3, 0.2, 0, 0]), cfg, fdm.with_dt(0.5, 100.0))
        assert np.all(traj.levels >= 0.0) and np.all(traj.levels <= cfg.tank_height)
        assert np.all(traj.velocities >= 0.0)
        assert traj.diagnostics.converged

    def test_long_horizon_equipartition(self, cfg, fdm):
        traj = fdm_simulate(SystemState.at_rest(NOMINAL), cfg, fdm.with_dt(1.0, 5000.0))
        assert np.all(np.abs(traj.final_state.h - 2.0 / 6.0) <= 2e-3)

    def test_coarse_step_agrees_with_fine_step(self, cfg, fdm):
        coarse = fdm_simulate(SystemState.at_rest(NOMINAL), cfg, fdm.with_dt(1.0, 400.0))
        fine = fdm_simulate(SystemState.at_rest(NOMINAL), cfg, fdm.with_dt(0.05, 400.0))
        assert fine.times[-1] == pytest.approx(400.0)
        assert np.all(np.abs(coarse.final_state.h - fine.final_state.h) <= 1e-2)

    def test_first_order_grid_convergence(self, cfg, fdm):
        runs = [fdm_simulate(SystemState.at_rest(NOMINAL), cfg, fdm.with_dt(dt, 0.05))
                for dt in (0.002, 0.001, 0.0005)]
        coarse, mid, fine = (r.velocities[:, 0] for r in runs)
        e_coarse = np.max(np.abs(coarse - mid[::2]))
        e_fine = np.max(np.abs(mid[::2] - fine[::4]))
        assert 1.5 <= e_coarse / e_fine <= 2.5


class TestTrajectoryCsv:
    def test_header_and_precision(self, cfg, fdm, tmp_path):
        traj = fdm_simulate(SystemState.at_rest(NOMINAL), cfg, fdm.with_dt(1.0, 5.0))
        path = traj.to_csv(str(tmp_path / 'traj.csv'))
        header = open(path, encoding='utf-8').readline().strip()
        assert header == 't,h1,h2,h3,h4,h5,h6,v1,v2,v3,v4,v5'
        loaded = Trajectory.from_csv(path)
        assert np.array_equal(loaded.levels, traj.levels)
        assert np.array_equal(loaded.velocities, traj.velocities)

    def test_rejects_non_increasing_times(self):
        with pytest.raises(ValueError):
            Trajectory(times=[0.0, 0.0], levels=np.zeros((2, 3)), velocities=np.zeros((2, 2)))
