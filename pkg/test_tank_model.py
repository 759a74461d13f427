"""
水箱网络模型测试 - 驱动水头、空泡份额、配置与状态校验
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from tank_model import (DomainBounds, SystemState, TankNetworkConfig, driving_head, driving_heads,
                        equilibrium_velocity, parse_levels, total_volume, validate_state,
                        void_fraction, void_fractions)


def state_of(levels):
    return SystemState.at_rest(levels)


class TestDrivingHead:
    def test_full_head_across_first_path(self):
        assert driving_head(state_of([2, 0, 0, 0, 0, 0]), 1) == 2.0

    def test_equal_levels_give_zero_head(self):
        assert driving_head(state_of([1.0, 0.5, 0.5, 0, 0, 0]), 2) == 0.0

    def test_plain_difference(self):
        assert driving_head(state_of([1.3, 0.7, 0, 0, 0, 0]), 1) == pytest.approx(0.6, abs=1e-15)

    def test_reverse_difference_clamped(self):
        assert driving_head(state_of([0.2, 1.0, 0, 0, 0, 0]), 1) == 0.0

    @pytest.mark.parametrize('j', [0, 6, -1])
    def test_index_out_of_range(self, j):
        with pytest.raises(IndexError):
            driving_head(state_of([2, 0, 0, 0, 0, 0]), j)

    def test_non_negative_and_bounded(self):
        rng = np.random.default_rng(11)
        cfg = TankNetworkConfig()
        for _ in range(50):
            heads = driving_heads(state_of(rng.uniform(0, cfg.tank_height, 6)))
            assert np.all(heads >= 0.0)
            assert np.all(heads <= cfg.tank_height)


class TestVoidFraction:
    def test_wet_upstream(self):
        assert void_fraction(state_of([2, 0, 0, 0, 0, 0]), 1) == 0.0

    def test_dry_upstream(self):
        assert void_fraction(state_of([0, 1, 0, 0, 0, 0]), 1) == 1.0

    def test_threshold_case(self):
        cfg = TankNetworkConfig()
        assert void_fraction(state_of([cfg.dry_threshold / 2, 0, 0, 0, 0, 0]), 1, cfg) == 1.0
        assert void_fraction(state_of([cfg.dry_threshold * 2, 0, 0, 0, 0, 0]), 1, cfg) == 0.0

    def test_vector_form_is_binary(self):
        voids = void_fractions(state_of([2, 0, 1, 0, 0.5, 0]))
        assert voids.tolist() == [0.0, 1.0, 0.0, 1.0, 0.0]


class TestConfig:
    def test_defaults(self):
        cfg = TankNetworkConfig()
        assert cfg.n_tanks == 6
        assert cfg.n_flow_paths == 5
        assert cfg.fp_area == math.pi * (0.2 / 2) ** 2
        assert cfg.transfer_coeff == pytest.approx(0.031415926535897934 / 50.0, rel=1e-15)

    @pytest.mark.parametrize('kwargs', [
        {'n_tanks': 1},
        {'tank_area': 0.0},
        {'loss_coeff': -1.0},
        {'gravity': float('nan')},
        {'open_fraction': 0.0},
        {'open_fraction': 1.5},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TankNetworkConfig(**kwargs)

    def test_bounds_positive(self):
        with pytest.raises(ValueError):
            DomainBounds(time_window=0.0)


class TestSystemState:
    def test_arrays_are_read_only(self):
        state = state_of([2, 0, 0, 0, 0, 0])
        with pytest.raises(ValueError):
            state.h[0] = 1.0

    def test_rejects_negative_level(self):
        with pytest.raises(ValueError):
            SystemState(t=0.0, h=[-0.1, 0, 0], v=[0, 0])

    def test_rejects_negative_velocity(self):
        with pytest.raises(ValueError):
            SystemState(t=0.0, h=[1, 0, 0], v=[-1.0, 0])

    def test_rejects_inconsistent_sizes(self):
        with pytest.raises(ValueError):
            SystemState(t=0.0, h=[1, 0, 0], v=[0, 0, 0])

    def test_validate_against_config(self):
        cfg = TankNetworkConfig()
        validate_state(state_of([2, 0, 0, 0, 0, 0]), cfg)
        with pytest.raises(ValueError):
            validate_state(state_of([2.5, 0, 0, 0, 0, 0]), cfg)
        with pytest.raises(ValueError):
            validate_state(state_of([1, 0, 0]), cfg)


def test_equilibrium_velocity():
    cfg = TankNetworkConfig()
    assert equilibrium_velocity(1.0, cfg) == pytest.approx(4.429446918, abs=1e-9)
    assert equilibrium_velocity(2.0, cfg) == pytest.approx(6.264184, abs=1e-6)
    assert equilibrium_velocity(0.0, cfg) == 0.0


def test_total_volume():
    assert total_volume(state_of([2, 0, 0, 0, 0, 0]), TankNetworkConfig()) == 100.0


class TestParseLevels:
    def test_nominal(self):
        levels = parse_levels("2,0,0,0,0,0", TankNetworkConfig())
        assert levels.tolist() == [2.0, 0, 0, 0, 0, 0]

    @pytest.mark.parametrize('text', ["2,0,0,0,0,0,0", "2,0", "a,b,c,d,e,f", "3,0,0,0,0,0", "-1,0,0,0,0,0"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_levels(text, TankNetworkConfig())
