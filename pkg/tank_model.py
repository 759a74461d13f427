"""
水箱网络模型模块 - 定义级联水箱的几何与物理常数、系统状态，以及两个求解器共用的状态评估核
（驱动水头、空泡份额）
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_DRY_THRESHOLD = 1e-9


@dataclass(frozen=True)
class TankNetworkConfig:
    """级联水箱网络配置类（单位：m、s、kg）"""
    n_tanks: int = 6
    tank_area: float = 50.0          # 水箱横截面积 A_t (m²)
    tank_height: float = 2.0         # 水箱高度 (m)
    fp_diameter: float = 0.2         # 流道直径 (m)
    inertial_length: float = 0.1     # 惯性长度 L (m)
    elevation_drop: float = 1.8      # 相邻水箱高差 (m)，仅作记录，不参与计算
    open_fraction: float = 1.0       # 流道开度 F
    loss_coeff: float = 1.0          # 形阻+壁阻损失系数 K*
    gravity: float = 9.81            # 重力加速度 g (m/s²)
    density: float = 1000.0          # 水的密度 ρ (kg/m³)
    dry_threshold: float = DEFAULT_DRY_THRESHOLD  # 判定水箱干涸的液位阈值 (m)

    def __post_init__(self):
        """初始化后校验"""
        if int(self.n_tanks) != self.n_tanks or self.n_tanks < 2:
            raise ValueError(f"n_tanks 必须为不小于2的整数，当前为 {self.n_tanks}")
        positive = {
            'tank_area': self.tank_area,
            'tank_height': self.tank_height,
            'fp_diameter': self.fp_diameter,
            'inertial_length': self.inertial_length,
            'elevation_drop': self.elevation_drop,
            'loss_coeff': self.loss_coeff,
            'gravity': self.gravity,
            'density': self.density,
            'dry_threshold': self.dry_threshold,
        }
        for name, value in positive.items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} 必须为正的有限数，当前为 {value}")
        if not (0.0 < self.open_fraction <= 1.0):
            raise ValueError(f"open_fraction 必须位于 (0, 1]，当前为 {self.open_fraction}")

    @property
    def n_flow_paths(self) -> int:
        """流道数量（n_tanks - 1）"""
        return self.n_tanks - 1

    @property
    def fp_area(self) -> float:
        """流道截面积 A_p = π·(d/2)²"""
        return math.pi * (self.fp_diameter / 2.0) ** 2

    @property
    def transfer_coeff(self) -> float:
        """单位速度、单位时间对应的液位变化系数 A_p·F/A_t"""
        return self.fp_area * self.open_fraction / self.tank_area


@dataclass(frozen=True)
class DomainBounds:
    """
    训练域边界，同时作为网络输入的归一化尺度

    Attributes:
        dh_train: 驱动水头训练上界 (m)
        v0_max: 初始速度训练上界 (m/s)
        time_window: 训练时间窗 T (s)，即耦合器允许的最大时间步长
    """
    dh_train: float = 2.0
    v0_max: float = 8.0
    time_window: float = 1.0

    def __post_init__(self):
        for name in ('dh_train', 'v0_max', 'time_window'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} 必须为正的有限数，当前为 {value}")


@dataclass(frozen=True, eq=False)
class SystemState:
    """
    某一时刻的系统状态

    Attributes:
        t: 时间 (s)
        h: 各控制体液位，长度 n_tanks (m)
        v: 各流道速度，长度 n_tanks-1 (m/s)
    """
    t: float
    h: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        v = np.array(self.v, dtype=float)
        if h.ndim != 1 or v.ndim != 1 or v.size != h.size - 1:
            raise ValueError(f"状态维度不一致: len(h)={h.size}, len(v)={v.size}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(v)) and math.isfinite(self.t)):
            raise ValueError("状态中包含非有限数值")
        if np.any(h < 0.0):
            raise ValueError(f"液位不能为负: {h.tolist()}")
        if np.any(v < 0.0):
            raise ValueError(f"单向流假设下速度不能为负: {v.tolist()}")
        h.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, 'h', h)
        object.__setattr__(self, 'v', v)
        object.__setattr__(self, 't', float(self.t))

    @property
    def n_tanks(self) -> int:
        return self.h.size

    @classmethod
    def at_rest(cls, levels: Sequence[float], t: float = 0.0) -> 'SystemState':
        """由初始液位构造所有流道速度为零的状态"""
        levels = np.asarray(levels, dtype=float)
        return cls(t=t, h=levels, v=np.zeros(levels.size - 1))


def validate_state(state: SystemState, cfg: TankNetworkConfig) -> None:
    """
    校验状态是否满足网络配置（水箱数量、液位上限）

    Raises:
        ValueError: 状态与配置不符
    """
    if state.n_tanks != cfg.n_tanks:
        raise ValueError(f"状态包含 {state.n_tanks} 个水箱，配置要求 {cfg.n_tanks} 个")
    if np.any(state.h > cfg.tank_height):
        raise ValueError(f"液位超过水箱高度 {cfg.tank_height} m: {state.h.tolist()}")


def _check_fp_index(state: SystemState, j: int) -> None:
    if not 1 <= j <= state.n_tanks - 1:
        raise IndexError(f"流道编号 {j} 越界，应位于 [1, {state.n_tanks - 1}]")


def driving_head(state: SystemState, j: int) -> float:
    """
    计算第 j 条流道（1起始）的驱动水头

    流道 j 始终由控制体 j 流向控制体 j+1，水头取两者液位差并截断为非负。

    Args:
        state: 系统状态
        j: 流道编号，1 ≤ j ≤ n_tanks-1

    Returns:
        float: max(h_j - h_{j+1}, 0) (m)
    """
    _check_fp_index(state, j)
    return max(float(state.h[j - 1] - state.h[j]), 0.0)


def void_fraction(state: SystemState, j: int, cfg: Optional[TankNetworkConfig] = None) -> float:
    """
    计算第 j 条流道（1起始）的空泡份额（二值处理）

    上游控制体液位不高于干涸阈值时返回 1.0（该流道无水可输送），否则返回 0.0。

    Args:
        state: 系统状态
        j: 流道编号
        cfg: 网络配置，缺省时使用默认干涸阈值

    Returns:
        float: 0.0 或 1.0
    """
    _check_fp_index(state, j)
    eps_dry = cfg.dry_threshold if cfg is not None else DEFAULT_DRY_THRESHOLD
    return 1.0 if state.h[j - 1] <= eps_dry else 0.0


def driving_heads(state: SystemState) -> np.ndarray:
    """全部流道的驱动水头向量"""
    return np.array([driving_head(state, j) for j in range(1, state.n_tanks)])


def void_fractions(state: SystemState, cfg: Optional[TankNetworkConfig] = None) -> np.ndarray:
    """全部流道的空泡份额向量"""
    return np.array([void_fraction(state, j, cfg) for j in range(1, state.n_tanks)])


def equilibrium_velocity(dh: float, cfg: TankNetworkConfig) -> float:
    """固定水头下动量方程的稳态速度 √(2·g·Δh/K*)"""
    return math.sqrt(2.0 * cfg.gravity * max(dh, 0.0) / cfg.loss_coeff)


def total_volume(state: SystemState, cfg: TankNetworkConfig) -> float:
    """系统总水量 Σ A_t·h_i (m³)"""
    return float(cfg.tank_area * np.sum(state.h))


def parse_levels(text: str, cfg: TankNetworkConfig) -> np.ndarray:
    """
    解析形如 "2,0,0,0,0,0" 的初始液位字符串

    Raises:
        ValueError: 数量不符、无法解析或液位越界
    """
    try:
        levels = np.array([float(item) for item in text.split(',') if item.strip()], dtype=float)
    except ValueError as e:
        raise ValueError(f"无法解析初始液位 '{text}': {e}")
    if levels.size != cfg.n_tanks:
        raise ValueError(f"初始液位包含 {levels.size} 个值，配置要求 {cfg.n_tanks} 个")
    if np.any(levels < 0.0) or np.any(levels > cfg.tank_height) or not np.all(np.isfinite(levels)):
        raise ValueError(f"初始液位必须位于 [0, {cfg.tank_height}]: {levels.tolist()}")
    return levels
