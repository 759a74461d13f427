"""
误差分析模块 - 负责轨迹比对与误差指标计算（汇总全部控制体/流道与全部时间步的 MAE、MSE）
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from fdm_solver import Trajectory

logger = logging.getLogger(__name__)


class GridMismatchError(ValueError):
    """两条轨迹的时间网格或维度不一致"""


@dataclass
class ErrorReport:
    """
    单个工况的误差报告

    Attributes:
        scenario: 工况代码
        dt: 时间步长 (s)
        level_mae, level_mse: 液位误差，汇总全部控制体与全部时间步
        velocity_mae, velocity_mse: 速度误差，汇总全部流道与全部时间步
        reference_seconds: 参考求解器耗时 (s)
        candidate_seconds: 待检验求解器耗时 (s)
    """
    scenario: str
    dt: float
    level_mae: float
    level_mse: float
    velocity_mae: float
    velocity_mse: float
    reference_seconds: float = float('nan')
    candidate_seconds: float = float('nan')

    def __post_init__(self):
        for name in ('level_mae', 'level_mse', 'velocity_mae', 'velocity_mse'):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} 必须非负，当前为 {value}")

    @property
    def speedup(self) -> float:
        """参考耗时 / 待检验耗时，缺少计时时为 NaN"""
        if not (self.candidate_seconds > 0 and math.isfinite(self.reference_seconds)):
            return float('nan')
        return self.reference_seconds / self.candidate_seconds

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record['speedup'] = self.speedup
        return record


def check_same_grid(a: Trajectory, b: Trajectory) -> None:
    """
    校验两条轨迹共享时间网格

    Raises:
        GridMismatchError: 长度、维度或时刻不一致
    """
    if a.levels.shape != b.levels.shape or a.velocities.shape != b.velocities.shape:
        raise GridMismatchError(
            f"轨迹维度不一致: {a.levels.shape}/{a.velocities.shape} vs "
            f"{b.levels.shape}/{b.velocities.shape}"
        )
    if not np.allclose(a.times, b.times, rtol=1e-12, atol=1e-12):
        worst = int(np.argmax(np.abs(a.times - b.times)))
        raise GridMismatchError(f"时间网格不一致: 第 {worst} 个时刻 {a.times[worst]} vs {b.times[worst]}")


def pooled_errors(candidate: np.ndarray, reference: np.ndarray) -> Tuple[float, float]:
    """
    汇总全部样本的 (MAE, MSE)

    Returns:
        Tuple[float, float]: 平均绝对误差与均方误差
    """
    diff = np.asarray(candidate, dtype=float) - np.asarray(reference, dtype=float)
    if diff.size == 0:
        return 0.0, 0.0
    return float(np.mean(np.abs(diff))), float(np.mean(diff * diff))


def compare_trajectories(candidate: Trajectory, reference: Trajectory, scenario: str = '',
                         dt: Optional[float] = None) -> ErrorReport:
    """
    比较两条轨迹

    Args:
        candidate: 待检验轨迹（通常为 P2F）
        reference: 参考轨迹（通常为 FDM）
        scenario: 工况代码
        dt: 时间步长，缺省由时间网格推断

    Returns:
        ErrorReport: 误差报告（不含计时）

    Raises:
        GridMismatchError: 时间网格不一致
    """
    check_same_grid(candidate, reference)
    if dt is None:
        dt = float(reference.times[1] - reference.times[0]) if reference.n_steps > 1 else 0.0
    level_mae, level_mse = pooled_errors(candidate.levels, reference.levels)
    velocity_mae, velocity_mse = pooled_errors(candidate.velocities, reference.velocities)
    logger.debug(f"[{scenario or '-'}] dt={dt}: 液位 MAE {level_mae:.3e}, 速度 MAE {velocity_mae:.3e}")
    return ErrorReport(scenario=scenario, dt=dt, level_mae=level_mae, level_mse=level_mse,
                       velocity_mae=velocity_mae, velocity_mse=velocity_mse)


def split_half_mae(candidate: Trajectory, reference: Trajectory) -> Tuple[float, float]:
    """
    液位 MAE 分别在前半段与后半段的汇总值（不含 t=0 的初始状态）

    用于检验误差不随时间累积。

    Returns:
        Tuple[float, float]: (前半段 MAE, 后半段 MAE)
    """
    check_same_grid(candidate, reference)
    steps = candidate.n_steps - 1
    if steps < 2:
        raise ValueError(f"轨迹至少需要两个时间步才能分段，当前为 {steps}")
    mid = 1 + steps // 2
    first, _ = pooled_errors(candidate.levels[1:mid], reference.levels[1:mid])
    second, _ = pooled_errors(candidate.levels[mid:], reference.levels[mid:])
    return first, second
