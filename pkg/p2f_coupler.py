"""
P2F 耦合器模块 - 节点指派的混合时间推进：每步先由速度求解器（PINN 或参考积分器）
逐流道给出新速度，再由有限差分质量守恒更新全部控制体液位
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Protocol, Union

import numpy as np

from autodiff_engine import MlpModel
from fdm_solver import FdmConfig, Trajectory, mass_step, momentum_ode_oracle
from napinn import predict_velocity
from tank_model import (SystemState, TankNetworkConfig, driving_heads, total_volume, validate_state,
                        void_fractions)

logger = logging.getLogger(__name__)


class TimeStepError(ValueError):
    """时间步长超出训练时间窗"""

    def __init__(self, dt: float, max_dt: float):
        self.dt = dt
        self.max_dt = max_dt
        super().__init__(f"时间步长 {dt}s 超出训练时间窗 {max_dt}s (time step exceeds training window)")


class VelocitySolver(Protocol):
    """单流道速度求解器：给定步初水头与速度，返回步末速度"""

    @property
    def max_dt(self) -> float: ...

    def __call__(self, dh: float, v0: float, dt: float) -> float: ...


@dataclass(frozen=True)
class PinnVelocitySolver:
    """以训练好的参数化 PINN 推理流道速度"""
    model: MlpModel

    @property
    def max_dt(self) -> float:
        return self.model.bounds.time_window

    def __call__(self, dh: float, v0: float, dt: float) -> float:
        return predict_velocity(self.model, dh, v0, dt)


@dataclass(frozen=True)
class OracleVelocitySolver:
    """
    以固定水头动量方程的细步积分代替网络，用于脱离训练质量单独检验耦合逻辑

    substeps=1 且 fdm.dt 等于耦合步长时，与参考求解器逐位一致。
    """
    cfg: TankNetworkConfig
    fdm: FdmConfig
    substeps: Optional[int] = None

    @property
    def max_dt(self) -> float:
        return math.inf

    def __call__(self, dh: float, v0: float, dt: float) -> float:
        _, velocities = momentum_ode_oracle(v0, dh, dt, self.cfg, self.fdm, self.substeps)
        return float(velocities[-1])


SolverLike = Union[MlpModel, VelocitySolver]


def as_velocity_solver(solver: SolverLike) -> VelocitySolver:
    """模型对象包装为 PinnVelocitySolver，其余原样返回"""
    if isinstance(solver, MlpModel):
        return PinnVelocitySolver(solver)
    return solver


def _check_dt(dt: float, solver: VelocitySolver) -> None:
    if not (math.isfinite(dt) and dt > 0):
        raise TimeStepError(dt, solver.max_dt)
    if dt > solver.max_dt * (1.0 + 1e-12):
        raise TimeStepError(dt, solver.max_dt)


def p2f_step(state: SystemState, dt: float, model: SolverLike,
             cfg: TankNetworkConfig) -> SystemState:
    """
    推进一个时间步

    四个阶段：由步初液位计算各流道水头与空泡份额；逐流道推理新速度（上游干涸时以零水头
    推理，速度在摩擦作用下衰减）；以新速度做质量守恒更新；时间前进 dt。

    Args:
        state: 步初状态
        dt: 时间步长 (s)，不得超过训练时间窗
        model: 训练好的模型或任一速度求解器
        cfg: 网络配置

    Returns:
        SystemState: 步末状态

    Raises:
        TimeStepError: dt 超出训练时间窗
    """
    solver = as_velocity_solver(model)
    _check_dt(dt, solver)

    heads = driving_heads(state)
    voids = void_fractions(state, cfg)
    v_new = np.empty(cfg.n_flow_paths)
    for j in range(cfg.n_flow_paths):
        dh = 0.0 if voids[j] == 1.0 else heads[j]
        v_new[j] = solver(dh, float(state.v[j]), dt)
    h_new = mass_step(state, v_new, voids, dt, cfg)
    return SystemState(t=state.t + dt, h=h_new, v=v_new)


def p2f_simulate(initial: SystemState, dt: float, t_end: float, model: SolverLike,
                 cfg: TankNetworkConfig) -> Trajectory:
    """
    重复 p2f_step ⌊t_end/dt⌋ 次，每步结果作为下一步初值

    时刻取 t₀ + n·dt，与 fdm_simulate 的时间网格一致。

    Returns:
        Trajectory: 每步存储一次（含初始状态）的轨迹
    """
    solver = as_velocity_solver(model)
    _check_dt(dt, solver)
    validate_state(initial, cfg)
    n_steps = int(math.floor(t_end / dt + 1e-9))
    logger.info(f"P2F求解开始: dt={dt}s, 步数={n_steps}, 求解器={type(solver).__name__}")

    times = np.empty(n_steps + 1)
    levels = np.empty((n_steps + 1, cfg.n_tanks))
    velocities = np.empty((n_steps + 1, cfg.n_flow_paths))
    times[0] = initial.t
    levels[0] = initial.h
    velocities[0] = initial.v

    state = initial
    for n in range(1, n_steps + 1):
        state = p2f_step(state, dt, solver, cfg)
        # 以 t₀ + n·dt 代替逐步累加，避免时间网格漂移
        state = SystemState(t=initial.t + n * dt, h=state.h, v=state.v)
        times[n] = state.t
        levels[n] = state.h
        velocities[n] = state.v

    drift = total_volume(state, cfg) - total_volume(initial, cfg)
    logger.info(f"P2F求解完成: t={times[-1]:.3f}s, 总水量变化 {drift:.3e} m³")
    return Trajectory(times=times, levels=levels, velocities=velocities)


def file_sha256(path: str) -> str:
    """文件内容的 SHA-256 摘要"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_manifest(path: str, fields: Dict[str, object]) -> str:
    """
    写出运行清单（key=value 文本，每行一项，按传入顺序）

    Args:
        path: 清单文件路径
        fields: 记录项，通常包含 dt、t_end、solver、ic、model_sha256 与全部配置值

    Returns:
        str: 清单文件路径
    """
    lines = []
    for key, value in fields.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            value = ','.join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
                             for x in value)
        lines.append(f"{key}={value}")
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
    logger.info(f"运行清单已保存至: {path}")
    return path
