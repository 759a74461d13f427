"""
有限差分求解器模块 - 参考解：动量方程（摩擦项迭代线性化）+ 显式质量守恒更新，
以及独立验证用的固定水头动量方程积分器
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from tank_model import (
    SystemState,
    TankNetworkConfig,
    driving_heads,
    total_volume,
    validate_state,
    void_fractions,
)

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = '%.17g'


@dataclass(frozen=True)
class FdmConfig:
    """有限差分求解器配置类"""
    dt: float = 1.0                     # 时间步长 (s)
    t_end: float = 400.0                # 模拟时长 (s)
    friction_iter_tol: float = 1e-10    # 摩擦线性化迭代相对收敛容差
    friction_iter_max: int = 50         # 摩擦线性化最大迭代次数
    friction_relaxation: float = 0.5    # 冻结系数的欠松弛因子
    substeps_per_dt: int = 100          # 独立验证积分器的子步数

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt 必须为正，当前为 {self.dt}")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end 不能为负，当前为 {self.t_end}")
        if not self.friction_iter_tol > 0:
            raise ValueError(f"friction_iter_tol 必须为正，当前为 {self.friction_iter_tol}")
        if int(self.friction_iter_max) != self.friction_iter_max or self.friction_iter_max < 1:
            raise ValueError(f"friction_iter_max 必须为正整数，当前为 {self.friction_iter_max}")
        if not (0.0 < self.friction_relaxation <= 1.0):
            raise ValueError(f"friction_relaxation 必须位于 (0, 1]，当前为 {self.friction_relaxation}")
        if int(self.substeps_per_dt) != self.substeps_per_dt or self.substeps_per_dt < 1:
            raise ValueError(f"substeps_per_dt 必须为正整数，当前为 {self.substeps_per_dt}")

    def with_dt(self, dt: float, t_end: Optional[float] = None) -> 'FdmConfig':
        """返回替换了时间步长（及可选模拟时长）的新配置"""
        return FdmConfig(
            dt=dt,
            t_end=self.t_end if t_end is None else t_end,
            friction_iter_tol=self.friction_iter_tol,
            friction_iter_max=self.friction_iter_max,
            friction_relaxation=self.friction_relaxation,
            substeps_per_dt=self.substeps_per_dt,
        )


@dataclass
class FrictionDiagnostics:
    """摩擦迭代诊断信息（非致命）"""
    calls: int = 0
    iterations: int = 0
    non_converged: int = 0

    @property
    def converged(self) -> bool:
        return self.non_converged == 0


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    时间序列结果

    Attributes:
        times: 存储时刻 (s)，严格递增，含 t=0
        levels: 液位矩阵 (n_steps, n_tanks)
        velocities: 速度矩阵 (n_steps, n_tanks-1)
        diagnostics: 摩擦迭代诊断（参考求解器产生时附带）
    """
    times: np.ndarray
    levels: np.ndarray
    velocities: np.ndarray
    diagnostics: Optional[FrictionDiagnostics] = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        levels = np.array(self.levels, dtype=float)
        velocities = np.array(self.velocities, dtype=float)
        if levels.ndim != 2 or velocities.ndim != 2:
            raise ValueError("液位与速度必须为二维矩阵")
        if not (times.size == levels.shape[0] == velocities.shape[0]):
            raise ValueError(
                f"时间序列长度不一致: times={times.size}, levels={levels.shape[0]}, "
                f"velocities={velocities.shape[0]}"
            )
        if velocities.shape[1] != levels.shape[1] - 1:
            raise ValueError("速度列数必须等于液位列数减一")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("时间序列必须严格递增")
        for arr in (times, levels, velocities):
            arr.flags.writeable = False
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'levels', levels)
        object.__setattr__(self, 'velocities', velocities)

    @property
    def n_steps(self) -> int:
        return self.times.size

    def state_at(self, k: int) -> SystemState:
        return SystemState(t=self.times[k], h=self.levels[k], v=self.velocities[k])

    @property
    def final_state(self) -> SystemState:
        return self.state_at(self.n_steps - 1)

    @classmethod
    def from_states(cls, states: List[SystemState],
                    diagnostics: Optional[FrictionDiagnostics] = None) -> 'Trajectory':
        return cls(
            times=np.array([s.t for s in states]),
            levels=np.vstack([s.h for s in states]),
            velocities=np.vstack([s.v for s in states]),
            diagnostics=diagnostics,
        )

    def to_frame(self) -> pd.DataFrame:
        """转换为 DataFrame，列为 t,h1..hN,v1..vN-1"""
        n_tanks = self.levels.shape[1]
        frame = pd.DataFrame({'t': self.times})
        for i in range(n_tanks):
            frame[f'h{i + 1}'] = self.levels[:, i]
        for j in range(n_tanks - 1):
            frame[f'v{j + 1}'] = self.velocities[:, j]
        return frame

    def to_csv(self, path: str) -> str:
        """以全精度写出轨迹 CSV"""
        self.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
        logger.info(f"轨迹已保存至: {path} ({self.n_steps} 行)")
        return path

    @classmethod
    def from_csv(cls, path: str) -> 'Trajectory':
        frame = pd.read_csv(path, float_precision='round_trip')
        h_cols = [c for c in frame.columns if c.startswith('h')]
        v_cols = [c for c in frame.columns if c.startswith('v')]
        return cls(
            times=frame['t'].to_numpy(),
            levels=frame[h_cols].to_numpy(),
            velocities=frame[v_cols].to_numpy(),
        )


def momentum_step_reference(v_n: float, dh: float, dt: float,
                            cfg: TankNetworkConfig, fdm: FdmConfig,
                            diagnostics: Optional[FrictionDiagnostics] = None) -> float:
    """
    动量方程单步半隐式更新

    求解 L·(v^{n+1} - v^n)/dt = g·Δh - (K*/2)·|v^{(k)}|·v^{n+1}，冻结系数 v^{(k)} 从 v^n 出发
    迭代（欠松弛），直到冻结系数与新解的相对差不大于 friction_iter_tol。

    Args:
        v_n: 当前速度 (m/s)，非负
        dh: 驱动水头 (m)，非负
        dt: 时间步长 (s)
        cfg: 网络配置
        fdm: 求解器配置
        diagnostics: 可选的诊断记录对象

    Returns:
        float: v^{n+1}，截断为非负
    """
    if dt <= 0:
        raise ValueError(f"时间步长必须为正，当前为 {dt}")
    inertia = cfg.inertial_length / dt
    rhs = inertia * v_n + cfg.gravity * dh
    half_k = 0.5 * cfg.loss_coeff
    omega = fdm.friction_relaxation

    frozen = abs(v_n)
    v_new = rhs / (inertia + half_k * frozen)
    converged = False
    iterations = 0
    for iterations in range(1, fdm.friction_iter_max + 1):
        v_new = rhs / (inertia + half_k * frozen)
        if abs(v_new - frozen) <= fdm.friction_iter_tol * max(abs(v_new), abs(frozen)):
            converged = True
            break
        frozen = (1.0 - omega) * frozen + omega * abs(v_new)

    if diagnostics is not None:
        diagnostics.calls += 1
        diagnostics.iterations += iterations
        if not converged:
            diagnostics.non_converged += 1
    if not converged:
        logger.warning(
            f"摩擦线性化迭代未收敛: v_n={v_n:.6g}, dh={dh:.6g}, dt={dt:.6g}, "
            f"{fdm.friction_iter_max} 次迭代后 |Δ|={abs(v_new - frozen):.3e}"
        )
    return max(v_new, 0.0)


def momentum_ode_oracle(v0: float, dh: float, T: float, cfg: TankNetworkConfig,
                        fdm: FdmConfig, substeps: Optional[int] = None,
                        diagnostics: Optional[FrictionDiagnostics] = None
                        ) -> Tuple[np.ndarray, np.ndarray]:
    """
    固定水头下动量方程在 [0, T] 上的细步积分（独立验证的参考解）

    子区间数为 substeps·max(1, round(T/dt))，dt 取 fdm.dt。

    Returns:
        Tuple[np.ndarray, np.ndarray]: (时刻, 速度)，含 t=0
    """
    substeps = fdm.substeps_per_dt if substeps is None else substeps
    if substeps < 1:
        raise ValueError(f"substeps 必须为正整数，当前为 {substeps}")
    if T <= 0:
        raise ValueError(f"积分时长必须为正，当前为 {T}")
    n_sub = int(substeps) * max(1, int(round(T / fdm.dt)))
    h = T / n_sub
    times = np.arange(n_sub + 1) * h
    velocities = np.empty(n_sub + 1)
    velocities[0] = v0
    v = v0
    for k in range(1, n_sub + 1):
        v = momentum_step_reference(v, dh, h, cfg, fdm, diagnostics)
        velocities[k] = v
    times[-1] = T
    return times, velocities


def mass_step(state: SystemState, v_new: np.ndarray, voids: np.ndarray,
              dt: float, cfg: TankNetworkConfig) -> np.ndarray:
    """
    显式质量守恒更新

    h_i^{n+1} = h_i^n + (dt·A_p·F/A_t)·[v_{i-1}(1-α_{i-1}) - v_i(1-α_i)]，首个水箱无入流、
    末个水箱无出流。若某流道出流会使上游液位为负，则按比例缩减该流道输送量使其恰好排空；
    若某水箱液位超过水箱高度，则把多余部分退回上游。

    Args:
        state: 步初状态
        v_new: 新速度 (n_tanks-1)
        voids: 空泡份额 (n_tanks-1)
        dt: 时间步长 (s)
        cfg: 网络配置

    Returns:
        np.ndarray: 新液位
    """
    v_new = np.asarray(v_new, dtype=float)
    voids = np.asarray(voids, dtype=float)
    n = state.n_tanks
    if v_new.size != n - 1 or voids.size != n - 1:
        raise ValueError(f"速度/空泡份额长度应为 {n - 1}")
    if dt <= 0:
        raise ValueError(f"时间步长必须为正，当前为 {dt}")

    transfer = dt * cfg.transfer_coeff * v_new * (1.0 - voids)
    levels = np.array(state.h, dtype=float)

    inflow = 0.0
    for i in range(n):
        outflow = transfer[i] if i < n - 1 else 0.0
        available = levels[i] + inflow
        if outflow > available:
            # 出流限幅：水箱恰好排空
            outflow = available
            if i < n - 1:
                transfer[i] = outflow
            levels[i] = 0.0
        else:
            levels[i] = levels[i] + inflow - outflow
        inflow = outflow

    for i in range(n - 1, 0, -1):
        excess = levels[i] - cfg.tank_height
        if excess > 0.0:
            returned = min(excess, transfer[i - 1])
            if returned == excess:
                # 恰好回到水箱高度，舍入残差随回流量留在上游
                levels[i] = cfg.tank_height
            else:
                levels[i] -= returned
            levels[i - 1] += returned
            transfer[i - 1] -= returned
    return np.minimum(levels, cfg.tank_height, out=levels)


def fdm_simulate(initial: SystemState, cfg: TankNetworkConfig, fdm: FdmConfig) -> Trajectory:
    """
    参考有限差分求解器：逐步先更新速度，再更新液位

    Args:
        initial: 初始状态
        cfg: 网络配置
        fdm: 求解器配置

    Returns:
        Trajectory: 每步存储一次（含 t=0）的轨迹，附带摩擦迭代诊断
    """
    validate_state(initial, cfg)
    n_steps = int(math.floor(fdm.t_end / fdm.dt + 1e-9))
    logger.info(f"参考FDM求解开始: dt={fdm.dt}s, 步数={n_steps}")

    diagnostics = FrictionDiagnostics()
    n_fp = cfg.n_flow_paths
    times = np.empty(n_steps + 1)
    levels = np.empty((n_steps + 1, cfg.n_tanks))
    velocities = np.empty((n_steps + 1, n_fp))
    times[0] = initial.t
    levels[0] = initial.h
    velocities[0] = initial.v

    state = initial
    for n in range(1, n_steps + 1):
        heads = driving_heads(state)
        voids = void_fractions(state, cfg)
        v_new = np.empty(n_fp)
        for j in range(n_fp):
            # 上游干涸时以零水头推进，速度在摩擦作用下衰减
            dh = 0.0 if voids[j] == 1.0 else heads[j]
            v_new[j] = momentum_step_reference(state.v[j], dh, fdm.dt, cfg, fdm, diagnostics)
        h_new = mass_step(state, v_new, voids, fdm.dt, cfg)
        state = SystemState(t=initial.t + n * fdm.dt, h=h_new, v=v_new)
        times[n] = state.t
        levels[n] = state.h
        velocities[n] = state.v

    if not diagnostics.converged:
        logger.warning(f"参考FDM求解中 {diagnostics.non_converged} 次摩擦迭代未收敛")
    drift = total_volume(state, cfg) - total_volume(initial, cfg)
    logger.info(f"参考FDM求解完成: t={times[-1]:.3f}s, 总水量变化 {drift:.3e} m³")
    return Trajectory(times=times, levels=levels, velocities=velocities, diagnostics=diagnostics)
