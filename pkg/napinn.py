"""
参数化节点指派 PINN 模块 - 硬初始条件输出、动量残差、带边界增强的固定配点采样，
以及无数据训练循环（分段学习率、梯度裁剪、最优验证模型回退）
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from autodiff_engine import (MlpModel, NonFiniteLossError, evaluate_loss, forward_dual,
                             init_model, loss_and_gradient)
from tank_model import DomainBounds, TankNetworkConfig

logger = logging.getLogger(__name__)

DEFAULT_LAYER_SIZES = (3, 64, 64, 64, 64, 1)
DEFAULT_LR_SCHEDULE = ((1, 1e-3), (10001, 1e-4), (20001, 1e-5))
TRAINING_LOG_COLUMNS = ['epoch', 'train_loss', 'val_loss', 'lr']


@dataclass(frozen=True)
class CollocationConfig:
    """配点采样配置"""
    n_train: int = 20000
    n_val: int = 5000
    r_h0: float = 0.1     # 固定 Δh=0 的配点比例
    r_v0: float = 0.1     # 固定 v₀=0 的配点比例

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 1:
            raise ValueError(f"配点数必须为正: n_train={self.n_train}, n_val={self.n_val}")
        for name in ('r_h0', 'r_v0'):
            ratio = getattr(self, name)
            if not 0.0 <= ratio < 1.0:
                raise ValueError(f"{name} 必须位于 [0, 1)，当前为 {ratio}")


@dataclass(frozen=True)
class TrainConfig:
    """
    训练配置

    Attributes:
        layer_sizes: 网络结构
        n_epochs: 训练轮数（全批量，每轮一次参数更新）
        lr_schedule: (起始轮次, 学习率) 列表，轮次从1开始严格递增
        clip_norm: 梯度全局2范数上限 γ
        val_every: 验证间隔（轮）
        seed: 随机种子（初始化与训练集采样；验证集使用 seed+1）
        beta1, beta2, adam_eps: 自适应矩估计参数
        n_shards: 损失计算分片数
    """
    layer_sizes: Tuple[int, ...] = DEFAULT_LAYER_SIZES
    n_epochs: int = 30000
    lr_schedule: Tuple[Tuple[int, float], ...] = DEFAULT_LR_SCHEDULE
    clip_norm: float = 1.0
    val_every: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_shards: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'layer_sizes', tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, 'lr_schedule',
                           tuple((int(e), float(lr)) for e, lr in self.lr_schedule))
        if self.n_epochs < 1:
            raise ValueError(f"n_epochs 必须为正，当前为 {self.n_epochs}")
        if self.val_every < 1:
            raise ValueError(f"val_every 必须为正，当前为 {self.val_every}")
        if not self.lr_schedule or self.lr_schedule[0][0] != 1:
            raise ValueError("学习率计划的第一个里程碑必须为第1轮")
        milestones = [e for e, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ValueError(f"学习率里程碑必须严格递增: {milestones}")
        if any(not (lr > 0 and math.isfinite(lr)) for _, lr in self.lr_schedule):
            raise ValueError("学习率必须为正的有限数")
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm 必须为正，当前为 {self.clip_norm}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0) or not self.adam_eps > 0:
            raise ValueError("自适应矩估计参数非法")
        if self.seed < 0 or self.n_shards < 1:
            raise ValueError(f"seed 必须非负、n_shards 必须为正: seed={self.seed}, n_shards={self.n_shards}")


@dataclass(frozen=True, eq=False)
class CollocationSet:
    """固定配点集 (Δh, t, v₀)，创建后只读"""
    dh: np.ndarray
    t: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        arrays = [np.array(a, dtype=float) for a in (self.dh, self.t, self.v0)]
        if any(a.ndim != 1 for a in arrays) or len({a.size for a in arrays}) != 1:
            raise ValueError("配点数组必须为等长一维数组")
        for name, a in zip(('dh', 't', 'v0'), arrays):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return self.dh.size


def _exact_count(n: int, ratio: float) -> int:
    # 避免 n·r 的舍入误差把整数结果抬高一位
    return int(math.ceil(round(n * ratio, 9)))


def sample_collocation(n: int, bounds: DomainBounds, r_h0: float, r_v0: float,
                       seed: int) -> CollocationSet:
    """
    采样带边界增强的配点集

    ⌈n·r_h0⌉ 个点固定 Δh=0、⌈n·r_v0⌉ 个点固定 v₀=0（位置随机），其余 Δh、v₀ 以及全部 t
    在训练域内均匀采样。

    Args:
        n: 配点数
        bounds: 训练域边界
        r_h0: Δh=0 比例
        r_v0: v₀=0 比例
        seed: 随机种子

    Returns:
        CollocationSet: 配点集

    Raises:
        ValueError: n 非正或比例越界
    """
    if n < 1:
        raise ValueError(f"配点数必须为正，当前为 {n}")
    if not (0.0 <= r_h0 < 1.0 and 0.0 <= r_v0 < 1.0):
        raise ValueError(f"边界增强比例必须位于 [0, 1): r_h0={r_h0}, r_v0={r_v0}")
    rng = np.random.default_rng(seed)
    dh = rng.uniform(0.0, bounds.dh_train, n)
    t = rng.uniform(0.0, bounds.time_window, n)
    v0 = rng.uniform(0.0, bounds.v0_max, n)
    dh[rng.permutation(n)[:_exact_count(n, r_h0)]] = 0.0
    v0[rng.permutation(n)[:_exact_count(n, r_v0)]] = 0.0
    return CollocationSet(dh=dh, t=t, v0=v0)


def hard_ic_velocity(model: MlpModel, dh, t, v0):
    """
    硬初始条件输出 v̂ = v₀ + t·N(h̄, t̄, v̄₀) 及其时间导数 N + t·∂N/∂t

    t=0 时 v̂ 精确等于 v₀，与网络参数无关。

    Returns:
        Tuple: (v̂, ∂v̂/∂t)，标量输入返回 float
    """
    bounds = model.bounds
    net, net_dot = forward_dual(model, np.asarray(dh, dtype=float) / bounds.dh_train, t,
                                np.asarray(v0, dtype=float) / bounds.v0_max)
    v_hat = v0 + t * net
    dv_dt = net + t * net_dot
    return v_hat, dv_dt


def momentum_residual(v_hat, dv_dt, dh, cfg: TankNetworkConfig):
    """动量残差 R = L·∂v̂/∂t − g·Δh + (K*/2)·|v̂|·v̂"""
    return (cfg.inertial_length * dv_dt - cfg.gravity * dh
            + 0.5 * cfg.loss_coeff * np.abs(v_hat) * v_hat)


def learning_rate_at(schedule: Sequence[Tuple[int, float]], epoch: int) -> float:
    """返回第 epoch 轮生效的学习率（最后一个不晚于 epoch 的里程碑）"""
    lr = schedule[0][1]
    for milestone, value in schedule:
        if milestone <= epoch:
            lr = value
        else:
            break
    return lr


def clip_gradient(grad: np.ndarray, clip_norm: float) -> Tuple[np.ndarray, float]:
    """
    按全局2范数裁剪梯度

    Returns:
        Tuple[np.ndarray, float]: (裁剪后梯度, 裁剪前范数)
    """
    norm = float(np.linalg.norm(grad))
    if norm > clip_norm:
        return grad * (clip_norm / norm), norm
    return grad, norm


@dataclass
class AdamOptimizer:
    """带偏差修正的自适应矩估计优化器"""
    n_params: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(init=False, repr=False)
    v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.m = np.zeros(self.n_params)
        self.v = np.zeros(self.n_params)

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """执行一次更新并返回新参数"""
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(train_set: CollocationSet, val_set: CollocationSet, cfg: TrainConfig,
          physics: TankNetworkConfig, bounds: DomainBounds,
          initial: Optional[MlpModel] = None) -> Tuple[MlpModel, pd.DataFrame]:
    """
    全批量无数据训练

    每轮在固定训练集上计算损失与精确梯度，裁剪到 γ 后按当前学习率更新；每 val_every 轮
    以及最后一轮在更新后评估验证损失，验证损失下降时保存快照。损失出现非有限值时中止并
    返回最后的最优快照。

    Args:
        train_set: 训练配点集
        val_set: 验证配点集
        cfg: 训练配置
        physics: 网络物理常数
        bounds: 训练域边界
        initial: 初始模型，缺省按 cfg.seed 初始化

    Returns:
        Tuple[MlpModel, pd.DataFrame]: (最优验证模型, 训练日志 epoch,train_loss,val_loss,lr)
    """
    model = initial.copy() if initial is not None else init_model(cfg.layer_sizes, bounds, cfg.seed)
    optimizer = AdamOptimizer(model.n_params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    params = model.get_flat()

    best_model = model.copy()
    best_val = evaluate_loss(model, val_set, physics)
    logger.info(f"🚀 开始训练: 结构 {list(cfg.layer_sizes)}, {model.n_params} 个参数, "
                f"{len(train_set)} 个训练配点, {cfg.n_epochs} 轮, 初始验证损失 {best_val:.4e}")

    records = []
    for epoch in range(1, cfg.n_epochs + 1):
        lr = learning_rate_at(cfg.lr_schedule, epoch)
        try:
            loss, grad = loss_and_gradient(model, train_set, physics, n_shards=cfg.n_shards)
        except NonFiniteLossError as e:
            logger.warning(f"第 {epoch} 轮训练损失非有限，中止训练并回退到最优快照: {e}")
            break

        grad, grad_norm = clip_gradient(grad, cfg.clip_norm)
        params = optimizer.step(params, grad, lr)
        model = model.with_flat(params)

        val_loss = float('nan')
        if epoch % cfg.val_every == 0 or epoch == cfg.n_epochs:
            val_loss = evaluate_loss(model, val_set, physics)
            if val_loss < best_val:
                best_val = val_loss
                best_model = model.copy()
            logger.debug(f"第 {epoch} 轮: 训练损失 {loss:.4e}, 验证损失 {val_loss:.4e}, "
                         f"梯度范数 {grad_norm:.3e}, 学习率 {lr:g}")
            if epoch % (cfg.val_every * 10) == 0:
                logger.info(f"训练进度 {epoch}/{cfg.n_epochs}: 训练损失 {loss:.4e}, "
                            f"最优验证损失 {best_val:.4e}")
        records.append((epoch, loss, val_loss, lr))

    log = pd.DataFrame.from_records(records, columns=TRAINING_LOG_COLUMNS)
    logger.info(f"✅ 训练完成: 共 {len(records)} 轮, 最优验证损失 {best_val:.4e}")
    return best_model, log


def sample_training_sets(bounds: DomainBounds, collocation: CollocationConfig,
                         seed: int) -> Tuple[CollocationSet, CollocationSet]:
    """按相同策略采样互不相关的训练集（seed）与验证集（seed+1）"""
    train_set = sample_collocation(collocation.n_train, bounds,
                                   collocation.r_h0, collocation.r_v0, seed)
    val_set = sample_collocation(collocation.n_val, bounds,
                                 collocation.r_h0, collocation.r_v0, seed + 1)
    return train_set, val_set


def train_default(physics: TankNetworkConfig, bounds: DomainBounds,
                  collocation: CollocationConfig, cfg: TrainConfig
                  ) -> Tuple[MlpModel, pd.DataFrame]:
    """采样训练/验证集并训练，cmd_train 的入口"""
    train_set, val_set = sample_training_sets(bounds, collocation, cfg.seed)
    return train(train_set, val_set, cfg, physics, bounds)


def predict_velocity(model: MlpModel, dh: float, v0: float, t: float) -> float:
    """
    推理一个流道在时间步末的速度

    超出训练域的输入截断到训练域并记录警告，输出截断为非负。

    Args:
        model: 已训练模型
        dh: 驱动水头 (m)
        v0: 时间步初速度 (m/s)
        t: 时间步长 (s)

    Returns:
        float: 速度 (m/s)
    """
    bounds = model.bounds
    clamped = (min(max(dh, 0.0), bounds.dh_train),
               min(max(v0, 0.0), bounds.v0_max),
               min(max(t, 0.0), bounds.time_window))
    if clamped != (dh, v0, t):
        logger.warning(f"推理输入超出训练域，已截断: (Δh={dh}, v₀={v0}, t={t}) -> {clamped}")
        dh, v0, t = clamped
    v_hat, _ = hard_ic_velocity(model, dh, t, v0)
    return max(float(v_hat), 0.0)
