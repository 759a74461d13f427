"""
自动微分引擎模块 - 全连接网络的前向计算、对物理时间的前向模式导数（对偶数），
以及对前向模式增广计算图做反向传播得到训练损失关于全部参数的精确梯度
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np

from tank_model import DomainBounds, TankNetworkConfig

if TYPE_CHECKING:
    from napinn import CollocationSet

logger = logging.getLogger(__name__)

INPUT_WIDTH = 3
OUTPUT_WIDTH = 1

ArrayLike = Union[float, np.ndarray]


class ModelFormatError(ValueError):
    """模型文件格式错误，携带出错行号"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = f"{path or '<model>'}:{line}" if line is not None else (path or '<model>')
        super().__init__(f"{location}: {message}")


class NonFiniteLossError(FloatingPointError):
    """训练损失出现非有限值"""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"第 {index} 个配点的残差为非有限值 ({value})")


@dataclass(frozen=True)
class DualScalar:
    """
    对偶数：数值及其对物理时间 t 的导数

    value 与 d_dt 可以是标量，也可以是同形状数组（逐元素对偶）。
    """
    value: ArrayLike
    d_dt: ArrayLike

    def __add__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value + other.value, self.d_dt + other.d_dt)
        return DualScalar(self.value + other, self.d_dt)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value - other.value, self.d_dt - other.d_dt)
        return DualScalar(self.value - other, self.d_dt)

    def __rsub__(self, other):
        return DualScalar(other - self.value, -self.d_dt)

    def __neg__(self):
        return DualScalar(-self.value, -self.d_dt)

    def __mul__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value * other.value,
                              self.d_dt * other.value + self.value * other.d_dt)
        return DualScalar(self.value * other, self.d_dt * other)

    __rmul__ = __mul__

    def tanh(self) -> 'DualScalar':
        value = np.tanh(self.value)
        return DualScalar(value, (1.0 - value * value) * self.d_dt)

    def affine(self, weight: np.ndarray, bias: np.ndarray) -> 'DualScalar':
        """全连接层 z = a·Wᵀ + b，导数通道不含偏置"""
        return DualScalar(self.value @ weight.T + bias, self.d_dt @ weight.T)


@dataclass
class MlpModel:
    """
    全连接网络（隐藏层 tanh，输出层恒等）及其归一化边界

    Attributes:
        layer_sizes: 各层宽度，首层为 3（归一化的 Δh、t、v₀），末层为 1
        weights: 第 k 层权重矩阵，形状 (layer_sizes[k+1], layer_sizes[k])
        biases: 第 k 层偏置向量，长度 layer_sizes[k+1]
        bounds: 训练域边界，使保存的模型自包含
    """
    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    bounds: DomainBounds = field(default_factory=DomainBounds)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        sizes = self.layer_sizes
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"非法的网络结构: {sizes}")
        if sizes[0] != INPUT_WIDTH or sizes[-1] != OUTPUT_WIDTH:
            raise ValueError(f"网络输入宽度必须为 {INPUT_WIDTH}、输出宽度必须为 {OUTPUT_WIDTH}: {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("权重/偏置层数与网络结构不一致")
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k + 1], sizes[k]):
                raise ValueError(f"第 {k} 层权重形状 {w.shape} 与结构 {(sizes[k + 1], sizes[k])} 不符")
            if b.shape != (sizes[k + 1],):
                raise ValueError(f"第 {k} 层偏置形状 {b.shape} 与结构 {(sizes[k + 1],)} 不符")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        """按层优先顺序（每层先权重后偏置，权重按行展开）展平全部参数"""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, flat: np.ndarray) -> 'MlpModel':
        """由展平参数构造新模型（与 get_flat 布局一致）"""
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"参数个数 {flat.size} 与模型 {self.n_params} 不符")
        weights, biases = [], []
        offset = 0
        for k in range(self.n_layers):
            rows, cols = self.layer_sizes[k + 1], self.layer_sizes[k]
            weights.append(flat[offset:offset + rows * cols].reshape(rows, cols).copy())
            offset += rows * cols
            biases.append(flat[offset:offset + rows].copy())
            offset += rows
        return MlpModel(self.layer_sizes, weights, biases, self.bounds)

    def copy(self) -> 'MlpModel':
        return self.with_flat(self.get_flat())


def init_model(layer_sizes: Sequence[int], bounds: DomainBounds, seed: int = 0) -> MlpModel:
    """
    初始化网络参数：每层权重取 U[-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))]，偏置为零

    Args:
        layer_sizes: 各层宽度
        bounds: 训练域边界
        seed: 随机种子

    Returns:
        MlpModel: 新模型
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(layer_sizes), weights, biases, bounds)


def normalize_inputs(dh: ArrayLike, t: ArrayLike, v0: ArrayLike, bounds: DomainBounds) -> np.ndarray:
    """把物理输入 (Δh, t, v₀) 归一化为网络输入，形状 (..., 3)"""
    dh, t, v0 = np.broadcast_arrays(np.asarray(dh, dtype=float),
                                    np.asarray(t, dtype=float),
                                    np.asarray(v0, dtype=float))
    return np.stack([dh / bounds.dh_train, t / bounds.time_window, v0 / bounds.v0_max], axis=-1)


def forward(model: MlpModel, inputs: np.ndarray) -> ArrayLike:
    """
    标准前向计算

    Args:
        model: 网络模型
        inputs: 归一化输入 [h̄, t̄, v̄₀]，形状 (3,) 或 (N, 3)

    Returns:
        单点输入返回 float，批量输入返回形状 (N,) 的数组
    """
    a = np.asarray(inputs, dtype=float)
    last = model.n_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = z if k == last else np.tanh(z)
    out = a[..., 0]
    return float(out) if out.ndim == 0 else out


def forward_dual(model: MlpModel, dh_bar: ArrayLike, t: ArrayLike, v0_bar: ArrayLike,
                 bounds: Optional[DomainBounds] = None) -> Tuple[ArrayLike, ArrayLike]:
    """
    前向模式：返回网络输出及其对物理时间 t 的精确导数

    t̄ = t/T，故种子导数为 (0, 1/T, 0)。返回的是原始网络输出的导数，硬初始条件的乘积
    法则由上层处理。

    Args:
        model: 网络模型
        dh_bar: 归一化水头 h̄
        t: 物理时间 (s)
        v0_bar: 归一化初始速度 v̄₀
        bounds: 归一化边界，缺省使用模型自带边界

    Returns:
        Tuple: (输出值, d输出/dt)
    """
    bounds = bounds or model.bounds
    dh_bar, t, v0_bar = np.broadcast_arrays(np.asarray(dh_bar, dtype=float),
                                            np.asarray(t, dtype=float),
                                            np.asarray(v0_bar, dtype=float))
    x = np.stack([dh_bar, t / bounds.time_window, v0_bar], axis=-1)
    seed = np.zeros_like(x)
    seed[..., 1] = 1.0 / bounds.time_window

    a = DualScalar(x, seed)
    last = model.n_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a.affine(w, b)
        a = z if k == last else z.tanh()
    value, d_dt = a.value[..., 0], a.d_dt[..., 0]
    if value.ndim == 0:
        return float(value), float(d_dt)
    return value, d_dt


@dataclass
class _Tape:
    """前向增广计算的逐层缓存"""
    values: List[np.ndarray]
    tangents: List[np.ndarray]
    pre_tangents: List[np.ndarray]


def _forward_tape(model: MlpModel, x: np.ndarray, x_dot: np.ndarray) -> _Tape:
    values, tangents, pre_tangents = [x], [x_dot], []
    a, a_dot = x, x_dot
    last = model.n_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        z_dot = a_dot @ w.T
        pre_tangents.append(z_dot)
        if k == last:
            a, a_dot = z, z_dot
        else:
            a = np.tanh(z)
            a_dot = (1.0 - a * a) * z_dot
        values.append(a)
        tangents.append(a_dot)
    return _Tape(values, tangents, pre_tangents)


def _shard_loss_and_gradient(model: MlpModel, dh: np.ndarray, t: np.ndarray, v0: np.ndarray,
                             physics: TankNetworkConfig, n_total: int, offset: int
                             ) -> Tuple[float, np.ndarray]:
    """单个分片的残差平方和（已除以总点数）及其梯度"""
    bounds = model.bounds
    x = normalize_inputs(dh, t, v0, bounds)
    x_dot = np.zeros_like(x)
    x_dot[:, 1] = 1.0 / bounds.time_window
    tape = _forward_tape(model, x, x_dot)
    net = tape.values[-1][:, 0]
    net_dot = tape.tangents[-1][:, 0]

    # 硬初始条件 v̂ = v₀ + t·N，∂v̂/∂t = N + t·∂N/∂t
    v_hat = v0 + t * net
    dv_dt = net + t * net_dot
    residual = (physics.inertial_length * dv_dt - physics.gravity * dh
                + 0.5 * physics.loss_coeff * np.abs(v_hat) * v_hat)

    bad = np.flatnonzero(~np.isfinite(residual))
    if bad.size:
        raise NonFiniteLossError(offset + int(bad[0]), float(residual[bad[0]]))
    loss = float(np.sum(residual * residual) / n_total)

    # 反向传播：先到 (v̂, ∂v̂/∂t)，再到网络输出 (N, Ṅ)
    g_r = 2.0 * residual / n_total
    g_v = g_r * physics.loss_coeff * np.abs(v_hat)
    g_vt = g_r * physics.inertial_length
    g_z = (g_v * t + g_vt)[:, None]
    g_z_dot = (g_vt * t)[:, None]

    grads_w: List[np.ndarray] = [None] * model.n_layers
    grads_b: List[np.ndarray] = [None] * model.n_layers
    for k in range(model.n_layers - 1, -1, -1):
        a_in, a_in_dot = tape.values[k], tape.tangents[k]
        w = model.weights[k]
        grads_w[k] = g_z.T @ a_in + g_z_dot.T @ a_in_dot
        grads_b[k] = g_z.sum(axis=0)
        if k == 0:
            break
        g_a = g_z @ w
        g_a_dot = g_z_dot @ w
        # 隐藏层 a = tanh(z)，ȧ = (1-a²)·ż
        a = a_in
        s = 1.0 - a * a
        z_dot = tape.pre_tangents[k - 1]
        g_z_dot = g_a_dot * s
        g_z = s * (g_a - 2.0 * a * z_dot * g_a_dot)

    flat = []
    for gw, gb in zip(grads_w, grads_b):
        flat.append(gw.ravel())
        flat.append(gb)
    return loss, np.concatenate(flat)


def loss_and_gradient(model: MlpModel, batch: 'CollocationSet', physics: TankNetworkConfig,
                      n_shards: int = 1) -> Tuple[float, np.ndarray]:
    """
    计算训练损失 (1/N_b)·Σ R_i² 及其对全部参数的精确梯度

    残差含 ∂v̂/∂t，参数梯度因而是混合二阶导数：先用前向模式得到时间导数，再对整个增广
    计算图做反向传播。分片并行时按分片顺序归约，保证结果与分片执行顺序无关。

    Args:
        model: 网络模型
        batch: 配点集
        physics: 网络物理常数
        n_shards: 分片数，默认 1

    Returns:
        Tuple[float, np.ndarray]: (损失, 展平梯度)

    Raises:
        NonFiniteLossError: 某配点残差为非有限值
    """
    n_total = len(batch)
    if n_total == 0:
        raise ValueError("配点集为空")
    n_shards = max(1, min(int(n_shards), n_total))
    bounds_idx = np.linspace(0, n_total, n_shards + 1).astype(int)
    slices = [slice(bounds_idx[s], bounds_idx[s + 1]) for s in range(n_shards)]

    def run(sl: slice) -> Tuple[float, np.ndarray]:
        return _shard_loss_and_gradient(model, batch.dh[sl], batch.t[sl], batch.v0[sl],
                                        physics, n_total, sl.start)

    if n_shards == 1:
        results = [run(slices[0])]
    else:
        with ThreadPoolExecutor(max_workers=n_shards) as pool:
            results = list(pool.map(run, slices))

    loss = 0.0
    grad = np.zeros(model.n_params)
    for shard_loss, shard_grad in results:
        loss += shard_loss
        grad += shard_grad
    if not math.isfinite(loss):
        raise NonFiniteLossError(-1, loss)
    return loss, grad


def evaluate_loss(model: MlpModel, batch: 'CollocationSet', physics: TankNetworkConfig) -> float:
    """仅计算损失（用于验证集），与 loss_and_gradient 的损失一致"""
    dv_dt_net = forward_dual(model, batch.dh / model.bounds.dh_train, batch.t,
                             batch.v0 / model.bounds.v0_max)
    net, net_dot = np.atleast_1d(dv_dt_net[0]), np.atleast_1d(dv_dt_net[1])
    v_hat = batch.v0 + batch.t * net
    dv_dt = net + batch.t * net_dot
    residual = (physics.inertial_length * dv_dt - physics.gravity * batch.dh
                + 0.5 * physics.loss_coeff * np.abs(v_hat) * v_hat)
    return float(np.mean(residual * residual))


def gradient_check(model: MlpModel, batch: 'CollocationSet', physics: TankNetworkConfig,
                   step: float = 1e-6) -> float:
    """
    中心差分梯度检验

    Returns:
        float: 各参数 |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1) 的最大值
    """
    _, grad = loss_and_gradient(model, batch, physics)
    flat = model.get_flat()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = evaluate_loss(model.with_flat(flat), batch, physics)
        flat[i] = original - step
        minus = evaluate_loss(model.with_flat(flat), batch, physics)
        flat[i] = original
        numeric[i] = (plus - minus) / (2.0 * step)
    scale = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1.0)
    max_rel = float(np.max(np.abs(grad - numeric) / scale))
    logger.debug(f"梯度检验: {flat.size} 个参数，最大相对误差 {max_rel:.3e}")
    return max_rel


def save_model(model: MlpModel, path: str) -> str:
    """
    保存模型为文本格式

    第1行 `layer_sizes: a,b,c,...`，第2行 `bounds: dh_train,v0_max,T`，之后每行一个参数
    （层优先展平布局，17位有效数字，往返精确）。
    """
    lines = [
        'layer_sizes: ' + ','.join(str(s) for s in model.layer_sizes),
        'bounds: ' + ','.join(repr(float(x)) for x in (
            model.bounds.dh_train, model.bounds.v0_max, model.bounds.time_window)),
    ]
    lines.extend(format(float(p), '.17g') for p in model.get_flat())
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
    logger.info(f"模型已保存至: {path} ({model.n_params} 个参数)")
    return path


def load_model(path: str) -> MlpModel:
    """
    读取文本格式模型

    Raises:
        ModelFormatError: 文件缺失或格式错误（含行号）
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ModelFormatError(f"无法读取模型文件: {e}", path=path)

    if len(lines) < 2:
        raise ModelFormatError("文件头不完整", line=len(lines) + 1, path=path)

    def header(line_no: int, key: str) -> List[str]:
        text = lines[line_no - 1]
        prefix = key + ':'
        if not text.startswith(prefix):
            raise ModelFormatError(f"应以 '{prefix}' 开头", line=line_no, path=path)
        return [item.strip() for item in text[len(prefix):].split(',')]

    try:
        sizes = tuple(int(s) for s in header(1, 'layer_sizes'))
    except ValueError as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"layer_sizes 解析失败: {e}", line=1, path=path)
    try:
        dh_train, v0_max, window = (float(s) for s in header(2, 'bounds'))
        bounds = DomainBounds(dh_train=dh_train, v0_max=v0_max, time_window=window)
    except ValueError as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"bounds 解析失败: {e}", line=2, path=path)

    body = [line for line in lines[2:]]
    while body and not body[-1].strip():
        body.pop()
    values = np.empty(len(body))
    for i, text in enumerate(body):
        try:
            values[i] = float(text)
        except ValueError:
            raise ModelFormatError(f"无法解析参数 '{text}'", line=i + 3, path=path)
        if not math.isfinite(values[i]):
            raise ModelFormatError(f"参数为非有限值 '{text}'", line=i + 3, path=path)

    try:
        template = init_model(sizes, bounds, seed=0)
    except ValueError as e:
        raise ModelFormatError(str(e), line=1, path=path)
    if values.size != template.n_params:
        raise ModelFormatError(
            f"参数个数 {values.size} 与结构要求的 {template.n_params} 不符",
            line=3 + min(values.size, template.n_params), path=path)
    model = template.with_flat(values)
    logger.info(f"模型已加载: {path}, 结构 {list(sizes)}")
    return model
