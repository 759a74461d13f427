"""
配置管理模块 - 汇总各模块的配置数据类，并读写扁平的 key=value 配置文件
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from fdm_solver import FdmConfig
from napinn import CollocationConfig, TrainConfig
from tank_model import DomainBounds, TankNetworkConfig

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = 'P2F_CONFIG'


class ConfigError(ValueError):
    """配置文件错误，携带路径与行号"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = path or '<config>'
        if line is not None:
            location = f"{location}:{line}"
        super().__init__(f"{location}: {message}")


def _parse_int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(item) for item in text.split(',') if item.strip())


def _parse_schedule(text: str) -> Tuple[Tuple[int, float], ...]:
    pairs = []
    for item in text.split(','):
        if not item.strip():
            continue
        epoch, lr = item.split(':')
        pairs.append((int(epoch), float(lr)))
    return tuple(pairs)


def _format_value(value) -> str:
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return ','.join(f"{e}:{lr!r}" for e, lr in value)
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"应为整数: {text}")
    return int(value)


# 配置项 -> (所属分组, 解析函数)
_SECTIONS = ('network', 'bounds', 'fdm', 'train', 'collocation')
CONFIG_KEYS: Dict[str, Tuple[str, Callable[[str], object]]] = {
    'n_tanks': ('network', _parse_int),
    'tank_area': ('network', float),
    'tank_height': ('network', float),
    'fp_diameter': ('network', float),
    'inertial_length': ('network', float),
    'elevation_drop': ('network', float),
    'open_fraction': ('network', float),
    'loss_coeff': ('network', float),
    'gravity': ('network', float),
    'density': ('network', float),
    'dry_threshold': ('network', float),
    'dh_train': ('bounds', float),
    'v0_max': ('bounds', float),
    'time_window': ('bounds', float),
    'dt': ('fdm', float),
    't_end': ('fdm', float),
    'friction_iter_tol': ('fdm', float),
    'friction_iter_max': ('fdm', _parse_int),
    'friction_relaxation': ('fdm', float),
    'substeps_per_dt': ('fdm', _parse_int),
    'layer_sizes': ('train', _parse_int_list),
    'n_epochs': ('train', _parse_int),
    'lr_schedule': ('train', _parse_schedule),
    'clip_norm': ('train', float),
    'val_every': ('train', _parse_int),
    'seed': ('train', _parse_int),
    'beta1': ('train', float),
    'beta2': ('train', float),
    'adam_eps': ('train', float),
    'n_shards': ('train', _parse_int),
    'n_train': ('collocation', _parse_int),
    'n_val': ('collocation', _parse_int),
    'r_h0': ('collocation', float),
    'r_v0': ('collocation', float),
}


@dataclass(frozen=True)
class P2FConfig:
    """全部配置的汇总"""
    network: TankNetworkConfig = field(default_factory=TankNetworkConfig)
    bounds: DomainBounds = field(default_factory=DomainBounds)
    fdm: FdmConfig = field(default_factory=FdmConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    collocation: CollocationConfig = field(default_factory=CollocationConfig)

    def __post_init__(self):
        if self.bounds.dh_train < self.network.tank_height:
            logger.warning(f"dh_train={self.bounds.dh_train} 小于水箱高度 {self.network.tank_height}，"
                           f"较大水头将在推理时被截断")

    @property
    def t_end(self) -> float:
        """验证与仿真的默认时长 (s)"""
        return self.fdm.t_end

    def to_dict(self) -> Dict[str, str]:
        """按 CONFIG_KEYS 顺序导出全部配置项的文本值"""
        return {key: _format_value(getattr(getattr(self, section), key))
                for key, (section, _) in CONFIG_KEYS.items()}

    def with_values(self, **values) -> 'P2FConfig':
        """替换若干配置项（键名同配置文件）"""
        grouped: Dict[str, Dict[str, object]] = {s: {} for s in _SECTIONS}
        for key, value in values.items():
            if key not in CONFIG_KEYS:
                raise KeyError(f"未知配置项: {key}")
            grouped[CONFIG_KEYS[key][0]][key] = value
        return P2FConfig(**{s: dataclasses.replace(getattr(self, s), **grouped[s])
                            for s in _SECTIONS})


def load_config(path: str) -> P2FConfig:
    """
    读取 key=value 配置文件

    每行一个配置项，`#` 之后为注释，空行忽略；未出现的配置项取默认值。

    Args:
        path: 配置文件路径

    Returns:
        P2FConfig: 配置

    Raises:
        ConfigError: 文件不可读、未知配置项、重复配置项、值无法解析或违反约束
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ConfigError(f"无法读取配置文件: {e.strerror or e}", path=path)

    values: Dict[str, object] = {}
    for line_no, raw in enumerate(lines, start=1):
        text = raw.split('#', 1)[0].strip()
        if not text:
            continue
        if '=' not in text:
            raise ConfigError(f"应为 key=value 格式: '{raw.strip()}'", path=path, line=line_no)
        key, value = (part.strip() for part in text.split('=', 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"未知配置项 '{key}'", path=path, line=line_no)
        if key in values:
            raise ConfigError(f"重复的配置项 '{key}'", path=path, line=line_no)
        try:
            values[key] = CONFIG_KEYS[key][1](value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"配置项 '{key}' 的值 '{value}' 无法解析: {e}", path=path, line=line_no)

    try:
        config = P2FConfig().with_values(**values)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"配置不合法: {e}", path=path)
    logger.info(f"已加载配置文件: {path} ({len(values)} 项覆盖默认值)")
    return config


def save_config(config: P2FConfig, path: str) -> str:
    """写出全部配置项，可由 load_config 读回"""
    lines: List[str] = ['# P2F 配置文件（key=value，# 为注释）']
    current = None
    for key, text in config.to_dict().items():
        section = CONFIG_KEYS[key][0]
        if section != current:
            lines.append(f"\n# [{section}]")
            current = section
        lines.append(f"{key} = {text}")
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
    logger.info(f"配置已保存至: {path}")
    return path


def resolve_config(path: Optional[str] = None) -> P2FConfig:
    """
    按 命令行参数 → P2F_CONFIG 环境变量 → 内置默认值 的顺序确定配置

    Raises:
        ConfigError: 指定的配置文件无法加载
    """
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        logger.info("未指定配置文件，使用内置默认配置")
        return P2FConfig()
    return load_config(path)
