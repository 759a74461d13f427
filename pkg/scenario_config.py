"""
工况配置管理模块 - 管理验证用的初始条件工况
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

from tank_model import SystemState, TankNetworkConfig, validate_state


@dataclass
class ScenarioConfig:
    """工况配置类"""
    name: str                  # 工况名称
    code: str                  # 工况代码
    levels: Tuple[float, ...]  # 各水箱初始液位 (m)，初始速度均为零
    description: str = ""      # 描述

    def __post_init__(self):
        """初始化后处理"""
        self.levels = tuple(float(h) for h in self.levels)
        if not self.description:
            self.description = f"{self.name}({self.code})"

    def initial_state(self, cfg: Optional[TankNetworkConfig] = None) -> SystemState:
        """
        构造静止初始状态

        Args:
            cfg: 网络配置，给定时校验水箱数量与液位上限

        Returns:
            SystemState: t=0、速度为零的状态
        """
        state = SystemState.at_rest(self.levels)
        if cfg is not None:
            validate_state(state, cfg)
        return state


@dataclass(frozen=True)
class StandaloneCondition:
    """独立验证（固定水头）的输入条件"""
    dh: float
    v0: float

    @property
    def label(self) -> str:
        return f"({self.dh:g}, {self.v0:g})"


# 名义工况：仅第一个水箱注满
NOMINAL_SCENARIO = ScenarioConfig(
    name="名义工况",
    code="nominal",
    levels=(2.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    description="仅第一个水箱注满 2.0 m",
)

# 泛化验证的五个初始条件
DEFAULT_SCENARIOS = [
    ScenarioConfig(name="工况1", code="case1", levels=(1.5, 0.5, 0.0, 0.0, 0.0, 0.0)),
    ScenarioConfig(name="工况2", code="case2", levels=(1.0, 0.5, 0.5, 0.0, 0.0, 0.0),
                   description="第二个流道初始水头为零"),
    ScenarioConfig(name="工况3", code="case3", levels=(1.3, 0.7, 0.0, 0.0, 0.0, 0.0)),
    ScenarioConfig(name="工况4", code="case4", levels=(0.5, 0.5, 0.5, 0.5, 0.0, 0.0)),
    ScenarioConfig(name="工况5", code="case5", levels=(1.0, 0.5, 0.3, 0.2, 0.0, 0.0)),
]

# 独立验证的三个 (Δh, v₀) 条件
STANDALONE_CONDITIONS = [
    StandaloneCondition(dh=1.0, v0=0.0),
    StandaloneCondition(dh=2.0, v0=3.0),
    StandaloneCondition(dh=1.0, v0=6.0),
]

# 名义工况的时间步长 (s)
NOMINAL_TIME_STEPS = (0.2, 0.5, 1.0)


class ScenarioManager:
    """工况管理器"""

    def __init__(self, scenarios: List[ScenarioConfig] = None,
                 nominal: ScenarioConfig = NOMINAL_SCENARIO):
        """
        初始化工况管理器

        Args:
            scenarios: 泛化工况列表，如果为None则使用默认配置
            nominal: 名义工况
        """
        self.scenarios = scenarios or DEFAULT_SCENARIOS.copy()
        self.nominal = nominal

    def get_scenario_by_code(self, code: str) -> ScenarioConfig:
        """
        根据代码获取工况配置

        Raises:
            ValueError: 未找到工况
        """
        if code == self.nominal.code:
            return self.nominal
        for scenario in self.scenarios:
            if scenario.code == code:
                return scenario
        raise ValueError(f"未找到代码为 {code} 的工况配置")

    def get_all_scenarios(self) -> List[ScenarioConfig]:
        """获取全部泛化工况"""
        return self.scenarios.copy()

    def validate_all(self, cfg: TankNetworkConfig) -> None:
        """
        校验全部工况与网络配置相容

        Raises:
            ValueError: 首个不相容的工况，消息中带工况代码
        """
        for scenario in [self.nominal] + self.scenarios:
            try:
                scenario.initial_state(cfg)
            except ValueError as e:
                raise ValueError(f"工况 {scenario.code} 无效: {e}") from e


# 全局工况管理器实例
scenario_manager = ScenarioManager()
