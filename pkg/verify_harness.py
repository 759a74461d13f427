"""
验证套件模块 - 独立验证（固定水头）、名义工况多步长比对与计时、多初始条件泛化比对、
残差审计，并按通过带判定结果
"""

import logging
import math
import time
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from autodiff_engine import MlpModel, evaluate_loss
from error_analyzer import ErrorReport, compare_trajectories, pooled_errors, split_half_mae
from fdm_solver import Trajectory, fdm_simulate, momentum_ode_oracle
from napinn import hard_ic_velocity, sample_collocation, sample_training_sets
from p2f_config import P2FConfig
from p2f_coupler import p2f_simulate
from scenario_config import (NOMINAL_TIME_STEPS, STANDALONE_CONDITIONS, ScenarioConfig,
                             ScenarioManager, StandaloneCondition, scenario_manager)
from tank_model import equilibrium_velocity

logger = logging.getLogger(__name__)

AUDIT_POINTS = 10000

REPORT_COLUMNS = [f.name for f in fields(ErrorReport)] + ['speedup']
METRIC_COLUMNS = ['level_mae', 'level_mse', 'velocity_mae', 'velocity_mse']
TIMING_COLUMNS = ['reference_seconds', 'candidate_seconds', 'speedup']
TIMING_NAMES = {'reference_seconds': 'fdm_seconds', 'candidate_seconds': 'p2f_seconds'}


@dataclass(frozen=True)
class PassBands:
    """各验证项的通过带"""
    standalone_mae: Tuple[Tuple[float, float, float], ...] = (
        (1.0, 0.0, 1.5e-2),
        (2.0, 3.0, 1.5e-2),
        (1.0, 6.0, 1.0e-2),
    )
    standalone_default: float = 1.5e-2
    level_mae: float = 5e-4
    nominal_velocity_mae: float = 1.5e-2
    case_velocity_mae: float = 2e-2
    split_half_ratio: float = 3.0
    case_level_ratio: float = 10.0
    residual_ratio: float = 10.0

    def standalone_limit(self, condition: StandaloneCondition) -> float:
        for dh, v0, limit in self.standalone_mae:
            if dh == condition.dh and v0 == condition.v0:
                return limit
        return self.standalone_default


@dataclass
class BandCheck:
    """单项通过带判定"""
    name: str
    value: float
    limit: float = math.inf
    lower: Optional[float] = None    # 严格下界

    @property
    def passed(self) -> bool:
        if not (math.isfinite(self.value) and self.value <= self.limit):
            return False
        return self.lower is None or self.value > self.lower

    def describe(self) -> str:
        status = "✅" if self.passed else "❌"
        bound = f"限值 {self.limit:.1e}" if self.lower is None else f"须大于 {self.lower:g}"
        return f"{status} {self.name}: {self.value:.3e} ({bound})"


@dataclass
class TableResult:
    """单个验证套件的结果"""
    table: str
    title: str
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)
    checks: List[BandCheck] = field(default_factory=list)
    figures: Dict[str, pd.DataFrame] = field(default_factory=dict)
    reports: List[ErrorReport] = field(default_factory=list)
    error_message: str = ""

    @property
    def success(self) -> bool:
        return not self.error_message and all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[str]:
        if self.error_message:
            return [f"{self.table}: {self.error_message}"]
        return [f"{self.table}: {check.describe()}" for check in self.checks if not check.passed]


def _ratio(numerator: float, denominator: float) -> float:
    if denominator > 0:
        return numerator / denominator
    return 0.0 if numerator == 0 else math.inf


def _report_frame(reports: Sequence[ErrorReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_record() for r in reports], columns=REPORT_COLUMNS)


def _trajectory_figure(candidate: Trajectory, reference: Trajectory) -> pd.DataFrame:
    frame = candidate.to_frame()
    ref = reference.to_frame().drop(columns=['t']).add_suffix('_fdm')
    return pd.concat([frame, ref], axis=1)


class VerificationHarness:
    """验证套件执行器"""

    def __init__(self, model: MlpModel, config: Optional[P2FConfig] = None,
                 scenarios: Optional[ScenarioManager] = None,
                 bands: Optional[PassBands] = None,
                 training_config: Optional[P2FConfig] = None):
        """
        初始化验证套件

        Args:
            model: 已训练模型
            config: 配置，缺省使用内置默认值
            scenarios: 工况管理器，缺省使用全局实例
            bands: 通过带，缺省使用默认值
            training_config: 训练该模型时的配置，残差审计据此重建训练配点；缺省与 config 相同
        """
        self.model = model
        self.config = config or P2FConfig()
        self.scenarios = scenarios or scenario_manager
        self.bands = bands or PassBands()
        self.training_config = training_config or self.config

    def _timed_pair(self, scenario: ScenarioConfig, dt: float
                    ) -> Tuple[Trajectory, Trajectory, ErrorReport]:
        network = self.config.network
        initial = scenario.initial_state(network)
        t_end = self.config.t_end

        start = time.perf_counter()
        reference = fdm_simulate(initial, network, self.config.fdm.with_dt(dt, t_end))
        reference_seconds = time.perf_counter() - start

        start = time.perf_counter()
        candidate = p2f_simulate(initial, dt, t_end, self.model, network)
        candidate_seconds = time.perf_counter() - start

        report = compare_trajectories(candidate, reference, scenario=scenario.code, dt=dt)
        report.reference_seconds = reference_seconds
        report.candidate_seconds = candidate_seconds
        return candidate, reference, report

    def _levels_label(self, code: str) -> str:
        return ','.join(f"{h:g}" for h in self.scenarios.get_scenario_by_code(code).levels)

    def run_table1(self, conditions: Sequence[StandaloneCondition] = STANDALONE_CONDITIONS
                   ) -> TableResult:
        """
        独立验证：固定水头下网络速度曲线与细步参考积分在 [0, T] 上比较

        Returns:
            TableResult: 每个 (Δh, v₀) 条件一行
        """
        result = TableResult(table='table1', title='独立参数化 PINN 预测误差')
        try:
            window = self.model.bounds.time_window
            rows = []
            for condition in conditions:
                times, v_ref = momentum_ode_oracle(condition.v0, condition.dh, window,
                                                   self.config.network, self.config.fdm)
                v_hat, _ = hard_ic_velocity(self.model, np.full_like(times, condition.dh), times,
                                            np.full_like(times, condition.v0))
                v_pinn = np.maximum(v_hat, 0.0)
                mae, mse = pooled_errors(v_pinn, v_ref)
                rows.append({'dh': condition.dh, 'v0': condition.v0, 'mae': mae, 'mse': mse})
                result.checks.append(BandCheck(f"{condition.label} 速度 MAE", mae,
                                               self.bands.standalone_limit(condition)))
                result.figures[f"standalone_dh{condition.dh:g}_v0{condition.v0:g}"] = pd.DataFrame({
                    't': times,
                    'v_pinn': v_pinn,
                    'v_ref': v_ref,
                    'v_eq': equilibrium_velocity(condition.dh, self.config.network),
                })
                logger.info(f"独立验证 {condition.label}: MAE {mae:.3e}, MSE {mse:.3e}")
            result.frames['table1'] = pd.DataFrame(rows)
        except Exception as e:
            logger.error(f"独立验证失败: {str(e)}")
            result.error_message = str(e)
        return result

    def run_table2(self, time_steps: Sequence[float] = NOMINAL_TIME_STEPS) -> TableResult:
        """
        名义工况在多个时间步长下 P2F 与参考 FDM 的比对，附两种求解器的计时

        Returns:
            TableResult: 误差表 table2 与计时表 table4
        """
        result = TableResult(table='table2', title='名义初始条件下的预测误差')
        try:
            nominal = self.scenarios.nominal
            for dt in time_steps:
                candidate, reference, report = self._timed_pair(nominal, dt)
                result.reports.append(report)
                result.checks.append(BandCheck(f"dt={dt:g} 液位 MAE", report.level_mae,
                                               self.bands.level_mae))
                result.checks.append(BandCheck(f"dt={dt:g} 速度 MAE", report.velocity_mae,
                                               self.bands.nominal_velocity_mae))
                result.figures[f"nominal_dt{dt:g}"] = _trajectory_figure(candidate, reference)
                if dt == max(time_steps):
                    first, second = split_half_mae(candidate, reference)
                    result.checks.append(BandCheck(f"dt={dt:g} 后半段/前半段液位 MAE 比",
                                                   _ratio(second, first), self.bands.split_half_ratio))
                logger.info(f"名义工况 dt={dt:g}: 液位 MAE {report.level_mae:.3e}, "
                            f"速度 MAE {report.velocity_mae:.3e}, 加速比 {report.speedup:.3f}")

            records = _report_frame(result.reports)
            result.frames['table2'] = records[['dt', *METRIC_COLUMNS]]
            result.frames['table4'] = records[['dt', *TIMING_COLUMNS]].rename(columns=TIMING_NAMES)
            for r in result.reports:
                # 计时无固定目标，只要求加速比为正的有限数
                result.checks.append(BandCheck(f"dt={r.dt:g} 加速比", r.speedup, lower=0.0))
        except Exception as e:
            logger.error(f"名义工况验证失败: {str(e)}")
            result.error_message = str(e)
        return result

    def run_table3(self, dt: float = 1.0) -> TableResult:
        """
        多个初始条件下 P2F 与参考 FDM 的比对

        Returns:
            TableResult: 每个工况一行
        """
        result = TableResult(table='table3', title='多初始条件下的预测误差')
        try:
            self.scenarios.validate_all(self.config.network)
            for scenario in self.scenarios.get_all_scenarios():
                candidate, reference, report = self._timed_pair(scenario, dt)
                result.reports.append(report)
                result.checks.append(BandCheck(f"{scenario.code} 液位 MAE", report.level_mae,
                                               self.bands.level_mae))
                result.checks.append(BandCheck(f"{scenario.code} 速度 MAE", report.velocity_mae,
                                               self.bands.case_velocity_mae))
                result.figures[f"{scenario.code}_dt{dt:g}"] = _trajectory_figure(candidate, reference)
                logger.info(f"{scenario.name}: 液位 MAE {report.level_mae:.3e}, "
                            f"速度 MAE {report.velocity_mae:.3e}")

            level_maes = [r.level_mae for r in result.reports]
            if level_maes:
                result.checks.append(BandCheck("液位 MAE 最大/最小比",
                                               _ratio(max(level_maes), min(level_maes)),
                                               self.bands.case_level_ratio))
            records = _report_frame(result.reports).rename(columns={'scenario': 'case'})
            records.insert(1, 'levels', [self._levels_label(code) for code in records['case']])
            result.frames['table3'] = records[['case', 'levels', *METRIC_COLUMNS]]
        except Exception as e:
            logger.error(f"多初始条件验证失败: {str(e)}")
            result.error_message = str(e)
        return result

    def run_residual_audit(self, n_points: int = AUDIT_POINTS) -> TableResult:
        """
        残差审计：在全新的配点集上计算均方残差，并与训练集上的损失比较

        训练集按 training_config 的种子与配点数重新采样，与训练时完全一致。
        """
        result = TableResult(table='audit', title='残差审计')
        try:
            bounds = self.model.bounds
            colloc = self.training_config.collocation
            seed = self.training_config.train.seed
            train_set, _ = sample_training_sets(bounds, colloc, seed)
            fresh = sample_collocation(n_points, bounds, colloc.r_h0, colloc.r_v0, seed + 2)
            train_loss = evaluate_loss(self.model, train_set, self.config.network)
            fresh_loss = evaluate_loss(self.model, fresh, self.config.network)
            ratio = _ratio(fresh_loss, train_loss)
            result.frames['audit'] = pd.DataFrame([{
                'seed': seed, 'train_loss': train_loss, 'fresh_loss': fresh_loss,
                'n_fresh': n_points, 'ratio': ratio,
            }])
            result.checks.append(BandCheck("新配点/训练配点均方残差比", ratio, self.bands.residual_ratio))
            logger.info(f"残差审计 (种子 {seed}): 训练损失 {train_loss:.3e}, 新配点损失 {fresh_loss:.3e}")
        except Exception as e:
            logger.error(f"残差审计失败: {str(e)}")
            result.error_message = str(e)
        return result

    def run_full_verification(self, tables: Sequence[int] = (1, 2, 3),
                              audit: bool = False) -> List[TableResult]:
        """
        运行选定的验证套件

        Args:
            tables: 要运行的套件编号（1 独立验证、2 名义工况与计时、3 多初始条件）
            audit: 是否追加残差审计

        Returns:
            List[TableResult]: 各套件结果
        """
        logger.info(f"=== 开始验证: 套件 {list(tables)} ===")
        runners = {1: self.run_table1, 2: self.run_table2, 3: self.run_table3}
        results = []
        for table in tables:
            if table not in runners:
                raise ValueError(f"未知的验证套件编号: {table}")
            results.append(runners[table]())
        if audit:
            results.append(self.run_residual_audit())

        passed = sum(1 for r in results if r.success)
        logger.info(f"=== 验证完成: {passed}/{len(results)} 个套件通过 ===")
        for r in results:
            for failure in r.failures:
                logger.error(f"✗ {failure}")
        return results


# 便利函数
def run_verification(model: MlpModel, config: Optional[P2FConfig] = None,
                     tables: Sequence[int] = (1, 2, 3), audit: bool = False) -> List[TableResult]:
    """
    运行验证的便利函数

    Returns:
        List[TableResult]: 各套件结果
    """
    harness = VerificationHarness(model, config)
    return harness.run_full_verification(tables, audit)
