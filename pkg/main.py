#!/usr/bin/env python3
"""
P2F 主程序 - 命令行入口
功能：训练参数化 PINN、运行 FDM/P2F 仿真并导出轨迹、运行验证套件并生成报告

退出码：0 成功；1 验证未通过；2 用法、配置或模型文件错误；3 时间步长超出训练时间窗
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

# 添加项目路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from autodiff_engine import ModelFormatError, load_model, save_model
from fdm_solver import CSV_FLOAT_FORMAT, fdm_simulate
from napinn import train_default
from p2f_config import ConfigError, P2FConfig, load_config, resolve_config, save_config
from p2f_coupler import TimeStepError, file_sha256, p2f_simulate, write_run_manifest
from report_generator import write_report
from tank_model import SystemState, parse_levels
from verify_harness import VerificationHarness

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_TIME_STEP = 3

LOG_FILE = 'p2f.log'
TRAINING_CONFIG_SUFFIX = '_config.cfg'


def setup_logging(verbose: bool = False):
    """配置日志：文件 + 控制台"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(LOG_FILE),
            logging.StreamHandler()
        ],
        force=True,
    )


def _sibling_path(path: str, suffix: str) -> str:
    stem, _ = os.path.splitext(path)
    return f"{stem}{suffix}"


def cmd_train(args: argparse.Namespace, config: P2FConfig) -> int:
    """训练模型并写出模型文件与训练日志 CSV"""
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.epochs is not None:
        overrides['n_epochs'] = args.epochs
    if overrides:
        config = config.with_values(**overrides)

    logger.info(f"=== 开始训练: seed={config.train.seed}, 轮数={config.train.n_epochs} ===")
    model, log = train_default(config.network, config.bounds, config.collocation, config.train)
    save_model(model, args.out)
    log_path = args.log or _sibling_path(args.out, '_training_log.csv')
    log.to_csv(log_path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"训练日志已保存至: {log_path}")
    config_path = save_config(config, _sibling_path(args.out, TRAINING_CONFIG_SUFFIX))
    logger.info(f"训练配置已保存至: {config_path}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, config: P2FConfig) -> int:
    """运行仿真，写出轨迹 CSV 与运行清单"""
    network = config.network
    try:
        levels = parse_levels(args.ic, network)
    except ValueError as e:
        logger.error(f"初始条件错误: {e}")
        return EXIT_USAGE

    dt = args.dt if args.dt is not None else config.fdm.dt
    t_end = args.t_end if args.t_end is not None else config.t_end
    if not (dt > 0 and t_end >= 0):
        logger.error(f"时间步长必须为正、时长必须非负: dt={dt}, t_end={t_end}")
        return EXIT_USAGE
    initial = SystemState.at_rest(levels)

    model_hash = '-'
    if args.solver == 'p2f':
        if not args.model:
            logger.error("--solver p2f 需要指定 --model")
            return EXIT_USAGE
        model = load_model(args.model)
        model_hash = file_sha256(args.model)
        trajectory = p2f_simulate(initial, dt, t_end, model, network)
    else:
        trajectory = fdm_simulate(initial, network, config.fdm.with_dt(dt, t_end))

    trajectory.to_csv(args.out)
    manifest = {
        'solver': args.solver,
        'ic': levels,
        'dt': dt,
        't_end': t_end,
        'n_rows': trajectory.n_steps,
        'model': args.model or '-',
        'model_sha256': model_hash,
    }
    manifest.update({f"config.{k}": v for k, v in config.to_dict().items()})
    write_run_manifest(args.manifest or _sibling_path(args.out, '_manifest.txt'), manifest)
    return EXIT_OK


def _parse_tables(text: str) -> List[int]:
    tables = [int(item) for item in text.split(',') if item.strip()]
    if not tables or any(t not in (1, 2, 3) for t in tables):
        raise ValueError(f"--tables 只能包含 1、2、3: {text}")
    return tables


def _training_config(args: argparse.Namespace, config: P2FConfig) -> P2FConfig:
    """训练时的配置：优先读取训练写出的配置副本，--seed 再覆盖其种子"""
    training = config
    echo_path = _sibling_path(args.model, TRAINING_CONFIG_SUFFIX)
    if os.path.isfile(echo_path):
        training = load_config(echo_path)
        logger.info(f"使用训练配置副本: {echo_path}")
    elif args.seed is None and args.audit:
        logger.warning(f"未找到 {echo_path}，残差审计按当前配置的种子 {config.train.seed} 重建训练配点")
    if args.seed is not None:
        training = training.with_values(seed=args.seed)
    return training


def cmd_verify(args: argparse.Namespace, config: P2FConfig) -> int:
    """运行验证套件并生成报告；全部通过时返回 0"""
    try:
        tables = _parse_tables(args.tables)
    except ValueError as e:
        logger.error(str(e))
        return EXIT_USAGE
    model = load_model(args.model)

    training_config = _training_config(args, config)
    harness = VerificationHarness(model, config, training_config=training_config)
    results = harness.run_full_verification(tables, audit=args.audit)
    metadata = {
        'model': args.model,
        'model_sha256': file_sha256(args.model),
        'layer_sizes': ','.join(str(s) for s in model.layer_sizes),
        't_end': config.t_end,
        'tables': ','.join(str(t) for t in tables),
        'train_seed': training_config.train.seed,
    }
    report_path = write_report(results, args.out_dir, metadata)

    failures = [failure for r in results for failure in r.failures]
    if failures:
        logger.error(f"验证未通过 ({len(failures)} 项)，报告: {report_path}")
        for failure in failures:
            logger.error(f"  {failure}")
        return EXIT_VERIFY_FAILED
    logger.info(f"✅ 全部验证通过，报告: {report_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """构造命令行解析器"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='key=value 配置文件（缺省读取 P2F_CONFIG 环境变量）')
    common.add_argument('--verbose', action='store_true', help='输出调试日志')

    parser = argparse.ArgumentParser(prog='p2f', description='P2F 混合 PINN-FDM 级联水箱求解器')
    sub = parser.add_subparsers(dest='command', required=True)

    train = sub.add_parser('train', parents=[common], help='训练参数化 PINN')
    train.add_argument('--out', default='p2f_model.txt', help='模型文件路径')
    train.add_argument('--seed', type=int, help='随机种子（覆盖配置）')
    train.add_argument('--epochs', type=int, help='训练轮数（覆盖配置）')
    train.add_argument('--log', help='训练日志 CSV 路径（缺省为 <模型名>_training_log.csv）')
    train.set_defaults(handler=cmd_train)

    simulate = sub.add_parser('simulate', parents=[common], help='运行仿真并导出轨迹')
    simulate.add_argument('--solver', choices=['fdm', 'p2f'], default='fdm')
    simulate.add_argument('--ic', default='2,0,0,0,0,0', help='初始液位，逗号分隔 (m)')
    simulate.add_argument('--dt', type=float, help='时间步长 (s)')
    simulate.add_argument('--t-end', dest='t_end', type=float, help='仿真时长 (s)')
    simulate.add_argument('--model', help='模型文件（p2f 必需）')
    simulate.add_argument('--out', default='trajectory.csv', help='轨迹 CSV 路径')
    simulate.add_argument('--manifest', help='运行清单路径（缺省为 <轨迹名>_manifest.txt）')
    simulate.set_defaults(handler=cmd_simulate)

    verify = sub.add_parser('verify', parents=[common], help='运行验证套件')
    verify.add_argument('--model', required=True, help='模型文件')
    verify.add_argument('--tables', default='1,2,3', help='要运行的套件，如 1,2,3')
    verify.add_argument('--out-dir', dest='out_dir', default='reports', help='报告输出目录')
    verify.add_argument('--audit', action='store_true', help='追加残差审计')
    verify.add_argument('--seed', type=int,
                        help='训练时的随机种子，供残差审计重建训练配点（缺省读取 <模型名>_config.cfg）')
    verify.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    setup_logging(args.verbose)
    try:
        config = resolve_config(args.config)
        return args.handler(args, config)
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        return EXIT_USAGE
    except ModelFormatError as e:
        logger.error(f"模型文件错误: {e}")
        return EXIT_USAGE
    except TimeStepError as e:
        logger.error(str(e))
        return EXIT_TIME_STEP
    except Exception as e:
        logger.error(f"程序执行过程中发生错误: {str(e)}")
        logger.exception("详细错误信息:")
        return EXIT_USAGE


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
