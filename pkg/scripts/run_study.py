#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
完整实验脚本
按顺序执行 synth → prepare → train → baseline → attack → adversarial → retrain → defence → report
"""

import sys
import argparse
from pathlib import Path

# 添加项目根目录到Python路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from loguru import logger
from src.cli.main import CLI
from src.core.config import load_run_config, settings
from src.core.exceptions import CanAdvError
from src.data.canlog import AttackKind
from src.utils.device_manager import device_manager
from src.utils.logger_config import setup_logger


def synthesize_logs(cli: CLI):
    """按配置中的流量规格合成日志，返回 (类型, 路径) 列表"""
    specs = cli.cfg.paths.traffic_specs
    if not specs:
        logger.warning("配置中没有 paths.traffic_specs，跳过合成")
        return []
    logs = []
    for kind, spec_path in specs.items():
        spec_path = Path(spec_path)
        if not spec_path.is_absolute():
            spec_path = project_root / spec_path
        out_path = cli.synth(spec_path, cli.logs_dir / f"{kind}.log")
        logs.append((AttackKind(kind), out_path))
    return logs


def run_study(cli: CLI, skip_synth: bool = False):
    """执行全部阶段"""
    logs = [] if skip_synth else synthesize_logs(cli)
    cli.prepare(logs)
    cli.train()
    cli.evaluate("baseline")
    cli.attack()
    cli.evaluate("adversarial")
    cli.retrain()
    cli.evaluate("defence")
    return cli.report()


def main():
    """主函数"""
    parser = argparse.ArgumentParser(description="运行一次完整的对抗规避实验")
    parser.add_argument("--config", type=Path, default=project_root / "config" / "study.yaml")
    parser.add_argument("--work-dir", type=Path)
    parser.add_argument("--set", dest="overrides", action="append", default=[])
    parser.add_argument("--skip-synth", action="store_true", help="使用 paths.logs 中已有的日志")
    args = parser.parse_args()

    logger.info("=" * 60)
    logger.info(f"{settings.APP_NAME} 完整实验")
    logger.info("=" * 60)

    try:
        cfg = load_run_config(args.config, args.overrides)
        work_dir = args.work_dir or Path(cfg.paths.work_dir)
        setup_logger(log_dir=work_dir / "run_logs")
        device_manager.configure(settings.TORCH_THREADS, settings.DETERMINISTIC)
        device_manager.log_device_info()

        cli = CLI(cfg, work_dir)
        with cli.locked():
            summary = run_study(cli, args.skip_synth)
        logger.success(f"✓ 实验完成，摘要: {summary}")
        return 0
    except CanAdvError as e:
        logger.error(f"✗ 实验失败: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
