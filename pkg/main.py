#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
CAN-AdvBench 主入口文件
CAN总线入侵检测的对抗规避实验工作台

退出码: 0 成功 / 1 用法错误 / 2 数据错误 / 3 内部错误
"""

import sys
import argparse
from pathlib import Path
from typing import List, Optional

from loguru import logger
from dotenv import load_dotenv

# 添加项目根目录到Python路径
ROOT_DIR = Path(__file__).parent
sys.path.insert(0, str(ROOT_DIR))

# 加载环境变量
load_dotenv()

from src.core.config import Scenario, load_run_config, settings
from src.core.exceptions import CanAdvError, UsageError
from src.utils.device_manager import device_manager
from src.utils.logger_config import setup_logger

FAMILY_CHOICES = ["bl_dnn", "bl_ensemble", "sota_cnn", "sota_lstm"]
SCENARIO_CHOICES = [s.value for s in Scenario]


class ArgumentParser(argparse.ArgumentParser):
    """用法错误以退出码1结束"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> ArgumentParser:
    """构建命令行解析器"""
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="实验配置YAML")
    common.add_argument("--work-dir", type=Path, help="工作目录（覆盖 paths.work_dir）")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="覆盖配置项，可重复")
    common.add_argument("--log-level", type=str, help="控制台日志级别")

    parser = ArgumentParser(
        description=f"{settings.APP_NAME} - CAN总线入侵检测对抗规避实验工作台",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用示例:
  # 合成流量日志
  python main.py synth --spec config/traffic/dos.yaml --out work/logs/dos.log

  # 预处理并划分 A/B/C
  python main.py prepare --log normal=work/logs/normal.log --log dos=work/logs/dos.log

  # 训练四个模型族
  python main.py train

  # 生成对抗样本并评估
  python main.py attack --scenario dos
  python main.py evaluate --phase baseline
  python main.py evaluate --phase adversarial
  python main.py retrain
  python main.py evaluate --phase defence
  python main.py report
        """,
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="按流量规格合成日志")
    p.add_argument("--spec", type=Path, required=True, help="流量规格YAML")
    p.add_argument("--out", type=Path, help="输出日志路径")

    p = sub.add_parser("prepare", parents=[common], help="预处理并划分 A/B/C")
    p.add_argument("--log", dest="logs", action="append", default=[], metavar="KIND=PATH",
                   help="日志（normal/dos/fuzzy/malfunction），可重复")

    p = sub.add_parser("train", parents=[common], help="在 A 上训练模型")
    p.add_argument("--family", dest="families", action="append", choices=FAMILY_CHOICES)

    p = sub.add_parser("attack", parents=[common], help="在 BL-DNN 上生成 B′/C′")
    p.add_argument("--scenario", dest="scenarios", action="append", choices=SCENARIO_CHOICES)

    p = sub.add_parser("retrain", parents=[common], help="在 B′ 上对抗再训练")
    p.add_argument("--family", dest="families", action="append", choices=FAMILY_CHOICES[:3])
    p.add_argument("--scenario", dest="scenarios", action="append", choices=SCENARIO_CHOICES)

    p = sub.add_parser("evaluate", parents=[common], help="运行测试并写出报告表")
    p.add_argument("--phase", choices=["baseline", "adversarial", "defence"], default="baseline")
    p.add_argument("--family", dest="families", action="append", choices=FAMILY_CHOICES)
    p.add_argument("--scenario", dest="scenarios", action="append", choices=SCENARIO_CHOICES)
    p.add_argument("--checkpoint", type=Path, help="单独评估一个检查点（需同时给出 --dataset）")
    p.add_argument("--dataset", type=Path, help="数据集CSV")

    p = sub.add_parser("report", parents=[common], help="汇总表格并生成摘要")
    p.add_argument("--top-k", type=int, default=5, help="每个场景列出的特征数")
    return parser


def dispatch(args) -> None:
    """执行子命令"""
    from src.cli.main import CLI, parse_log_argument

    cfg = load_run_config(args.config, args.overrides)
    work_dir = args.work_dir or Path(cfg.paths.work_dir)
    setup_logger(log_dir=work_dir / "run_logs", level=args.log_level)
    device_manager.configure(settings.TORCH_THREADS, settings.DETERMINISTIC)
    device_manager.log_device_info()
    logger.info(f"{settings.APP_NAME} {settings.APP_VERSION}: {args.command}")

    cli = CLI(cfg, work_dir)
    with cli.locked():
        if args.command == "synth":
            cli.synth(args.spec, args.out)
        elif args.command == "prepare":
            cli.prepare([parse_log_argument(v) for v in args.logs])
        elif args.command == "train":
            cli.train(args.families)
        elif args.command == "attack":
            cli.attack(args.scenarios)
        elif args.command == "retrain":
            cli.retrain(args.families, args.scenarios)
        elif args.command == "evaluate":
            if args.checkpoint or args.dataset:
                if not (args.checkpoint and args.dataset):
                    raise UsageError("--checkpoint and --dataset must be given together")
                cli.evaluate_checkpoint(args.checkpoint, args.dataset)
            else:
                cli.evaluate(args.phase, args.families, args.scenarios)
        elif args.command == "report":
            cli.report(args.top_k)


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except CanAdvError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"未预期的错误: {e}")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
