#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
日志配置模块
配置loguru日志系统，支持文件轮转、压缩和多级别日志
"""

import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from src.core.config import settings


def setup_logger(log_dir: Optional[Path] = None, level: Optional[str] = None):
    """
    配置日志系统

    Args:
        log_dir: 日志文件目录，None时只输出到控制台（除非配置了 LOG_DIR）
        level: 控制台日志级别，None时使用配置值
    """

    # 移除默认的handler
    logger.remove()

    # 控制台输出（彩色），stdout留给结果输出
    logger.add(
        sys.stderr,
        format=settings.LOG_FORMAT,
        level=(level or settings.LOG_LEVEL).upper(),
        colorize=True,
    )

    log_dir = log_dir or settings.LOG_DIR
    if log_dir is None:
        return

    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    # 通用日志文件
    logger.add(
        log_dir / "canadv_{time:YYYY-MM-DD}.log",
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        level="DEBUG",
        rotation=settings.LOG_ROTATION,
        retention=f"{settings.LOG_RETENTION} days",
        encoding="utf-8",
    )

    # 错误日志文件
    logger.add(
        log_dir / "error_{time:YYYY-MM-DD}.log",
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        level="ERROR",
        rotation=settings.LOG_ROTATION,
        retention=f"{settings.LOG_RETENTION} days",
        encoding="utf-8",
    )

    logger.debug(f"日志系统初始化完成: {log_dir}")

