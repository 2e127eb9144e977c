#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
设备管理器
负责CPU执行环境、线程数、确定性设置、随机种子和资源信息
"""

import os
import platform
import random
from typing import Dict

import numpy as np
import psutil
import torch
from loguru import logger

from src.core.config import settings


class DeviceManager:
    """设备管理器类"""

    def __init__(self):
        """初始化设备管理器"""
        self.device = "cpu"
        self.cpu_info = self._get_cpu_info()
        self.memory_info = self._get_memory_info()
        self._configured = False

    def configure(self, threads: int = None, deterministic: bool = None):
        """
        配置torch执行环境

        Args:
            threads: CPU线程数，None时使用配置值
            deterministic: 是否启用确定性算法
        """
        threads = threads or settings.TORCH_THREADS
        deterministic = settings.DETERMINISTIC if deterministic is None else deterministic

        torch.set_num_threads(threads)
        torch.use_deterministic_algorithms(deterministic)
        self._configured = True
        logger.debug(f"torch已配置: threads={threads}, deterministic={deterministic}")

    def seed_everything(self, seed: int):
        """
        固定python、numpy和torch的随机种子

        Args:
            seed: 随机种子
        """
        if not self._configured:
            self.configure()
        os.environ["PYTHONHASHSEED"] = str(seed)
        random.seed(seed)
        np.random.seed(seed % (2 ** 32))
        torch.manual_seed(seed)

    def _get_cpu_info(self) -> Dict:
        """
        获取CPU信息

        Returns:
            Dict: CPU信息字典
        """
        freq = psutil.cpu_freq()
        return {
            "name": platform.processor() or "Unknown CPU",
            "cores": psutil.cpu_count(logical=False),
            "threads": psutil.cpu_count(logical=True),
            "frequency": freq.current if freq else 0,
        }

    def _get_memory_info(self) -> Dict:
        """
        获取内存信息

        Returns:
            Dict: 内存信息字典（GB）
        """
        mem = psutil.virtual_memory()
        return {
            "total": mem.total / (1024 ** 3),
            "available": mem.available / (1024 ** 3),
            "percent": mem.percent,
        }

    def get_device_info(self) -> Dict:
        """
        获取完整的设备信息

        Returns:
            Dict: 设备信息字典
        """
        return {
            "device": self.device,
            "cpu_name": self.cpu_info["name"],
            "cpu_cores": self.cpu_info["cores"],
            "cpu_threads": self.cpu_info["threads"],
            "torch_threads": torch.get_num_threads(),
            "torch_version": torch.__version__,
            "total_memory": self.memory_info["total"],
            "available_memory": self.memory_info["available"],
        }

    def log_device_info(self):
        """输出设备信息到日志"""
        info = self.get_device_info()
        logger.info(
            f"设备: {info['device']} | CPU: {info['cpu_name']} "
            f"({info['cpu_cores']}核/{info['cpu_threads']}线程) | "
            f"torch {info['torch_version']} x{info['torch_threads']} | "
            f"内存: {info['total_memory']:.2f} GB"
        )


# 创建全局设备管理器实例
device_manager = DeviceManager()
