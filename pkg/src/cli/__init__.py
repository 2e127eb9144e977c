#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
CLI模块
"""

from src.cli.main import CLI, parse_log_argument

__all__ = ["CLI", "parse_log_argument"]
