#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
CAN-AdvBench 核心包
"""

__version__ = "1.0.0"
__license__ = "Apache 2.0"
