#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""核心模块"""

from .config import settings

__all__ = ["settings"]