#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""计算引擎：带形状检查的自动微分原语、层与训练循环"""

from . import autograd
from .layers import Conv2d, Dense, Dropout, LayerNorm, Lstm, attach_dropout_generator, seeded_init
from .trainer import EarlyStopping, TrainingHistory, fit, validation_split

__all__ = [
    "autograd",
    "Conv2d",
    "Dense",
    "Dropout",
    "LayerNorm",
    "Lstm",
    "attach_dropout_generator",
    "seeded_init",
    "EarlyStopping",
    "TrainingHistory",
    "fit",
    "validation_split",
]
