#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
网络层
以 nn.Module 持有参数，前向计算全部委托给 autograd 原语
"""

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from src.engine import autograd as ag

_init_generator: ContextVar[Optional[torch.Generator]] = ContextVar("init_generator", default=None)


@contextmanager
def seeded_init(seed: int) -> Iterator[torch.Generator]:
    """
    块内新建的层从固定种子的本地生成器取初始权重，全局随机状态不变

    Args:
        seed: 初始化种子
    """
    generator = torch.Generator().manual_seed(seed)
    token = _init_generator.set(generator)
    try:
        yield generator
    finally:
        _init_generator.reset(token)


def _glorot(shape: Sequence[int], fan_in: int, fan_out: int) -> torch.Tensor:
    return ag.glorot_uniform(shape, fan_in, fan_out, _init_generator.get())


class Dense(nn.Module):
    """全连接层（Glorot均匀初始化，偏置为0）"""

    def __init__(self, in_features: int, out_features: int, activation: Optional[str] = None):
        super().__init__()
        self.weight = nn.Parameter(_glorot((out_features, in_features), in_features, out_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        self.activation = activation

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = ag.dense(x, self.weight, self.bias)
        if self.activation == "relu":
            return ag.relu(y)
        if self.activation == "tanh":
            return ag.tanh(y)
        if self.activation == "sigmoid":
            return ag.sigmoid(y)
        if self.activation == "softmax":
            return ag.softmax(y)
        return y


class LayerNorm(nn.Module):
    """特征轴层归一化"""

    def __init__(self, features: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(features))
        self.bias = nn.Parameter(torch.zeros(features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ag.layer_normalize(x, self.gain, self.bias)


class Dropout(nn.Module):
    """dropout层；随机源由所属模型的生成器提供"""

    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate
        self.generator: Optional[torch.Generator] = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ag.dropout(x, self.rate, self.training, self.generator)

    def __getstate__(self):
        # 生成器不参与拷贝/序列化，拷贝后由模型重新绑定
        state = dict(self.__dict__)
        state["generator"] = None
        return state


class Conv2d(nn.Module):
    """二维卷积层，可选ReLU"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: Union[int, Tuple[int, int]],
        stride: int = 1,
        padding: Union[int, Tuple[int, int], str] = "same",
        activation: Optional[str] = "relu",
    ):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if padding == "same":
            padding = (kh // 2, kw // 2)
        self.stride = stride
        self.padding = padding
        self.activation = activation
        fan_in, fan_out = in_channels * kh * kw, out_channels * kh * kw
        self.weight = nn.Parameter(_glorot((out_channels, in_channels, kh, kw), fan_in, fan_out))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.out_channels = out_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = ag.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
        return ag.relu(y) if self.activation == "relu" else y


class Lstm(nn.Module):
    """LSTM层；遗忘门偏置初始化为1"""

    def __init__(self, input_size: int, hidden_size: int, return_sequences: bool = True):
        super().__init__()
        self.weight_ih = nn.Parameter(_glorot((4 * hidden_size, input_size), input_size, 4 * hidden_size))
        self.weight_hh = nn.Parameter(_glorot((4 * hidden_size, hidden_size), hidden_size, 4 * hidden_size))
        bias = torch.zeros(4 * hidden_size)
        bias[hidden_size:2 * hidden_size] = 1.0
        self.bias = nn.Parameter(bias)
        self.return_sequences = return_sequences

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = ag.lstm_layer(x, ag.LstmParams(self.weight_ih, self.weight_hh, self.bias))
        return out if self.return_sequences else out[:, -1]


def attach_dropout_generator(module: nn.Module, seed: int) -> torch.Generator:
    """为模型内所有Dropout层绑定同一个固定种子的生成器"""
    generator = torch.Generator().manual_seed(seed)
    for layer in module.modules():
        if isinstance(layer, Dropout):
            layer.generator = generator
    return generator


def scaled(width: int, scale: float, minimum: int = 4) -> int:
    """按宽度系数缩放层宽"""
    return max(minimum, int(round(width * scale)))
