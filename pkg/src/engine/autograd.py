#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
反向模式自动微分核心
在torch自动求导图之上提供带形状校验的前向原语、损失函数、反向传播、
Adam更新以及检查点读写。torch的计算图即反向遍历所用的tape。
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from loguru import logger

from src.core.exceptions import GradientError, ShapeMismatchError

Tensor = torch.Tensor

PROB_EPS = 1e-7


def _require(condition: bool, op: str, *tensors: Tensor, reason: str = ""):
    if not condition:
        raise ShapeMismatchError(op, [t.shape for t in tensors], reason)


# ============ 前向原语 ============

def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    全连接: y = x W^T + b

    Args:
        x: (..., in)
        weight: (out, in)
        bias: (out,)
    """
    _require(weight.dim() == 2 and x.shape[-1] == weight.shape[1], "dense", x, weight,
             reason="last input dim must equal weight columns")
    if bias is not None:
        _require(bias.shape == (weight.shape[0],), "dense", x, weight, bias, reason="bias length")
    return F.linear(x, weight, bias)


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def tanh(x: Tensor) -> Tensor:
    return torch.tanh(x)


def sigmoid(x: Tensor) -> Tensor:
    return torch.sigmoid(x)


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    return torch.softmax(x, dim=dim)


def layer_normalize(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """特征轴上的层归一化，带可学习的增益与偏置"""
    _require(gain.shape == x.shape[-1:] and bias.shape == x.shape[-1:],
             "layer_normalize", x, gain, bias, reason="gain/bias must match feature axis")
    return F.layer_norm(x, x.shape[-1:], gain, bias, eps)


def dropout(
    x: Tensor,
    rate: float,
    train: bool,
    generator: Optional[torch.Generator] = None,
) -> Tensor:
    """
    反向dropout；推理模式下为恒等映射

    Args:
        x: 输入
        rate: 丢弃概率
        train: 是否训练模式
        generator: 随机数生成器（固定种子即可复现）
    """
    if not train or rate <= 0.0:
        return x
    if rate >= 1.0:
        return torch.zeros_like(x)
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= rate
    return x * keep.to(x.dtype) / (1.0 - rate)


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Optional[Tensor] = None,
    stride: Union[int, Tuple[int, int]] = 1,
    padding: Union[int, Tuple[int, int]] = 0,
) -> Tensor:
    """
    二维卷积

    Args:
        x: (N, C, H, W)
        kernels: (O, C, kh, kw)
        bias: (O,)
    """
    _require(x.dim() == 4 and kernels.dim() == 4 and x.shape[1] == kernels.shape[1],
             "conv2d", x, kernels, reason="expected (N,C,H,W) and (O,C,kh,kw) with equal C")
    pad = (padding, padding) if isinstance(padding, int) else tuple(padding)
    _require(x.shape[2] + 2 * pad[0] >= kernels.shape[2] and x.shape[3] + 2 * pad[1] >= kernels.shape[3],
             "conv2d", x, kernels, reason="kernel larger than padded input")
    return F.conv2d(x, kernels, bias, stride=stride, padding=pad)


def avg_pool(
    x: Tensor,
    window: Union[int, Tuple[int, int]],
    stride: Optional[Union[int, Tuple[int, int]]] = None,
    padding: int = 0,
) -> Tensor:
    """二维平均池化，x 形状 (N, C, H, W)"""
    win = (window, window) if isinstance(window, int) else tuple(window)
    _require(x.dim() == 4 and x.shape[2] + 2 * padding >= win[0] and x.shape[3] + 2 * padding >= win[1],
             "avg_pool", x, reason=f"window {win} does not fit")
    return F.avg_pool2d(x, win, stride=stride, padding=padding, count_include_pad=False)


@dataclass
class LstmParams:
    """LSTM层参数，门顺序 (input, forget, cell, output)"""
    weight_ih: Tensor
    weight_hh: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return self.weight_hh.shape[1]


def lstm_layer(sequence: Tensor, params: LstmParams) -> Tensor:
    """
    沿时间维展开的标准门控循环

    Args:
        sequence: (N, T, D)
        params: LSTM参数

    Returns:
        Tensor: 每个时间步的隐状态 (N, T, H)
    """
    hidden = params.hidden_size
    _require(sequence.dim() == 3 and params.weight_ih.shape == (4 * hidden, sequence.shape[-1])
             and params.weight_hh.shape == (4 * hidden, hidden) and params.bias.shape == (4 * hidden,),
             "lstm_layer", sequence, params.weight_ih, params.weight_hh, params.bias)

    n, steps, _ = sequence.shape
    h = sequence.new_zeros(n, hidden)
    c = sequence.new_zeros(n, hidden)
    projected = F.linear(sequence, params.weight_ih, params.bias)
    outputs = []
    for t in range(steps):
        gates = projected[:, t] + F.linear(h, params.weight_hh)
        i, f, g, o = gates.chunk(4, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        outputs.append(h)
    return torch.stack(outputs, dim=1)


# ============ 损失函数 ============

def sparse_categorical_crossentropy(probabilities: Tensor, class_index: Tensor) -> Tensor:
    """
    稀疏分类交叉熵（输入为softmax后的概率），对批次取均值

    Args:
        probabilities: (N, K) 或 (K,)
        class_index: (N,) 或标量
    """
    probs = probabilities.reshape(-1, probabilities.shape[-1])
    target = torch.as_tensor(class_index, device=probs.device).reshape(-1).long()
    _require(len(target) == len(probs), "sparse_categorical_crossentropy", probs, target)
    if target.numel() and (target.min() < 0 or target.max() >= probs.shape[-1]):
        raise ShapeMismatchError("sparse_categorical_crossentropy", [probs.shape, target.shape],
                                 reason=f"class index outside [0, {probs.shape[-1]})")
    picked = probs.gather(1, target.unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp(PROB_EPS, 1.0 - PROB_EPS)).mean()


def binary_crossentropy(predicted_bits: Tensor, target_bits: Tensor, reduce: bool = True) -> Tensor:
    """
    二元交叉熵；reduce=False 时返回每行（最后一维）的均值

    Args:
        predicted_bits: 概率 (..., B)
        target_bits: 目标位 (..., B)
    """
    _require(predicted_bits.shape == target_bits.shape, "binary_crossentropy", predicted_bits, target_bits)
    p = predicted_bits.clamp(PROB_EPS, 1.0 - PROB_EPS)
    t = target_bits.to(p.dtype)
    per_bit = -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p))
    per_row = per_bit.mean(dim=-1)
    return per_row.mean() if reduce else per_row


def l2_penalty(weights: Sequence[Tensor], coefficient: float) -> Tensor:
    """L2正则项: c * sum(w^2)"""
    if isinstance(weights, Tensor):
        weights = [weights]
    total = sum((w.pow(2).sum() for w in weights), torch.zeros(()))
    return coefficient * total


# ============ 反向传播 ============

def mark_input(x: Tensor) -> Tensor:
    """把输入标记为可求导（返回叶子副本）"""
    return x.detach().clone().requires_grad_(True)


def backward(
    loss: Tensor,
    params: Sequence[Tensor] = (),
    inputs: Sequence[Tensor] = (),
) -> Tuple[List[Tensor], List[Tensor]]:
    """
    从标量损失出发反向遍历计算图

    Args:
        loss: 标量损失
        params: 需要梯度的参数
        inputs: 显式标记为可求导的输入

    Returns:
        (参数梯度列表, 输入梯度列表)；与损失无关的张量梯度为零
    """
    if loss.dim() != 0 and loss.numel() != 1:
        raise GradientError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    targets = list(params) + list(inputs)
    if not targets:
        return [], []
    grads = torch.autograd.grad(loss.reshape(()), targets, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(targets, grads)]
    return grads[:len(params)], grads[len(params):]


# ============ Adam ============

@dataclass
class AdamState:
    """Adam优化器状态"""
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: List[Tensor] = field(default_factory=list)
    second_moments: List[Tensor] = field(default_factory=list)

    def state_dict(self) -> Dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step": self.step,
            "first_moments": [m.clone() for m in self.first_moments],
            "second_moments": [v.clone() for v in self.second_moments],
        }

    @classmethod
    def from_state_dict(cls, state: Dict) -> "AdamState":
        return cls(**state)


@torch.no_grad()
def adam_step(params: Sequence[Tensor], grads: Sequence[Tensor], state: AdamState) -> AdamState:
    """
    带偏差修正的Adam更新（原地修改参数）

    Args:
        params: 参数
        grads: 对应梯度
        state: 优化器状态

    Returns:
        AdamState: 更新后的状态（同一对象）
    """
    if len(params) != len(grads):
        raise ShapeMismatchError("adam_step", [(len(params),), (len(grads),)], reason="param/grad count")
    for p, g in zip(params, grads):
        _require(p.shape == g.shape, "adam_step", p, g)
    if not state.first_moments:
        state.first_moments = [torch.zeros_like(p) for p in params]
        state.second_moments = [torch.zeros_like(p) for p in params]
    for p, m in zip(params, state.first_moments):
        _require(p.shape == m.shape, "adam_step", p, m, reason="moment shape")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    step_size = state.learning_rate / correction1
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / correction2).sqrt_().add_(state.epsilon)
        p.addcdiv_(m, denom, value=-step_size)
    return state


# ============ 初始化 ============

def glorot_uniform(shape: Sequence[int], fan_in: int, fan_out: int,
                   generator: Optional[torch.Generator] = None) -> Tensor:
    """Glorot均匀初始化 U(-a, a), a = sqrt(6 / (fan_in + fan_out))"""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return (torch.rand(tuple(shape), generator=generator) * 2.0 - 1.0) * limit


# ============ 检查点 ============

def save_checkpoint(path: Union[str, Path], payload: Dict):
    """
    保存检查点（架构描述、参数、优化器状态、训练种子等）

    Args:
        path: 输出路径
        payload: 自描述字典
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    logger.debug(f"检查点已保存: {path}")


def load_checkpoint(path: Union[str, Path]) -> Dict:
    """读取检查点"""
    return torch.load(Path(path), map_location="cpu", weights_only=False)
