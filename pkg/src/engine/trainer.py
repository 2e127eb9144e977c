#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
通用训练循环
小批量 + Adam + 早停；反向传播与参数更新使用 autograd 模块
"""

import copy
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from src.engine.autograd import AdamState, adam_step, backward


class EarlyStopping:
    """
    早停判定

    Args:
        patience: 连续多少个epoch无改进后停止
        mode: 'min'（损失）或 'max'（准确率）
    """

    def __init__(self, patience: int = 3, mode: str = "min", min_delta: float = 0.0):
        if mode not in ("min", "max"):
            raise ValueError(f"unknown mode {mode}")
        self.patience = patience
        self.mode = mode
        self.min_delta = min_delta
        self.best: Optional[float] = None
        self.best_epoch = 0
        self.wait = 0

    def improved(self, value: float) -> bool:
        if self.best is None:
            return True
        if self.mode == "min":
            return value < self.best - self.min_delta
        return value > self.best + self.min_delta

    def update(self, value: float, epoch: int) -> bool:
        """
        记录一个epoch的监控值

        Returns:
            bool: 是否应当停止
        """
        if self.improved(value):
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainingHistory:
    """训练曲线"""
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_dict(self) -> Dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
        }


def validation_split(n: int, fraction: float, seed: int):
    """确定性地划出验证集索引"""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(round(n * fraction)) if fraction > 0 else 0
    if n - n_val < 1:
        n_val = 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def fit(
    model: nn.Module,
    loss_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    inputs: torch.Tensor,
    targets: torch.Tensor,
    *,
    epochs: int,
    batch_size: int,
    patience: int,
    seed: int,
    validation_fraction: float = 0.1,
    monitor: str = "val_loss",
    accuracy_fn: Optional[Callable[[torch.Tensor, torch.Tensor], float]] = None,
    adam_state: Optional[AdamState] = None,
    learning_rate: float = 0.001,
    regularizer: Optional[Callable[[], torch.Tensor]] = None,
    name: str = "model",
) -> Tuple[TrainingHistory, AdamState]:
    """
    训练网络

    Args:
        model: 待训练网络（独占）
        loss_fn: (批输入, 批目标) -> 标量损失（不含正则项）
        inputs / targets: 训练数据
        epochs / batch_size / patience: 训练参数
        seed: 打乱与验证划分的种子
        validation_fraction: 验证集比例
        monitor: 'val_loss' 或 'val_accuracy'
        accuracy_fn: 计算验证准确率的函数
        adam_state: 继续训练时传入已有状态
        regularizer: 返回正则项的函数

    Returns:
        (TrainingHistory, AdamState)
    """
    state = adam_state or AdamState(learning_rate=learning_rate)
    params = [p for p in model.parameters() if p.requires_grad]
    train_idx, val_idx = validation_split(len(inputs), validation_fraction, seed)
    use_val = len(val_idx) > 0
    mode = "max" if monitor == "val_accuracy" else "min"
    if monitor == "val_accuracy" and accuracy_fn is None:
        raise ValueError("val_accuracy monitor requires accuracy_fn")
    stopper = EarlyStopping(patience=patience, mode=mode)
    history = TrainingHistory()
    best_state = None
    generator = torch.Generator().manual_seed(seed)

    for epoch in range(1, epochs + 1):
        model.train()
        perm = torch.as_tensor(train_idx)[torch.randperm(len(train_idx), generator=generator)]
        total, count = 0.0, 0
        for start in range(0, len(perm), batch_size):
            batch = perm[start:start + batch_size]
            loss = loss_fn(inputs[batch], targets[batch])
            objective = loss + regularizer() if regularizer is not None else loss
            grads, _ = backward(objective, params)
            adam_step(params, grads, state)
            total += float(loss.detach()) * len(batch)
            count += len(batch)
        history.train_loss.append(total / max(count, 1))

        model.eval()
        if use_val:
            with torch.no_grad():
                val_in, val_t = inputs[torch.as_tensor(val_idx)], targets[torch.as_tensor(val_idx)]
                history.val_loss.append(float(loss_fn(val_in, val_t)))
                if accuracy_fn is not None:
                    history.val_accuracy.append(float(accuracy_fn(val_in, val_t)))
            value = history.val_accuracy[-1] if monitor == "val_accuracy" else history.val_loss[-1]
        else:
            value = history.train_loss[-1]

        logger.debug(
            f"[{name}] epoch {epoch}/{epochs} loss={history.train_loss[-1]:.5f}"
            + (f" val_loss={history.val_loss[-1]:.5f}" if use_val else "")
            + (f" val_acc={history.val_accuracy[-1]:.4f}" if history.val_accuracy else "")
        )
        history.stopped_epoch = epoch
        if stopper.improved(value):
            best_state = copy.deepcopy(model.state_dict())
        if stopper.update(value, epoch):
            logger.info(f"[{name}] 早停于第 {epoch} 个epoch（最佳: 第 {stopper.best_epoch} 个）")
            break

    history.best_epoch = stopper.best_epoch
    if best_state is not None and use_val:
        model.load_state_dict(best_state)
    model.eval()
    return history, state
