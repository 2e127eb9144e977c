#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
BL-DNN 基线模型
dense(77->128, relu, l2) -> layer-norm -> dense(128->64, relu, l2) -> layer-norm -> dense(64->2, softmax)
对抗样本全部在该模型上生成
"""

from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from src.core.config import DnnConfig
from src.core.exceptions import GeometryError
from src.data.pipeline import N_FEATURES, SampleSet
from src.engine import autograd as ag
from src.engine.layers import Dense, LayerNorm, scaled, seeded_init
from src.engine.trainer import fit
from src.models.base import InputKind, ModelFamily, ModelHandle, ModelView, require_two_classes


class DnnNetwork(nn.Module):
    """三层全连接网络"""

    def __init__(self, width_scale: float = 1.0):
        super().__init__()
        h1, h2 = scaled(128, width_scale), scaled(64, width_scale)
        self.hidden1 = Dense(N_FEATURES, h1, activation="relu")
        self.norm1 = LayerNorm(h1)
        self.hidden2 = Dense(h1, h2, activation="relu")
        self.norm2 = LayerNorm(h2)
        self.output = Dense(h2, 2, activation="softmax")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(self.hidden1(x))
        x = self.norm2(self.hidden2(x))
        return self.output(x)

    def kernels(self):
        return [self.hidden1.weight, self.hidden2.weight]


class BlDnnModel(ModelHandle):
    """BL-DNN 句柄"""

    family = ModelFamily.BL_DNN
    input_kind = InputKind.MESSAGE
    supports_gradient = True

    def __init__(self, config: Optional[DnnConfig] = None, seed: int = 0):
        super().__init__(seed)
        self.config = config or DnnConfig()
        with seeded_init(seed):
            self.network = DnnNetwork(self.config.width_scale)
        self.network.eval()
        self.adam_state: Optional[ag.AdamState] = None

    # ---------- 训练 ----------

    def _loss(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return ag.sparse_categorical_crossentropy(self.network(x), y)

    def _accuracy(self, x: torch.Tensor, y: torch.Tensor) -> float:
        return float((self.network(x).argmax(dim=-1) == y).float().mean())

    def fit(self, samples: SampleSet, epochs: Optional[int] = None, patience: Optional[int] = None,
            validation_fraction: Optional[float] = None, seed: Optional[int] = None):
        """在消息样本上训练（可在已有状态上继续训练）"""
        cfg = self.config
        x = torch.as_tensor(samples.features, dtype=torch.float32)
        y = torch.as_tensor(samples.labels, dtype=torch.long)
        history, self.adam_state = fit(
            self.network,
            self._loss,
            x,
            y,
            epochs=epochs or cfg.epochs,
            batch_size=cfg.batch_size,
            patience=patience or cfg.patience,
            seed=self.seed if seed is None else seed,
            validation_fraction=cfg.validation_fraction if validation_fraction is None else validation_fraction,
            monitor="val_loss",
            accuracy_fn=self._accuracy,
            adam_state=self.adam_state,
            learning_rate=cfg.learning_rate,
            regularizer=lambda: ag.l2_penalty(self.network.kernels(), cfg.l2),
            name=self.family.value,
        )
        self.history = history.to_dict()
        return history

    # ---------- 推理 ----------

    def build_view(self, samples: SampleSet) -> ModelView:
        return ModelView(inputs=samples.features, labels=samples.labels)

    def check_geometry(self, inputs: np.ndarray):
        if inputs.ndim != 2 or inputs.shape[1] != N_FEATURES:
            raise GeometryError(f"{self.family.value} expects (N, {N_FEATURES}) messages, got {inputs.shape}")

    def predict_proba(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs))
        self.check_geometry(inputs)
        with torch.no_grad():
            return self.network(torch.as_tensor(inputs, dtype=torch.float32)).numpy()

    def predict(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> np.ndarray:
        return self.predict_proba(inputs).argmax(axis=1).astype(np.int64)

    def input_gradient(self, inputs: np.ndarray, target_label: int, extras: Optional[Dict] = None) -> np.ndarray:
        """
        交叉熵损失 J(x, target) 对输入的梯度

        Args:
            inputs: (N, 77) 或 (77,)
            target_label: 目标类别

        Returns:
            np.ndarray: 与输入同形状的梯度
        """
        arr = np.asarray(inputs, dtype=np.float32)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        self.check_geometry(arr)
        x = ag.mark_input(torch.as_tensor(arr))
        targets = torch.full((len(arr),), int(target_label), dtype=torch.long)
        # 按样本求和，使每行梯度与单样本梯度一致
        loss = ag.sparse_categorical_crossentropy(self.network(x), targets) * len(arr)
        _, (grad,) = ag.backward(loss, inputs=[x])
        grad = grad.numpy()
        return grad[0] if single else grad

    # ---------- 检查点 ----------

    def save(self, path: Union[str, Path]):
        ag.save_checkpoint(path, {
            "family": self.family.value,
            "architecture": {"width_scale": self.config.width_scale, "layers": [128, 64, 2]},
            "config": self.config.model_dump(),
            "state_dict": self.network.state_dict(),
            "optimizer": self.adam_state.state_dict() if self.adam_state else None,
            "seed": self.seed,
            "history": self.history,
        })

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BlDnnModel":
        payload = ag.load_checkpoint(path)
        model = cls(DnnConfig(**payload["config"]), seed=payload["seed"])
        model.network.load_state_dict(payload["state_dict"])
        model.network.eval()
        if payload.get("optimizer"):
            model.adam_state = ag.AdamState.from_state_dict(payload["optimizer"])
        model.history = payload.get("history", {})
        return model


def train_bl_dnn(dataset_a: SampleSet, seed: int, config: Optional[DnnConfig] = None) -> BlDnnModel:
    """
    训练BL-DNN

    Args:
        dataset_a: 平衡的训练样本
        seed: 初始化/打乱种子
        config: 训练配置

    Returns:
        BlDnnModel: 已训练模型
    """
    require_two_classes(dataset_a, ModelFamily.BL_DNN)
    model = BlDnnModel(config, seed=seed)
    logger.info(f"训练 BL-DNN: {len(dataset_a)} 条样本, seed={seed}")
    history = model.fit(dataset_a)
    logger.success(f"BL-DNN 训练完成: {history.stopped_epoch} epochs, 末轮损失 {history.train_loss[-1]:.4f}")
    return model
