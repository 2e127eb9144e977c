#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
SOTA-CNN 帧级检测模型
输入为29条连续消息的ID构成的29x29二值矩阵（每行: 18个0 + 11位ID）
Stem -> Inception-ResNet-A -> Reduction-A -> Inception-ResNet-B -> Reduction-B -> 平均池化 -> dropout -> dense softmax(2)
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from src.core.config import CnnConfig, PipelineConfig
from src.core.exceptions import DatasetError, GeometryError
from src.data.pipeline import ID_SLICE, N_ID_BITS, Frame, SampleSet, window_frames
from src.engine import autograd as ag
from src.engine.layers import Conv2d, Dense, Dropout, attach_dropout_generator, scaled, seeded_init
from src.engine.trainer import fit
from src.models.base import InputKind, ModelFamily, ModelHandle, ModelView

RESIDUAL_SCALE = 0.1
PREDICT_BATCH = 256


def encode_frames(samples: SampleSet, frames: List[Frame], row_bits: int = 29) -> np.ndarray:
    """
    帧 -> ID位矩阵

    Args:
        samples: 帧索引所指向的样本集合
        frames: 帧列表
        row_bits: 每行位数（ID左侧补0）

    Returns:
        np.ndarray: (F, 帧长, row_bits) float32
    """
    if not frames:
        return np.zeros((0, 0, row_bits), dtype=np.float32)
    id_bits = samples.features[:, ID_SLICE]
    stacked = np.stack([id_bits[f.indices] for f in frames]).astype(np.float32)
    pad = np.zeros(stacked.shape[:2] + (row_bits - N_ID_BITS,), dtype=np.float32)
    return np.concatenate([pad, stacked], axis=2)


def require_two_frame_classes(view: ModelView, name: str):
    """帧视图非空且包含两个类别"""
    if len(view) == 0:
        raise DatasetError(f"sota_cnn: dataset '{name}' yields no frames")
    if len(np.unique(view.labels)) < 2:
        raise DatasetError(f"sota_cnn: frames of dataset '{name}' contain a single class")


def _concat(tensors: List[torch.Tensor]) -> torch.Tensor:
    return torch.cat(tensors, dim=1)


class Stem(nn.Module):
    """Stem 块"""

    def __init__(self, scale: float):
        super().__init__()
        c32, c64, c96 = scaled(32, scale), scaled(64, scale), scaled(96, scale)
        self.conv1 = Conv2d(1, c32, 3)
        self.conv2 = Conv2d(c32, c64, 3)
        self.branch_conv = Conv2d(c64, c96, 3)
        self.out_channels = c64 + c96

    def forward(self, x):
        x = self.conv2(self.conv1(x))
        return _concat([ag.avg_pool(x, 3, stride=1, padding=1), self.branch_conv(x)])


class InceptionResNetA(nn.Module):
    """Inception-ResNet-A 残差块"""

    def __init__(self, channels: int, scale: float):
        super().__init__()
        c32, c48, c64 = scaled(32, scale), scaled(48, scale), scaled(64, scale)
        self.b0 = Conv2d(channels, c32, 1)
        self.b1 = nn.Sequential(Conv2d(channels, c32, 1), Conv2d(c32, c32, 3))
        self.b2 = nn.Sequential(Conv2d(channels, c32, 1), Conv2d(c32, c48, 3), Conv2d(c48, c64, 3))
        self.project = Conv2d(c32 + c32 + c64, channels, 1, activation=None)
        self.out_channels = channels

    def forward(self, x):
        up = self.project(_concat([self.b0(x), self.b1(x), self.b2(x)]))
        return ag.relu(x + RESIDUAL_SCALE * up)


class ReductionA(nn.Module):
    """Reduction-A 降采样块"""

    def __init__(self, channels: int, scale: float):
        super().__init__()
        c64, c96 = scaled(64, scale), scaled(96, scale)
        self.b1 = Conv2d(channels, c96, 3, stride=2, padding=0)
        self.b2 = nn.Sequential(
            Conv2d(channels, c64, 1), Conv2d(c64, c96, 3), Conv2d(c96, c96, 3, stride=2, padding=0)
        )
        self.out_channels = channels + c96 + c96

    def forward(self, x):
        return _concat([ag.avg_pool(x, 3, stride=2), self.b1(x), self.b2(x)])


class InceptionResNetB(nn.Module):
    """Inception-ResNet-B 残差块（1x7 / 7x1 分解卷积）"""

    def __init__(self, channels: int, scale: float):
        super().__init__()
        c64, c80, c96 = scaled(64, scale), scaled(80, scale), scaled(96, scale)
        self.b0 = Conv2d(channels, c64, 1)
        self.b1 = nn.Sequential(Conv2d(channels, c64, 1), Conv2d(c64, c80, (1, 7)), Conv2d(c80, c96, (7, 1)))
        self.project = Conv2d(c64 + c96, channels, 1, activation=None)
        self.out_channels = channels

    def forward(self, x):
        up = self.project(_concat([self.b0(x), self.b1(x)]))
        return ag.relu(x + RESIDUAL_SCALE * up)


class ReductionB(nn.Module):
    """Reduction-B 降采样块"""

    def __init__(self, channels: int, scale: float):
        super().__init__()
        c64, c72, c96 = scaled(64, scale), scaled(72, scale), scaled(96, scale)
        self.b1 = nn.Sequential(Conv2d(channels, c64, 1), Conv2d(c64, c96, 3, stride=2, padding=0))
        self.b2 = nn.Sequential(Conv2d(channels, c64, 1), Conv2d(c64, c72, 3, stride=2, padding=0))
        self.out_channels = channels + c96 + c72

    def forward(self, x):
        return _concat([ag.avg_pool(x, 3, stride=2), self.b1(x), self.b2(x)])


class InceptionResNet(nn.Module):
    """缩减版 Inception-ResNet"""

    def __init__(self, width_scale: float = 0.25, dropout: float = 0.2):
        super().__init__()
        self.stem = Stem(width_scale)
        self.block_a = InceptionResNetA(self.stem.out_channels, width_scale)
        self.reduction_a = ReductionA(self.block_a.out_channels, width_scale)
        self.block_b = InceptionResNetB(self.reduction_a.out_channels, width_scale)
        self.reduction_b = ReductionB(self.block_b.out_channels, width_scale)
        self.dropout = Dropout(dropout)
        self.output = Dense(self.reduction_b.out_channels, 2, activation="softmax")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.reduction_b(self.block_b(self.reduction_a(self.block_a(self.stem(x)))))
        x = ag.avg_pool(x, (x.shape[2], x.shape[3])).flatten(1)
        return self.output(self.dropout(x))


class SotaCnnModel(ModelHandle):
    """SOTA-CNN 句柄"""

    family = ModelFamily.SOTA_CNN
    input_kind = InputKind.FRAME
    supports_gradient = True

    def __init__(
        self,
        config: Optional[CnnConfig] = None,
        pipeline: Optional[PipelineConfig] = None,
        seed: int = 0,
        dropout_seed: Optional[int] = None,
    ):
        super().__init__(seed)
        self.config = config or CnnConfig()
        self.pipeline = pipeline or PipelineConfig()
        self.dropout_seed = seed if dropout_seed is None else dropout_seed
        with seeded_init(seed):
            self.network = InceptionResNet(self.config.width_scale, self.config.dropout)
        self.network.eval()
        attach_dropout_generator(self.network, self.dropout_seed)
        self.adam_state: Optional[ag.AdamState] = None

    @property
    def frame_shape(self):
        return self.pipeline.frame_width, self.config.id_row_bits

    # ---------- 视图 ----------

    def build_view(self, samples: SampleSet) -> ModelView:
        """从消息流重建帧视图"""
        self._require_stream(samples)
        frames = window_frames(
            samples,
            width=self.pipeline.frame_width,
            stride=self.pipeline.frame_stride,
            attack_threshold=self.pipeline.frame_attack_threshold,
        )
        inputs = encode_frames(samples, frames, self.config.id_row_bits)
        if not frames:
            inputs = np.zeros((0,) + self.frame_shape, dtype=np.float32)
        labels = np.array([f.label for f in frames], dtype=np.int64)
        return ModelView(inputs=inputs, labels=labels, extras={"log_ids": [f.log_id for f in frames]})

    def check_geometry(self, inputs: np.ndarray):
        if inputs.ndim != 3 or tuple(inputs.shape[1:]) != self.frame_shape:
            height, width = self.frame_shape
            raise GeometryError(
                f"{self.family.value} expects (F, {height}, {width}) ID frames, got {inputs.shape}"
            )

    # ---------- 训练 ----------

    def _loss(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return ag.sparse_categorical_crossentropy(self.network(x), y)

    def _accuracy(self, x: torch.Tensor, y: torch.Tensor) -> float:
        return float((self.network(x).argmax(dim=-1) == y).float().mean())

    def fit_view(self, view: ModelView, epochs: Optional[int] = None, patience: Optional[int] = None,
                 validation_fraction: Optional[float] = None, seed: Optional[int] = None):
        """在帧视图上训练（可在已有状态上继续训练）"""
        self.check_geometry(view.inputs)
        cfg = self.config
        x = torch.as_tensor(view.inputs, dtype=torch.float32).unsqueeze(1)
        y = torch.as_tensor(view.labels, dtype=torch.long)
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
            monitor="val_accuracy",
            accuracy_fn=self._accuracy,
            adam_state=self.adam_state,
            learning_rate=cfg.learning_rate,
            name=self.family.value,
        )
        self.history = history.to_dict()
        return history

    def fit(self, samples: SampleSet, **kwargs):
        """在消息流上分帧后训练"""
        view = self.build_view(samples)
        require_two_frame_classes(view, samples.name)
        return self.fit_view(view, **kwargs)

    # ---------- 推理 ----------

    def predict_proba(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float32)
        if inputs.ndim == 2:
            inputs = inputs[None]
        if len(inputs) == 0:
            return np.zeros((0, 2), dtype=np.float32)
        self.check_geometry(inputs)
        out = []
        with torch.no_grad():
            for start in range(0, len(inputs), PREDICT_BATCH):
                batch = torch.as_tensor(inputs[start:start + PREDICT_BATCH]).unsqueeze(1)
                out.append(self.network(batch).numpy())
        return np.concatenate(out)

    def predict(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> np.ndarray:
        return self.predict_proba(inputs).argmax(axis=1).astype(np.int64)

    def input_gradient(self, inputs: np.ndarray, target_label: int, extras: Optional[Dict] = None) -> np.ndarray:
        """交叉熵损失对帧矩阵的梯度"""
        arr = np.asarray(inputs, dtype=np.float32)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
        self.check_geometry(arr)
        x = ag.mark_input(torch.as_tensor(arr))
        targets = torch.full((len(arr),), int(target_label), dtype=torch.long)
        loss = ag.sparse_categorical_crossentropy(self.network(x.unsqueeze(1)), targets) * len(arr)
        _, (grad,) = ag.backward(loss, inputs=[x])
        grad = grad.numpy()
        return grad[0] if single else grad

    # ---------- 生命周期 ----------

    def clone(self) -> "SotaCnnModel":
        twin = super().clone()
        attach_dropout_generator(twin.network, twin.dropout_seed)
        return twin

    def save(self, path: Union[str, Path]):
        ag.save_checkpoint(path, {
            "family": self.family.value,
            "architecture": {
                "width_scale": self.config.width_scale,
                "blocks": ["stem", "inception_resnet_a", "reduction_a", "inception_resnet_b", "reduction_b"],
                "frame_shape": list(self.frame_shape),
            },
            "config": self.config.model_dump(),
            "pipeline": self.pipeline.model_dump(),
            "state_dict": self.network.state_dict(),
            "optimizer": self.adam_state.state_dict() if self.adam_state else None,
            "seed": self.seed,
            "dropout_seed": self.dropout_seed,
            "history": self.history,
        })

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SotaCnnModel":
        payload = ag.load_checkpoint(path)
        model = cls(
            CnnConfig(**payload["config"]),
            PipelineConfig(**payload["pipeline"]),
            seed=payload["seed"],
            dropout_seed=payload.get("dropout_seed"),
        )
        model.network.load_state_dict(payload["state_dict"])
        model.network.eval()
        if payload.get("optimizer"):
            model.adam_state = ag.AdamState.from_state_dict(payload["optimizer"])
        model.history = payload.get("history", {})
        return model


def train_sota_cnn(
    dataset_a: SampleSet,
    seed: int,
    config: Optional[CnnConfig] = None,
    pipeline: Optional[PipelineConfig] = None,
    dropout_seed: Optional[int] = None,
) -> SotaCnnModel:
    """
    训练SOTA-CNN

    Args:
        dataset_a: 带流元数据的训练样本（内部分帧）
        seed: 初始化/打乱种子
        config: 训练配置
        pipeline: 分帧参数
        dropout_seed: dropout随机源种子

    Returns:
        SotaCnnModel: 已训练模型
    """
    model = SotaCnnModel(config, pipeline, seed=seed, dropout_seed=dropout_seed)
    view = model.build_view(dataset_a)
    logger.info(f"训练 SOTA-CNN: {len(view)} 帧 (攻击帧 {int(view.labels.sum())}), seed={seed}")
    require_two_frame_classes(view, dataset_a.name)
    history = model.fit_view(view)
    logger.success(f"SOTA-CNN 训练完成: {history.stopped_epoch} epochs")
    return model
