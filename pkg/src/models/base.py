#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
模型句柄基类
四个IDS模型族统一暴露预测、（可选）输入梯度、视图构建与检查点读写
"""

import copy
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from src.core.exceptions import CapabilityError, DatasetError, GeometryError
from src.data.pipeline import SampleSet


class ModelFamily(str, Enum):
    """模型族"""
    BL_DNN = "bl_dnn"
    BL_ENSEMBLE = "bl_ensemble"
    SOTA_CNN = "sota_cnn"
    SOTA_LSTM = "sota_lstm"


class InputKind(str, Enum):
    """模型输入几何"""
    MESSAGE = "message"
    FRAME = "frame"
    SEQUENCE = "sequence"


@dataclass
class ModelView:
    """
    数据集在某模型族下的视图

    inputs: 模型输入数组
    labels: 每个视图单元的真实标签
    extras: 模型族特有的附加信息（如每条序列的CAN ID）
    """
    inputs: np.ndarray
    labels: np.ndarray
    extras: Optional[Dict] = None

    def __len__(self) -> int:
        return len(self.labels)


class ModelHandle(ABC):
    """已训练IDS模型的统一句柄"""

    family: ModelFamily
    input_kind: InputKind
    supports_gradient: bool = False

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.history: Dict = {}

    # ---------- 视图 ----------

    @abstractmethod
    def build_view(self, samples: SampleSet) -> ModelView:
        """把消息级数据集转换为本模型族的输入视图"""

    def _require_stream(self, samples: SampleSet):
        if not samples.has_stream_metadata:
            raise GeometryError(
                f"{self.family.value} consumes {self.input_kind.value}s rebuilt from message streams; "
                f"dataset '{samples.name}' is message-level only (no source_index/log metadata)"
            )
        if len(samples) == 0:
            raise DatasetError(f"dataset '{samples.name}' is empty")

    # ---------- 推理 ----------

    @abstractmethod
    def check_geometry(self, inputs: np.ndarray):
        """输入形状不符合模型族时抛出 GeometryError"""

    @abstractmethod
    def predict(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> np.ndarray:
        """返回0/1标签"""

    def predict_proba(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> Optional[np.ndarray]:
        """返回类别概率；不提供概率的模型族返回None"""
        return None

    def predict_view(self, view: ModelView) -> np.ndarray:
        return self.predict(view.inputs, view.extras)

    def input_gradient(self, inputs: np.ndarray, target_label: int, extras: Optional[Dict] = None) -> np.ndarray:
        """损失对输入的梯度，形状同输入"""
        raise CapabilityError(f"{self.family.value} does not offer input gradients")

    # ---------- 生命周期 ----------

    def clone(self) -> "ModelHandle":
        """深拷贝，供再训练独占使用"""
        return copy.deepcopy(self)

    @abstractmethod
    def save(self, path: Union[str, Path]):
        """保存检查点"""

    @classmethod
    @abstractmethod
    def load(cls, path: Union[str, Path]) -> "ModelHandle":
        """读取检查点"""


def require_two_classes(samples: SampleSet, family: ModelFamily):
    """监督训练前检查数据集非空且包含两个类别"""
    if len(samples) == 0:
        raise DatasetError(f"{family.value}: training dataset is empty")
    if len(np.unique(samples.labels)) < 2:
        raise DatasetError(f"{family.value}: training dataset contains a single class")
