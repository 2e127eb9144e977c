#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
评估指标
混淆计数 -> 准确率、F1、FNR、FPR；分母为0的指标记为 None
"""

from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np

from src.core.exceptions import DatasetError
from src.data.pipeline import SampleSet
from src.models.base import ModelHandle, ModelView


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


@dataclass(frozen=True)
class Metrics:
    """混淆计数及派生指标（正类 = 攻击）"""
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> Optional[float]:
        return _ratio(self.tp + self.tn, self.total)

    @property
    def f1(self) -> Optional[float]:
        # 2PR/(P+R) 化简后的形式
        return _ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    @property
    def fnr(self) -> Optional[float]:
        return _ratio(self.fn, self.fn + self.tp)

    @property
    def fpr(self) -> Optional[float]:
        return _ratio(self.fp, self.fp + self.tn)

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> Dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "fnr": self.fnr,
            "fpr": self.fpr,
        }


def confusion(labels: np.ndarray, predictions: np.ndarray) -> Metrics:
    """由真实标签与预测标签计算混淆计数"""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    if labels.shape != predictions.shape:
        raise DatasetError(f"{len(labels)} labels vs {len(predictions)} predictions")
    return Metrics(
        tp=int(np.sum((labels == 1) & (predictions == 1))),
        fp=int(np.sum((labels == 0) & (predictions == 1))),
        tn=int(np.sum((labels == 0) & (predictions == 0))),
        fn=int(np.sum((labels == 1) & (predictions == 0))),
    )


def pooled(metrics: Iterable[Metrics]) -> Metrics:
    """合并多个数据集的混淆计数（如 B+C）"""
    return sum(metrics, Metrics(0, 0, 0, 0))


def evaluate_view(handle: ModelHandle, view: ModelView, name: str = "") -> Metrics:
    """在已构建的视图上评估"""
    if len(view) == 0:
        raise DatasetError(f"{handle.family.value}: nothing to evaluate in dataset '{name}'")
    return confusion(view.labels, handle.predict_view(view))


def evaluate(handle: ModelHandle, dataset: SampleSet) -> Metrics:
    """
    评估模型

    Args:
        handle: 已训练模型
        dataset: 消息级数据集（帧/序列视图在内部重建）

    Returns:
        Metrics: 混淆计数与指标
    """
    if len(dataset) == 0:
        raise DatasetError(f"dataset '{dataset.name}' is empty")
    return evaluate_view(handle, handle.build_view(dataset), dataset.name)
