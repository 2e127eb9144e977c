#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
IDS模型族
按模型族训练、加载检查点
"""

from pathlib import Path
from typing import Dict, Type, Union

from src.core.config import RunConfig
from src.core.exceptions import MissingArtifactError
from src.data.pipeline import SampleSet
from src.engine import autograd as ag

from .base import InputKind, ModelFamily, ModelHandle, ModelView, require_two_classes
from .bl_dnn import BlDnnModel, train_bl_dnn
from .ensemble import EnsembleModel, hard_vote, train_ensemble
from .sota_cnn import SotaCnnModel, train_sota_cnn
from .sota_lstm import SotaLstmModel, percentile_threshold, train_sota_lstm

MODEL_REGISTRY: Dict[ModelFamily, Type[ModelHandle]] = {
    ModelFamily.BL_DNN: BlDnnModel,
    ModelFamily.BL_ENSEMBLE: EnsembleModel,
    ModelFamily.SOTA_CNN: SotaCnnModel,
    ModelFamily.SOTA_LSTM: SotaLstmModel,
}

CHECKPOINT_SUFFIX = {
    ModelFamily.BL_DNN: ".pt",
    ModelFamily.BL_ENSEMBLE: ".joblib",
    ModelFamily.SOTA_CNN: ".pt",
    ModelFamily.SOTA_LSTM: ".pt",
}


def checkpoint_path(directory: Union[str, Path], family: ModelFamily) -> Path:
    """模型族在目录下的检查点文件"""
    family = ModelFamily(family)
    return Path(directory) / f"{family.value}{CHECKPOINT_SUFFIX[family]}"


def train_model(family: ModelFamily, dataset_a: SampleSet, cfg: RunConfig) -> ModelHandle:
    """
    按模型族训练

    Args:
        family: 模型族
        dataset_a: 训练数据集
        cfg: 实验配置（提供种子与各模型超参数）

    Returns:
        ModelHandle: 已训练模型
    """
    family = ModelFamily(family)
    seeds = cfg.seeds
    if family is ModelFamily.BL_DNN:
        return train_bl_dnn(dataset_a, seeds.init, cfg.dnn)
    if family is ModelFamily.BL_ENSEMBLE:
        return train_ensemble(dataset_a, seeds.init, cfg.ensemble)
    if family is ModelFamily.SOTA_CNN:
        return train_sota_cnn(dataset_a, seeds.init, cfg.cnn, cfg.pipeline, dropout_seed=seeds.dropout)
    return train_sota_lstm(dataset_a, seeds.init, cfg.lstm, cfg.pipeline, dropout_seed=seeds.dropout)


def load_model(path: Union[str, Path]) -> ModelHandle:
    """读取任意模型族的检查点"""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path), "train")
    if path.suffix == CHECKPOINT_SUFFIX[ModelFamily.BL_ENSEMBLE]:
        return EnsembleModel.load(path)
    family = ModelFamily(ag.load_checkpoint(path)["family"])
    return MODEL_REGISTRY[family].load(path)


__all__ = [
    "InputKind",
    "ModelFamily",
    "ModelHandle",
    "ModelView",
    "require_two_classes",
    "BlDnnModel",
    "EnsembleModel",
    "SotaCnnModel",
    "SotaLstmModel",
    "train_bl_dnn",
    "train_ensemble",
    "train_sota_cnn",
    "train_sota_lstm",
    "hard_vote",
    "percentile_threshold",
    "MODEL_REGISTRY",
    "checkpoint_path",
    "train_model",
    "load_model",
]
