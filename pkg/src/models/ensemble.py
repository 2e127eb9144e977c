#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
BL-Ensemble 基线模型
逻辑回归、决策树、线性SVM、K近邻、高斯朴素贝叶斯五个子学习器，硬投票组合
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

import joblib
import numpy as np
from loguru import logger
from sklearn.ensemble import VotingClassifier
from sklearn.linear_model import SGDClassifier
from sklearn.naive_bayes import GaussianNB
from sklearn.neighbors import KNeighborsClassifier
from sklearn.tree import DecisionTreeClassifier

from src.core.config import EnsembleConfig
from src.core.exceptions import GeometryError
from src.data.pipeline import N_FEATURES, SampleSet
from src.models.base import InputKind, ModelFamily, ModelHandle, ModelView, require_two_classes

SUB_LEARNERS = ["logistic_regression", "decision_tree", "linear_svm", "knn", "gaussian_nb"]


def hard_vote(votes: np.ndarray) -> np.ndarray:
    """
    硬投票：每行取多数标签

    Args:
        votes: (N, 5) 的0/1子预测

    Returns:
        np.ndarray: (N,) 多数标签
    """
    votes = np.atleast_2d(np.asarray(votes, dtype=np.int64))
    return (2 * votes.sum(axis=1) > votes.shape[1]).astype(np.int64)


def build_sub_learners(config: EnsembleConfig, seed: int) -> List:
    """按配置构造五个子学习器"""
    return [
        ("logistic_regression", SGDClassifier(
            loss="log_loss", penalty="l2", alpha=config.logistic_alpha,
            max_iter=config.sgd_max_iter, tol=1e-4, random_state=seed)),
        ("decision_tree", DecisionTreeClassifier(
            criterion="gini", max_depth=config.tree_max_depth, random_state=seed)),
        ("linear_svm", SGDClassifier(
            loss="hinge", penalty="l2", alpha=config.svm_alpha,
            max_iter=config.sgd_max_iter, tol=1e-4, random_state=seed)),
        ("knn", KNeighborsClassifier(
            n_neighbors=config.knn_neighbors, algorithm="brute", metric="euclidean")),
        ("gaussian_nb", GaussianNB(var_smoothing=config.nb_var_smoothing)),
    ]


class EnsembleModel(ModelHandle):
    """BL-Ensemble 句柄（不提供梯度）"""

    family = ModelFamily.BL_ENSEMBLE
    input_kind = InputKind.MESSAGE
    supports_gradient = False

    def __init__(self, config: Optional[EnsembleConfig] = None, seed: int = 0):
        super().__init__(seed)
        self.config = config or EnsembleConfig()
        self.voter: Optional[VotingClassifier] = None

    def fit(self, samples: SampleSet):
        """拟合全部子学习器"""
        require_two_classes(samples, self.family)
        self.voter = VotingClassifier(estimators=build_sub_learners(self.config, self.seed), voting="hard")
        self.voter.fit(samples.features.astype(np.float64), samples.labels)
        self.history = {"train_size": len(samples)}
        return self

    @property
    def sub_learners(self) -> Dict:
        return dict(zip(SUB_LEARNERS, self.voter.estimators_))

    def build_view(self, samples: SampleSet) -> ModelView:
        return ModelView(inputs=samples.features, labels=samples.labels)

    def check_geometry(self, inputs: np.ndarray):
        if inputs.ndim != 2 or inputs.shape[1] != N_FEATURES:
            raise GeometryError(f"{self.family.value} expects (N, {N_FEATURES}) messages, got {inputs.shape}")

    def sub_predictions(self, inputs: np.ndarray) -> np.ndarray:
        """各子学习器的预测，形状 (N, 5)"""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        self.check_geometry(inputs)
        encoded = np.column_stack([est.predict(inputs) for est in self.voter.estimators_])
        return self.voter.le_.inverse_transform(encoded.ravel()).reshape(encoded.shape).astype(np.int64)

    def predict(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> np.ndarray:
        return hard_vote(self.sub_predictions(inputs))

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        joblib.dump({
            "family": self.family.value,
            "config": self.config.model_dump(),
            "voter": self.voter,
            "seed": self.seed,
            "history": self.history,
        }, path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EnsembleModel":
        payload = joblib.load(Path(path))
        model = cls(EnsembleConfig(**payload["config"]), seed=payload["seed"])
        model.voter = payload["voter"]
        model.history = payload.get("history", {})
        return model


def train_ensemble(dataset_a: SampleSet, seed: int, config: Optional[EnsembleConfig] = None) -> EnsembleModel:
    """
    训练BL-Ensemble

    Args:
        dataset_a: 平衡的训练样本
        seed: 随机种子

    Returns:
        EnsembleModel: 已训练模型
    """
    logger.info(f"训练 BL-Ensemble: {len(dataset_a)} 条样本, seed={seed}")
    model = EnsembleModel(config, seed=seed).fit(dataset_a)
    logger.success("BL-Ensemble 训练完成")
    return model
