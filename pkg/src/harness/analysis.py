#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
扰动分析
扰动规模/迭代次数统计、特征修改热力图、特征排名
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

from src.attacks.adversary import AdversarialResult
from src.core.config import Scenario
from src.core.exceptions import DatasetError
from src.data.pipeline import FEATURE_NAMES, N_FEATURES


@dataclass(frozen=True)
class PerturbationStats:
    """单个场景的扰动统计（失败样本计入）"""
    scenario: Scenario
    samples: int
    mean_size: float
    max_size: int
    mean_iterations: float
    max_iterations: int
    failures: int

    @property
    def success_rate(self) -> float:
        return (self.samples - self.failures) / self.samples

    def to_row(self) -> Dict:
        return {
            "scenario": Scenario(self.scenario).value,
            "samples": self.samples,
            "mean_size": self.mean_size,
            "max_size": self.max_size,
            "mean_iterations": self.mean_iterations,
            "max_iterations": self.max_iterations,
            "failures": self.failures,
            "success_rate": self.success_rate,
        }


def compute_perturbation_stats(
    results: Sequence[AdversarialResult], scenario: Scenario, max_iterations: int = 50
) -> PerturbationStats:
    """
    计算扰动统计；扰动规模 = 被修改特征数

    Args:
        results: 同一场景的生成结果（或旁路报告的行，字段同名）
        scenario: 场景
        max_iterations: 迭代上限；失败样本按该值计入迭代统计

    Returns:
        PerturbationStats: 统计
    """
    if not results:
        raise DatasetError(f"no adversarial results for scenario {Scenario(scenario).value}")
    sizes = np.array([len(r.modified_features) for r in results])
    iterations = np.array([r.iterations_used if r.success else max_iterations for r in results])
    return PerturbationStats(
        scenario=Scenario(scenario),
        samples=len(results),
        mean_size=float(sizes.mean()),
        max_size=int(sizes.max()),
        mean_iterations=float(iterations.mean()),
        max_iterations=int(iterations.max()),
        failures=int(sum(not r.success for r in results)),
    )


def stats_frame(stats: Sequence[PerturbationStats]) -> pd.DataFrame:
    return pd.DataFrame([s.to_row() for s in stats])


def feature_counts(results: Sequence[AdversarialResult]) -> np.ndarray:
    """长度77的修改次数向量"""
    counts = np.zeros(N_FEATURES, dtype=np.int64)
    for r in results:
        counts[list(r.modified_features)] += 1
    return counts


def compute_feature_heatmap(results_by_scenario: Mapping[Scenario, Sequence[AdversarialResult]]) -> pd.DataFrame:
    """
    特征热力图：行 = 场景，列 = 77个特征名，单元 = 修改次数

    Args:
        results_by_scenario: 场景 -> 生成结果

    Returns:
        pd.DataFrame: 场景数 x 77 的计数表
    """
    rows = [Scenario(s).value for s in results_by_scenario]
    data = [feature_counts(results) for results in results_by_scenario.values()]
    frame = pd.DataFrame(
        np.array(data, dtype=np.int64).reshape(len(rows), N_FEATURES), index=rows, columns=FEATURE_NAMES
    )
    frame.index.name = "scenario"
    return frame


def rank_features(heatmap: pd.DataFrame, top_k: int = 5) -> Dict[str, List[Dict]]:
    """每个场景修改最频繁的前k个特征（计数为0的不列出）"""
    ranking: Dict[str, List[Dict]] = {}
    for scenario, row in heatmap.iterrows():
        ordered = row[row > 0].sort_values(ascending=False, kind="stable").head(top_k)
        ranking[str(scenario)] = [{"feature": name, "count": int(count)} for name, count in ordered.items()]
    return ranking
