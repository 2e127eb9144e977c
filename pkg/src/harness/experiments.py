#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
三类测试流程
基线测试、对抗测试（含迁移矩阵）、对抗再训练与防御测试
"""

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from src.core.config import RetrainConfig, Scenario
from src.core.exceptions import CapabilityError, DatasetError, MissingArtifactError
from src.data.pipeline import SampleSet, concat_sample_sets, scenario_view
from src.models.base import ModelFamily, ModelHandle
from src.harness.metrics import Metrics, evaluate, pooled

REPORT_COLUMNS = [
    "phase", "model", "scenario", "dataset",
    "tp", "fp", "tn", "fn", "accuracy", "f1", "fnr", "fpr",
    "seed", "config_digest",
]

RETRAINABLE = (ModelFamily.BL_DNN, ModelFamily.BL_ENSEMBLE, ModelFamily.SOTA_CNN)


class Phase(str, Enum):
    """测试阶段"""
    BASELINE = "baseline"
    ADVERSARIAL = "adversarial"
    DEFENCE = "defence"


def prime(tag: str) -> str:
    """数据集标签的对抗版本：B -> B'"""
    return f"{tag}'"


def pooled_tag(tags: Sequence[str]) -> str:
    return "+".join(tags)


@dataclass
class ExperimentReport:
    """单个 (阶段, 模型, 场景, 数据集) 的评估结果"""
    phase: Phase
    model: str
    scenario: Scenario
    dataset: str
    metrics: Metrics
    seed: int = 0
    config_digest: str = ""
    created_at: datetime = field(default_factory=datetime.now)

    def to_row(self) -> Dict:
        """表格行（不含时间戳）"""
        return {
            "phase": self.phase.value,
            "model": self.model,
            "scenario": Scenario(self.scenario).value,
            "dataset": self.dataset,
            **self.metrics.to_dict(),
            "seed": self.seed,
            "config_digest": self.config_digest,
        }


def reports_frame(reports: Sequence[ExperimentReport]) -> pd.DataFrame:
    """报告列表 -> 表格"""
    return pd.DataFrame([r.to_row() for r in reports], columns=REPORT_COLUMNS)


def reports_from_frame(frame: pd.DataFrame) -> List[ExperimentReport]:
    """从已写出的表格恢复报告（指标由混淆计数重算）"""
    return [
        ExperimentReport(
            phase=Phase(row["phase"]),
            model=str(row["model"]),
            scenario=Scenario(row["scenario"]),
            dataset=str(row["dataset"]),
            metrics=Metrics(int(row["tp"]), int(row["fp"]), int(row["tn"]), int(row["fn"])),
            seed=int(row["seed"]),
            config_digest=str(row["config_digest"]),
        )
        for row in frame.to_dict(orient="records")
    ]


def _evaluate_scenarios(
    phase: Phase,
    models: Mapping[ModelFamily, ModelHandle],
    datasets: Mapping[str, SampleSet],
    scenario: Scenario,
    include_pooled: bool,
    seed: int,
    digest: str,
) -> List[ExperimentReport]:
    """对一组数据集（同一场景）评估全部模型"""
    reports: List[ExperimentReport] = []
    for family, handle in models.items():
        per_tag: List[Metrics] = []
        for tag, dataset in datasets.items():
            view = scenario_view(dataset, scenario)
            if len(view) == 0:
                logger.warning(f"{tag} 在场景 {scenario.value} 下为空，跳过")
                continue
            metrics = evaluate(handle, view)
            per_tag.append(metrics)
            reports.append(ExperimentReport(phase, ModelFamily(family).value, scenario, tag, metrics, seed, digest))
        if include_pooled and len(per_tag) > 1:
            reports.append(ExperimentReport(
                phase, ModelFamily(family).value, scenario, pooled_tag(list(datasets)), pooled(per_tag), seed, digest
            ))
    return reports


def run_baseline_test(
    models: Mapping[ModelFamily, ModelHandle],
    dataset_b: SampleSet,
    dataset_c: SampleSet,
    scenarios: Sequence[Scenario] = (Scenario.FULL,),
    include_pooled: bool = False,
    seed: int = 0,
    config_digest: str = "",
) -> List[ExperimentReport]:
    """
    基线测试：在A上训练的模型于 B、C 上评估

    Args:
        models: 模型族 -> 已训练模型
        dataset_b / dataset_c: 干净数据集
        scenarios: 评估的场景视图（默认只有 Full）
        include_pooled: 是否附加 B+C 合并报告
        seed: 训练种子（记录在报告中）
        config_digest: 配置摘要

    Returns:
        List[ExperimentReport]: phase=baseline 的报告
    """
    logger.info(f"基线测试: {len(models)} 个模型, 场景 {[Scenario(s).value for s in scenarios]}")
    reports: List[ExperimentReport] = []
    for scenario in scenarios:
        reports += _evaluate_scenarios(
            Phase.BASELINE, models, {"B": dataset_b, "C": dataset_c},
            Scenario(scenario), include_pooled, seed, config_digest,
        )
    logger.success(f"基线测试完成: {len(reports)} 份报告")
    return reports


@dataclass
class AdversarialOutcome:
    """对抗测试结果"""
    reports: List[ExperimentReport]
    transfer_matrix: pd.DataFrame
    fnr_delta: pd.DataFrame


def _matrix(values: Dict[Tuple[str, str], Optional[float]], scenarios, families) -> pd.DataFrame:
    rows = [Scenario(s).value for s in scenarios]
    cols = [ModelFamily(f).value for f in families]
    data = [[values.get((r, c)) for c in cols] for r in rows]
    frame = pd.DataFrame(data, index=rows, columns=cols, dtype=float)
    frame.index.name = "scenario"
    return frame


def transfer_matrix(
    reports: Sequence[ExperimentReport], scenarios: Sequence[Scenario], families: Sequence[ModelFamily], dataset: str
) -> pd.DataFrame:
    """迁移矩阵：行 = 场景，列 = 模型，单元 = 指定数据集上的FNR"""
    values = {(Scenario(r.scenario).value, r.model): r.metrics.fnr for r in reports if r.dataset == dataset}
    return _matrix(values, scenarios, families)


def run_adversarial_test(
    models: Mapping[ModelFamily, ModelHandle],
    adversarial: Mapping[Scenario, Mapping[str, SampleSet]],
    scenarios: Sequence[Scenario],
    baseline: Optional[Sequence[ExperimentReport]] = None,
    seed: int = 0,
    config_digest: str = "",
) -> AdversarialOutcome:
    """
    对抗测试：全部模型在每个场景的 B′、C′ 上评估，并给出迁移矩阵

    Args:
        models: 模型族 -> 已训练模型
        adversarial: 场景 -> {"B'": B′, "C'": C′}
        scenarios: 需要评估的场景
        baseline: 含 B+C 合并报告的基线结果，用于计算FNR增量

    Returns:
        AdversarialOutcome: 报告、迁移矩阵（B′+C′ 合并FNR）与FNR增量矩阵
    """
    reports: List[ExperimentReport] = []
    tags = [prime("B"), prime("C")]
    for scenario in scenarios:
        scenario = Scenario(scenario)
        datasets = adversarial.get(scenario)
        if not datasets or any(t not in datasets for t in tags):
            raise MissingArtifactError(f"adversarial/{scenario.value}", "attack")
        logger.info(f"对抗测试: 场景 {scenario.value}")
        reports += _evaluate_scenarios(
            Phase.ADVERSARIAL, models, {t: datasets[t] for t in tags}, scenario, True, seed, config_digest
        )

    families = list(models)
    matrix = transfer_matrix(reports, scenarios, families, pooled_tag(tags))
    if baseline:
        clean = transfer_matrix(baseline, scenarios, families, pooled_tag(["B", "C"]))
        delta = matrix - clean
    else:
        delta = matrix * np.nan
    logger.success(f"对抗测试完成: {len(reports)} 份报告")
    return AdversarialOutcome(reports=reports, transfer_matrix=matrix, fnr_delta=delta)


def adversarial_retrain(
    handle: ModelHandle,
    dataset_b_prime: SampleSet,
    config: Optional[RetrainConfig] = None,
    dataset_a: Optional[SampleSet] = None,
    seed: Optional[int] = None,
) -> ModelHandle:
    """
    对抗再训练：在克隆上继续训练，原模型不变

    Args:
        handle: 在A上训练的模型
        dataset_b_prime: 对抗数据集 B′（攻击标签保持为1）
        config: 再训练参数
        dataset_a: BL-Ensemble 需要（在 A ∪ B′ 上重新拟合）
        seed: 打乱/验证划分种子

    Returns:
        ModelHandle: 再训练后的新模型
    """
    config = config or RetrainConfig()
    family = ModelFamily(handle.family)
    if family not in RETRAINABLE:
        raise CapabilityError(f"{family.value} is not retrained")
    if len(dataset_b_prime) == 0:
        raise DatasetError("adversarial retraining needs a non-empty B'")

    logger.info(f"对抗再训练 {family.value}: {dataset_b_prime.name} ({len(dataset_b_prime)} 条)")
    twin = handle.clone()
    if family is ModelFamily.BL_ENSEMBLE:
        if dataset_a is None:
            raise DatasetError("bl_ensemble retraining refits on A ∪ B' and needs dataset A")
        twin.fit(concat_sample_sets([dataset_a, dataset_b_prime], name=f"A+{dataset_b_prime.name}"))
    else:
        twin.fit(
            dataset_b_prime,
            epochs=config.epochs,
            patience=config.patience,
            validation_fraction=config.validation_fraction,
            seed=seed,
        )
    logger.success(f"{family.value} 再训练完成")
    return twin


def run_defence_test(
    retrained: Mapping[Tuple[ModelFamily, Scenario], ModelHandle],
    dataset_c: SampleSet,
    adversarial_c: Mapping[Scenario, SampleSet],
    seed: int = 0,
    config_digest: str = "",
) -> List[ExperimentReport]:
    """
    防御测试：每个再训练模型在 C 与对应场景的 C′ 上评估

    Args:
        retrained: (模型族, 场景) -> 在该场景 B′ 上再训练的模型
        dataset_c: 干净的 C
        adversarial_c: 场景 -> C′

    Returns:
        List[ExperimentReport]: phase=defence 的报告
    """
    reports: List[ExperimentReport] = []
    for (family, scenario), handle in retrained.items():
        scenario = Scenario(scenario)
        if scenario not in adversarial_c:
            raise MissingArtifactError(f"adversarial/{scenario.value}/C_prime.csv", "attack")
        reports += _evaluate_scenarios(
            Phase.DEFENCE, {family: handle}, {"C": dataset_c, prime("C"): adversarial_c[scenario]},
            scenario, False, seed, config_digest,
        )
    logger.success(f"防御测试完成: {len(reports)} 份报告")
    return reports
