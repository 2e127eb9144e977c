#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
对抗样本生成
带特征掩码、取值边界、卡死规则的迭代 L1-FGSM：每次迭代只修改梯度绝对值最大的一个允许特征
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from src.core.config import AttackSettings, Scenario
from src.core.exceptions import CapabilityError, ConfigError, DatasetError, GeometryError
from src.data.pipeline import (
    DATA_SLICE,
    ID_SLICE,
    N_FEATURES,
    SCENARIO_LOG_KINDS,
    FeatureVector,
    SampleSet,
    feature_bounds,
)
from src.models.base import InputKind, ModelHandle


# ============ 场景掩码 ============

@dataclass(frozen=True)
class ScenarioMask:
    """
    场景允许修改的特征及其取值边界

    allowed: 允许修改的特征下标
    bounds: (77, 2) 每个特征的 (min, max)
    """
    scenario: Scenario
    allowed: FrozenSet[int]
    bounds: np.ndarray = field(compare=False, repr=False)

    @property
    def allowed_mask(self) -> np.ndarray:
        mask = np.zeros(N_FEATURES, dtype=bool)
        mask[sorted(self.allowed)] = True
        return mask


def scenario_mask(scenario: Union[Scenario, str]) -> ScenarioMask:
    """
    场景 -> 掩码

    Full: 全部77个特征
    DoS: ID最后三位 + 64个数据位（ID上限为7）
    Fuzzy: 11个ID位 + 64个数据位
    Malfunction: 64个数据位
    """
    scenario = Scenario(scenario)
    id_bits = list(range(ID_SLICE.start, ID_SLICE.stop))
    data_bits = list(range(DATA_SLICE.start, DATA_SLICE.stop))
    if scenario is Scenario.FULL:
        allowed = range(N_FEATURES)
    elif scenario is Scenario.DOS:
        allowed = id_bits[-3:] + data_bits
    elif scenario is Scenario.FUZZY:
        allowed = id_bits + data_bits
    else:
        allowed = data_bits
    return ScenarioMask(scenario=scenario, allowed=frozenset(allowed), bounds=feature_bounds())


# ============ 配置与结果 ============

@dataclass
class AttackConfig:
    """单次生成的参数；generation_model 为生成模型（BL-DNN）"""
    generation_model: ModelHandle
    epsilon: float = 1.0
    norm: str = "L1"
    max_iterations: int = 50
    target_label: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.norm.upper() != "L1":
            raise ConfigError(f"unsupported norm {self.norm}")

    @classmethod
    def from_settings(cls, model: ModelHandle, settings: AttackSettings) -> "AttackConfig":
        return cls(
            generation_model=model,
            epsilon=settings.epsilon,
            norm=settings.norm,
            max_iterations=settings.max_iterations,
            target_label=settings.target_label,
            batch_size=settings.batch_size,
        )


@dataclass
class AdversarialResult:
    """单条攻击样本的生成结果"""
    original: FeatureVector
    perturbed: FeatureVector
    success: bool
    iterations_used: int
    modified_features: Tuple[int, ...]
    scenario: Scenario
    source_index: int = -1
    log_id: int = 0

    @property
    def perturbation(self) -> np.ndarray:
        """扰动 η = perturbed - original"""
        return self.perturbed.to_array() - self.original.to_array()


def _require_generator(model: ModelHandle):
    if not model.supports_gradient:
        raise CapabilityError(f"{model.family.value} cannot generate adversarial samples (no input gradients)")
    if model.input_kind is not InputKind.MESSAGE:
        raise GeometryError(f"{model.family.value} consumes {model.input_kind.value}s; generation works on messages")


# ============ 单步 ============

def _select_steps(
    x: np.ndarray,
    grad: np.ndarray,
    mask: ScenarioMask,
    epsilon: float,
    last_move: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    为每行选出要修改的特征与步长

    Returns:
        (chosen, step): chosen 为特征下标（-1 表示候选为空），step 为带符号步长
    """
    lo, hi = mask.bounds[:, 0], mask.bounds[:, 1]
    direction = -np.sign(grad)
    candidate = mask.allowed_mask[None, :] & (direction != 0)
    # 卡死规则：已在边界且步长继续越界
    candidate &= ~((x >= hi) & (direction > 0))
    candidate &= ~((x <= lo) & (direction < 0))
    if last_move is not None:
        candidate &= ~(direction == -last_move)

    score = np.where(candidate, np.abs(grad), -1.0)
    chosen = score.argmax(axis=1)  # 并列时取最小下标
    rows = np.arange(len(x))
    chosen = np.where(candidate[rows, chosen], chosen, -1)
    step = np.where(chosen >= 0, epsilon * direction[rows, np.maximum(chosen, 0)], 0.0)
    return chosen, step


def fgsm_step(
    model: ModelHandle,
    x: np.ndarray,
    target_label: int,
    mask: ScenarioMask,
    epsilon: float = 1.0,
    last_move: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, Optional[int]]:
    """
    一次 L1-FGSM 更新

    Args:
        model: 可求梯度的生成模型
        x: (77,) 当前特征
        target_label: 目标类别
        mask: 场景掩码
        epsilon: 步长
        last_move: (77,) 各特征此前的移动方向，反向移动不作为候选

    Returns:
        (新特征, 被修改的下标)；候选为空时下标为 None（耗尽）
    """
    _require_generator(model)
    x = np.asarray(x, dtype=np.float32)
    grad = np.asarray(model.input_gradient(x, target_label), dtype=np.float64)
    moves = None if last_move is None else np.asarray(last_move)[None]
    chosen, step = _select_steps(x[None], grad[None], mask, epsilon, moves)
    i = int(chosen[0])
    if i < 0:
        return x.copy(), None
    out = x.copy()
    out[i] = np.clip(out[i] + step[0], mask.bounds[i, 0], mask.bounds[i, 1])
    return out, i


# ============ 迭代生成 ============

def generate_batch(
    model: ModelHandle,
    features: np.ndarray,
    scenario: Union[Scenario, str],
    config: AttackConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    并行运行多条独立的迭代FGSM

    Args:
        model: 生成模型
        features: (N, 77) 攻击样本特征
        scenario: 场景
        config: 生成参数

    Returns:
        (perturbed, success, iterations_used)
    """
    _require_generator(model)
    mask = scenario_mask(scenario)
    x = np.array(features, dtype=np.float32).reshape(-1, N_FEATURES)
    n = len(x)
    iterations = np.zeros(n, dtype=np.int64)
    last_move = np.zeros((n, N_FEATURES), dtype=np.float64)
    if n == 0:
        return x, np.zeros(0, dtype=bool), iterations

    active = model.predict(x) != config.target_label
    for _ in range(config.max_iterations):
        rows = np.flatnonzero(active)
        if len(rows) == 0:
            break
        grad = np.asarray(model.input_gradient(x[rows], config.target_label), dtype=np.float64)
        chosen, step = _select_steps(x[rows], grad, mask, config.epsilon, last_move[rows])

        exhausted = chosen < 0
        active[rows[exhausted]] = False
        moving, cols, step = rows[~exhausted], chosen[~exhausted], step[~exhausted]
        if len(moving) == 0:
            break
        x[moving, cols] = np.clip(x[moving, cols] + step, mask.bounds[cols, 0], mask.bounds[cols, 1])
        last_move[moving, cols] = np.sign(step)
        iterations[moving] += 1
        active[moving] = model.predict(x[moving]) != config.target_label

    success = model.predict(x) == config.target_label
    return x, success, iterations


def generate_adversarial(
    model: ModelHandle,
    sample,
    scenario: Union[Scenario, str],
    config: AttackConfig,
) -> AdversarialResult:
    """
    对单条攻击样本迭代生成对抗样本

    Args:
        model: 生成模型
        sample: LabeledSample（必须为攻击样本）
        scenario: 场景
        config: 生成参数

    Returns:
        AdversarialResult: 生成结果（失败时保留最终扰动状态）
    """
    if int(sample.label) != 1:
        raise DatasetError(f"only attack samples are perturbed (source_index={sample.source_index})")
    original = sample.features.to_array().astype(np.float32)
    perturbed, success, iterations = generate_batch(model, original[None], scenario, config)
    return _result(original, perturbed[0], bool(success[0]), int(iterations[0]), Scenario(scenario),
                   int(sample.source_index), int(sample.log_id))


def _result(original, perturbed, success, iterations, scenario, source_index, log_id) -> AdversarialResult:
    modified = tuple(int(i) for i in np.flatnonzero(perturbed != original))
    return AdversarialResult(
        original=FeatureVector.from_array(original),
        perturbed=FeatureVector.from_array(perturbed),
        success=success,
        iterations_used=iterations,
        modified_features=modified,
        scenario=scenario,
        source_index=source_index,
        log_id=log_id,
    )


# ============ 数据集 ============

def perturb_dataset(
    model: ModelHandle,
    dataset: SampleSet,
    scenario: Union[Scenario, str],
    config: AttackConfig,
) -> Tuple[SampleSet, List[AdversarialResult]]:
    """
    生成 B′ / C′：场景对应日志中的攻击样本被替换为对抗版本，标签保持为1

    Args:
        model: 生成模型（BL-DNN）
        dataset: 原始数据集
        scenario: 场景
        config: 生成参数

    Returns:
        (对抗数据集, 每条被扰动样本的结果)
    """
    scenario = Scenario(scenario)
    kinds = sorted(SCENARIO_LOG_KINDS[scenario])
    targets = np.flatnonzero((dataset.labels == 1) & np.isin(dataset.log_kind.astype(str), kinds))
    name = f"{dataset.name}_prime_{scenario.value}"
    if len(targets) == 0:
        logger.warning(f"场景 {scenario.value}: 数据集 {dataset.name} 中没有匹配的攻击样本，未做扰动")
        return dataset.take(np.arange(len(dataset)), name=name), []

    logger.info(f"场景 {scenario.value}: 在 {dataset.name} 上扰动 {len(targets)} 条攻击样本")
    features = dataset.features.copy()
    results: List[AdversarialResult] = []
    for start in range(0, len(targets), config.batch_size):
        rows = targets[start:start + config.batch_size]
        perturbed, success, iterations = generate_batch(model, dataset.features[rows], scenario, config)
        features[rows] = perturbed
        for k, row in enumerate(rows):
            results.append(_result(
                dataset.features[row], perturbed[k], bool(success[k]), int(iterations[k]), scenario,
                int(dataset.source_index[row]), int(dataset.log_id[row]),
            ))

    n_success = sum(r.success for r in results)
    logger.success(f"场景 {scenario.value}: 成功 {n_success}/{len(results)}")
    return dataset.with_features(features, name=name), results


# ============ 旁路报告 ============

SIDECAR_COLUMNS = ["source_index", "log_id", "success", "iterations_used", "n_modified", "modified_features"]


def results_frame(results: List[AdversarialResult]) -> pd.DataFrame:
    """每条攻击样本一行"""
    return pd.DataFrame(
        [
            {
                "source_index": r.source_index,
                "log_id": r.log_id,
                "success": int(r.success),
                "iterations_used": r.iterations_used,
                "n_modified": len(r.modified_features),
                "modified_features": ";".join(str(i) for i in r.modified_features),
            }
            for r in results
        ],
        columns=SIDECAR_COLUMNS,
    )


def save_results(results: List[AdversarialResult], path: Union[str, Path]):
    """写出旁路报告CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results_frame(results).to_csv(path, index=False, lineterminator="\n")


def load_results(path: Union[str, Path]) -> pd.DataFrame:
    """读取旁路报告；modified_features 解析为下标元组"""
    df = pd.read_csv(Path(path), dtype={"modified_features": str}, keep_default_na=False)
    df["modified_features"] = df["modified_features"].map(
        lambda s: tuple(int(i) for i in s.split(";")) if s else ()
    )
    df["success"] = df["success"].astype(bool)
    return df


def summarize_results(results: List[AdversarialResult]) -> Dict:
    """生成概况：尝试数、成功数、成功率"""
    attempted = len(results)
    succeeded = sum(r.success for r in results)
    return {
        "attempted": attempted,
        "succeeded": succeeded,
        "success_rate": succeeded / attempted if attempted else None,
    }
