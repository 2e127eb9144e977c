#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
系统配置管理模块
进程级配置从环境变量加载，实验级配置（RunConfig）从YAML文件加载并支持命令行覆盖
"""

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

# Pydantic v2 兼容性处理
try:
    from pydantic_settings import BaseSettings, SettingsConfigDict
except ImportError:  # pragma: no cover
    from pydantic import BaseSettings
    SettingsConfigDict = dict

from src.core.exceptions import ConfigError


class Settings(BaseSettings):
    """系统配置类"""

    model_config = SettingsConfigDict(
        env_prefix="CANADV_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # ============ 基础配置 ============
    APP_NAME: str = Field(default="CAN-AdvBench")
    APP_VERSION: str = Field(default="1.0.0")
    ENVIRONMENT: str = Field(default="production")

    # ============ 路径配置 ============
    ROOT_DIR: Path = Path(__file__).parent.parent.parent
    CONFIG_DIR: Path = ROOT_DIR / "config"
    WORK_DIR: Path = Field(default=ROOT_DIR / "work")

    # ============ 日志配置 ============
    LOG_LEVEL: str = Field(default="INFO")
    LOG_DIR: Optional[Path] = Field(default=None)
    LOG_ROTATION: str = Field(default="50 MB")
    LOG_RETENTION: int = Field(default=7)
    LOG_FORMAT: str = Field(
        default="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | "
        "<cyan>{name}</cyan> - <level>{message}</level>"
    )

    # ============ 计算配置 ============
    TORCH_THREADS: int = Field(default=4, ge=1)
    DETERMINISTIC: bool = Field(default=True)

    @field_validator("LOG_LEVEL")
    @classmethod
    def _validate_log_level(cls, v: str) -> str:
        v = v.upper()
        if v not in {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {v}")
        return v


class Scenario(str, Enum):
    """对抗场景"""
    FULL = "full"
    DOS = "dos"
    FUZZY = "fuzzy"
    MALFUNCTION = "malfunction"


ALL_SCENARIOS: List[Scenario] = [Scenario.FULL, Scenario.DOS, Scenario.FUZZY, Scenario.MALFUNCTION]


# ============ 实验配置（RunConfig） ============

class PathsConfig(BaseModel):
    """输入输出路径"""
    logs: Dict[str, List[str]] = Field(default_factory=dict)
    traffic_specs: Dict[str, str] = Field(default_factory=dict)
    work_dir: str = "work"
    output_dir: Optional[str] = None


class SeedsConfig(BaseModel):
    """所有随机种子，全部显式记录"""
    split: int = 7
    init: int = 11
    dropout: int = 13
    sampling: int = 17
    synthesis: int = 19
    attack: int = 23


class PipelineConfig(BaseModel):
    """预处理参数"""
    frame_width: int = Field(default=29, ge=1)
    frame_stride: int = Field(default=1, ge=1)
    frame_attack_threshold: int = Field(default=5, ge=1)
    sequence_length: int = Field(default=20, ge=1)
    rebalance: bool = True


class DnnConfig(BaseModel):
    """BL-DNN训练配置"""
    width_scale: float = Field(default=1.0, gt=0)
    learning_rate: float = Field(default=0.001, gt=0)
    l2: float = Field(default=0.001, ge=0)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=10, ge=1)
    patience: int = Field(default=3, ge=1)
    validation_fraction: float = Field(default=0.1, ge=0, lt=1)


class CnnConfig(BaseModel):
    """SOTA-CNN训练配置"""
    width_scale: float = Field(default=0.25, gt=0)
    learning_rate: float = Field(default=0.001, gt=0)
    dropout: float = Field(default=0.2, ge=0, lt=1)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=10, ge=1)
    patience: int = Field(default=3, ge=1)
    validation_fraction: float = Field(default=0.1, ge=0, lt=1)
    id_row_bits: int = Field(default=29, ge=11)


class LstmConfig(BaseModel):
    """SOTA-LSTM训练配置"""
    width_scale: float = Field(default=1.0, gt=0)
    learning_rate: float = Field(default=0.001, gt=0)
    dropout: float = Field(default=0.2, ge=0, lt=1)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=10, ge=1)
    patience: int = Field(default=3, ge=1)
    validation_fraction: float = Field(default=0.1, ge=0, lt=1)
    threshold_percentile: float = Field(default=99.0, gt=0, le=100)
    max_sequences_per_id: Optional[int] = Field(default=None, ge=1)


class EnsembleConfig(BaseModel):
    """BL-Ensemble子学习器配置"""
    logistic_alpha: float = Field(default=1e-4, gt=0)
    svm_alpha: float = Field(default=1e-4, gt=0)
    sgd_max_iter: int = Field(default=1000, ge=1)
    tree_max_depth: int = Field(default=12, ge=1)
    knn_neighbors: int = Field(default=5, ge=1)
    nb_var_smoothing: float = Field(default=1e-9, ge=0)


class AttackSettings(BaseModel):
    """对抗样本生成配置"""
    epsilon: float = Field(default=1.0, gt=0)
    norm: str = "L1"
    max_iterations: int = Field(default=50, ge=1)
    target_label: int = Field(default=0, ge=0, le=1)
    scenarios: List[Scenario] = Field(default_factory=lambda: list(ALL_SCENARIOS))
    batch_size: int = Field(default=256, ge=1)

    @field_validator("norm")
    @classmethod
    def _validate_norm(cls, v: str) -> str:
        if v.upper() != "L1":
            raise ValueError("only the L1 (single-feature) norm is supported")
        return "L1"


class RetrainConfig(BaseModel):
    """对抗再训练配置"""
    epochs: int = Field(default=10, ge=1)
    patience: int = Field(default=3, ge=1)
    validation_fraction: float = Field(default=0.1, ge=0, lt=1)
    families: List[str] = Field(default_factory=lambda: ["bl_dnn", "bl_ensemble", "sota_cnn"])


class RunConfig(BaseModel):
    """一次完整实验的声明式配置，可序列化并重放"""
    paths: PathsConfig = Field(default_factory=PathsConfig)
    seeds: SeedsConfig = Field(default_factory=SeedsConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    dnn: DnnConfig = Field(default_factory=DnnConfig)
    cnn: CnnConfig = Field(default_factory=CnnConfig)
    lstm: LstmConfig = Field(default_factory=LstmConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    attack: AttackSettings = Field(default_factory=AttackSettings)
    retrain: RetrainConfig = Field(default_factory=RetrainConfig)


def _apply_override(data: Dict, override: str):
    """应用一条 section.key=value 覆盖"""
    if "=" not in override:
        raise ConfigError(f"override must look like section.key=value, got '{override}'")
    dotted, raw = override.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"empty key in override '{override}'")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"'{dotted}' does not name a config section")
    node[keys[-1]] = yaml.safe_load(raw)


def build_run_config(data: Optional[Dict] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """
    由字典和覆盖项构造RunConfig

    Args:
        data: 配置字典（通常来自YAML）
        overrides: section.key=value 形式的覆盖项

    Returns:
        RunConfig: 校验后的配置
    """
    data = json.loads(json.dumps(data or {}))
    for override in overrides:
        _apply_override(data, override)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def load_run_config(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """
    从YAML文件加载RunConfig

    Args:
        path: YAML文件路径，None表示使用默认值
        overrides: 覆盖项

    Returns:
        RunConfig: 配置对象
    """
    data: Dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    return build_run_config(data, overrides)


def run_config_to_dict(cfg: RunConfig) -> Dict:
    """转换为只含基本类型的字典"""
    return cfg.model_dump(mode="json")


def save_run_config(cfg: RunConfig, path: Path):
    """以规范化YAML写出RunConfig"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        yaml.safe_dump(run_config_to_dict(cfg), sort_keys=True, allow_unicode=True),
        encoding="utf-8",
    )


def config_digest(cfg: RunConfig) -> str:
    """配置摘要：规范化JSON的SHA-256前12位"""
    canonical = json.dumps(run_config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


# 创建全局配置实例
settings = Settings()
