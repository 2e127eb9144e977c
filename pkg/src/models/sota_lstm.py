#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
SOTA-LSTM 逐ID异常检测模型
每个CAN ID一个子模型：用前20条同ID消息预测当前消息的64个数据位，
预测误差（64位平均二元交叉熵）超过该ID阈值即判为攻击；阈值取正常训练误差的第99百分位
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from src.core.config import LstmConfig, PipelineConfig
from src.core.exceptions import DatasetError, GeometryError
from src.data.pipeline import DATA_SLICE, N_DATA_BITS, N_FEATURES, SampleSet, decode_can_ids
from src.engine import autograd as ag
from src.engine.layers import Dense, Dropout, Lstm, attach_dropout_generator, scaled, seeded_init
from src.engine.trainer import fit
from src.models.base import InputKind, ModelFamily, ModelHandle, ModelView

PREDICT_BATCH = 512


def percentile_threshold(errors: np.ndarray, q: float = 99.0) -> float:
    """线性插值百分位；{1..100} 的第99百分位为 99.01"""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise DatasetError("cannot compute a threshold from an empty error set")
    return float(np.percentile(errors, q, method="linear"))


@dataclass
class IdSequences:
    """
    按ID重建的序列视图（行按消息流顺序排列）

    histories: (M, T, 77) 前T条同ID消息，不足左侧补0
    targets: (M, 64) 当前消息的数据位
    can_ids: (M,) 当前消息的ID
    labels: (M,) 当前消息的标签
    sample_index: (M,) 在来源 SampleSet 中的行号
    """
    histories: np.ndarray
    targets: np.ndarray
    can_ids: np.ndarray
    labels: np.ndarray
    sample_index: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def select(self, mask: np.ndarray) -> "IdSequences":
        return IdSequences(
            self.histories[mask], self.targets[mask], self.can_ids[mask],
            self.labels[mask], self.sample_index[mask],
        )


def build_id_sequences(samples: SampleSet, sequence_length: int = 20) -> IdSequences:
    """
    从消息流重建逐ID历史序列；不跨日志

    Args:
        samples: 带流元数据的样本集合
        sequence_length: 历史长度

    Returns:
        IdSequences: 每条消息一行
    """
    order = samples.stream_order()
    m = len(order)
    ids = decode_can_ids(samples.features[order])
    logs = samples.log_id[order].astype(np.int64)
    history_index = np.full((m, sequence_length), m, dtype=np.int64)

    # 稳定排序后同 (日志, ID) 的消息相邻且保持流内顺序
    grouped = np.argsort(logs * (1 << 12) + ids, kind="stable")
    keys = (logs * (1 << 12) + ids)[grouped]
    boundaries = np.flatnonzero(np.diff(keys)) + 1
    for group in np.split(grouped, boundaries):
        for lag in range(1, min(sequence_length, len(group) - 1) + 1):
            history_index[group[lag:], sequence_length - lag] = group[:-lag]

    ordered = samples.features[order].astype(np.float32)
    padded = np.vstack([ordered, np.zeros((1, N_FEATURES), dtype=np.float32)])
    return IdSequences(
        histories=padded[history_index],
        targets=ordered[:, DATA_SLICE],
        can_ids=ids,
        labels=samples.labels[order].astype(np.int64),
        sample_index=order,
    )


class LstmNetwork(nn.Module):
    """单个ID的预测网络"""

    def __init__(self, width_scale: float = 1.0, dropout: float = 0.2):
        super().__init__()
        h128, h512 = scaled(128, width_scale), scaled(512, width_scale)
        self.dense1 = Dense(N_FEATURES, h128, activation="tanh")
        self.drop1 = Dropout(dropout)
        self.dense2 = Dense(h128, h128, activation="tanh")
        self.drop2 = Dropout(dropout)
        self.lstm1 = Lstm(h128, h512, return_sequences=True)
        self.drop3 = Dropout(dropout)
        self.lstm2 = Lstm(h512, h512, return_sequences=False)
        self.drop4 = Dropout(dropout)
        self.output = Dense(h512, N_DATA_BITS, activation="sigmoid")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.drop2(self.dense2(self.drop1(self.dense1(x))))
        x = self.drop3(self.lstm1(x))
        x = self.drop4(self.lstm2(x))
        return self.output(x)


@dataclass
class IdDetector:
    """单个ID的子模型与阈值"""
    can_id: int
    network: LstmNetwork
    threshold: float
    errors: List[float] = field(default_factory=list)
    history: Dict = field(default_factory=dict)

    def errors_of(self, histories: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """逐条预测误差"""
        out = []
        with torch.no_grad():
            for start in range(0, len(histories), PREDICT_BATCH):
                x = torch.as_tensor(histories[start:start + PREDICT_BATCH], dtype=torch.float32)
                t = torch.as_tensor(targets[start:start + PREDICT_BATCH], dtype=torch.float32)
                out.append(ag.binary_crossentropy(self.network(x), t, reduce=False).numpy())
        return np.concatenate(out) if out else np.zeros(0)


class SotaLstmModel(ModelHandle):
    """SOTA-LSTM 句柄"""

    family = ModelFamily.SOTA_LSTM
    input_kind = InputKind.SEQUENCE
    supports_gradient = True

    def __init__(
        self,
        config: Optional[LstmConfig] = None,
        pipeline: Optional[PipelineConfig] = None,
        seed: int = 0,
        dropout_seed: Optional[int] = None,
    ):
        super().__init__(seed)
        self.config = config or LstmConfig()
        self.pipeline = pipeline or PipelineConfig()
        self.dropout_seed = seed if dropout_seed is None else dropout_seed
        self.detectors: Dict[int, IdDetector] = {}

    @property
    def sequence_length(self) -> int:
        return self.pipeline.sequence_length

    def _new_network(self, can_id: int) -> LstmNetwork:
        with seeded_init(self.seed + can_id):
            network = LstmNetwork(self.config.width_scale, self.config.dropout)
        attach_dropout_generator(network, self.dropout_seed + can_id)
        network.eval()
        return network

    # ---------- 训练 ----------

    def fit(self, normal_samples: SampleSet):
        """逐ID训练子模型并计算阈值"""
        self._require_stream(normal_samples)
        normal = normal_samples.take(np.flatnonzero(normal_samples.labels == 0))
        sequences = build_id_sequences(normal, self.sequence_length)
        cfg = self.config
        rng = np.random.default_rng(self.seed)
        self.detectors = {}
        for can_id in np.unique(sequences.can_ids):
            subset = sequences.select(sequences.can_ids == can_id)
            if len(subset) < self.sequence_length + 1:
                logger.warning(
                    f"ID 0x{int(can_id):03x} 只有 {len(subset)} 条正常消息 (< {self.sequence_length + 1})，跳过"
                )
                continue
            if cfg.max_sequences_per_id and len(subset) > cfg.max_sequences_per_id:
                keep = np.sort(rng.choice(len(subset), size=cfg.max_sequences_per_id, replace=False))
                subset = subset.select(keep)
            self.detectors[int(can_id)] = self._fit_id(int(can_id), subset)
        if not self.detectors:
            raise DatasetError(
                f"sota_lstm: no CAN ID has at least {self.sequence_length + 1} normal messages"
            )
        self.history = {f"0x{cid:03x}": det.history for cid, det in self.detectors.items()}
        return self

    def _fit_id(self, can_id: int, subset: IdSequences) -> IdDetector:
        cfg = self.config
        network = self._new_network(can_id)
        x = torch.as_tensor(subset.histories, dtype=torch.float32)
        y = torch.as_tensor(subset.targets, dtype=torch.float32)
        history, _ = fit(
            network,
            lambda xb, yb: ag.binary_crossentropy(network(xb), yb),
            x,
            y,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            patience=cfg.patience,
            seed=self.seed + can_id,
            validation_fraction=cfg.validation_fraction,
            monitor="val_loss",
            learning_rate=cfg.learning_rate,
            name=f"{self.family.value}:0x{can_id:03x}",
        )
        detector = IdDetector(can_id=can_id, network=network, threshold=0.0, history=history.to_dict())
        errors = detector.errors_of(subset.histories, subset.targets)
        detector.errors = [float(e) for e in errors]
        detector.threshold = percentile_threshold(errors, cfg.threshold_percentile)
        logger.debug(f"ID 0x{can_id:03x}: {len(subset)} 条序列, 阈值 {detector.threshold:.6f}")
        return detector

    # ---------- 视图 ----------

    def build_view(self, samples: SampleSet) -> ModelView:
        """从消息流重建逐ID序列视图"""
        self._require_stream(samples)
        seqs = build_id_sequences(samples, self.sequence_length)
        return ModelView(
            inputs=seqs.histories,
            labels=seqs.labels,
            extras={"can_ids": seqs.can_ids, "targets": seqs.targets, "sample_index": seqs.sample_index},
        )

    def check_geometry(self, inputs: np.ndarray):
        if inputs.ndim != 3 or tuple(inputs.shape[1:]) != (self.sequence_length, N_FEATURES):
            raise GeometryError(
                f"{self.family.value} expects (M, {self.sequence_length}, {N_FEATURES}) sequences, got {inputs.shape}"
            )

    @staticmethod
    def _extras(extras: Optional[Dict], n: int):
        if not extras or "can_ids" not in extras or "targets" not in extras:
            raise GeometryError("sota_lstm needs per-sequence can_ids and targets (build_view extras)")
        can_ids = np.asarray(extras["can_ids"], dtype=np.int64).reshape(-1)
        targets = np.asarray(extras["targets"], dtype=np.float32).reshape(-1, N_DATA_BITS)
        if len(can_ids) != n or len(targets) != n:
            raise GeometryError(f"sota_lstm extras cover {len(can_ids)} sequences, inputs have {n}")
        return can_ids, targets

    # ---------- 推理 ----------

    def prediction_errors(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> np.ndarray:
        """逐条预测误差；未见过的ID误差记为 inf"""
        inputs = np.asarray(inputs, dtype=np.float32)
        if inputs.ndim == 2:
            inputs = inputs[None]
        can_ids, targets = self._extras(extras, len(inputs))
        if len(inputs) == 0:
            return np.zeros(0)
        self.check_geometry(inputs)
        errors = np.full(len(inputs), np.inf)
        for can_id in np.unique(can_ids):
            detector = self.detectors.get(int(can_id))
            if detector is None:
                continue
            rows = np.flatnonzero(can_ids == can_id)
            errors[rows] = detector.errors_of(inputs[rows], targets[rows])
        return errors

    def predict(self, inputs: np.ndarray, extras: Optional[Dict] = None) -> np.ndarray:
        """误差超过阈值判为攻击；未见过的ID判为攻击"""
        errors = self.prediction_errors(inputs, extras)
        can_ids, _ = self._extras(extras, len(errors))
        thresholds = np.array(
            [self.detectors[int(c)].threshold if int(c) in self.detectors else -np.inf for c in can_ids]
        )
        return (errors > thresholds).astype(np.int64)

    def input_gradient(self, inputs: np.ndarray, target_label: int, extras: Optional[Dict] = None) -> np.ndarray:
        """
        目标损失对历史序列的梯度

        目标为正常(0)时损失为预测误差，目标为攻击(1)时为其相反数；未见过的ID梯度为0
        """
        arr = np.asarray(inputs, dtype=np.float32)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
        self.check_geometry(arr)
        can_ids, targets = self._extras(extras, len(arr))
        sign = 1.0 if int(target_label) == 0 else -1.0
        grad = np.zeros_like(arr)
        for can_id in np.unique(can_ids):
            detector = self.detectors.get(int(can_id))
            if detector is None:
                continue
            rows = np.flatnonzero(can_ids == can_id)
            x = ag.mark_input(torch.as_tensor(arr[rows]))
            err = ag.binary_crossentropy(detector.network(x), torch.as_tensor(targets[rows]), reduce=False)
            _, (g,) = ag.backward(sign * err.sum(), inputs=[x])
            grad[rows] = g.numpy()
        return grad[0] if single else grad

    # ---------- 检查点 ----------

    def manifest(self) -> Dict:
        """子模型清单：ID、阈值与训练序列数"""
        return {
            "family": self.family.value,
            "sequence_length": self.sequence_length,
            "threshold_percentile": self.config.threshold_percentile,
            "sub_models": [
                {"can_id": f"0x{cid:03x}", "threshold": det.threshold, "train_sequences": len(det.errors)}
                for cid, det in sorted(self.detectors.items())
            ],
        }

    def clone(self) -> "SotaLstmModel":
        twin = super().clone()
        for cid, det in twin.detectors.items():
            attach_dropout_generator(det.network, twin.dropout_seed + cid)
        return twin

    def save(self, path: Union[str, Path]):
        path = Path(path)
        ag.save_checkpoint(path, {
            "family": self.family.value,
            "architecture": {"width_scale": self.config.width_scale, "layers": [128, 128, 512, 512, 64]},
            "config": self.config.model_dump(),
            "pipeline": self.pipeline.model_dump(),
            "seed": self.seed,
            "dropout_seed": self.dropout_seed,
            "sub_models": {
                cid: {
                    "state_dict": det.network.state_dict(),
                    "threshold": det.threshold,
                    "errors": det.errors,
                    "history": det.history,
                }
                for cid, det in self.detectors.items()
            },
        })
        manifest_path = path.with_suffix(".manifest.json")
        manifest_path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SotaLstmModel":
        payload = ag.load_checkpoint(path)
        model = cls(
            LstmConfig(**payload["config"]),
            PipelineConfig(**payload["pipeline"]),
            seed=payload["seed"],
            dropout_seed=payload.get("dropout_seed"),
        )
        for cid, entry in payload["sub_models"].items():
            network = model._new_network(int(cid))
            network.load_state_dict(entry["state_dict"])
            network.eval()
            model.detectors[int(cid)] = IdDetector(
                can_id=int(cid),
                network=network,
                threshold=float(entry["threshold"]),
                errors=list(entry["errors"]),
                history=entry.get("history", {}),
            )
        model.history = {f"0x{cid:03x}": det.history for cid, det in model.detectors.items()}
        return model


def train_sota_lstm(
    normal_samples: SampleSet,
    seed: int,
    config: Optional[LstmConfig] = None,
    pipeline: Optional[PipelineConfig] = None,
    dropout_seed: Optional[int] = None,
) -> SotaLstmModel:
    """
    训练SOTA-LSTM（只使用正常样本）

    Args:
        normal_samples: 带流元数据的训练样本，攻击样本会被过滤
        seed: 初始化/打乱种子
        config: 训练配置
        pipeline: 序列长度等参数

    Returns:
        SotaLstmModel: 已训练模型
    """
    n_normal = int((normal_samples.labels == 0).sum())
    logger.info(f"训练 SOTA-LSTM: {n_normal} 条正常样本, seed={seed}")
    model = SotaLstmModel(config, pipeline, seed=seed, dropout_seed=dropout_seed).fit(normal_samples)
    logger.success(f"SOTA-LSTM 训练完成: {len(model.detectors)} 个ID子模型")
    return model
