#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
预处理流水线
把解析后的CAN记录转换为模型可用的数据集：二进制特征编码、dTIME、类别重平衡、
滑动窗口分帧以及 A/B/C 划分

特征顺序（77维）: id_bits(0..10) | dlc(11) | data_bits(12..75) | dtime(76)
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from sklearn.model_selection import train_test_split

from src.core.config import Scenario
from src.core.exceptions import DatasetError
from src.data.canlog import ID_BITS, MAX_DLC, AttackKind, CanRecord

# ============ 特征布局 ============

N_ID_BITS = ID_BITS
N_DATA_BITS = 64
N_FEATURES = N_ID_BITS + 1 + N_DATA_BITS + 1

ID_SLICE = slice(0, N_ID_BITS)
DLC_INDEX = N_ID_BITS
DATA_SLICE = slice(N_ID_BITS + 1, N_ID_BITS + 1 + N_DATA_BITS)
DTIME_INDEX = N_FEATURES - 1

MAX_DTIME = 100.0

FEATURE_NAMES: List[str] = (
    [f"id_bit_{i}" for i in range(N_ID_BITS)]
    + ["dlc"]
    + [f"data_bit_{i}" for i in range(N_DATA_BITS)]
    + ["dtime"]
)
BIT_INDICES = np.array(list(range(N_ID_BITS)) + list(range(DATA_SLICE.start, DATA_SLICE.stop)))
META_COLUMNS = ["source_index", "log_id", "log_kind"]

_ID_WEIGHTS = (1 << np.arange(N_ID_BITS - 1, -1, -1)).astype(np.float64)

# 场景 -> 参与评估/扰动的日志类型（正常日志始终参与评估）
SCENARIO_LOG_KINDS: Dict[Scenario, set] = {
    Scenario.FULL: {AttackKind.DOS.value, AttackKind.FUZZY.value, AttackKind.MALFUNCTION.value},
    Scenario.DOS: {AttackKind.DOS.value},
    Scenario.FUZZY: {AttackKind.FUZZY.value},
    Scenario.MALFUNCTION: {AttackKind.MALFUNCTION.value},
}


def feature_bounds() -> np.ndarray:
    """各特征的 (min, max) 取值范围，形状 (77, 2)"""
    bounds = np.zeros((N_FEATURES, 2), dtype=np.float64)
    bounds[:, 1] = 1.0
    bounds[DLC_INDEX, 1] = MAX_DLC
    bounds[DTIME_INDEX, 1] = MAX_DTIME
    return bounds


def decode_can_ids(features: np.ndarray) -> np.ndarray:
    """由ID位还原仲裁ID（位值四舍五入）"""
    features = np.atleast_2d(features)
    bits = np.rint(features[:, ID_SLICE])
    return (bits @ _ID_WEIGHTS).astype(np.int64)


@dataclass
class FeatureVector:
    """单条消息的77维特征"""
    id_bits: np.ndarray
    dlc: float
    data_bits: np.ndarray
    dtime: float

    @classmethod
    def from_array(cls, values: np.ndarray) -> "FeatureVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (N_FEATURES,):
            raise DatasetError(f"feature vector must have shape ({N_FEATURES},), got {values.shape}")
        return cls(
            id_bits=values[ID_SLICE].copy(),
            dlc=float(values[DLC_INDEX]),
            data_bits=values[DATA_SLICE].copy(),
            dtime=float(values[DTIME_INDEX]),
        )

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.id_bits, [self.dlc], self.data_bits, [self.dtime]]).astype(np.float64)

    @property
    def can_id(self) -> int:
        return int(decode_can_ids(self.to_array())[0])


@dataclass
class LabeledSample:
    """带标签的单条样本"""
    features: FeatureVector
    label: int
    source_index: int
    log_id: int = 0
    log_kind: str = AttackKind.NONE.value


@dataclass
class SampleSet:
    """
    样本集合（按列存储）

    features: (N, 77) float32
    labels: (N,) 0=normal, 1=attack
    source_index: 原始记录流中的位置
    log_id / log_kind: 来源日志编号与类型
    """
    features: np.ndarray
    labels: np.ndarray
    source_index: np.ndarray
    log_id: np.ndarray
    log_kind: np.ndarray
    has_stream_metadata: bool = True
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32).reshape(-1, N_FEATURES)
        n = len(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.source_index = np.asarray(self.source_index, dtype=np.int64).reshape(n)
        self.log_id = np.asarray(self.log_id, dtype=np.int64).reshape(n)
        self.log_kind = np.asarray(self.log_kind, dtype=object).reshape(n)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(
            features=FeatureVector.from_array(self.features[i]),
            label=int(self.labels[i]),
            source_index=int(self.source_index[i]),
            log_id=int(self.log_id[i]),
            log_kind=str(self.log_kind[i]),
        )

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def empty(cls, name: str = "") -> "SampleSet":
        return cls(np.zeros((0, N_FEATURES)), [], [], [], [], name=name)

    def take(self, indices: np.ndarray, name: Optional[str] = None) -> "SampleSet":
        """按索引取子集（保持给定顺序）"""
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(
            features=self.features[indices].copy(),
            labels=self.labels[indices],
            source_index=self.source_index[indices],
            log_id=self.log_id[indices],
            log_kind=self.log_kind[indices],
            has_stream_metadata=self.has_stream_metadata,
            name=self.name if name is None else name,
        )

    def with_features(self, features: np.ndarray, name: Optional[str] = None) -> "SampleSet":
        """替换特征矩阵，其余列不变"""
        out = self.take(np.arange(len(self)), name=name)
        out.features = np.asarray(features, dtype=np.float32).reshape(len(self), N_FEATURES)
        return out

    def stream_order(self) -> np.ndarray:
        """按 (log_id, source_index) 排序的索引"""
        return np.lexsort((self.source_index, self.log_id))

    def class_counts(self) -> Dict[str, int]:
        return {"normal": int((self.labels == 0).sum()), "attack": int((self.labels == 1).sum())}

    def attack_fraction(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0

    @property
    def can_ids(self) -> np.ndarray:
        return decode_can_ids(self.features)


def concat_sample_sets(sets: Sequence[SampleSet], name: str = "") -> SampleSet:
    """拼接多个样本集合"""
    sets = [s for s in sets if len(s)]
    if not sets:
        return SampleSet.empty(name)
    return SampleSet(
        features=np.concatenate([s.features for s in sets]),
        labels=np.concatenate([s.labels for s in sets]),
        source_index=np.concatenate([s.source_index for s in sets]),
        log_id=np.concatenate([s.log_id for s in sets]),
        log_kind=np.concatenate([s.log_kind for s in sets]),
        has_stream_metadata=all(s.has_stream_metadata for s in sets),
        name=name,
    )


def scenario_view(samples: SampleSet, scenario: Scenario) -> SampleSet:
    """
    场景视图：场景对应攻击日志的样本 + 全部正常日志样本（Full为全部）

    Args:
        samples: 样本集合
        scenario: 对抗场景

    Returns:
        SampleSet: 子集（保持原有顺序）
    """
    scenario = Scenario(scenario)
    if scenario is Scenario.FULL:
        return samples
    kinds = SCENARIO_LOG_KINDS[scenario] | {AttackKind.NONE.value}
    mask = np.isin(samples.log_kind.astype(str), list(kinds))
    return samples.take(np.flatnonzero(mask))


# ============ 编码 ============

def encode_records(
    records: Sequence[CanRecord],
    log_id: int = 0,
    log_kind: Union[AttackKind, str] = AttackKind.NONE,
) -> SampleSet:
    """
    把CAN记录编码为77维特征

    Args:
        records: 记录序列
        log_id: 来源日志编号
        log_kind: 来源日志类型

    Returns:
        SampleSet: 每条记录一个样本，顺序不变
    """
    kind = AttackKind(log_kind).value
    n = len(records)
    features = np.zeros((n, N_FEATURES), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    last_seen: Dict[int, float] = {}

    for i, record in enumerate(records):
        for b in range(N_ID_BITS):
            features[i, b] = (record.can_id >> (N_ID_BITS - 1 - b)) & 1
        features[i, DLC_INDEX] = record.dlc
        for byte_index, value in enumerate(record.data):
            for bit in range(8):
                features[i, DATA_SLICE.start + byte_index * 8 + bit] = (value >> (7 - bit)) & 1

        # dTIME: 与同ID上一条消息的时间差；首次出现为0；乱序时截断到0
        previous = last_seen.get(record.can_id)
        dtime = 0.0 if previous is None else record.timestamp - previous
        features[i, DTIME_INDEX] = min(max(dtime, 0.0), MAX_DTIME)
        last_seen[record.can_id] = record.timestamp
        labels[i] = 1 if record.is_attack else 0

    logger.debug(f"编码 {n} 条记录 (log_id={log_id}, kind={kind})")
    return SampleSet(
        features=features,
        labels=labels,
        source_index=np.arange(n),
        log_id=np.full(n, log_id),
        log_kind=np.full(n, kind, dtype=object),
    )


# ============ 重平衡 ============

def rebalance(samples: SampleSet, seed: int) -> SampleSet:
    """
    随机欠采样多数类，使两类数量相等，保持存活样本的相对顺序

    Args:
        samples: 样本集合
        seed: 随机种子

    Returns:
        SampleSet: 平衡后的样本
    """
    normal_idx = np.flatnonzero(samples.labels == 0)
    attack_idx = np.flatnonzero(samples.labels == 1)
    if len(normal_idx) == 0 or len(attack_idx) == 0:
        raise DatasetError(
            f"cannot balance a single-class set ({len(normal_idx)} normal, {len(attack_idx)} attack)"
        )
    if len(normal_idx) == len(attack_idx):
        return samples

    minority, majority = sorted([normal_idx, attack_idx], key=len)
    rng = np.random.default_rng(seed)
    kept = rng.choice(majority, size=len(minority), replace=False)
    keep = np.sort(np.concatenate([minority, kept]))
    logger.debug(f"欠采样: {len(majority)} -> {len(minority)} (seed={seed})")
    return samples.take(keep)


# ============ 分帧 ============

@dataclass
class Frame:
    """固定长度窗口；indices 指向所属 SampleSet 的行"""
    indices: np.ndarray
    label: int
    log_id: int = 0

    def samples(self, source: SampleSet) -> SampleSet:
        return source.take(self.indices)


def window_frames(
    samples: SampleSet,
    width: int = 29,
    stride: int = 1,
    attack_threshold: int = 5,
) -> List[Frame]:
    """
    滑动窗口分帧；窗口不跨日志，窗口内按 source_index 排序

    Args:
        samples: 样本集合
        width: 窗口长度
        stride: 步长
        attack_threshold: 攻击消息数达到该值时帧标记为攻击

    Returns:
        List[Frame]: 帧列表
    """
    frames: List[Frame] = []
    order = samples.stream_order()
    log_ids = samples.log_id[order]
    for log_id in np.unique(log_ids):
        stream = order[log_ids == log_id]
        if len(stream) < width:
            logger.warning(f"日志 {log_id} 只有 {len(stream)} 条样本，少于窗口长度 {width}，跳过")
            continue
        labels = samples.labels[stream]
        attack_counts = np.convolve(labels, np.ones(width, dtype=np.int64), mode="valid")
        for start in range(0, len(stream) - width + 1, stride):
            frames.append(Frame(
                indices=stream[start:start + width],
                label=int(attack_counts[start] >= attack_threshold),
                log_id=int(log_id),
            ))
    return frames


# ============ A/B/C 划分 ============

@dataclass
class SplitDatasets:
    """A/B/C 三个数据集"""
    dataset_a: SampleSet
    dataset_b: SampleSet
    dataset_c: SampleSet
    seed: int
    frame_width: int = 29
    frame_stride: int = 1

    def as_dict(self) -> Dict[str, SampleSet]:
        return {"A": self.dataset_a, "B": self.dataset_b, "C": self.dataset_c}

    def frames(self, tag: str) -> List[Frame]:
        """指定数据集的帧视图"""
        return window_frames(self.as_dict()[tag], self.frame_width, self.frame_stride)


def _stratify_key(samples: SampleSet) -> np.ndarray:
    """分层键：每层样本足够时按 (日志类型, 标签)，否则只按标签"""
    combined = np.array([f"{k}:{l}" for k, l in zip(samples.log_kind, samples.labels)])
    _, counts = np.unique(combined, return_counts=True)
    if counts.min() >= 10:
        return combined
    _, label_counts = np.unique(samples.labels, return_counts=True)
    if label_counts.min() >= 5:
        return samples.labels
    return None


def split_abc(samples: SampleSet, seed: int, frame_width: int = 29, frame_stride: int = 1) -> SplitDatasets:
    """
    分层随机划分为 60/20/20

    Args:
        samples: 样本集合（至少10条）
        seed: 随机种子

    Returns:
        SplitDatasets: 不相交且并集等于输入的三个子集
    """
    n = len(samples)
    if n < 10:
        raise DatasetError(f"need at least 10 samples to split, got {n}")
    indices = np.arange(n)
    key = _stratify_key(samples)
    idx_a, idx_rest = train_test_split(indices, test_size=0.4, random_state=seed, stratify=key)
    key_rest = key[idx_rest] if key is not None else None
    if key_rest is not None and np.unique(key_rest, return_counts=True)[1].min() < 2:
        key_rest = None
    idx_b, idx_c = train_test_split(idx_rest, test_size=0.5, random_state=seed, stratify=key_rest)

    split = SplitDatasets(
        dataset_a=samples.take(np.sort(idx_a), name="A"),
        dataset_b=samples.take(np.sort(idx_b), name="B"),
        dataset_c=samples.take(np.sort(idx_c), name="C"),
        seed=seed,
        frame_width=frame_width,
        frame_stride=frame_stride,
    )
    logger.info(
        f"数据集划分 (seed={seed}): A={len(split.dataset_a)}, "
        f"B={len(split.dataset_b)}, C={len(split.dataset_c)}"
    )
    return split


# ============ 持久化 ============

def save_samples(samples: SampleSet, path: Union[str, Path]):
    """
    写出数据集CSV：77个特征列 + label + 元数据列，首行为表头

    Args:
        samples: 样本集合
        path: 输出路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(samples.features.astype(np.float64), columns=FEATURE_NAMES)
    for name in FEATURE_NAMES:
        column = df[name]
        if name in ("dlc", "dtime"):
            df[name] = column.map(lambda v: f"{v:.6f}")
        elif np.all(column == np.rint(column)):
            df[name] = column.astype(np.int64)
        else:
            df[name] = column.map(lambda v: f"{v:.6f}")
    df["label"] = samples.labels
    df["source_index"] = samples.source_index
    df["log_id"] = samples.log_id
    df["log_kind"] = samples.log_kind.astype(str)
    df.to_csv(path, index=False, lineterminator="\n")


def load_samples(path: Union[str, Path], name: str = "") -> SampleSet:
    """
    读取数据集CSV；缺少元数据列时视为纯消息级数据集

    Args:
        path: CSV路径
        name: 数据集名称

    Returns:
        SampleSet: 样本集合
    """
    path = Path(path)
    df = pd.read_csv(path)
    missing = [c for c in FEATURE_NAMES + ["label"] if c not in df.columns]
    if missing:
        raise DatasetError(f"{path}: missing columns {missing[:5]}")
    has_meta = all(c in df.columns for c in META_COLUMNS)
    n = len(df)
    return SampleSet(
        features=df[FEATURE_NAMES].to_numpy(dtype=np.float32),
        labels=df["label"].to_numpy(dtype=np.int64),
        source_index=df["source_index"].to_numpy() if has_meta else np.arange(n),
        log_id=df["log_id"].to_numpy() if has_meta else np.zeros(n),
        log_kind=df["log_kind"].astype(str).to_numpy(dtype=object) if has_meta
        else np.full(n, "unknown", dtype=object),
        has_stream_metadata=has_meta,
        name=name or path.stem,
    )


def dataset_manifest(split: SplitDatasets, logs: Sequence[Dict]) -> Dict:
    """数据集清单：各子集的类别计数与比例"""
    manifest = {"seed": split.seed, "logs": list(logs), "splits": {}}
    for tag, samples in split.as_dict().items():
        counts = samples.class_counts()
        kinds = pd.Series(samples.log_kind.astype(str)).value_counts().sort_index()
        manifest["splits"][tag] = {
            "size": len(samples),
            **counts,
            "attack_fraction": round(samples.attack_fraction(), 6),
            "by_log_kind": {k: int(v) for k, v in kinds.items()},
        }
    return manifest


def write_manifest(manifest: Dict, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
