#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
测试公共夹具
小规模合成流量，保证各测试在桌面机器上几秒内完成
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# 添加项目根目录到路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.config import build_run_config
from src.data.canlog import AttackKind, NormalIdSpec, TrafficSpec, synthesize
from src.data.pipeline import SampleSet, concat_sample_sets, encode_records, rebalance, split_abc

NORMAL_IDS = [
    NormalIdSpec(can_id=0x18F, period=0.01, payload=["fe", "5b", "00", "00", "00", "3c", "00", "00"]),
    NormalIdSpec(can_id=0x260, period=0.01, payload=["07", "22", "??", "00", "00", "00", "00", "??"]),
    NormalIdSpec(can_id=0x316, period=0.01, payload=["05", "21", "??", "??", "21", "1e", "00", "6f"]),
    NormalIdSpec(can_id=0x43F, period=0.02, payload=["00", "40", "60", "ff", "5a", "6b", "04", "00"]),
]


def make_spec(kind: AttackKind = AttackKind.NONE, duration: float = 2.0, seed: int = 0) -> TrafficSpec:
    """构造一个小规模流量规格"""
    params = {
        AttackKind.NONE: {},
        AttackKind.DOS: {"flood_id": 0, "gap": 0.002, "start": 0.5, "end": 1.5},
        AttackKind.FUZZY: {"rate": 400, "start": 0.5, "end": 1.5},
        AttackKind.MALFUNCTION: {"target_id": 0x316, "interval": 0.004, "payload": ["ff"] * 8,
                                 "start": 0.5, "end": 1.5},
    }[kind]
    return TrafficSpec(duration=duration, normal_ids=list(NORMAL_IDS), attack_kind=kind,
                       attack_params=params, seed=seed)


def make_samples(kinds=(AttackKind.DOS, AttackKind.FUZZY, AttackKind.MALFUNCTION), balance: bool = True) -> SampleSet:
    """合成多种攻击日志并编码为一个样本集合"""
    parts = []
    for log_id, kind in enumerate(kinds):
        samples = encode_records(synthesize(make_spec(kind, seed=log_id)), log_id=log_id, log_kind=kind)
        if balance and samples.class_counts()["attack"] > 0:
            samples = rebalance(samples, 17 + log_id)
        parts.append(samples)
    return concat_sample_sets(parts, name="all")


@pytest.fixture(scope="session")
def run_config():
    """缩小规模的实验配置"""
    return build_run_config({}, [
        "dnn.epochs=3",
        "cnn.epochs=1",
        "cnn.width_scale=0.125",
        "lstm.epochs=1",
        "lstm.width_scale=0.25",
        "lstm.max_sequences_per_id=200",
        "attack.max_iterations=10",
        "retrain.epochs=1",
    ])


@pytest.fixture(scope="session")
def all_samples():
    """三种攻击日志合并后的样本"""
    return make_samples()


@pytest.fixture(scope="session")
def split(all_samples):
    """A/B/C 划分"""
    return split_abc(all_samples, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def trained_dnn(split, run_config):
    """在 A 上训练的小规模 BL-DNN"""
    from src.models.bl_dnn import train_bl_dnn

    return train_bl_dnn(split.dataset_a, seed=11, config=run_config.dnn)
