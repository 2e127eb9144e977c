#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""数据模块：CAN日志与预处理流水线"""

from .canlog import (
    AttackKind,
    CanRecord,
    Label,
    TrafficSpec,
    load_traffic_spec,
    parse_file,
    parse_line,
    synthesize,
    write_file,
)
from .pipeline import (
    FEATURE_NAMES,
    N_FEATURES,
    FeatureVector,
    LabeledSample,
    SampleSet,
    SplitDatasets,
    encode_records,
    load_samples,
    rebalance,
    save_samples,
    scenario_view,
    split_abc,
    window_frames,
)

__all__ = [
    "AttackKind",
    "CanRecord",
    "Label",
    "TrafficSpec",
    "load_traffic_spec",
    "parse_file",
    "parse_line",
    "synthesize",
    "write_file",
    "FEATURE_NAMES",
    "N_FEATURES",
    "FeatureVector",
    "LabeledSample",
    "SampleSet",
    "SplitDatasets",
    "encode_records",
    "load_samples",
    "rebalance",
    "save_samples",
    "scenario_view",
    "split_abc",
    "window_frames",
]
