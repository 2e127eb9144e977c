#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""测试流程与分析模块"""

from .analysis import (
    PerturbationStats,
    compute_feature_heatmap,
    compute_perturbation_stats,
    feature_counts,
    rank_features,
    stats_frame,
)
from .experiments import (
    REPORT_COLUMNS,
    AdversarialOutcome,
    ExperimentReport,
    Phase,
    adversarial_retrain,
    reports_frame,
    reports_from_frame,
    run_adversarial_test,
    run_baseline_test,
    run_defence_test,
    transfer_matrix,
)
from .metrics import Metrics, confusion, evaluate, evaluate_view, pooled

__all__ = [
    "Metrics",
    "confusion",
    "evaluate",
    "evaluate_view",
    "pooled",
    "REPORT_COLUMNS",
    "AdversarialOutcome",
    "ExperimentReport",
    "Phase",
    "adversarial_retrain",
    "reports_frame",
    "reports_from_frame",
    "run_adversarial_test",
    "run_baseline_test",
    "run_defence_test",
    "transfer_matrix",
    "PerturbationStats",
    "compute_feature_heatmap",
    "compute_perturbation_stats",
    "feature_counts",
    "rank_features",
    "stats_frame",
]
