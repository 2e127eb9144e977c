#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""对抗样本生成模块"""

from .adversary import (
    AdversarialResult,
    AttackConfig,
    ScenarioMask,
    fgsm_step,
    generate_adversarial,
    generate_batch,
    load_results,
    perturb_dataset,
    save_results,
    scenario_mask,
    summarize_results,
)

__all__ = [
    "AdversarialResult",
    "AttackConfig",
    "ScenarioMask",
    "fgsm_step",
    "generate_adversarial",
    "generate_batch",
    "load_results",
    "perturb_dataset",
    "save_results",
    "scenario_mask",
    "summarize_results",
]
