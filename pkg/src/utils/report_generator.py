#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
报告生成器
结果表格（CSV，6位小数，未定义值留空）与 Markdown 摘要
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from jinja2 import Environment
from loguru import logger

from src.core.config import Scenario, settings
from src.harness.analysis import rank_features

PHASE_TABLES = {
    "baseline": "baseline.csv",
    "adversarial": "adversarial.csv",
    "defence": "defence.csv",
}
MATRIX_TABLES = {
    "transfer_matrix": "transfer_matrix.csv",
    "fnr_delta": "fnr_delta.csv",
    "heatmap": "heatmap.csv",
}
STATS_TABLE = "perturbation_stats.csv"
# 阶段表按 (模型, 场景) 替换旧行
PHASE_KEYS = ["model", "scenario"]
SCENARIO_ORDER = [s.value for s in Scenario]
SUMMARY_FILE = "summary.md"

# 缺失阶段对应的补救命令
PHASE_PRODUCERS = {
    "baseline": "evaluate --phase baseline",
    "adversarial": "evaluate --phase adversarial",
    "defence": "retrain && evaluate --phase defence",
}

SUMMARY_TEMPLATE = """# {{ app_name }} 实验报告

- 配置摘要: `{{ digest or "null" }}`
- 种子: {{ seed if seed is not none else "null" }}

{% for phase in phases %}
## {{ phase.title }}

{% if phase.rows is none -%}
> ⚠️ 缺少该阶段结果，请先运行 `{{ phase.producer }}`
{%- else -%}
| model | scenario | dataset | tp | fp | tn | fn | accuracy | f1 | fnr | fpr |
|---|---|---|---|---|---|---|---|---|---|---|
{% for r in phase.rows -%}
| {{ r.model }} | {{ r.scenario }} | {{ r.dataset }} | {{ r.tp }} | {{ r.fp }} | {{ r.tn }} | {{ r.fn }} | {{ r.accuracy|fmt }} | {{ r.f1|fmt }} | {{ r.fnr|fmt }} | {{ r.fpr|fmt }} |
{% endfor -%}
{%- endif %}
{% endfor %}
{% for matrix in matrices %}
## {{ matrix.title }}

{% if matrix.frame is none -%}
> ⚠️ 缺少该表
{%- else -%}
| scenario | {{ matrix.frame.columns|join(" | ") }} |
|---|{% for _ in matrix.frame.columns %}---|{% endfor %}
{% for scenario, row in matrix.frame.iterrows() -%}
| {{ scenario }} | {% for v in row %}{{ v|fmt }} | {% endfor %}
{% endfor -%}
{%- endif %}
{% endfor %}
## 扰动统计

{% if stats is none -%}
> ⚠️ 缺少扰动统计，请先运行 `attack`
{%- else -%}
| scenario | samples | mean size | max size | mean iterations | max iterations | failures | success rate |
|---|---|---|---|---|---|---|---|
{% for r in stats -%}
| {{ r.scenario }} | {{ r.samples }} | {{ r.mean_size|fmt }} | {{ r.max_size }} | {{ r.mean_iterations|fmt }} | {{ r.max_iterations }} | {{ r.failures }} | {{ r.success_rate|fmt }} |
{% endfor -%}
{%- endif %}

## 修改最频繁的特征

{% if ranking is none -%}
> ⚠️ 缺少特征热力图
{%- else -%}
{% for scenario, features in ranking.items() -%}
- **{{ scenario }}**: {% for f in features %}`{{ f.feature }}` ({{ f.count }}){% if not loop.last %}, {% endif %}{% else %}无{% endfor %}
{% endfor -%}
{%- endif %}
"""


def _fmt(value) -> str:
    """数值格式化；None/NaN 显示为 null"""
    if value is None:
        return "null"
    if isinstance(value, float):
        return "null" if math.isnan(value) else f"{value:.6f}"
    return str(value)


def _to_numeric(frame: pd.DataFrame) -> pd.DataFrame:
    """含 None 的数值列转为浮点，以便统一格式化"""
    frame = frame.copy()
    for column in frame.columns:
        if frame[column].dtype == object:
            values = frame[column].dropna()
            if len(values) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
                frame[column] = pd.to_numeric(frame[column], errors="coerce").astype(float)
            elif not len(values) and len(frame[column]):
                frame[column] = frame[column].astype(float)
    return frame


def _scenario_rank(value) -> int:
    return SCENARIO_ORDER.index(value) if value in SCENARIO_ORDER else len(SCENARIO_ORDER)


def merge_rows(existing: Optional[pd.DataFrame], new: pd.DataFrame, keys: List[str]) -> pd.DataFrame:
    """
    以 keys 为主键合并表格：新表中出现的键替换旧行，其余旧行保留

    Args:
        existing: 已有表格（可为 None）
        new: 本次结果
        keys: 主键列

    Returns:
        合并后的表格
    """
    if existing is None or not len(existing):
        return new.reset_index(drop=True)
    fresh = set(map(tuple, new[keys].astype(str).values))
    keep = [tuple(row) not in fresh for row in existing[keys].astype(str).values]
    merged = pd.concat([existing[keep], new], ignore_index=True)
    if keys == ["scenario"]:
        merged = merged.sort_values("scenario", key=lambda s: s.map(_scenario_rank), kind="stable")
    return merged.reset_index(drop=True)


def merge_matrices(existing: Optional[pd.DataFrame], new: pd.DataFrame) -> pd.DataFrame:
    """
    合并以场景为索引的矩阵：新块覆盖对应单元格，其余单元格保留

    Args:
        existing: 已有矩阵（可为 None）
        new: 本次计算的矩阵块

    Returns:
        合并后的矩阵，行按场景顺序排列
    """
    if existing is None or not len(existing):
        return new
    rows = list(existing.index) + [r for r in new.index if r not in existing.index]
    columns = list(existing.columns) + [c for c in new.columns if c not in existing.columns]
    merged = existing.reindex(index=rows, columns=columns).astype(float)
    merged.loc[list(new.index), list(new.columns)] = new.astype(float).values
    merged = merged.reindex(sorted(rows, key=_scenario_rank))
    merged.index.name = new.index.name or existing.index.name
    return merged


class ReportGenerator:
    """报告生成器"""

    def __init__(self, output_dir: Union[str, Path]):
        """
        初始化报告生成器

        Args:
            output_dir: 表格与摘要的输出目录
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.env = Environment(trim_blocks=False, lstrip_blocks=False, keep_trailing_newline=True)
        self.env.filters["fmt"] = _fmt
        logger.debug(f"报告输出目录: {self.output_dir}")

    # ---------- 表格 ----------

    def write_table(self, frame: pd.DataFrame, filename: str, index: bool = False) -> Path:
        """写出CSV表格（6位小数，未定义值留空）"""
        path = self.output_dir / filename
        _to_numeric(frame).to_csv(path, index=index, float_format="%.6f", na_rep="", lineterminator="\n")
        logger.info(f"表格已写出: {path}")
        return path

    def write_phase(self, phase: str, frame: pd.DataFrame) -> Path:
        return self.write_table(frame, PHASE_TABLES[phase])

    def write_matrix(self, name: str, frame: pd.DataFrame) -> Path:
        return self.write_table(frame, MATRIX_TABLES[name], index=True)

    def write_stats(self, frame: pd.DataFrame) -> Path:
        return self.write_table(frame, STATS_TABLE)

    def merge_phase(self, phase: str, frame: pd.DataFrame) -> Path:
        """并入阶段表：同一 (模型, 场景) 的旧行被替换"""
        return self.write_phase(phase, merge_rows(self.read_table(PHASE_TABLES[phase]), frame, PHASE_KEYS))

    def merge_matrix(self, name: str, frame: pd.DataFrame) -> Path:
        """并入矩阵表；热力图保持整数计数"""
        merged = merge_matrices(self.read_table(MATRIX_TABLES[name], index=True), frame)
        if name == "heatmap":
            merged = merged.fillna(0).astype(np.int64)
        return self.write_matrix(name, merged)

    def merge_stats(self, frame: pd.DataFrame) -> Path:
        """并入扰动统计：同一场景的旧行被替换"""
        return self.write_stats(merge_rows(self.read_table(STATS_TABLE), frame, ["scenario"]))

    def read_table(self, filename: str, index: bool = False) -> Optional[pd.DataFrame]:
        """读取已有表格；不存在时返回 None"""
        path = self.output_dir / filename
        if not path.exists():
            return None
        return pd.read_csv(path, index_col=0 if index else None, dtype={"config_digest": str})

    # ---------- 摘要 ----------

    def collect(self) -> Dict:
        """汇集输出目录中的全部表格"""
        return {
            "phases": {phase: self.read_table(name) for phase, name in PHASE_TABLES.items()},
            "matrices": {name: self.read_table(f, index=True) for name, f in MATRIX_TABLES.items()},
            "stats": self.read_table(STATS_TABLE),
        }

    def missing_phases(self) -> List[str]:
        return [phase for phase, frame in self.collect()["phases"].items() if frame is None]

    def render_summary(self, tables: Optional[Dict] = None, top_k: int = 5) -> str:
        """渲染 Markdown 摘要；缺失的阶段会被标出"""
        tables = tables or self.collect()
        phases, matrices, stats = tables["phases"], tables["matrices"], tables["stats"]

        digest, seed = None, None
        for frame in phases.values():
            if frame is not None and len(frame):
                digest, seed = str(frame["config_digest"].iloc[0]), int(frame["seed"].iloc[0])
                break

        def rows(frame):
            if frame is None:
                return None
            return [
                {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
                for r in frame.to_dict(orient="records")
            ]

        heatmap = matrices.get("heatmap")
        template = self.env.from_string(SUMMARY_TEMPLATE)
        return template.render(
            app_name=settings.APP_NAME,
            digest=digest,
            seed=seed,
            phases=[
                {"title": "基线测试", "rows": rows(phases["baseline"]), "producer": PHASE_PRODUCERS["baseline"]},
                {"title": "对抗测试", "rows": rows(phases["adversarial"]), "producer": PHASE_PRODUCERS["adversarial"]},
                {"title": "防御测试", "rows": rows(phases["defence"]), "producer": PHASE_PRODUCERS["defence"]},
            ],
            matrices=[
                {"title": "迁移矩阵（B'+C' FNR）", "frame": matrices.get("transfer_matrix")},
                {"title": "FNR 增量（对抗 - 基线）", "frame": matrices.get("fnr_delta")},
                {"title": "特征修改热力图（修改次数）", "frame": heatmap},
            ],
            stats=rows(stats),
            ranking=rank_features(heatmap, top_k) if heatmap is not None else None,
        )

    def generate_summary(self, top_k: int = 5) -> Path:
        """写出 summary.md"""
        missing = self.missing_phases()
        if missing:
            logger.warning(f"缺少阶段结果: {', '.join(missing)}")
        path = self.output_dir / SUMMARY_FILE
        path.write_text(self.render_summary(top_k=top_k), encoding="utf-8")
        logger.success(f"摘要已生成: {path}")
        return path
