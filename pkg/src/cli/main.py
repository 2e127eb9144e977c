#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
命令行界面（CLI）
synth / prepare / train / attack / retrain / evaluate / report 七个阶段命令，
各阶段产物持久化在工作目录中，可单独重跑
"""

import os
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import psutil
from loguru import logger
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from src.attacks.adversary import AttackConfig, perturb_dataset, save_results
from src.core.config import RunConfig, Scenario, config_digest, save_run_config
from src.core.exceptions import DatasetError, MissingArtifactError, UsageError, WorkdirLockedError
from src.data.canlog import AttackKind, load_traffic_spec, parse_file, synthesize, write_file
from src.data.pipeline import (
    concat_sample_sets,
    dataset_manifest,
    encode_records,
    load_samples,
    rebalance,
    save_samples,
    split_abc,
    write_manifest,
)
from src.harness.analysis import compute_feature_heatmap, compute_perturbation_stats, stats_frame
from src.harness.experiments import (
    ExperimentReport,
    adversarial_retrain,
    reports_frame,
    reports_from_frame,
    run_adversarial_test,
    run_baseline_test,
    run_defence_test,
)
from src.harness.metrics import evaluate
from src.models import ModelFamily, ModelHandle, checkpoint_path, load_model, train_model
from src.utils.device_manager import device_manager
from src.utils.report_generator import ReportGenerator

ALL_FAMILIES = [ModelFamily.BL_DNN, ModelFamily.BL_ENSEMBLE, ModelFamily.SOTA_CNN, ModelFamily.SOTA_LSTM]
LOCK_FILE = ".lock"
RUN_CONFIG_FILE = "run_config.yaml"


def parse_log_argument(value: str) -> Tuple[AttackKind, Path]:
    """解析 kind=path 形式的日志参数"""
    if "=" not in value:
        raise UsageError(f"log must be given as kind=path, got '{value}'")
    kind, path = value.split("=", 1)
    try:
        return AttackKind(kind.strip().lower()), Path(path.strip())
    except ValueError:
        kinds = ", ".join(k.value for k in AttackKind)
        raise UsageError(f"unknown log kind '{kind}' (expected one of: {kinds})")


class CLI:
    """命令行界面类"""

    def __init__(self, cfg: RunConfig, work_dir: Optional[Path] = None, console: Optional[Console] = None):
        """
        初始化CLI

        Args:
            cfg: 实验配置
            work_dir: 工作目录（默认取配置中的 paths.work_dir）
            console: rich 控制台
        """
        self.cfg = cfg
        self.work_dir = Path(work_dir or cfg.paths.work_dir)
        self.console = console or Console()
        self.digest = config_digest(cfg)
        self.report_generator = ReportGenerator(self.reports_dir)
        logger.debug(f"CLI初始化完成: work_dir={self.work_dir}, config_digest={self.digest}")

    # ---------- 工作目录布局 ----------

    @property
    def logs_dir(self) -> Path:
        return self.work_dir / "logs"

    @property
    def datasets_dir(self) -> Path:
        return self.work_dir / "datasets"

    @property
    def models_dir(self) -> Path:
        return self.work_dir / "models"

    @property
    def reports_dir(self) -> Path:
        return Path(self.cfg.paths.output_dir) if self.cfg.paths.output_dir else self.work_dir / "reports"

    def adversarial_dir(self, scenario: Scenario) -> Path:
        return self.work_dir / "adversarial" / Scenario(scenario).value

    def retrained_dir(self, scenario: Scenario) -> Path:
        return self.work_dir / "retrained" / Scenario(scenario).value

    @contextmanager
    def locked(self):
        """工作目录咨询锁；持锁进程已退出时视为陈旧锁并接管"""
        self.work_dir.mkdir(parents=True, exist_ok=True)
        lock = self.work_dir / LOCK_FILE
        if lock.exists():
            try:
                holder = int(lock.read_text().strip() or 0)
            except ValueError:
                holder = 0
            if holder and holder != os.getpid() and psutil.pid_exists(holder):
                raise WorkdirLockedError(f"work directory {self.work_dir} is locked by process {holder}")
            logger.warning(f"移除陈旧锁文件 {lock}")
            lock.unlink()
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise WorkdirLockedError(f"work directory {self.work_dir} is locked")
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        try:
            self._persist_config()
            yield self
        finally:
            lock.unlink(missing_ok=True)

    def _persist_config(self):
        path = self.work_dir / RUN_CONFIG_FILE
        if not path.exists():
            save_run_config(self.cfg, path)
            logger.info(f"实验配置已写出: {path} (digest={self.digest})")

    # ---------- 产物读取 ----------

    def _load_dataset(self, tag: str):
        path = self.datasets_dir / f"{tag}.csv"
        if not path.exists():
            raise MissingArtifactError(str(path), "prepare")
        return load_samples(path, name=tag)

    def _load_adversarial(self, scenario: Scenario, tag: str):
        path = self.adversarial_dir(scenario) / f"{tag}_prime.csv"
        if not path.exists():
            raise MissingArtifactError(str(path), f"attack --scenario {Scenario(scenario).value}")
        return load_samples(path, name=f"{tag}'")

    def _load_model(self, family: ModelFamily) -> ModelHandle:
        path = checkpoint_path(self.models_dir, family)
        if not path.exists():
            raise MissingArtifactError(str(path), f"train --family {family.value}")
        return load_model(path)

    def _families(self, families: Optional[Sequence[str]]) -> List[ModelFamily]:
        return [ModelFamily(f) for f in families] if families else list(ALL_FAMILIES)

    def _scenarios(self, scenarios: Optional[Sequence[str]]) -> List[Scenario]:
        return [Scenario(s) for s in scenarios] if scenarios else list(self.cfg.attack.scenarios)

    # ---------- synth ----------

    def synth(self, spec_path: Path, out_path: Optional[Path] = None) -> Path:
        """按流量规格合成日志"""
        spec = load_traffic_spec(spec_path)
        out_path = Path(out_path) if out_path else self.logs_dir / f"{Path(spec_path).stem}.log"
        records = synthesize(spec)
        write_file(records, out_path)
        n_attack = sum(r.is_attack for r in records)
        self.console.print(f"[green]✓[/green] 合成 {len(records)} 条记录（攻击 {n_attack}）→ {out_path}")
        return out_path

    # ---------- prepare ----------

    def prepare(self, logs: Sequence[Tuple[AttackKind, Path]]) -> Dict:
        """解析、编码、重平衡并划分 A/B/C"""
        if not logs:
            logs = [(AttackKind(k), Path(p)) for k, paths in self.cfg.paths.logs.items() for p in paths]
        if not logs:
            raise UsageError("no logs given (use --log kind=path or paths.logs in the config)")

        seeds = self.cfg.seeds
        parts, described = [], []
        for log_id, (kind, path) in enumerate(logs):
            if not Path(path).exists():
                raise MissingArtifactError(str(path), "synth")
            records = parse_file(path)
            samples = encode_records(records, log_id=log_id, log_kind=kind)
            counts = samples.class_counts()
            if counts["attack"] == 0:
                logger.warning(f"{path} 不含攻击记录，不做重平衡，全部 {len(samples)} 条正常样本保留")
            elif self.cfg.pipeline.rebalance:
                samples = rebalance(samples, seeds.sampling + log_id)
            described.append({"log_id": log_id, "kind": kind.value, "path": str(path), "records": len(records)})
            parts.append(samples)
            logger.info(f"日志 {log_id} ({kind.value}): {len(records)} 条记录 -> {len(samples)} 条样本")

        merged = concat_sample_sets(parts, name="all")
        split = split_abc(
            merged, seeds.split, self.cfg.pipeline.frame_width, self.cfg.pipeline.frame_stride
        )
        for tag, samples in split.as_dict().items():
            save_samples(samples, self.datasets_dir / f"{tag}.csv")
        manifest = dataset_manifest(split, described)
        write_manifest(manifest, self.datasets_dir / "manifest.json")

        table = Table(title="数据集划分")
        for column in ("dataset", "size", "normal", "attack", "attack_fraction"):
            table.add_column(column)
        for tag, info in manifest["splits"].items():
            table.add_row(tag, str(info["size"]), str(info["normal"]), str(info["attack"]),
                          f"{info['attack_fraction']:.4f}")
        self.console.print(table)
        return manifest

    # ---------- train ----------

    def train(self, families: Optional[Sequence[str]] = None) -> Dict[ModelFamily, Path]:
        """在 A 上训练模型族并保存检查点"""
        dataset_a = self._load_dataset("A")
        saved = {}
        for family in self._families(families):
            device_manager.seed_everything(self.cfg.seeds.init)
            model = train_model(family, dataset_a, self.cfg)
            path = checkpoint_path(self.models_dir, family)
            model.save(path)
            saved[family] = path
            self.console.print(f"[green]✓[/green] {family.value} → {path}")
        return saved

    # ---------- attack ----------

    def attack(self, scenarios: Optional[Sequence[str]] = None) -> Dict[Scenario, Dict]:
        """在 BL-DNN 上为 B、C 生成各场景的对抗数据集"""
        generator = self._load_model(ModelFamily.BL_DNN)
        datasets = {"B": self._load_dataset("B"), "C": self._load_dataset("C")}
        config = AttackConfig.from_settings(generator, self.cfg.attack)
        device_manager.seed_everything(self.cfg.seeds.attack)

        results_by_scenario, stats, summary = {}, [], {}
        for scenario in self._scenarios(scenarios):
            out_dir = self.adversarial_dir(scenario)
            collected = []
            for tag, dataset in datasets.items():
                adversarial, results = perturb_dataset(generator, dataset, scenario, config)
                save_samples(adversarial, out_dir / f"{tag}_prime.csv")
                save_results(results, out_dir / f"{tag}_prime.results.csv")
                collected += results
            results_by_scenario[scenario] = collected
            if collected:
                stats.append(compute_perturbation_stats(collected, scenario, config.max_iterations))
            summary[scenario] = {"attempted": len(collected), "succeeded": sum(r.success for r in collected)}

        if stats:
            self.report_generator.merge_stats(stats_frame(stats))
        self.report_generator.merge_matrix("heatmap", compute_feature_heatmap(results_by_scenario))

        table = Table(title="对抗样本生成")
        for column in ("scenario", "attempted", "succeeded", "mean iterations", "mean size"):
            table.add_column(column)
        by_scenario = {s.scenario: s for s in stats}
        for scenario, info in summary.items():
            s = by_scenario.get(scenario)
            table.add_row(
                scenario.value, str(info["attempted"]), str(info["succeeded"]),
                f"{s.mean_iterations:.2f}" if s else "-", f"{s.mean_size:.2f}" if s else "-",
            )
        self.console.print(table)
        return summary

    # ---------- retrain ----------

    def retrain(self, families: Optional[Sequence[str]] = None,
                scenarios: Optional[Sequence[str]] = None) -> Dict[Tuple[ModelFamily, Scenario], Path]:
        """每个 (模型族, 场景) 在对应 B′ 上再训练一次"""
        families = self._families(families or self.cfg.retrain.families)
        dataset_a = self._load_dataset("A") if ModelFamily.BL_ENSEMBLE in families else None
        saved = {}
        for family in families:
            original = self._load_model(family)
            for scenario in self._scenarios(scenarios):
                b_prime = self._load_adversarial(scenario, "B")
                device_manager.seed_everything(self.cfg.seeds.init)
                model = adversarial_retrain(original, b_prime, self.cfg.retrain, dataset_a, seed=self.cfg.seeds.init)
                path = checkpoint_path(self.retrained_dir(scenario), family)
                model.save(path)
                saved[(family, scenario)] = path
                self.console.print(f"[green]✓[/green] {family.value} @ {scenario.value} → {path}")
        return saved

    # ---------- evaluate ----------

    def evaluate(self, phase: str, families: Optional[Sequence[str]] = None,
                 scenarios: Optional[Sequence[str]] = None) -> List[ExperimentReport]:
        """运行 baseline / adversarial / defence 测试并写出报告表"""
        scenarios = self._scenarios(scenarios)
        seed = self.cfg.seeds.init
        if phase == "baseline":
            models = {f: self._load_model(f) for f in self._families(families)}
            reports = run_baseline_test(
                models, self._load_dataset("B"), self._load_dataset("C"),
                scenarios=scenarios, include_pooled=True, seed=seed, config_digest=self.digest,
            )
        elif phase == "adversarial":
            models = {f: self._load_model(f) for f in self._families(families)}
            adversarial = {
                s: {"B'": self._load_adversarial(s, "B"), "C'": self._load_adversarial(s, "C")} for s in scenarios
            }
            baseline_table = self.report_generator.read_table("baseline.csv")
            baseline = reports_from_frame(baseline_table) if baseline_table is not None else None
            if baseline is None:
                logger.warning("缺少基线报告，FNR增量矩阵留空")
            outcome = run_adversarial_test(models, adversarial, scenarios, baseline, seed, self.digest)
            self.report_generator.merge_matrix("transfer_matrix", outcome.transfer_matrix)
            self.report_generator.merge_matrix("fnr_delta", outcome.fnr_delta)
            reports = outcome.reports
        elif phase == "defence":
            retrained = {}
            for family in self._families(families or self.cfg.retrain.families):
                for scenario in scenarios:
                    path = checkpoint_path(self.retrained_dir(scenario), family)
                    if not path.exists():
                        raise MissingArtifactError(str(path), f"retrain --family {family.value}")
                    retrained[(family, scenario)] = load_model(path)
            adversarial_c = {s: self._load_adversarial(s, "C") for s in scenarios}
            reports = run_defence_test(retrained, self._load_dataset("C"), adversarial_c, seed, self.digest)
        else:
            raise UsageError(f"unknown phase '{phase}' (baseline, adversarial, defence)")

        self.report_generator.merge_phase(phase, reports_frame(reports))
        self.print_reports(reports, title=f"{phase} 测试")
        return reports

    def evaluate_checkpoint(self, checkpoint: Path, dataset: Path):
        """单个检查点在单个数据集CSV上的评估"""
        if not Path(dataset).exists():
            raise MissingArtifactError(str(dataset), "prepare")
        model = load_model(checkpoint)
        samples = load_samples(dataset)
        if len(samples) == 0:
            raise DatasetError(f"dataset {dataset} is empty")
        metrics = evaluate(model, samples)
        self.console.print(Panel.fit(
            "\n".join(f"{k}: {v}" for k, v in metrics.to_dict().items()),
            title=f"{model.family.value} @ {samples.name}",
            border_style="cyan",
        ))
        return metrics

    def print_reports(self, reports: Sequence[ExperimentReport], title: str = ""):
        """以表格形式打印报告"""
        table = Table(title=title)
        for column in ("model", "scenario", "dataset", "accuracy", "f1", "fnr", "fpr"):
            table.add_column(column)

        def fmt(v):
            return "null" if v is None else f"{v:.4f}"

        for r in reports:
            m = r.metrics
            table.add_row(r.model, r.scenario.value, r.dataset, fmt(m.accuracy), fmt(m.f1), fmt(m.fnr), fmt(m.fpr))
        self.console.print(table)

    # ---------- report ----------

    def report(self, top_k: int = 5) -> Path:
        """汇总全部表格，生成 Markdown 摘要"""
        path = self.report_generator.generate_summary(top_k=top_k)
        missing = self.report_generator.missing_phases()
        if missing:
            self.console.print(f"[yellow]⚠ 缺少阶段: {', '.join(missing)}[/yellow]")
        self.console.print(f"[green]✓[/green] 摘要 → {path}")
        return path

