"""
实验编排 - 单次运行、多种子汇总、消融网格

命令行各子命令都通过这里调用训练流程。目标域标签只在 evaluate 调用中出现。
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import ConfigurationError
from app.models.schemas import (
    AblationRow,
    AdaptScope,
    PhaseMetrics,
    PretrainScope,
    ReweighMode,
    RunConfig,
    RunManifest,
    RunReport,
    SeedSummary,
)
from app.services.config_store import config_hash, manifest_config
from app.services.datasets import DomainPair, check_descriptors, make_domain_pair
from app.services.neuralcore import Model, init_model
from app.services.report_store import AblationStore
from app.services.seeding import derive_seed
from app.services.trainer import adapt, evaluate, pretrain
from app.services.uncertainty import UncertaintyCache

logger = logging.getLogger(__name__)

# (label, DSS_Pre, DSS_Ada, Reweigh)，8 行消融网格
DSS_GRID: List[Tuple[str, PretrainScope, AdaptScope, ReweighMode]] = [
    ("baseline", PretrainScope.NONE, AdaptScope.NONE, ReweighMode.NONE),
    ("dss_pre", PretrainScope.SOURCE, AdaptScope.NONE, ReweighMode.NONE),
    ("dss_ada_source", PretrainScope.SOURCE, AdaptScope.SOURCE, ReweighMode.NONE),
    ("dss_ada_target", PretrainScope.SOURCE, AdaptScope.TARGET, ReweighMode.NONE),
    ("dss_ada_both", PretrainScope.SOURCE, AdaptScope.BOTH, ReweighMode.NONE),
    ("reweigh_sl", PretrainScope.SOURCE, AdaptScope.SOURCE, ReweighMode.SL),
    ("reweigh_de", PretrainScope.SOURCE, AdaptScope.SOURCE, ReweighMode.DE),
    ("reweigh_de_sl", PretrainScope.SOURCE, AdaptScope.SOURCE, ReweighMode.DE_SL),
]

# epsilon 扫描: 0, 0.05, ..., 0.4
EPSILON_GRID: List[float] = [round(0.05 * i, 2) for i in range(9)]

GRIDS = ("dss", "epsilon")


@dataclass
class RunOutcome:
    """一次运行的全部产物"""
    report: RunReport
    manifest: RunManifest
    pretrained: Model
    adapted: Model


def build_model(config: RunConfig, input_dim: int, seed: int, num_classes: Optional[int] = None) -> Model:
    """num_classes 缺省取配置；给定数据时以数据为准"""
    return init_model(
        input_dim,
        config.dataset.num_classes if num_classes is None else num_classes,
        hidden=config.model.hidden,
        classifier_hidden=config.model.classifier_hidden,
        dropout_rate=config.model.dropout_rate,
        seed=derive_seed(seed, "init"),
    )


def _metrics(phase: str, scores: Tuple[float, float]) -> PhaseMetrics:
    accuracy, mca = scores
    return PhaseMetrics(phase=phase, accuracy=accuracy, mean_class_accuracy=mca)


def run_experiment(
    config: RunConfig,
    seed: Optional[int] = None,
    pair: Optional[DomainPair] = None,
    uncertainty_cache: Optional[UncertaintyCache] = None,
    workers: int = 1
) -> RunOutcome:
    """
    预训练 -> 评估 (source only) -> 适配 -> 评估 (adapted)

    Args:
        config: 运行配置
        seed: 主种子，缺省为 config.seed
        pair: 已有的数据；缺省按配置与种子生成
        uncertainty_cache: 可选的 (mu, sigma) 缓存
        workers: MCD 前向的并行线程数
    """
    seed = config.seed if seed is None else seed
    if pair is None:
        pair = make_domain_pair(config.dataset, seed)
    else:
        check_descriptors(pair.descriptors, config.dataset)
    digest = config_hash(config)
    target = pair.target

    model = build_model(config, target.dim, seed, num_classes=pair.num_classes)
    pretrained = pretrain(
        model,
        pair.sources,
        config.schedule,
        config.dss,
        seed=seed,
        batch_size=config.batch.size,
        train_dropout=config.model.train_dropout,
    )
    source_inputs = np.concatenate([s.inputs for s in pair.sources])
    source_labels = np.concatenate([s.labels for s in pair.sources])
    source_train = evaluate(pretrained, source_inputs, source_labels)
    source_only = evaluate(pretrained, target.inputs, target.labels)
    logger.info(f"Seed {seed}: source-train acc={source_train[0]:.4f}, source-only target acc={source_only[0]:.4f}")

    adapted, report = adapt(
        pretrained,
        pair.sources,
        target.inputs,
        config.schedule,
        config.dss,
        mcd=config.mcd,
        batch=config.batch,
        reweigh=config.reweigh,
        seed=seed,
        train_dropout=config.model.train_dropout,
        config_hash=digest,
        uncertainty_cache=uncertainty_cache,
        workers=workers,
    )
    adapted_scores = evaluate(adapted, target.inputs, target.labels)
    logger.info(f"Seed {seed}: adapted target acc={adapted_scores[0]:.4f}, mca={adapted_scores[1]:.4f}")

    report.source_train = _metrics("source_train", source_train)
    report.source_only = _metrics("source_only", source_only)
    report.adapted = _metrics("adapted", adapted_scores)
    manifest = RunManifest(
        seed=seed,
        config_hash=digest,
        config=manifest_config(config.model_copy(update={"seed": seed})),
        data=pair.descriptors,
    )
    return RunOutcome(report=report, manifest=manifest, pretrained=pretrained, adapted=adapted)


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """均值与样本标准差 (ddof=1)，单个值时标准差为 0"""
    array = np.asarray(values, dtype=np.float64)
    std = float(array.std(ddof=1)) if array.size > 1 else 0.0
    return float(array.mean()), std


def summarize_reports(reports: Sequence[RunReport], digest: Optional[str] = None) -> SeedSummary:
    """多个种子的 mean / std"""
    so_acc = _mean_std([r.source_only.accuracy for r in reports])
    so_mca = _mean_std([r.source_only.mean_class_accuracy for r in reports])
    ad_acc = _mean_std([r.adapted.accuracy for r in reports])
    ad_mca = _mean_std([r.adapted.mean_class_accuracy for r in reports])
    return SeedSummary(
        config_hash=digest or reports[0].config_hash,
        seeds=[r.seed for r in reports],
        source_only_accuracy_mean=so_acc[0],
        source_only_accuracy_std=so_acc[1],
        source_only_mca_mean=so_mca[0],
        source_only_mca_std=so_mca[1],
        adapted_accuracy_mean=ad_acc[0],
        adapted_accuracy_std=ad_acc[1],
        adapted_mca_mean=ad_mca[0],
        adapted_mca_std=ad_mca[1],
    )


def consecutive_seeds(first: int, count: int) -> List[int]:
    return [first + k for k in range(max(1, count))]


def run_seeds(
    config: RunConfig,
    count: int = 3,
    uncertainty_cache: Optional[UncertaintyCache] = None,
    workers: int = 1
) -> Tuple[List[RunOutcome], SeedSummary]:
    """从 config.seed 开始的连续种子各跑一次"""
    outcomes = [
        run_experiment(config, seed=seed, uncertainty_cache=uncertainty_cache, workers=workers)
        for seed in consecutive_seeds(config.seed, count)
    ]
    summary = summarize_reports([o.report for o in outcomes], config_hash(config))
    logger.info(
        f"{len(outcomes)} seeds: adapted acc {summary.adapted_accuracy_mean:.4f} +/- {summary.adapted_accuracy_std:.4f}, "
        f"source-only {summary.source_only_accuracy_mean:.4f} +/- {summary.source_only_accuracy_std:.4f}"
    )
    return outcomes, summary


# === Ablation ===

def grid_configs(base: RunConfig, grid: str = "dss") -> List[Tuple[str, RunConfig]]:
    """
    消融网格的 (label, config)

    dss:     DSS_Pre x DSS_Ada x Reweigh 的 8 行
    epsilon: DSS_Pre = DSS_Ada = source, de+sl，epsilon 从 0 到 0.4
    """
    cells = []
    if grid == "dss":
        for label, dss_pre, dss_ada, reweigh in DSS_GRID:
            dss = base.dss.model_copy(update={"pretrain": dss_pre, "adapt": dss_ada})
            cells.append((label, base.model_copy(update={"dss": dss, "reweigh": reweigh})))
    elif grid == "epsilon":
        for epsilon in EPSILON_GRID:
            dss = base.dss.model_copy(update={
                "epsilon": epsilon, "pretrain": PretrainScope.SOURCE, "adapt": AdaptScope.SOURCE,
            })
            cells.append((f"epsilon_{epsilon:.2f}", base.model_copy(update={"dss": dss, "reweigh": ReweighMode.DE_SL})))
    else:
        raise ConfigurationError(f"unknown grid {grid!r}, expected one of {GRIDS}", key="grid")
    return cells


def _run_cell(payload: Tuple[str, int]) -> str:
    """子进程入口: (config JSON, seed) -> RunReport JSON"""
    config_json, seed = payload
    config = RunConfig.model_validate_json(config_json)
    return run_experiment(config, seed=seed).report.model_dump_json()


def run_ablation(
    base: RunConfig,
    grid: str = "dss",
    seeds: int = 3,
    workers: int = 1,
    store: Optional[AblationStore] = None
) -> List[AblationRow]:
    """
    运行消融网格，每个单元跑 seeds 个连续种子

    store 中已有的 (config_hash, seed) 直接复用；workers > 1 时用多进程跑剩余单元。
    """
    cells = grid_configs(base, grid)
    seed_list = consecutive_seeds(base.seed, seeds)
    reports: Dict[Tuple[str, int], RunReport] = {}
    pending: List[Tuple[str, RunConfig, int]] = []

    for label, config in cells:
        digest = config_hash(config)
        for seed in seed_list:
            cached = store.get(digest, seed) if store is not None else None
            if cached is not None:
                reports[(label, seed)] = cached
            else:
                pending.append((label, config, seed))

    logger.info(f"Ablation grid {grid}: {len(cells)} cells x {len(seed_list)} seeds, {len(pending)} runs pending")

    payloads = [(config.model_dump_json(), seed) for _, config, seed in pending]
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, payloads))
    else:
        results = [_run_cell(p) for p in payloads]

    for (label, _, seed), result in zip(pending, results):
        report = RunReport.model_validate_json(result)
        reports[(label, seed)] = report
        if store is not None:
            store.put(report, label=label)

    rows = []
    for label, config in cells:
        summary = summarize_reports([reports[(label, seed)] for seed in seed_list], config_hash(config))
        rows.append(AblationRow(
            **summary.model_dump(),
            label=label,
            dss_pre=config.dss.pretrain,
            dss_ada=config.dss.adapt,
            reweigh=config.reweigh,
            epsilon=config.dss.epsilon,
        ))
    return rows
