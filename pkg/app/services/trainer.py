"""
训练流程

1. pretrain: 只用源域，(平滑后的) 交叉熵，omega = 1
2. adapt: 每个 cycle
     - 冻结快照，提取整个目标域的 (mu, sigma)
     - 每 resample_period 步重新生成伪标签并重建目标 bin
     - 规划混合批次，用当前状态为批次的目标样本计算 lambda_SL / lambda_DE，
       批内归一化得到 omega (源域 omega = 1)
     - 一步 SGD
3. evaluate: accuracy 与 mean class accuracy

目标域真实标签只出现在 evaluate 中；adapt 只接收目标域输入。
"""

import logging
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import confusion_matrix

from app.exceptions import EmptyDataError, ShapeError, StarvationError
from app.models.schemas import (
    BatchSettings,
    CycleDiagnostics,
    Domain,
    McdSettings,
    Phase,
    ResampleDiagnostics,
    ReweighMode,
    RunReport,
    Schedule,
    SmoothingPolicy,
)
from app.services.datasets import DomainDataset
from app.services.neuralcore import Batch, DropoutMask, Model, predict, train_step
from app.services.pseudolabel import PseudoLabeler
from app.services.reweighting import WeightStatsAccumulator, assemble_weights, compute_weights
from app.services.sampler import BinIndex, MixedBatchSampler, choose_source_domain
from app.services.seeding import derive_seed
from app.services.smoothing import apply_policy_batch
from app.services.uncertainty import UncertaintyCache, extract_uncertainty

logger = logging.getLogger(__name__)

SourceData = Union[DomainDataset, Sequence[DomainDataset]]

# 目标域样本在 Batch.domains 中的标记
TARGET_DOMAIN_TAG = -1


def _as_sources(source_data: SourceData) -> List[DomainDataset]:
    sources = [source_data] if isinstance(source_data, DomainDataset) else list(source_data)
    if not sources or any(s.num_samples == 0 for s in sources):
        raise EmptyDataError("source data is empty")
    return sources


def _training_mask(model: Model, rows: int, enabled: bool, seed: int) -> Optional[DropoutMask]:
    """训练时逐样本 dropout mask；关闭或 rate = 0 时为 None"""
    if not enabled or model.dropout_rate == 0.0:
        return None
    return DropoutMask.sample(model.hidden_dim, model.dropout_rate, seed, rows=rows)


def score_predictions(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> Tuple[float, float]:
    """
    (accuracy, mean class accuracy)

    mean class accuracy 为各类别 recall 的平均，标签中不存在的类别不计入。
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.size == 0:
        raise EmptyDataError("cannot evaluate on an empty set")
    if labels.shape != predictions.shape:
        raise ShapeError(f"{labels.shape[0]} labels but {predictions.shape[0]} predictions")

    matrix = confusion_matrix(labels, predictions, labels=np.arange(num_classes))
    support = matrix.sum(axis=1)
    present = support > 0
    recalls = matrix.diagonal()[present] / support[present]
    return float(np.mean(predictions == labels)), float(recalls.mean())


def evaluate(model: Model, inputs: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """确定性推理下的 (accuracy, mean class accuracy)"""
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyDataError("cannot evaluate on an empty set")
    if inputs.shape[0] != labels.shape[0]:
        raise ShapeError(f"{inputs.shape[0]} inputs but {labels.shape[0]} labels")
    return score_predictions(labels, predict(model, inputs), model.num_classes)


def pretrain(
    model: Model,
    source_data: SourceData,
    schedule: Schedule,
    policy: SmoothingPolicy,
    seed: int = 0,
    batch_size: int = 64,
    train_dropout: bool = True
) -> Model:
    """
    只在源域上训练

    每次迭代从全部源样本中无放回地抽取 batch_size 个，标签按 policy 的
    预训练范围编码，omega = 1。
    """
    sources = _as_sources(source_data)
    inputs = np.concatenate([s.inputs for s in sources])
    labels = np.concatenate([s.labels for s in sources])
    domains = np.concatenate([np.full(s.num_samples, d) for d, s in enumerate(sources)])
    num_classes = model.num_classes
    rows = min(batch_size, inputs.shape[0])

    logger.info(
        f"Pretraining on {inputs.shape[0]} source samples: {schedule.pretrain_iterations} iterations, "
        f"lr={schedule.pretrain_lr}, DSS_Pre={policy.pretrain.value}"
    )
    for it in range(schedule.pretrain_iterations):
        rng = np.random.default_rng(derive_seed(seed, "pretrain", it))
        idx = rng.choice(inputs.shape[0], size=rows, replace=False)
        batch = Batch(
            inputs=inputs[idx],
            targets=apply_policy_batch(policy, Phase.PRETRAIN, Domain.SOURCE, labels[idx], num_classes),
            weights=np.ones(rows),
            domains=domains[idx],
        )
        mask = _training_mask(model, rows, train_dropout, derive_seed(seed, "dropout", "pretrain", it))
        model, loss = train_step(model, batch, schedule.pretrain_lr, mask)
        logger.debug(f"pretrain iteration {it}: loss={loss:.6f}")

    return replace(model, seed_lineage=list(model.seed_lineage) + [int(seed)])


def adapt(
    model: Model,
    source_data: SourceData,
    target_inputs: np.ndarray,
    schedule: Schedule,
    policy: SmoothingPolicy,
    mcd: Optional[McdSettings] = None,
    batch: Optional[BatchSettings] = None,
    reweigh: ReweighMode = ReweighMode.DE_SL,
    seed: int = 0,
    train_dropout: bool = True,
    config_hash: str = "",
    uncertainty_cache: Optional[UncertaintyCache] = None,
    workers: int = 1
) -> Tuple[Model, RunReport]:
    """
    无监督适配循环

    Args:
        model: 预训练后的模型
        source_data: 一个或多个有标签的源域 (多个时每个 cycle 选一个)
        target_inputs: 目标域输入 (不含标签)
        schedule: cycle / step / 重采样周期 / 学习率
        policy: DSS 策略 (适配阶段范围)
        mcd: MCD 设置
        batch: 批次大小与 beta
        reweigh: 进入权重乘积的因子
        seed: 主种子
        train_dropout: 训练时是否使用 dropout
        config_hash: 写入报告
        uncertainty_cache: 可选的 (mu, sigma) 磁盘缓存
        workers: MCD 前向的并行线程数

    Returns:
        (适配后的模型, RunReport (只含 cycle 诊断，指标由调用方填写))
    """
    mcd = mcd or McdSettings()
    batch = batch or BatchSettings()
    sources = _as_sources(source_data)
    target_inputs = np.asarray(target_inputs, dtype=np.float64)
    if target_inputs.shape[0] == 0:
        raise EmptyDataError("target set is empty")
    num_classes = model.num_classes

    bins = BinIndex.from_source_labels([s.labels for s in sources], num_classes)
    sampler = MixedBatchSampler(bins, batch.size, batch.beta, seed)
    labeler = PseudoLabeler()
    report = RunReport(seed=seed, config_hash=config_hash, reweigh=reweigh, pretrain_snapshot_id=model.snapshot_id())

    logger.info(
        f"Adapting: {schedule.cycles} cycles x {schedule.steps} steps, resample every {schedule.resample_period}, "
        f"|M|={mcd.iterations}, batch={batch.size}, beta={sampler.beta}, reweigh={reweigh.value}, "
        f"DSS_Ada={policy.adapt.value}, source domains={len(sources)}"
    )

    for cycle in range(schedule.cycles):
        snapshot_id = model.snapshot_id()
        mcd_seed = derive_seed(seed, "mcd", cycle)
        if uncertainty_cache is not None:
            table = uncertainty_cache.extract(model, target_inputs, mcd.iterations, mcd.rate, mcd_seed)
        else:
            table = extract_uncertainty(model, target_inputs, mcd.iterations, mcd.rate, mcd_seed, workers=workers)

        domain = choose_source_domain(len(sources), cycle, seed)
        source = sources[domain]
        sampler.start_cycle()
        weights = WeightStatsAccumulator()
        resampling: List[ResampleDiagnostics] = []
        losses: List[float] = []
        state = None
        starved = False

        for step in range(schedule.steps):
            if step % schedule.resample_period == 0:
                state = labeler.build_state(table, derive_seed(seed, "resample", cycle, step))
                sampler.rebuild(state)
                resampling.append(ResampleDiagnostics(
                    cycle=cycle,
                    step=step,
                    disagreement=state.disagreement(),
                    fallback_count=state.fallback_count,
                    bin_occupancy=state.bin_occupancy(num_classes),
                ))

            try:
                plan = sampler.plan(domain, cycle, step)
            except StarvationError as e:
                logger.warning(f"Cycle {cycle} ended early at step {step}: {e}")
                starved = True
                break

            source_idx = plan.all_source_indices()
            target_idx = plan.all_target_indices()
            record = compute_weights(state, table, target_idx, reweigh)
            weights.add(record)

            mixed = Batch(
                inputs=np.vstack([source.inputs[source_idx], target_inputs[target_idx]]),
                targets=np.vstack([
                    apply_policy_batch(policy, Phase.ADAPT, Domain.SOURCE, source.labels[source_idx], num_classes),
                    apply_policy_batch(policy, Phase.ADAPT, Domain.TARGET, state.labels[target_idx], num_classes),
                ]),
                weights=assemble_weights(source_idx.size, record.omega),
                domains=np.concatenate([
                    np.full(source_idx.size, domain),
                    np.full(target_idx.size, TARGET_DOMAIN_TAG),
                ]),
            )
            mask = _training_mask(model, mixed.inputs.shape[0], train_dropout, derive_seed(seed, "dropout", cycle, step))
            model, loss = train_step(model, mixed, schedule.adapt_lr, mask)
            losses.append(loss)
            logger.debug(f"cycle {cycle} step {step}: loss={loss:.6f}")

        diagnostics = sampler.start_cycle()
        if diagnostics.shortfall_steps:
            logger.warning(
                f"Cycle {cycle}: {diagnostics.shortfall_steps} steps had fewer than {sampler.beta} eligible classes"
            )
        cycle_report = CycleDiagnostics(
            cycle=cycle,
            source_domain=domain,
            snapshot_id=snapshot_id,
            steps_run=len(losses),
            starved=starved,
            resample_events=len(resampling),
            mean_loss=float(np.mean(losses)) if losses else None,
            mean_sigma=float(table.std.mean()),
            eligible_classes_mean=diagnostics.eligible_mean(),
            shortfall_steps=diagnostics.shortfall_steps,
            replacement_fraction=diagnostics.replacement_fraction(),
            resampling=resampling,
            weights=weights.summary(),
        )
        report.cycles.append(cycle_report)
        logger.info(
            f"Cycle {cycle + 1}/{schedule.cycles}: domain={domain} steps={len(losses)} "
            f"sigma={cycle_report.mean_sigma:.4f} disagreement={resampling[-1].disagreement:.3f}"
        )

    model = replace(model, seed_lineage=list(model.seed_lineage) + [int(seed)])
    report.snapshot_id = model.snapshot_id()
    return model, report
