"""Three-stage curriculum scheduling with knee stops, plus the random baseline.

Stage 1 trains on the Easy pool until a knee fires on the smoothed validation
loss; Stage 2 adds Medium and trains to its knee; Stage 3 trains on the full
set to convergence. Parameters carry over between stages, Adam state does
not. The baseline shuffles the full training pool for an equal epoch budget
under the same seed discipline.
"""

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .difficulty import DifficultyManifest, LABELS
from .errors import DataError, ValidationError
from .knee import (KneeReport, TRIGGER_CAP, TRIGGER_CONVERGE, TRIGGER_KNEE,
                   detect_knee, difference_curve)
from .model import LogRow, LossWeights, ModelConfig, StegoModel, train_epoch
from .optim import Adam


@dataclass
class KneeStop:
    min_epochs: int = 10
    smoothing_window: int = 5
    sensitivity: float = 1.0


@dataclass
class ConvergeStop:
    patience: int = 10
    min_delta: float = 1e-4


StopRule = Union[KneeStop, ConvergeStop]


@dataclass
class StagePolicy:
    pool: tuple            # difficulty labels included in this stage
    stop_rule: StopRule
    epoch_cap: int

    def __post_init__(self):
        self.pool = tuple(self.pool)
        unknown = [p for p in self.pool if p not in LABELS]
        if unknown:
            raise ValidationError(f"unknown difficulty labels in pool: {unknown}")
        if isinstance(self.stop_rule, KneeStop):
            if self.stop_rule.min_epochs >= self.epoch_cap:
                raise ValidationError("knee min_epochs must be below the stage epoch_cap")
            w = self.stop_rule.smoothing_window
            if w < 1 or w % 2 == 0:
                raise ValidationError("smoothing_window must be odd and >= 1")


@dataclass
class CurriculumPlan:
    stages: List[StagePolicy]
    total_budget: int

    def __post_init__(self):
        if not self.stages:
            raise ValidationError("plan needs at least one stage")
        if sum(s.epoch_cap for s in self.stages) > self.total_budget:
            raise ValidationError("sum of stage caps exceeds total_budget")
        seen = set()
        for s in self.stages:
            if not seen.issubset(set(s.pool)):
                raise ValidationError("stage pools must be non-decreasing supersets")
            seen |= set(s.pool)

    @classmethod
    def from_run_config(cls, cfg) -> "CurriculumPlan":
        knee = lambda: KneeStop(cfg.knee_min_epochs, cfg.knee_smoothing_window,
                                cfg.knee_sensitivity)
        return cls(
            stages=[
                StagePolicy(("Easy",), knee(), cfg.stage1_cap),
                StagePolicy(("Easy", "Medium"), knee(), cfg.stage2_cap),
                StagePolicy(("Easy", "Medium", "Hard"),
                            ConvergeStop(cfg.converge_patience, cfg.converge_min_delta),
                            cfg.stage3_cap),
            ],
            total_budget=cfg.total_budget,
        )


def should_stop_stage(stage_rows: Sequence[LogRow], policy: StagePolicy):
    """Stop decision for the epochs logged so far in one stage.

    Returns (stop, KneeReport or None); the report names what fired.
    """
    series = [r.val_loss for r in stage_rows]
    n = len(series)
    window = policy.stop_rule.smoothing_window if isinstance(policy.stop_rule, KneeStop) else 1
    curve = difference_curve(series, window)
    curve_list = [] if curve is None else [float(v) for v in curve]

    if isinstance(policy.stop_rule, KneeStop):
        idx = detect_knee(series, policy.stop_rule.smoothing_window,
                          policy.stop_rule.sensitivity, policy.stop_rule.min_epochs)
        if idx is not None:
            return True, KneeReport(idx, curve_list, TRIGGER_KNEE)
        if n >= policy.epoch_cap:
            return True, KneeReport(None, curve_list, TRIGGER_CAP)
        return False, None

    best, best_at = np.inf, -1
    for i, v in enumerate(series):
        if v < best - policy.stop_rule.min_delta:
            best, best_at = v, i
    if n - 1 - best_at >= policy.stop_rule.patience:
        return True, KneeReport(None, curve_list, TRIGGER_CONVERGE)
    if n >= policy.epoch_cap:
        return True, KneeReport(None, curve_list, TRIGGER_CAP)
    return False, None


@dataclass
class StageOutcome:
    stage: int
    pool_labels: tuple
    rows: List[LogRow]
    report: KneeReport
    checkpoint: Dict[str, np.ndarray]


@dataclass
class TrainResult:
    model: StegoModel
    log: List[LogRow]
    stages: List[StageOutcome] = field(default_factory=list)

    @property
    def consumed_epochs(self) -> int:
        return len(self.log)


def _make_model(cfg) -> StegoModel:
    mc = ModelConfig.from_run_config(cfg)
    return StegoModel(mc)


def _pool_for(labels, manifest: DifficultyManifest, train_samples):
    wanted = set(labels)
    pool = [s for s in train_samples if manifest.label_of(s.id) in wanted]
    return pool


def run_curriculum(corpus, manifest: DifficultyManifest, plan: CurriculumPlan,
                   cfg, weights: Optional[LossWeights] = None) -> TrainResult:
    """Full staged run. Every stage pool must be non-empty before any
    training happens; each stage snapshots a checkpoint on exit."""
    weights = weights or LossWeights.from_run_config(cfg)
    train_samples = corpus.train_samples()
    val_samples = corpus.val_samples()
    pools = []
    for policy in plan.stages:
        pool = _pool_for(policy.pool, manifest, train_samples)
        if not pool:
            raise ValidationError(
                f"stage pool {policy.pool} has no training samples; "
                "loosen the difficulty thresholds or regenerate the manifest"
            )
        pools.append(pool)

    model = _make_model(cfg)
    result = TrainResult(model=model, log=[])
    consumed = 0
    for stage_num, (policy, pool) in enumerate(zip(plan.stages, pools), start=1):
        optimizer = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        cap = min(policy.epoch_cap, plan.total_budget - consumed)
        effective = StagePolicy(policy.pool, policy.stop_rule, max(cap, 1))
        rows: List[LogRow] = []
        report = KneeReport(None, [], TRIGGER_CAP)
        for _ in range(effective.epoch_cap):
            row = train_epoch(model, optimizer, pool, val_samples, weights,
                              batch_size=cfg.batch_size, seed=cfg.seed,
                              epoch=consumed + 1, stage=stage_num)
            rows.append(row)
            result.log.append(row)
            consumed += 1
            stop, rep = should_stop_stage(rows, effective)
            if stop:
                report = rep
                break
        result.stages.append(StageOutcome(stage_num, policy.pool, rows, report,
                                          model.blobs()))
    return result


def run_baseline(corpus, cfg, budget: int,
                 weights: Optional[LossWeights] = None) -> TrainResult:
    """Random-shuffle training on the full train split for a fixed budget."""
    return _run_pool(corpus, corpus.train_samples(), cfg, budget, weights)


def run_subset(corpus, manifest: DifficultyManifest, labels, cfg, budget: int,
               weights: Optional[LossWeights] = None) -> TrainResult:
    """Train only on the given difficulty labels (ablation mode)."""
    pool = _pool_for(labels, manifest, corpus.train_samples())
    if not pool:
        raise ValidationError(f"subset {labels} has no training samples")
    return _run_pool(corpus, pool, cfg, budget, weights)


def _run_pool(corpus, pool, cfg, budget, weights) -> TrainResult:
    weights = weights or LossWeights.from_run_config(cfg)
    if budget < 1:
        raise ValidationError(f"epoch budget must be >= 1, got {budget}")
    if not pool:
        raise ValidationError("empty training pool")
    model = _make_model(cfg)
    result = TrainResult(model=model, log=[])
    optimizer = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    val_samples = corpus.val_samples()
    for epoch in range(1, budget + 1):
        row = train_epoch(model, optimizer, pool, val_samples, weights,
                          batch_size=cfg.batch_size, seed=cfg.seed,
                          epoch=epoch, stage=0)
        result.log.append(row)
    result.stages.append(StageOutcome(0, ("Easy", "Medium", "Hard"), result.log,
                                      KneeReport(None, [], TRIGGER_CAP), model.blobs()))
    return result


# ----------------------------------------------------------------------
# TrainingLog CSV


def write_training_log(rows: Sequence[LogRow], path) -> None:
    Path(path).write_text(format_training_log(rows))


def format_training_log(rows: Sequence[LogRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LogRow.FIELDS)
    for r in rows:
        writer.writerow([
            r.epoch, r.stage,
            f"{r.train_loss:.6f}", f"{r.val_loss:.6f}",
            f"{r.ssim:.6f}", f"{r.msssim:.6f}", f"{r.psnr:.6f}",
            f"{r.rmse:.6f}", f"{r.accuracy:.6f}",
        ])
    return buf.getvalue()


def read_training_log(path) -> List[dict]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"training log not found: {p}")
    with p.open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_knee_report(report: KneeReport, path) -> None:
    buf = io.StringIO()
    buf.write(f"triggered_by,{report.triggered_by}\n")
    buf.write(f"knee_epoch,{'' if report.knee_epoch is None else report.knee_epoch}\n")
    buf.write("index,difference\n")
    for i, v in enumerate(report.difference_curve):
        buf.write(f"{i},{v:.6f}\n")
    Path(path).write_text(buf.getvalue())
