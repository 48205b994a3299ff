"""Teacher-model difficulty scoring and the Easy/Medium/Hard partition.

A ladder of teacher models with strictly increasing training budgets (all
below the convergence budget) scores every sample: each teacher embeds a
fixed seeded payload, and the SSIM/PSNR of the resulting stego image against
the cover become the sample's scores. A sample is Easy when every teacher
scores it high on both metrics; Hard when any teacher scores it low on
either; Medium otherwise.
"""

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import encode_checkpoint
from .data import Corpus, SampleRecord, derive_seed, gen_payload, stack_pixels
from .errors import DataError, ValidationError
from .metrics import psnr, ssim
from .model import LossWeights, ModelConfig, StegoModel, train_epoch
from .optim import Adam

EASY = "Easy"
MEDIUM = "Medium"
HARD = "Hard"
LABELS = (EASY, MEDIUM, HARD)

SCORE_BATCH = 32


@dataclass
class Thresholds:
    """SSIM cutoffs (alpha) and PSNR cutoffs in dB (mu) for the partition."""

    alpha1: float = 0.9
    alpha2: float = 0.8
    mu1: float = 20.0
    mu2: float = 12.0

    def __post_init__(self):
        if not (self.alpha1 > self.alpha2):
            raise ValidationError(f"alpha1 must exceed alpha2 ({self.alpha1} vs {self.alpha2})")
        if not (self.mu1 > self.mu2):
            raise ValidationError(f"mu1 must exceed mu2 ({self.mu1} vs {self.mu2})")

    @classmethod
    def from_run_config(cls, cfg) -> "Thresholds":
        return cls(cfg.alpha1, cfg.alpha2, cfg.mu1, cfg.mu2)


@dataclass
class SampleScores:
    """Per-teacher SSIM and PSNR scores for one sample."""

    ssim: List[float]
    psnr: List[float]

    def __post_init__(self):
        if len(self.ssim) != len(self.psnr):
            raise ValidationError("ssim and psnr score lists must have equal length")
        if not all(np.isfinite(self.ssim)) or not all(np.isfinite(self.psnr)):
            raise ValidationError(f"scores must be finite: {self}")


@dataclass
class TeacherLadder:
    """Ordered teacher checkpoints with their epoch budgets."""

    checkpoints: List[Dict[str, np.ndarray]]
    budgets: tuple
    model_echo: dict

    def __post_init__(self):
        self.budgets = tuple(int(b) for b in self.budgets)
        if len(self.checkpoints) != len(self.budgets):
            raise ValidationError("one checkpoint per budget required")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for blobs in self.checkpoints:
            h.update(encode_checkpoint(blobs, self.model_echo))
        return h.hexdigest()[:16]

    def models(self, config: ModelConfig) -> List[StegoModel]:
        if config.echo() != self.model_echo:
            raise ValidationError(
                f"teacher ladder was built for {self.model_echo}, "
                f"requested model is {config.echo()}"
            )
        out = []
        for blobs in self.checkpoints:
            m = StegoModel(config)
            m.load_blobs(blobs)
            out.append(m)
        return out


def validate_budgets(budgets: Sequence[int], convergence_budget: int) -> tuple:
    budgets = tuple(int(b) for b in budgets)
    if not budgets:
        raise ValidationError("at least one teacher budget required")
    if any(b <= 0 for b in budgets):
        raise ValidationError(f"teacher budgets must be positive: {budgets}")
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValidationError(f"teacher budgets must be strictly increasing: {budgets}")
    if budgets[-1] >= convergence_budget:
        raise ValidationError(
            f"largest teacher budget {budgets[-1]} must stay below the "
            f"convergence budget {convergence_budget}"
        )
    return budgets


def train_teachers(corpus: Corpus, cfg, budgets: Optional[Sequence[int]] = None,
                   convergence_budget: Optional[int] = None) -> TeacherLadder:
    """Train one teacher per budget from independent seeded inits on the full
    training split; returns all checkpoints."""
    budgets = validate_budgets(budgets if budgets is not None else cfg.teacher_budgets,
                               convergence_budget if convergence_budget is not None
                               else cfg.convergence_budget)
    weights = LossWeights.from_run_config(cfg)
    pool = corpus.train_samples()
    val = corpus.val_samples()
    if not pool:
        raise ValidationError("corpus has no training samples")
    mc = ModelConfig.from_run_config(cfg)
    checkpoints = []
    for j, budget in enumerate(budgets, start=1):
        teacher_cfg = ModelConfig(**{**mc.__dict__, "seed": derive_seed(cfg.seed, "teacher", j)})
        model = StegoModel(teacher_cfg)
        optimizer = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        for epoch in range(1, budget + 1):
            train_epoch(model, optimizer, pool, val, weights,
                        batch_size=cfg.batch_size, seed=teacher_cfg.seed,
                        epoch=epoch, stage=0)
        checkpoints.append(model.blobs())
    return TeacherLadder(checkpoints=checkpoints, budgets=budgets, model_echo=mc.echo())


def score_sample(sample: SampleRecord, teachers: Sequence[StegoModel],
                 payload_seed: int) -> SampleScores:
    """Score one sample under every teacher with its fixed seeded payload."""
    s_list, p_list = [], []
    for model in teachers:
        stego = _encode_fixed(model, sample, payload_seed)
        s_list.append(float(ssim(sample.pixels, stego).item()))
        p_list.append(psnr(sample.pixels, stego))
    return SampleScores(ssim=s_list, psnr=p_list)


def _encode_fixed(model: StegoModel, sample: SampleRecord, payload_seed: int) -> np.ndarray:
    h, w = model.config.image_size
    d = model.config.payload_depth
    payload = gen_payload(derive_seed(payload_seed, "score-payload", sample.id), d, h, w)
    return model.encode(sample.pixels, payload, training=False).data


def classify(scores: SampleScores, t: Thresholds) -> str:
    """Easy: every teacher clears both high bars. Hard: any teacher falls to
    either low bar. Medium: everything between. The Easy and Hard conditions
    are mutually exclusive because alpha1 > alpha2 and mu1 > mu2."""
    s = np.asarray(scores.ssim)
    p = np.asarray(scores.psnr)
    if np.all((s >= t.alpha1) & (p >= t.mu1)):
        return EASY
    if np.any((s <= t.alpha2) | (p <= t.mu2)):
        return HARD
    return MEDIUM


@dataclass
class ManifestEntry:
    id: str
    path: str
    label: str
    scores: SampleScores


@dataclass
class DifficultyManifest:
    entries: List[ManifestEntry]
    thresholds: Thresholds
    ladder_fingerprint: str
    payload_seed: int
    _label_by_id: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._label_by_id = {e.id: e.label for e in self.entries}
        if len(self._label_by_id) != len(self.entries):
            raise ValidationError("manifest has duplicate sample ids")

    def label_of(self, sample_id: str) -> str:
        if sample_id not in self._label_by_id:
            raise DataError(f"sample {sample_id!r} is not in the manifest")
        return self._label_by_id[sample_id]

    def ids_with(self, labels) -> List[str]:
        wanted = set(labels)
        return [e.id for e in self.entries if e.label in wanted]

    def counts(self) -> Dict[str, int]:
        out = {label: 0 for label in LABELS}
        for e in self.entries:
            out[e.label] += 1
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.ladder_fingerprint.encode())
        h.update(repr((self.thresholds.alpha1, self.thresholds.alpha2,
                       self.thresholds.mu1, self.thresholds.mu2)).encode())
        h.update(str(self.payload_seed).encode())
        for e in self.entries:
            h.update(repr((e.id, e.label, e.scores.ssim, e.scores.psnr)).encode())
        return h.hexdigest()[:16]

    # ------------------------------------------------------------------

    def to_csv(self) -> str:
        n_teachers = len(self.entries[0].scores.ssim) if self.entries else 0
        header = ["id", "path", "label"]
        for j in range(1, n_teachers + 1):
            header += [f"s{j}", f"p{j}"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for e in self.entries:
            row = [e.id, e.path, e.label]
            for s, p in zip(e.scores.ssim, e.scores.psnr):
                row += [f"{s:.6f}", f"{p:.6f}"]
            writer.writerow(row)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path, thresholds: Optional[Thresholds] = None,
             ladder_fingerprint: str = "", payload_seed: int = 0) -> "DifficultyManifest":
        p = Path(path)
        if not p.is_file():
            raise DataError(f"manifest not found: {p}")
        with p.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or reader.fieldnames[:3] != ["id", "path", "label"]:
                raise DataError(f"manifest {p} has unexpected header {reader.fieldnames}")
            score_cols = [c for c in reader.fieldnames if c.startswith("s") and c[1:].isdigit()]
            entries = []
            for row in reader:
                if row["label"] not in LABELS:
                    raise DataError(f"manifest {p}: bad label {row['label']!r}")
                s = [float(row[f"s{j}"]) for j in range(1, len(score_cols) + 1)]
                q = [float(row[f"p{j}"]) for j in range(1, len(score_cols) + 1)]
                entries.append(ManifestEntry(row["id"], row["path"], row["label"],
                                             SampleScores(s, q)))
        return cls(entries=entries, thresholds=thresholds or Thresholds(),
                   ladder_fingerprint=ladder_fingerprint, payload_seed=payload_seed)


def partition(corpus: Corpus, ladder: TeacherLadder, thresholds: Thresholds,
              payload_seed: int, model_config: ModelConfig) -> DifficultyManifest:
    """Score and classify every corpus sample.

    Raises when the Easy subset comes out empty: Stage 1 would have nothing
    to train on, so the thresholds need loosening.
    """
    if not corpus.samples:
        raise ValidationError("cannot partition an empty corpus")
    teachers = ladder.models(model_config)
    h, w = model_config.image_size
    d = model_config.payload_depth

    # batched encode per teacher, per-sample metrics on the slices
    all_scores = [SampleScores([], []) for _ in corpus.samples]
    bits = np.stack([
        gen_payload(derive_seed(payload_seed, "score-payload", s.id), d, h, w).bits
        for s in corpus.samples
    ])
    for model in teachers:
        for start in range(0, len(corpus.samples), SCORE_BATCH):
            chunk = corpus.samples[start : start + SCORE_BATCH]
            covers = stack_pixels(chunk)
            stego = model.encode(covers, bits[start : start + len(chunk)],
                                 training=False).data
            for k, sample in enumerate(chunk):
                all_scores[start + k].ssim.append(float(ssim(covers[k], stego[k]).item()))
                all_scores[start + k].psnr.append(psnr(covers[k], stego[k]))

    entries = [
        ManifestEntry(s.id, s.path, classify(scores, thresholds), scores)
        for s, scores in zip(corpus.samples, all_scores)
    ]
    manifest = DifficultyManifest(entries=entries, thresholds=thresholds,
                                  ladder_fingerprint=ladder.fingerprint(),
                                  payload_seed=payload_seed)
    if manifest.counts()[EASY] == 0:
        raise ValidationError(
            "difficulty partition produced an empty Easy subset; Stage 1 would be "
            "untrainable. Loosen alpha1/mu1 (or train the teachers longer) and retry."
        )
    return manifest
