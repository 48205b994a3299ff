"""Command-line surface for the whole experiment matrix.

Commands: train-teachers, partition, train (stcl | baseline | subset),
evaluate, steganalyze, detect-knee. Every command is a pure function of its
config file, flags, seed, and input files; reruns with the same inputs
produce byte-identical CSV outputs. Outputs land under --out and existing
outputs are never overwritten without --force.

Exit codes: 0 success, 1 no-knee (detect-knee only), 2 validation error,
3 data error, 4 numeric failure.
"""

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_override
from .data import derive_seed, gen_payload, load_corpus, stack_pixels, synth_corpus
from .difficulty import (DifficultyManifest, LABELS, TeacherLadder, Thresholds,
                         partition, train_teachers)
from .errors import DataError, StegclError, ValidationError
from .knee import detect_knee, difference_curve
from .metrics import MetricReport
from .model import LossWeights, ModelConfig, StegoModel, evaluate_model
from .scheduler import (CurriculumPlan, run_baseline, run_curriculum, run_subset,
                        write_knee_report, write_training_log)
from .steganalysis import Detector, DetectorConfig, score_corpus, train_detector

SUBSET_CHOICES = {
    "easy": ("Easy",),
    "medium": ("Medium",),
    "hard": ("Hard",),
    "easy+medium": ("Easy", "Medium"),
}


# ----------------------------------------------------------------------
# shared helpers


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, value = parse_override(item)
        overrides[key] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "corpus", None):
        overrides["corpus_path"] = args.corpus
    return cfg.with_overrides(overrides) if overrides else cfg


def _corpus(cfg: RunConfig):
    if cfg.corpus_path:
        return load_corpus(cfg.corpus_path, cfg.image_size, cfg.seed)
    return synth_corpus(cfg.corpus_n, cfg.image_size, cfg.seed)


def _prepare_dir(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValidationError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _prepare_file(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not force:
        raise ValidationError(f"output file {out} exists (use --force)")
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _save_model(path, model: StegoModel, extra: dict | None = None):
    echo = dict(model.config.echo())
    echo["kind"] = "stego-model"
    if extra:
        echo["meta"] = extra
    save_checkpoint(path, model.blobs(), echo)


def _load_model(path, cfg: RunConfig) -> StegoModel:
    echo, blobs = load_checkpoint(path)
    mc = ModelConfig.from_run_config(cfg)
    expected = mc.echo()
    stored = {k: echo.get(k) for k in expected}
    if stored != expected:
        raise ValidationError(
            f"checkpoint {path} was written for {stored}, current config is {expected}"
        )
    model = StegoModel(mc)
    model.load_blobs(blobs)
    return model


def _write_run_config(out_dir: Path, cfg: RunConfig):
    (out_dir / "run_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    )


# ----------------------------------------------------------------------
# train-teachers


def cmd_train_teachers(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_dir(args.out, args.force)
    corpus = _corpus(cfg)
    ladder = train_teachers(corpus, cfg)
    files = []
    for j, blobs in enumerate(ladder.checkpoints, start=1):
        echo = dict(ladder.model_echo)
        echo["kind"] = "stego-model"
        echo["meta"] = {"teacher": j, "budget": ladder.budgets[j - 1]}
        path = out / f"teacher_{j}.ckpt"
        save_checkpoint(path, blobs, echo)
        files.append(path.name)
    (out / "ladder.json").write_text(json.dumps({
        "budgets": list(ladder.budgets),
        "files": files,
        "fingerprint": ladder.fingerprint(),
        "model_echo": ladder.model_echo,
    }, indent=2, sort_keys=True) + "\n")
    _write_run_config(out, cfg)
    print(f"trained {len(files)} teachers with budgets {list(ladder.budgets)}")
    print(f"ladder fingerprint {ladder.fingerprint()}")
    return 0


def _load_ladder(teachers_dir) -> TeacherLadder:
    root = Path(teachers_dir)
    meta_path = root / "ladder.json"
    if not meta_path.is_file():
        raise DataError(f"no ladder.json in {root}")
    meta = json.loads(meta_path.read_text())
    checkpoints = []
    for name in meta["files"]:
        _, blobs = load_checkpoint(root / name)
        checkpoints.append(blobs)
    return TeacherLadder(checkpoints=checkpoints, budgets=tuple(meta["budgets"]),
                         model_echo=meta["model_echo"])


# ----------------------------------------------------------------------
# partition


def cmd_partition(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_file(args.out, args.force)
    corpus = _corpus(cfg)
    ladder = _load_ladder(args.teachers)
    payload_seed = derive_seed(cfg.seed, "scoring")
    manifest = partition(corpus, ladder, Thresholds.from_run_config(cfg),
                         payload_seed, ModelConfig.from_run_config(cfg))
    manifest.save(out)
    meta = {
        "fingerprint": manifest.fingerprint(),
        "ladder_fingerprint": manifest.ladder_fingerprint,
        "payload_seed": payload_seed,
        "thresholds": {"alpha1": cfg.alpha1, "alpha2": cfg.alpha2,
                       "mu1": cfg.mu1, "mu2": cfg.mu2},
        "counts": manifest.counts(),
    }
    out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    counts = manifest.counts()
    print("subset sizes: " + ", ".join(f"{k}={counts[k]}" for k in LABELS))
    print(f"manifest fingerprint {manifest.fingerprint()}")
    return 0


# ----------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_dir(args.out, args.force)
    corpus = _corpus(cfg)
    weights = LossWeights.from_run_config(cfg)

    if args.mode == "baseline":
        if args.manifest:
            print("warning: --manifest is ignored in baseline mode", file=sys.stderr)
        budget = args.budget or cfg.total_budget
        result = run_baseline(corpus, cfg, budget, weights)
    else:
        if not args.manifest:
            raise ValidationError(f"--manifest is required for mode {args.mode}")
        manifest = DifficultyManifest.load(args.manifest)
        if args.mode == "stcl":
            plan = CurriculumPlan.from_run_config(cfg)
            result = run_curriculum(corpus, manifest, plan, cfg, weights)
        else:
            if not args.subset:
                raise ValidationError("--subset is required for mode subset")
            labels = SUBSET_CHOICES[args.subset]
            budget = args.budget or cfg.total_budget
            result = run_subset(corpus, manifest, labels, cfg, budget, weights)

    write_training_log(result.log, out / "training_log.csv")
    if args.mode == "stcl":
        for outcome in result.stages:
            path = out / f"stage{outcome.stage}.ckpt"
            echo = dict(result.model.config.echo())
            echo["kind"] = "stego-model"
            echo["meta"] = {"stage": outcome.stage, "mode": "stcl"}
            save_checkpoint(path, outcome.checkpoint, echo)
            write_knee_report(outcome.report, out / f"knee_stage{outcome.stage}.csv")
            last = outcome.rows[-1]
            print(f"stage {outcome.stage}: {len(outcome.rows)} epochs, "
                  f"stopped by {outcome.report.triggered_by}, "
                  f"val psnr {last.psnr:.3f} dB, val ssim {last.ssim:.5f}")
    _save_model(out / "final.ckpt", result.model, {"mode": args.mode})
    _write_run_config(out, cfg)
    print(f"consumed_epochs={result.consumed_epochs}")
    return 0


# ----------------------------------------------------------------------
# evaluate


def _histograms(images: np.ndarray) -> np.ndarray:
    """[N,3,H,W] in [0,1] -> three 256-bin counts (one per channel)."""
    q = np.clip(np.round(images * 255.0), 0, 255).astype(np.int64)
    return np.stack([np.bincount(q[:, c].reshape(-1), minlength=256) for c in range(3)])


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_file(args.out, args.force)
    corpus = _corpus(cfg)
    model = _load_model(args.checkpoint, cfg)
    test = corpus.test_samples()
    if not test:
        raise DataError("corpus test split is empty")

    rows = []
    _, overall = evaluate_model(model, test, cfg.seed, payload_tag="eval-payload")
    rows.append(("overall", len(test), overall))
    if args.manifest:
        manifest = DifficultyManifest.load(args.manifest)
        for label in LABELS:
            subset = [s for s in test if manifest.label_of(s.id) == label]
            if subset:
                _, rep = evaluate_model(model, subset, cfg.seed, payload_tag="eval-payload")
                rows.append((label, len(subset), rep))
            else:
                rows.append((label, 0, None))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subset", "n", "ssim", "msssim", "psnr", "rmse", "accuracy"])
    for name, n, rep in rows:
        if rep is None:
            writer.writerow([name, 0, "", "", "", "", ""])
        else:
            writer.writerow([name, n, f"{rep.ssim:.6f}", f"{rep.msssim:.6f}",
                             f"{rep.psnr:.6f}", f"{rep.rmse:.6f}", f"{rep.accuracy:.6f}"])
    out.write_text(buf.getvalue())

    # Fig-style pixel histograms of covers vs stegos over the test split
    covers = stack_pixels(test)
    h, w = model.config.image_size
    bits = np.stack([
        gen_payload(derive_seed(cfg.seed, "eval-payload", s.id),
                    model.config.payload_depth, h, w).bits
        for s in test
    ])
    stego = model.encode(covers, bits, training=False).data
    hist_c = _histograms(covers)
    hist_s = _histograms(stego)
    hist_path = out.with_name(out.stem + "_histograms.csv")
    hbuf = io.StringIO()
    hw = csv.writer(hbuf, lineterminator="\n")
    hw.writerow(["bin", "cover_r", "cover_g", "cover_b", "stego_r", "stego_g", "stego_b"])
    for b in range(256):
        hw.writerow([b, *hist_c[:, b].tolist(), *hist_s[:, b].tolist()])
    hist_path.write_text(hbuf.getvalue())

    for name, n, rep in rows:
        if rep is not None:
            print(f"{name}: n={n} ssim={rep.ssim:.5f} msssim={rep.msssim:.5f} "
                  f"psnr={rep.psnr:.3f} rmse={rep.rmse:.5f} acc={rep.accuracy:.4f}")
        else:
            print(f"{name}: n=0")
    return 0


# ----------------------------------------------------------------------
# steganalyze


def _stegos_for(model: StegoModel, samples, cfg: RunConfig) -> np.ndarray:
    h, w = model.config.image_size
    covers = stack_pixels(samples)
    bits = np.stack([
        gen_payload(derive_seed(cfg.seed, "analysis-payload", s.id),
                    model.config.payload_depth, h, w).bits
        for s in samples
    ])
    return model.encode(covers, bits, training=False).data


def cmd_steganalyze(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_dir(args.out, args.force)
    if getattr(args, "covers", None):
        cfg = cfg.with_overrides({"corpus_path": args.covers})
    corpus = _corpus(cfg)
    det_cfg = DetectorConfig(conv_blocks=cfg.detector_blocks, channels=cfg.detector_channels,
                             seed=cfg.seed, lr=cfg.detector_lr, epochs=cfg.detector_epochs,
                             batch_size=cfg.detector_batch)

    if args.detector:
        echo, blobs = load_checkpoint(args.detector)
        detector = Detector(det_cfg)
        detector.load_blobs(blobs)
        print(f"loaded detector from {args.detector}")
    else:
        train_model = _load_model(args.stego_model[0], cfg)
        train_samples = corpus.train_samples()
        covers = stack_pixels(train_samples)
        stegos = _stegos_for(train_model, train_samples, cfg)
        detector, held_acc = train_detector(covers, stegos, det_cfg)
        save_checkpoint(out / "detector.ckpt", detector.blobs(), det_cfg.echo())
        print(f"trained detector on {args.stego_model[0]} stegos, "
              f"held-out accuracy {held_acc:.3f}")

    test = corpus.test_samples()
    summary = []
    for ckpt in args.stego_model:
        model = _load_model(ckpt, cfg)
        stegos = _stegos_for(model, test, cfg)
        mean, per_image = score_corpus(detector, stegos, [s.id for s in test])
        name = Path(ckpt).stem
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "score"])
        for sid, score in per_image:
            writer.writerow([sid, f"{score:.6f}"])
        writer.writerow(["mean", f"{mean:.6f}"])
        (out / f"scores_{name}.csv").write_text(buf.getvalue())
        summary.append((name, mean))
        print(f"{name}: mean steganalysis score {mean:.4f}")

    sbuf = io.StringIO()
    sw = csv.writer(sbuf, lineterminator="\n")
    sw.writerow(["model", "mean_score"])
    for name, mean in summary:
        sw.writerow([name, f"{mean:.6f}"])
    (out / "summary.csv").write_text(sbuf.getvalue())
    return 0


# ----------------------------------------------------------------------
# detect-knee


def cmd_detect_knee(args) -> int:
    path = Path(args.log)
    if not path.is_file():
        raise DataError(f"log file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or args.column not in reader.fieldnames:
            raise DataError(
                f"column {args.column!r} not in log; available: {reader.fieldnames}"
            )
        rows = list(reader)
    if args.stage is not None:
        rows = [r for r in rows if r.get("stage") == str(args.stage)]
        if not rows:
            raise DataError(f"no rows with stage == {args.stage}")
    try:
        series = [float(r[args.column]) for r in rows]
    except ValueError as exc:
        raise DataError(f"column {args.column!r} has non-numeric values: {exc}") from exc

    idx = detect_knee(series, args.window, args.sensitivity, args.min_epochs)
    curve = difference_curve(series, args.window)
    if args.out:
        out = _prepare_file(args.out, args.force)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "value", "difference"])
        for i, v in enumerate(series):
            d = "" if curve is None else f"{curve[i]:.6f}"
            writer.writerow([i, f"{v:.6f}", d])
        out.write_text(buf.getvalue())
    if idx is None:
        print("no knee")
        return 1
    print(f"knee at index {idx} (epoch column value {rows[idx]['epoch']})"
          if "epoch" in rows[idx] else f"knee at index {idx}")
    return 0


# ----------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stegcl",
        description="Curriculum-learning steganography lab: teacher-scored difficulty "
                    "partitioning, knee-point staged training, evaluation, and a "
                    "steganalysis check, all seeded and reproducible.",
    )
    parser.add_argument("--version", action="version",
                        version=f"stegcl {__version__} (checkpoint format v{FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="flat JSON config; omitted keys use defaults")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable; flags win over file)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--corpus", help="override corpus directory (default: synthetic)")
        if needs_out:
            p.add_argument("--out", required=True, help="output path (never overwritten "
                           "without --force)")
        p.add_argument("--force", action="store_true", help="allow overwriting outputs")

    p = sub.add_parser("train-teachers", help="train the teacher ladder (one model per "
                       "budget, strictly increasing budgets)")
    common(p)
    p.set_defaults(func=cmd_train_teachers)

    p = sub.add_parser("partition", help="score every sample under every teacher and "
                       "write the Easy/Medium/Hard manifest CSV")
    common(p)
    p.add_argument("--teachers", required=True, help="directory written by train-teachers")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="train the steganography model")
    common(p)
    p.add_argument("--mode", required=True, choices=["stcl", "baseline", "subset"])
    p.add_argument("--manifest", help="difficulty manifest (required for stcl/subset)")
    p.add_argument("--subset", choices=sorted(SUBSET_CHOICES),
                   help="difficulty pool for mode=subset")
    p.add_argument("--budget", type=int,
                   help="epoch budget for baseline/subset (default: total_budget)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metric report over the test split, overall and "
                       "per difficulty label, plus cover/stego pixel histograms")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="adds one report row per difficulty label")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("steganalyze", help="train (or load) the analog detector and "
                       "score stego corpora per checkpoint")
    common(p)
    p.add_argument("--stego-model", action="append", required=True,
                   help="stego model checkpoint to score (repeatable; the first one "
                        "also provides detector training stegos)")
    p.add_argument("--detector", help="reuse a saved detector checkpoint")
    p.add_argument("--covers", help="cover corpus directory (default: config corpus)")
    p.set_defaults(func=cmd_steganalyze)

    p = sub.add_parser("detect-knee", help="offline knee detection on a saved log column")
    p.add_argument("--log", required=True, help="training log CSV")
    p.add_argument("--column", default="val_loss")
    p.add_argument("--stage", type=int, help="restrict to rows of one stage")
    p.add_argument("--window", type=int, default=5, help="odd smoothing window")
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.add_argument("--min-epochs", type=int, default=10)
    p.add_argument("--out", help="write index/value/difference CSV here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_detect_knee)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StegclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
