import numpy as np
import pytest

from stegcl.config import RunConfig
from stegcl.data import synth_corpus
from stegcl.difficulty import (DifficultyManifest, EASY, HARD, LABELS, ManifestEntry,
                               MEDIUM, SampleScores, TeacherLadder, Thresholds, classify,
                               partition, score_sample, train_teachers, validate_budgets)
from stegcl.errors import DataError, ValidationError
from stegcl.model import ModelConfig, StegoModel

T = Thresholds(alpha1=0.9, alpha2=0.8, mu1=20.0, mu2=12.0)


# ----------------------------------------------------------------------
# thresholds and budgets


def test_threshold_ordering_enforced():
    with pytest.raises(ValidationError):
        Thresholds(alpha1=0.8, alpha2=0.9, mu1=20, mu2=12)
    with pytest.raises(ValidationError):
        Thresholds(alpha1=0.9, alpha2=0.8, mu1=12, mu2=20)


def test_budget_validation():
    assert validate_budgets((5, 15, 30), 60) == (5, 15, 30)
    with pytest.raises(ValidationError, match="strictly increasing"):
        validate_budgets((15, 5, 30), 60)
    with pytest.raises(ValidationError, match="below the convergence"):
        validate_budgets((5, 15, 60), 60)
    with pytest.raises(ValidationError):
        validate_budgets((), 60)


# ----------------------------------------------------------------------
# classification (the partition rule)


def test_all_teachers_high_is_easy():
    scores = SampleScores(ssim=[0.95, 0.95, 0.95], psnr=[25.0, 25.0, 25.0])
    assert classify(scores, T) == EASY


def test_one_low_ssim_is_hard():
    scores = SampleScores(ssim=[0.95, 0.7, 0.95], psnr=[25.0, 25.0, 25.0])
    assert classify(scores, T) == HARD


def test_one_low_psnr_is_hard():
    scores = SampleScores(ssim=[0.95, 0.95, 0.95], psnr=[25.0, 11.0, 25.0])
    assert classify(scores, T) == HARD


def test_between_bands_is_medium():
    scores = SampleScores(ssim=[0.85, 0.85, 0.85], psnr=[18.0, 18.0, 18.0])
    assert classify(scores, T) == MEDIUM


def test_mixed_high_and_middle_is_medium():
    # not all high (fails Easy), none at or below the low bars (not Hard)
    scores = SampleScores(ssim=[0.95, 0.85, 0.95], psnr=[25.0, 25.0, 25.0])
    assert classify(scores, T) == MEDIUM


def test_boundary_values():
    # >= for Easy bars, <= for Hard bars
    assert classify(SampleScores([0.9, 0.9, 0.9], [20.0, 20.0, 20.0]), T) == EASY
    assert classify(SampleScores([0.8, 0.9, 0.9], [25.0, 25.0, 25.0]), T) == HARD


LABEL_RANK = {EASY: 0, MEDIUM: 1, HARD: 2}


def test_classify_grid_properties():
    # exhaustive grid of 10^4+ synthetic score triples: exactly one label,
    # monotone under single-score improvement
    ssim_grid = np.linspace(0.7, 1.0, 10)
    psnr_grid = np.linspace(8.0, 28.0, 10)
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(10000):
        s = rng.choice(ssim_grid, size=3)
        p = rng.choice(psnr_grid, size=3)
        scores = SampleScores(list(s), list(p))
        label = classify(scores, T)
        assert label in LABELS
        # improve one random score; the label must never get harder
        j = int(rng.integers(0, 3))
        if rng.random() < 0.5:
            improved = SampleScores(list(np.minimum(1.0, s + (j == np.arange(3)) * 0.1)),
                                    list(p))
        else:
            improved = SampleScores(list(s), list(p + (j == np.arange(3)) * 5.0))
        assert LABEL_RANK[classify(improved, T)] <= LABEL_RANK[label]
        checked += 1
    assert checked == 10000


def test_threshold_monotonicity_on_subset_sizes():
    # raising alpha1 never grows Easy; lowering alpha2 never grows Hard
    rng = np.random.default_rng(23)
    triples = [SampleScores(list(rng.uniform(0.7, 1.0, 3)), list(rng.uniform(8, 28, 3)))
               for _ in range(500)]

    def count(label, t):
        return sum(classify(sc, t) == label for sc in triples)

    easy_sizes = [count(EASY, Thresholds(a1, 0.75, 20, 12))
                  for a1 in (0.8, 0.85, 0.9, 0.95)]
    assert all(a >= b for a, b in zip(easy_sizes, easy_sizes[1:]))

    hard_sizes = [count(HARD, Thresholds(0.95, a2, 20, 12))
                  for a2 in (0.9, 0.85, 0.8, 0.76)]
    assert all(a >= b for a, b in zip(hard_sizes, hard_sizes[1:]))


def test_easy_and_hard_mutually_exclusive():
    # under alpha1 > alpha2, mu1 > mu2 no score triple satisfies both rules
    rng = np.random.default_rng(5)
    for _ in range(2000):
        s = rng.uniform(0.7, 1.0, 3)
        p = rng.uniform(8.0, 28.0, 3)
        easy = np.all((s >= T.alpha1) & (p >= T.mu1))
        hard = np.any((s <= T.alpha2) | (p <= T.mu2))
        assert not (easy and hard)


# ----------------------------------------------------------------------
# teacher training and scoring on a tiny setup


def _tiny_cfg():
    return RunConfig(image_size=16, corpus_n=16, hidden_channels=4, encoder_layers=2,
                     decoder_layers=2, batch_size=4, seed=21,
                     teacher_budgets=(1, 2, 3), convergence_budget=6,
                     stage1_cap=4, stage2_cap=4, stage3_cap=4, total_budget=12,
                     knee_min_epochs=2)


@pytest.fixture(scope="module")
def tiny_ladder():
    cfg = _tiny_cfg()
    corpus = synth_corpus(cfg.corpus_n, cfg.image_size, cfg.seed)
    ladder = train_teachers(corpus, cfg)
    return cfg, corpus, ladder


def test_train_teachers_structure(tiny_ladder):
    cfg, corpus, ladder = tiny_ladder
    assert len(ladder.checkpoints) == 3
    assert ladder.budgets == (1, 2, 3)
    # independent seeds: distinct parameter sets
    k0 = ladder.checkpoints[0]["enc0.kernel"]
    k1 = ladder.checkpoints[1]["enc0.kernel"]
    assert not np.array_equal(k0, k1)


def test_train_teachers_rejects_bad_budgets(tiny_ladder):
    cfg, corpus, _ = tiny_ladder
    with pytest.raises(ValidationError):
        train_teachers(corpus, cfg, budgets=(3, 2, 1))
    with pytest.raises(ValidationError):
        train_teachers(corpus, cfg, budgets=(1, 2, 3), convergence_budget=3)


def test_score_sample_deterministic(tiny_ladder):
    cfg, corpus, ladder = tiny_ladder
    teachers = ladder.models(ModelConfig.from_run_config(cfg))
    sample = corpus.samples[0]
    a = score_sample(sample, teachers, payload_seed=7)
    b = score_sample(sample, teachers, payload_seed=7)
    assert a == b
    assert len(a.ssim) == 3 and len(a.psnr) == 3


def test_identity_teacher_scores_perfect(tiny_ladder):
    cfg, corpus, _ = tiny_ladder

    class IdentityTeacher:
        config = ModelConfig.from_run_config(_tiny_cfg())

        def encode(self, cover, payload, training=False):
            from stegcl.tensor import Tensor
            return Tensor(np.asarray(cover))

    scores = score_sample(corpus.samples[0], [IdentityTeacher()], payload_seed=1)
    assert scores.ssim[0] == pytest.approx(1.0, abs=1e-9)
    assert scores.psnr[0] == 100.0


def test_ladder_config_mismatch_rejected(tiny_ladder):
    cfg, corpus, ladder = tiny_ladder
    other = ModelConfig(image_size=(16, 16), payload_depth=1, encoder_layers=2,
                        decoder_layers=2, hidden_channels=8, seed=21)
    with pytest.raises(ValidationError, match="ladder"):
        ladder.models(other)


# ----------------------------------------------------------------------
# partition and manifest


@pytest.fixture(scope="module")
def tiny_manifest(tiny_ladder):
    cfg, corpus, ladder = tiny_ladder
    # thresholds tuned to the untrained-ish tiny teachers so all three
    # subsets are plausible; partition only requires Easy to be non-empty
    t = Thresholds(alpha1=0.05, alpha2=0.01, mu1=6.0, mu2=4.0)
    return partition(corpus, ladder, t, payload_seed=3,
                     model_config=ModelConfig.from_run_config(cfg))


def test_partition_is_exhaustive_and_disjoint(tiny_manifest, tiny_ladder):
    _, corpus, _ = tiny_ladder
    ids = [e.id for e in tiny_manifest.entries]
    assert sorted(ids) == sorted(s.id for s in corpus.samples)
    assert all(e.label in LABELS for e in tiny_manifest.entries)


def test_partition_deterministic(tiny_ladder):
    cfg, corpus, ladder = tiny_ladder
    t = Thresholds(alpha1=0.05, alpha2=0.01, mu1=6.0, mu2=4.0)
    mc = ModelConfig.from_run_config(cfg)
    a = partition(corpus, ladder, t, 3, mc)
    b = partition(corpus, ladder, t, 3, mc)
    assert a.to_csv() == b.to_csv()
    assert a.fingerprint() == b.fingerprint()


def test_partition_empty_easy_guidance(tiny_ladder):
    cfg, corpus, ladder = tiny_ladder
    impossible = Thresholds(alpha1=0.9999, alpha2=0.9998, mu1=99.0, mu2=98.0)
    with pytest.raises(ValidationError, match="[Ll]oosen"):
        partition(corpus, ladder, impossible, 3, ModelConfig.from_run_config(cfg))


def test_manifest_fingerprint_sensitivity(tiny_ladder, tiny_manifest):
    cfg, corpus, ladder = tiny_ladder
    mc = ModelConfig.from_run_config(cfg)
    base = tiny_manifest.fingerprint()
    t = Thresholds(alpha1=0.05, alpha2=0.01, mu1=6.0, mu2=4.0)
    # different payload seed
    assert partition(corpus, ladder, t, 4, mc).fingerprint() != base
    # different thresholds (same labels or not, fingerprint must move)
    t2 = Thresholds(alpha1=0.051, alpha2=0.01, mu1=6.0, mu2=4.0)
    assert partition(corpus, ladder, t2, 3, mc).fingerprint() != base


def test_manifest_csv_roundtrip(tmp_path, tiny_manifest):
    path = tmp_path / "manifest.csv"
    tiny_manifest.save(path)
    header = path.read_text().splitlines()[0]
    assert header == "id,path,label,s1,p1,s2,p2,s3,p3"
    loaded = DifficultyManifest.load(path)
    assert [e.id for e in loaded.entries] == [e.id for e in tiny_manifest.entries]
    assert [e.label for e in loaded.entries] == [e.label for e in tiny_manifest.entries]
    # scores preserved at 6 decimals
    for a, b in zip(loaded.entries, tiny_manifest.entries):
        assert a.scores.ssim == pytest.approx(b.scores.ssim, abs=1e-6)


def test_manifest_label_lookup(tiny_manifest):
    first = tiny_manifest.entries[0]
    assert tiny_manifest.label_of(first.id) == first.label
    with pytest.raises(DataError):
        tiny_manifest.label_of("no-such-sample")


def test_manifest_counts_sum(tiny_manifest):
    counts = tiny_manifest.counts()
    assert sum(counts.values()) == len(tiny_manifest.entries)


def test_manifest_load_rejects_bad_label(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,path,label,s1,p1\nx,,Impossible,0.5,10.0\n")
    with pytest.raises(DataError, match="label"):
        DifficultyManifest.load(path)
