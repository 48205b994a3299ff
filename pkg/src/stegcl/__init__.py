"""Curriculum-learning training lab for encoder/decoder image steganography."""

__version__ = "0.1.0"

from .config import RunConfig
from .data import Corpus, Payload, SampleRecord, gen_payload, load_corpus, synth_corpus
from .difficulty import (DifficultyManifest, SampleScores, TeacherLadder, Thresholds,
                         classify, partition, score_sample, train_teachers)
from .knee import KneeReport, detect_knee
from .layers import BatchNormState, avg_pool2, batch_norm, conv2d, filter2d_valid
from .metrics import (MetricReport, bce, bit_accuracy, metric_report, ms_ssim, psnr,
                      rmse, ssim)
from .model import (LogRow, LossWeights, ModelConfig, StegoModel, composite_loss,
                    evaluate_model, train_epoch)
from .optim import Adam, AdamState, adam_step
from .scheduler import (ConvergeStop, CurriculumPlan, KneeStop, StagePolicy,
                        run_baseline, run_curriculum, run_subset, should_stop_stage)
from .steganalysis import (Detector, DetectorConfig, residual_frontend, score_corpus,
                           train_detector)
from .tensor import Tensor, concat_channels, leaky_relu, sigmoid
