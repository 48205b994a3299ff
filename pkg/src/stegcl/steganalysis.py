"""Lightweight cover-vs-stego detector.

A fixed 5x5 high-pass residual filter (the classic KV kernel) runs over the
grayscale image; a small stack of conv + BN + LeakyReLU blocks, global
average pooling, and a sigmoid produce one score per image in [0,1], where 1
means "probably carries a payload". The detector only ever reads stego
images; it never feeds anything back into the steganography model.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .data import derive_seed
from .errors import ValidationError
from .layers import (BatchNormState, batch_norm, conv2d, global_avg_pool,
                     kaiming_uniform)
from .metrics import bce
from .model import LEAKY_SLOPE
from .optim import Adam
from .tensor import Tensor, leaky_relu, make_op, sigmoid

# Zero-sum high-pass residual kernel used throughout steganalysis front ends.
KV_KERNEL = np.array(
    [
        [-1,  2,  -2,  2, -1],
        [ 2, -6,   8, -6,  2],
        [-2,  8, -12,  8, -2],
        [ 2, -6,   8, -6,  2],
        [-1,  2,  -2,  2, -1],
    ],
    dtype=np.float64,
) / 12.0

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class DetectorConfig:
    conv_blocks: int = 3
    channels: int = 8
    seed: int = 0
    lr: float = 0.001
    epochs: int = 12
    batch_size: int = 16

    def __post_init__(self):
        if self.conv_blocks < 1:
            raise ValidationError("detector needs at least one conv block")

    def echo(self) -> dict:
        return {"conv_blocks": self.conv_blocks, "channels": self.channels,
                "detector": True}


def residual_frontend(images) -> np.ndarray:
    """Grayscale conversion then fixed KV high-pass filtering (same-size).

    Accepts [3,H,W] or [N,3,H,W]; returns [N,1,H,W] float32. Non-learnable.
    """
    arr = np.asarray(images, dtype=np.float32)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValidationError(f"residual_frontend expects RGB images, got {arr.shape}")
    gray = np.tensordot(GRAY_WEIGHTS.astype(np.float32), arr, axes=([0], [1]))[:, None]
    kernel = Tensor(KV_KERNEL.astype(np.float32)[None, None])
    out = conv2d(Tensor(gray), kernel, Tensor(np.zeros(1, dtype=np.float32))).data
    return out


class Detector:
    def __init__(self, config: DetectorConfig):
        self.config = config
        rng = np.random.default_rng(derive_seed(config.seed, "detector-init"))
        ch = config.channels
        self.blocks = []
        for i in range(config.conv_blocks):
            c_in = 1 if i == 0 else ch
            self.blocks.append({
                "kernel": Tensor(kaiming_uniform(rng, ch, c_in, 3), requires_grad=True),
                "bias": Tensor(np.zeros(ch, dtype=np.float32), requires_grad=True),
                "bn": BatchNormState.create(ch),
            })
        self.head_kernel = Tensor(kaiming_uniform(rng, 1, ch, 3), requires_grad=True)
        self.head_bias = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)

    def score(self, images, training: bool = False) -> Tensor:
        """Scores in [0,1], shape [N,1]; input is raw RGB images."""
        x = Tensor(residual_frontend(images))
        for blk in self.blocks:
            x = conv2d(x, blk["kernel"], blk["bias"])
            x = leaky_relu(batch_norm(x, blk["bn"], training), LEAKY_SLOPE)
        x = conv2d(x, self.head_kernel, self.head_bias)
        return sigmoid(global_avg_pool(x))

    def parameters(self) -> List[Tensor]:
        out = []
        for blk in self.blocks:
            out += [blk["kernel"], blk["bias"], blk["bn"].gamma, blk["bn"].beta]
        out += [self.head_kernel, self.head_bias]
        return out

    def blobs(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, blk in enumerate(self.blocks):
            out[f"blk{i}.kernel"] = blk["kernel"].data
            out[f"blk{i}.bias"] = blk["bias"].data
            out[f"blk{i}.bn.gamma"] = blk["bn"].gamma.data
            out[f"blk{i}.bn.beta"] = blk["bn"].beta.data
            out[f"blk{i}.bn.running_mean"] = blk["bn"].running_mean
            out[f"blk{i}.bn.running_var"] = blk["bn"].running_var
        out["head.kernel"] = self.head_kernel.data
        out["head.bias"] = self.head_bias.data
        return out

    def load_blobs(self, blobs: Dict[str, np.ndarray]):
        try:
            for i, blk in enumerate(self.blocks):
                blk["kernel"].data = blobs[f"blk{i}.kernel"].reshape(blk["kernel"].shape)
                blk["bias"].data = blobs[f"blk{i}.bias"]
                blk["bn"].gamma.data = blobs[f"blk{i}.bn.gamma"]
                blk["bn"].beta.data = blobs[f"blk{i}.bn.beta"]
                blk["bn"].running_mean = blobs[f"blk{i}.bn.running_mean"]
                blk["bn"].running_var = blobs[f"blk{i}.bn.running_var"]
            self.head_kernel.data = blobs["head.kernel"].reshape(self.head_kernel.shape)
            self.head_bias.data = blobs["head.bias"]
        except KeyError as exc:
            raise ValidationError(f"detector checkpoint is missing {exc}") from exc


def train_detector(covers: np.ndarray, stegos: np.ndarray,
                   config: DetectorConfig) -> Tuple[Detector, float]:
    """Train the binary classifier (label 1 = stego) with BCE.

    Returns the detector and its held-out accuracy on a 20% split.
    """
    covers = np.asarray(covers, dtype=np.float32)
    stegos = np.asarray(stegos, dtype=np.float32)
    if covers.ndim != 4 or stegos.ndim != 4:
        raise ValidationError("train_detector expects [N,3,H,W] cover and stego batches")
    n_c, n_s = len(covers), len(stegos)
    if n_c == 0 or n_s == 0:
        raise ValidationError("train_detector needs non-empty cover and stego sets")
    if max(n_c, n_s) > 10 * min(n_c, n_s):
        raise ValidationError(
            f"class imbalance too large: {n_c} covers vs {n_s} stegos (limit 10:1)"
        )
    images = np.concatenate([covers, stegos])
    labels = np.concatenate([np.zeros((n_c, 1), np.float32), np.ones((n_s, 1), np.float32)])

    rng = np.random.default_rng(derive_seed(config.seed, "detector-split"))
    order = rng.permutation(len(images))
    n_hold = max(2, len(images) // 5)
    hold, train = order[:n_hold], order[n_hold:]

    detector = Detector(config)
    optimizer = Adam(detector.parameters(), lr=config.lr)
    for epoch in range(config.epochs):
        ep_rng = np.random.default_rng(derive_seed(config.seed, "detector-epoch", epoch))
        shuffled = train[ep_rng.permutation(len(train))]
        for start in range(0, len(shuffled), config.batch_size):
            idx = shuffled[start : start + config.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs at least two spatial samples
            scores = detector.score(images[idx], training=True)
            loss = bce(scores, Tensor(labels[idx]))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

    held_scores = detector.score(images[hold], training=False).data
    accuracy = float(np.mean((held_scores >= 0.5) == (labels[hold] >= 0.5)))
    return detector, accuracy


def score_corpus(detector: Detector, images, ids: Sequence[str] | None = None):
    """Mean detector score over a corpus plus the per-image scores."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if len(arr) == 0:
        raise ValidationError("score_corpus: empty corpus")
    per_image = []
    for start in range(0, len(arr), 64):
        chunk = detector.score(arr[start : start + 64], training=False).data
        per_image.extend(float(v) for v in chunk.reshape(-1))
    if ids is None:
        ids = [str(i) for i in range(len(per_image))]
    return float(np.mean(per_image)), list(zip(ids, per_image))
