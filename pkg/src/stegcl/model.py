"""Encoder/decoder steganography network and its training loop.

The encoder takes the cover image with the payload bit planes concatenated
in depth (3+D input channels) through a stack of 3x3 conv + BN + LeakyReLU
blocks; the final block swaps BN+LeakyReLU for a sigmoid so stego pixels stay
in [0,1]. The decoder mirrors the design and emits D probability planes.

Loss: w_encode * [w_ssim*(1-SSIM) + w_msssim*(1-MSSSIM) + w_rmse*RMSE]
      + w_decode * BCE, with the exact metric functions evaluation uses.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .data import Payload, SampleRecord, derive_seed, gen_payload, stack_pixels
from .errors import NumericError, ValidationError
from .layers import BatchNormState, batch_norm, conv2d, kaiming_uniform
from .metrics import (MetricReport, bce, bit_accuracy, metric_report, ms_ssim,
                      per_sample_reports, psnr, rmse, ssim)
from .optim import Adam
from .tensor import Tensor, as_tensor, concat_channels, leaky_relu, make_op, sigmoid

LEAKY_SLOPE = 0.01


@dataclass
class ModelConfig:
    image_size: tuple = (32, 32)
    payload_depth: int = 1
    encoder_layers: int = 9
    decoder_layers: int = 5
    hidden_channels: int = 32
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.image_size, int):
            self.image_size = (self.image_size, self.image_size)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        if self.encoder_layers < 2 or self.decoder_layers < 2:
            raise ValidationError("encoder_layers and decoder_layers must be >= 2")
        if self.payload_depth < 1:
            raise ValidationError("payload_depth must be >= 1")

    @classmethod
    def from_run_config(cls, cfg) -> "ModelConfig":
        return cls(
            image_size=cfg.image_size,
            payload_depth=cfg.payload_depth,
            encoder_layers=cfg.encoder_layers,
            decoder_layers=cfg.decoder_layers,
            hidden_channels=cfg.hidden_channels,
            seed=cfg.seed,
        )

    def echo(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "payload_depth": self.payload_depth,
            "encoder_layers": self.encoder_layers,
            "decoder_layers": self.decoder_layers,
            "hidden_channels": self.hidden_channels,
        }


@dataclass
class LossWeights:
    w_ssim: float = 0.5
    w_msssim: float = 0.5
    w_rmse: float = 0.3
    w_encode: float = 1.0
    w_decode: float = 0.7

    def __post_init__(self):
        if min(self.w_ssim, self.w_msssim, self.w_rmse, self.w_encode, self.w_decode) < 0:
            raise ValidationError(f"loss weights must be >= 0: {self}")

    @classmethod
    def from_run_config(cls, cfg) -> "LossWeights":
        return cls(cfg.w_ssim, cfg.w_msssim, cfg.w_rmse, cfg.w_encode, cfg.w_decode)


class _Block:
    """3x3 conv followed by BN+LeakyReLU, or by sigmoid on the last layer."""

    def __init__(self, rng, c_in: int, c_out: int, final: bool, dtype):
        self.kernel = Tensor(kaiming_uniform(rng, c_out, c_in, 3, dtype=dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.final = final
        self.bn = None if final else BatchNormState.create(c_out, dtype=dtype)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        x = conv2d(x, self.kernel, self.bias)
        if self.final:
            return sigmoid(x)
        return leaky_relu(batch_norm(x, self.bn, training), LEAKY_SLOPE)

    def params(self) -> List[Tensor]:
        if self.final:
            return [self.kernel, self.bias]
        return [self.kernel, self.bias, self.bn.gamma, self.bn.beta]

    def blobs(self, prefix: str) -> dict:
        out = {f"{prefix}.kernel": self.kernel.data, f"{prefix}.bias": self.bias.data}
        if self.bn is not None:
            out[f"{prefix}.bn.gamma"] = self.bn.gamma.data
            out[f"{prefix}.bn.beta"] = self.bn.beta.data
            out[f"{prefix}.bn.running_mean"] = self.bn.running_mean
            out[f"{prefix}.bn.running_var"] = self.bn.running_var
        return out

    def load_blobs(self, prefix: str, blobs: dict, dtype):
        self.kernel.data = blobs[f"{prefix}.kernel"].astype(dtype).reshape(self.kernel.shape)
        self.bias.data = blobs[f"{prefix}.bias"].astype(dtype).reshape(self.bias.shape)
        if self.bn is not None:
            self.bn.gamma.data = blobs[f"{prefix}.bn.gamma"].astype(dtype)
            self.bn.beta.data = blobs[f"{prefix}.bn.beta"].astype(dtype)
            self.bn.running_mean = blobs[f"{prefix}.bn.running_mean"].astype(dtype)
            self.bn.running_var = blobs[f"{prefix}.bn.running_var"].astype(dtype)


def _stack(rng, c_in: int, hidden: int, c_out: int, n_layers: int, dtype) -> List[_Block]:
    blocks = []
    for i in range(n_layers):
        ci = c_in if i == 0 else hidden
        co = c_out if i == n_layers - 1 else hidden
        blocks.append(_Block(rng, ci, co, final=(i == n_layers - 1), dtype=dtype))
    return blocks


def _squeeze0(t: Tensor) -> Tensor:
    return make_op("squeeze0", t.data[0], (t,), lambda g: (g[None],))


class StegoModel:
    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(derive_seed(config.seed, "model-init"))
        d = config.payload_depth
        h = config.hidden_channels
        self.encoder = _stack(rng, 3 + d, h, 3, config.encoder_layers, dtype)
        self.decoder = _stack(rng, 3, h, d, config.decoder_layers, dtype)

    # ------------------------------------------------------------------

    def _coerce_image(self, image, channels: int, what: str):
        t = as_tensor(image)
        squeeze = t.ndim == 3
        if squeeze:
            t = _unsqueeze(t)
        if t.ndim != 4 or t.shape[1] != channels:
            raise ValidationError(f"{what}: expected [{channels},H,W] or [N,{channels},H,W], "
                                  f"got {tuple(as_tensor(image).shape)}")
        return t, squeeze

    def encode(self, cover, payload, training: bool = False) -> Tensor:
        """Embed payload bits into the cover; returns the stego image in [0,1]."""
        cover_t, squeeze = self._coerce_image(cover, 3, "encode cover")
        bits = payload.bits if isinstance(payload, Payload) else payload
        bits = np.asarray(bits)
        if bits.ndim == 3:
            bits = bits[None]
        d = self.config.payload_depth
        n, _, h, w = cover_t.shape
        if bits.shape != (n, d, h, w):
            raise ValidationError(
                f"encode: payload shape {tuple(bits.shape)} does not match cover "
                f"batch {(n, d, h, w)}"
            )
        x = concat_channels(cover_t, Tensor(bits.astype(self.dtype)))
        for block in self.encoder:
            x = block.forward(x, training)
        return _squeeze0(x) if squeeze else x

    def decode(self, stego, training: bool = False) -> Tensor:
        """Recover payload bit probabilities from a stego image."""
        x, squeeze = self._coerce_image(stego, 3, "decode stego")
        for block in self.decoder:
            x = block.forward(x, training)
        return _squeeze0(x) if squeeze else x

    # ------------------------------------------------------------------

    def parameters(self) -> List[Tensor]:
        out = []
        for block in self.encoder + self.decoder:
            out.extend(block.params())
        return out

    def blobs(self) -> dict:
        out = {}
        for i, block in enumerate(self.encoder):
            out.update(block.blobs(f"enc{i}"))
        for i, block in enumerate(self.decoder):
            out.update(block.blobs(f"dec{i}"))
        return out

    def load_blobs(self, blobs: dict):
        try:
            for i, block in enumerate(self.encoder):
                block.load_blobs(f"enc{i}", blobs, self.dtype)
            for i, block in enumerate(self.decoder):
                block.load_blobs(f"dec{i}", blobs, self.dtype)
        except KeyError as exc:
            raise ValidationError(f"checkpoint is missing parameter {exc}") from exc


def _unsqueeze(t: Tensor) -> Tensor:
    return make_op("unsqueeze0", t.data[None], (t,), lambda g: (g[0],))


def composite_loss(cover, stego, payload_bits, probs, weights: LossWeights) -> Tensor:
    """Differentiable training loss; raises NumericError on NaN."""
    encode_term = (
        weights.w_ssim * (1.0 - ssim(cover, stego))
        + weights.w_msssim * (1.0 - ms_ssim(cover, stego))
        + weights.w_rmse * rmse(cover, stego)
    )
    target = payload_bits.bits if isinstance(payload_bits, Payload) else payload_bits
    decode_term = bce(probs, as_tensor(np.asarray(target, dtype=np.float32)))
    loss = weights.w_encode * encode_term + weights.w_decode * decode_term
    if not math.isfinite(loss.item()):
        raise NumericError(f"composite_loss is not finite: {loss.item()}")
    return loss


@dataclass
class LogRow:
    """One epoch of the training log (CSV columns in order)."""

    epoch: int
    stage: int
    train_loss: float
    val_loss: float
    ssim: float
    msssim: float
    psnr: float
    rmse: float
    accuracy: float

    FIELDS = ("epoch", "stage", "train_loss", "val_loss",
              "ssim", "msssim", "psnr", "rmse", "accuracy")


def _batch_payloads(samples: Sequence[SampleRecord], depth: int, h: int, w: int,
                    seed_parts) -> np.ndarray:
    bits = [gen_payload(derive_seed(*seed_parts, s.id), depth, h, w).bits for s in samples]
    return np.stack(bits)


def evaluate_model(model: StegoModel, samples: Sequence[SampleRecord], seed: int,
                   weights: Optional[LossWeights] = None, payload_tag: str = "eval-payload"):
    """Eval-mode metrics averaged per sample, plus the composite loss if
    weights are given. Payloads are fixed per (seed, tag, sample id)."""
    if not samples:
        raise ValidationError("evaluate_model: empty sample list")
    h, w = model.config.image_size
    d = model.config.payload_depth
    covers = stack_pixels(samples)
    bits = _batch_payloads(samples, d, h, w, (seed, payload_tag))
    stego = model.encode(covers, bits, training=False)
    probs = model.decode(stego, training=False)

    reports = per_sample_reports(covers, stego, probs, bits)
    mean_report = MetricReport(
        ssim=float(np.mean([r.ssim for r in reports])),
        msssim=float(np.mean([r.msssim for r in reports])),
        psnr=float(np.mean([r.psnr for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        accuracy=float(np.mean([r.accuracy for r in reports])),
    )
    loss_value = None
    if weights is not None:
        loss_value = composite_loss(covers, stego, bits, probs, weights).item()
    return loss_value, mean_report


def train_epoch(model: StegoModel, optimizer: Adam, pool: Sequence[SampleRecord],
                val_samples: Sequence[SampleRecord], weights: LossWeights, *,
                batch_size: int, seed: int, epoch: int, stage: int = 0) -> LogRow:
    """One pass over the pool: seeded shuffle, fresh payload per sample, one
    Adam step per batch; returns the epoch log row with validation metrics.
    """
    if not pool:
        raise ValidationError("train_epoch: empty training pool")
    h, w = model.config.image_size
    d = model.config.payload_depth
    rng = np.random.default_rng(derive_seed(seed, "shuffle", stage, epoch))
    order = rng.permutation(len(pool))

    losses = []
    for start in range(0, len(pool), batch_size):
        batch = [pool[i] for i in order[start : start + batch_size]]
        covers = stack_pixels(batch)
        bits = _batch_payloads(batch, d, h, w, (seed, "train-payload", epoch))
        stego = model.encode(covers, bits, training=True)
        probs = model.decode(stego, training=True)
        loss = composite_loss(covers, stego, bits, probs, weights)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())

    val_loss, report = evaluate_model(model, val_samples, seed, weights,
                                      payload_tag="val-payload")
    return LogRow(
        epoch=epoch,
        stage=stage,
        train_loss=float(np.mean(losses)),
        val_loss=float(val_loss),
        ssim=report.ssim,
        msssim=report.msssim,
        psnr=report.psnr,
        rmse=report.rmse,
        accuracy=report.accuracy,
    )
