"""Corpus ingestion and generation, payload bits, and seed derivation.

All randomness flows through explicitly seeded generators. Payload bits come
from a counter-based Philox stream so the same (seed, D, H, W) always yields
the same bits; everything else uses PCG64 seeded from derive_seed().
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import DataError, ValidationError

SPLIT_RATIOS = (0.7, 0.15, 0.15)
IMAGE_SUFFIXES = (".png", ".ppm")

FAMILY_TEXTURE = "tex"
FAMILY_GRADIENT = "grad"
FAMILY_SOLID = "solid"


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from any printable parts (hash-based, not order-free)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class Payload:
    """Random bit planes to hide: uint8 {0,1} of shape [D,H,W]."""

    bits: np.ndarray
    seed: int


def gen_payload(seed: int, depth: int, height: int, width: int) -> Payload:
    """i.i.d. fair bits from a counter-based generator; same seed, same bits."""
    if depth < 1:
        raise ValidationError(f"payload depth must be >= 1, got {depth}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    bits = rng.integers(0, 2, size=(depth, height, width), dtype=np.uint8)
    return Payload(bits=bits, seed=seed)


@dataclass
class SampleRecord:
    """One corpus image: id, pixels in [0,1] as float32 [3,H,W]."""

    id: str
    pixels: np.ndarray
    path: str = ""
    family: str = ""


@dataclass
class Corpus:
    samples: List[SampleRecord]
    source: str
    image_size: tuple
    train_idx: List[int] = field(default_factory=list)
    val_idx: List[int] = field(default_factory=list)
    test_idx: List[int] = field(default_factory=list)

    def train_samples(self) -> List[SampleRecord]:
        return [self.samples[i] for i in self.train_idx]

    def val_samples(self) -> List[SampleRecord]:
        return [self.samples[i] for i in self.val_idx]

    def test_samples(self) -> List[SampleRecord]:
        return [self.samples[i] for i in self.test_idx]

    def by_id(self, sample_id: str) -> SampleRecord:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise DataError(f"no sample with id {sample_id!r}")


def _assign_splits(n: int, seed: int) -> tuple:
    rng = np.random.default_rng(derive_seed(seed, "split"))
    order = rng.permutation(n)
    n_train = int(SPLIT_RATIOS[0] * n)
    n_val = int(SPLIT_RATIOS[1] * n)
    train = sorted(order[:n_train].tolist())
    val = sorted(order[n_train : n_train + n_val].tolist())
    test = sorted(order[n_train + n_val :].tolist())
    return train, val, test


def _finish(samples, source, size, seed) -> Corpus:
    train, val, test = _assign_splits(len(samples), seed)
    return Corpus(samples=samples, source=source, image_size=size,
                  train_idx=train, val_idx=val, test_idx=test)


# ----------------------------------------------------------------------
# synthetic corpus


def spatial_variance(pixels: np.ndarray) -> float:
    """Mean per-channel spatial variance; the texture measure the synthetic
    families are ordered by (channel-to-channel color offsets ignored)."""
    return float(np.mean([pixels[c].var() for c in range(pixels.shape[0])]))


def _texture_image(rng, h, w) -> np.ndarray:
    # heavily smoothed white noise: low-frequency blobs with the local
    # contrast of downsized natural photos. Spatial variance stays well above
    # the solid family's by construction.
    base = rng.random((3, h, w))
    img = np.stack([gaussian_filter(base[c], sigma=5.0, mode="wrap") for c in range(3)])
    lo, hi = img.min(), img.max()
    img = 0.30 + 0.40 * (img - lo) / max(hi - lo, 1e-9)
    return img.astype(np.float32)


def _gradient_image(rng, h, w) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * np.pi)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ramp = np.cos(theta) * xs / max(w - 1, 1) + np.sin(theta) * ys / max(h - 1, 1)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    a = rng.uniform(0.25, 0.75, size=3)
    b = rng.uniform(0.25, 0.75, size=3)
    img = a[:, None, None] + ramp[None] * (b - a)[:, None, None]
    return img.astype(np.float32)


def _solid_image(rng, h, w) -> np.ndarray:
    # flat color block with two small sharp noise patches; the flat field
    # makes structural similarity fragile, which is what puts these at the
    # hard end of the difficulty spectrum
    color = rng.uniform(0.3, 0.7, size=3)
    img = np.broadcast_to(color[:, None, None], (3, h, w)).copy()
    ph = pw = max(2, min(5, h // 6))
    for _ in range(2):
        py = int(rng.integers(0, h - ph + 1))
        px = int(rng.integers(0, w - pw + 1))
        patch = color[:, None, None] + rng.uniform(-0.25, 0.25, size=(3, ph, pw))
        img[:, py : py + ph, px : px + pw] = patch
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_corpus(n: int, size, seed: int) -> Corpus:
    """Generate the synthetic desk corpus: 50% textures, 25% gradients,
    25% solid blocks with a small patch. Family proportions are exact for
    n divisible by 4.
    """
    if n < 10:
        raise ValidationError(f"synthetic corpus needs n >= 10, got {n}")
    h, w = _as_size(size)
    n_tex = n // 2
    n_grad = n // 4
    n_solid = n - n_tex - n_grad
    samples = []
    for family, count, maker in (
        (FAMILY_TEXTURE, n_tex, _texture_image),
        (FAMILY_GRADIENT, n_grad, _gradient_image),
        (FAMILY_SOLID, n_solid, _solid_image),
    ):
        for i in range(count):
            rng = np.random.default_rng(derive_seed(seed, "synth", family, i))
            samples.append(SampleRecord(id=f"{family}{i:04d}", pixels=maker(rng, h, w),
                                        family=family))
    return _finish(samples, f"synthetic(n={n},seed={seed})", (h, w), seed)


# ----------------------------------------------------------------------
# directory corpus


def _as_size(size) -> tuple:
    if isinstance(size, int):
        return (size, size)
    h, w = int(size[0]), int(size[1])
    return (h, w)


def load_corpus(path, size, seed: int) -> Corpus:
    """Load PNG/PPM images from a directory: RGB, [0,1], bilinear-resized."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"corpus directory not found: {root}")
    h, w = _as_size(size)
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no PNG/PPM images in {root}")
    samples = []
    for p in files:
        try:
            with Image.open(p) as im:
                im = im.convert("RGB")
                if im.size != (w, h):
                    im = im.resize((w, h), Image.Resampling.BILINEAR)
                arr = np.asarray(im, dtype=np.float32) / 255.0
        except Exception as exc:
            raise DataError(f"cannot decode image {p}: {exc}") from exc
        samples.append(SampleRecord(id=p.stem, pixels=arr.transpose(2, 0, 1).copy(),
                                    path=str(p)))
    return _finish(samples, str(root), (h, w), seed)


def stack_pixels(samples: Sequence[SampleRecord]) -> np.ndarray:
    """[N,3,H,W] float32 batch from sample records."""
    return np.stack([s.pixels for s in samples])
