"""Synthetic guessing game with known conditional mode distributions.

An input holds four digits side by side; the target keeps exactly one of
them, chosen according to the input's category. Two forms share one
sampler: a vector form where each digit is a fixed 8-d anchor plus noise,
and an image form built from MNIST digits (28 x 112 composites).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

N_SLOTS = 4
AMBIGUOUS = -1
CATEGORY_NAMES = "ABCD"
IMAGE_SIZE = 28
ANCHOR_DIM = 8


@dataclass(frozen=True)
class Category:
    name: str
    digits: Tuple[int, int, int, int]
    probs: Tuple[float, float, float, float]


@dataclass(frozen=True)
class GuessingGameSpec:
    categories: Tuple[Category, ...] = (
        Category("A", (1, 2, 3, 4), (0.25, 0.25, 0.25, 0.25)),
        Category("B", (3, 4, 5, 6), (0.1, 0.4, 0.1, 0.4)),
        Category("C", (5, 6, 7, 8), (0.3, 0.5, 0.1, 0.1)),
        Category("D", (7, 8, 9, 0), (0.1, 0.1, 0.1, 0.7)),
    )

    def __post_init__(self):
        for c in self.categories:
            if len(c.digits) != N_SLOTS or len(c.probs) != N_SLOTS:
                raise ValueError(f"category {c.name}: need {N_SLOTS} digits and {N_SLOTS} mode probabilities")
            if abs(sum(c.probs) - 1.0) > 1e-12 or min(c.probs) < 0:
                raise ValueError(f"category {c.name}: mode probabilities must sum to 1")

    @property
    def digit_table(self) -> np.ndarray:
        return np.array([c.digits for c in self.categories], dtype=np.int64)

    @property
    def prob_table(self) -> np.ndarray:
        return np.array([c.probs for c in self.categories], dtype=np.float64)


DEFAULT_SPEC = GuessingGameSpec()


@dataclass
class SamplePair:
    x: np.ndarray
    y: np.ndarray
    meta: Dict[str, int] = field(default_factory=dict)


@dataclass
class SampleBatch:
    x: np.ndarray
    y: np.ndarray
    category: np.ndarray
    mode: np.ndarray

    def __len__(self) -> int:
        return len(self.category)

    def pair(self, i: int) -> SamplePair:
        return SamplePair(self.x[i], self.y[i], {"category": int(self.category[i]), "mode": int(self.mode[i])})


# digit banks ----------------------------------------------------------------------

def _hamming_weight4_words() -> np.ndarray:
    """The 14 weight-4 codewords of the extended [8,4,4] Hamming code (pairwise distance >= 4)."""
    gen = np.array([[1, 0, 0, 0, 1, 1, 0],
                    [0, 1, 0, 0, 1, 0, 1],
                    [0, 0, 1, 0, 0, 1, 1],
                    [0, 0, 0, 1, 1, 1, 1]])
    words = []
    for bits in product((0, 1), repeat=4):
        w = np.array(bits) @ gen % 2
        w = np.append(w, w.sum() % 2)
        if w.sum() == 4:
            words.append(w)
    return np.array(words, dtype=np.float64)


@dataclass
class DigitBank:
    """Per-digit sources of slot contents.

    ``kind == "vector"``: ``anchors`` is (10, 8), samples are anchor + N(0, noise^2), clipped to [0, 1].
    ``kind == "image"``: ``pools[d]`` is an (n_d, 28, 28) array of images of digit d.
    """
    kind: str
    anchors: Optional[np.ndarray] = None
    noise: float = 0.05
    pools: Optional[Dict[int, np.ndarray]] = None
    source_index: Optional[Dict[int, np.ndarray]] = None

    @classmethod
    def vector(cls, seed: int = 1234, noise: float = 0.05) -> "DigitBank":
        rng = np.random.Generator(np.random.PCG64(seed))
        words = _hamming_weight4_words()
        chosen = words[rng.permutation(len(words))[:10]]
        chosen = chosen[:, rng.permutation(ANCHOR_DIM)]
        return cls(kind="vector", anchors=chosen, noise=noise)

    @classmethod
    def from_images(cls, images: np.ndarray, labels: np.ndarray,
                    index: Optional[np.ndarray] = None) -> "DigitBank":
        index = np.arange(len(labels)) if index is None else np.asarray(index)
        pools, src = {}, {}
        for d in range(10):
            sel = index[labels[index] == d]
            pools[d] = images[sel].astype(np.float32)
            src[d] = sel
        return cls(kind="image", pools=pools, source_index=src)

    @property
    def slot_shape(self) -> tuple:
        return (ANCHOR_DIM,) if self.kind == "vector" else (IMAGE_SIZE, IMAGE_SIZE)

    @property
    def item_shape(self) -> tuple:
        if self.kind == "vector":
            return (N_SLOTS * ANCHOR_DIM,)
        return (1, IMAGE_SIZE, N_SLOTS * IMAGE_SIZE)


# MNIST IDX ----------------------------------------------------------------------------

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} at byte offset 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) < header + n:
        raise IdxFormatError(f"{path}: truncated data at byte offset {len(raw)}, expected {header + n} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> DigitBank:
    """Parse an IDX image/label file pair into an image DigitBank (pixels scaled to [0, 1])."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images_path}: {images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise IdxFormatError(f"{labels_path}: label {labels.max()} outside 0-9")
    return DigitBank.from_images(images.astype(np.float32) / 255.0, labels.astype(np.int64))


# sampling ------------------------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; all sampling draws from it in a fixed order."""
    return np.random.Generator(np.random.PCG64(seed))


def _draw_modes(spec: GuessingGameSpec, cats: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(spec.prob_table, axis=1)
    cdf[:, -1] = 1.0
    return np.minimum((u[:, None] >= cdf[cats]).sum(axis=1), N_SLOTS - 1)


def sample_batch(spec: GuessingGameSpec, bank: DigitBank, rng: np.random.Generator, n: int,
                 categories: Optional[Sequence[int]] = None) -> SampleBatch:
    """Draw ``n`` pairs: categories (uniform unless given), modes, then slot contents."""
    if categories is None:
        cats = rng.integers(0, len(spec.categories), size=n)
    else:
        cats = np.asarray(categories, dtype=np.int64)
        n = len(cats)
    modes = _draw_modes(spec, cats, rng.random(n))
    digits = spec.digit_table[cats]  # (n, 4)

    if bank.kind == "vector":
        content = bank.anchors[digits] + rng.normal(0.0, bank.noise, size=(n, N_SLOTS, ANCHOR_DIM))
        content = np.clip(content, 0.0, 1.0).astype(np.float32)
        y = np.zeros_like(content)
        rows = np.arange(n)
        y[rows, modes] = content[rows, modes]
        return SampleBatch(content.reshape(n, -1), y.reshape(n, -1), cats, modes)

    u = rng.random((n, N_SLOTS))
    slots = np.empty((n, N_SLOTS, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    for i in range(n):
        for s in range(N_SLOTS):
            pool = bank.pools[int(digits[i, s])]
            if len(pool) == 0:
                raise ValueError(f"digit bank has no images of digit {digits[i, s]}")
            slots[i, s] = pool[min(int(u[i, s] * len(pool)), len(pool) - 1)]
    y = np.zeros_like(slots)
    rows = np.arange(n)
    y[rows, modes] = slots[rows, modes]
    # lay the four digits out horizontally: (n, 1, 28, 112)
    x = slots.transpose(0, 2, 1, 3).reshape(n, 1, IMAGE_SIZE, N_SLOTS * IMAGE_SIZE)
    y = y.transpose(0, 2, 1, 3).reshape(n, 1, IMAGE_SIZE, N_SLOTS * IMAGE_SIZE)
    return SampleBatch(x, y, cats, modes)


def sample_pair(spec: GuessingGameSpec, bank: DigitBank, rng: np.random.Generator) -> SamplePair:
    return sample_batch(spec, bank, rng, 1).pair(0)


def ground_truth_labels(spec: GuessingGameSpec, x: np.ndarray, category: int):
    """All four possible targets for ``x`` with their true probabilities."""
    item = np.asarray(x)
    out = []
    for mode, p in enumerate(spec.categories[category].probs):
        y = np.zeros_like(item)
        sl = _slot_view(y)
        sl[..., mode, :] = _slot_view(item)[..., mode, :]
        out.append((y, p))
    return out


# output classification --------------------------------------------------------------------

def _slot_view(y: np.ndarray) -> np.ndarray:
    w = y.shape[-1]
    if w % N_SLOTS:
        raise ValueError(f"last axis {w} not divisible into {N_SLOTS} slots")
    return y.reshape(y.shape[:-1] + (N_SLOTS, w // N_SLOTS))


def slot_energies(y, item_ndim: Optional[int] = None) -> np.ndarray:
    """Sum of squares per slot; shape ``lead + (4,)`` for ``lead`` batch axes."""
    y = np.asarray(y, dtype=np.float64)
    item_ndim = y.ndim if item_ndim is None else item_ndim
    e = (_slot_view(y) ** 2).sum(axis=-1)  # lead + item[:-1] + (4,)
    extra = tuple(range(y.ndim - item_ndim, y.ndim - 1))
    return e.sum(axis=extra) if extra else e


def classify_modes(y, item_ndim: int, ratio: float = 2.0) -> np.ndarray:
    """Vectorised :func:`classify_output_mode`; ambiguous entries are ``AMBIGUOUS``."""
    e = slot_energies(y, item_ndim)
    order = np.sort(e, axis=-1)
    top, runner = order[..., -1], order[..., -2]
    mode = e.argmax(axis=-1)
    ambiguous = (top <= 0) | (top < ratio * runner)
    return np.where(ambiguous, AMBIGUOUS, mode)


def classify_output_mode(y_hat, x=None, spec: GuessingGameSpec = DEFAULT_SPEC, ratio: float = 2.0) -> int:
    """Mode (populated slot) of a single output, or ``AMBIGUOUS``."""
    y_hat = np.asarray(y_hat)
    return int(classify_modes(y_hat, y_hat.ndim, ratio))


def infer_category(x, spec: GuessingGameSpec, bank: DigitBank, meta: Optional[dict] = None) -> int:
    """Category of an input; nearest-anchor decoding for vectors, carried meta for images."""
    if bank.kind == "image":
        if meta is None or "category" not in meta:
            raise ValueError("infer_category: image inputs need the generator's meta")
        return int(meta["category"])
    slots = _slot_view(np.asarray(x, dtype=np.float64))
    if slots.shape != (N_SLOTS, ANCHOR_DIM):
        raise ValueError(f"infer_category: expected one vector input, got shape {np.shape(x)}")
    d = ((slots[:, None, :] - bank.anchors[None]) ** 2).sum(-1)
    digits = d.argmin(axis=1)
    # half the minimum anchor separation
    max_d = 0.25 * min(((a - b) ** 2).sum() for i, a in enumerate(bank.anchors) for b in bank.anchors[i + 1:])
    for s in range(N_SLOTS):
        if d[s, digits[s]] > max_d:
            raise ValueError(f"infer_category: slot {s} matches no digit anchor")
    table = spec.digit_table
    for k, row in enumerate(table):
        if np.array_equal(row, digits):
            return k
    first = int(np.argmin([(table[:, s] == digits[s]).any() for s in range(N_SLOTS)]))
    raise ValueError(f"infer_category: digits {tuple(int(v) for v in digits)} fit no category (slot {first})")
