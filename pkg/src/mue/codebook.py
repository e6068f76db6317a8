"""Finite latent code set: nearest-neighbour quantization, straight-through
gradient, commitment penalty and EMA code updates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import as_tensor, make_result

SeedLike = Union[int, np.random.Generator, None]


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class QuantizeResult:
    index: int
    code: np.ndarray
    distance_sq: float


@dataclass
class CodeBook:
    codes: np.ndarray
    ema_count: np.ndarray
    ema_sum: np.ndarray
    decay: float = 0.99
    eps: float = 1e-5
    active_threshold: float = 1e-3
    usage: np.ndarray = field(default=None)
    updates: int = 0
    frozen: bool = False

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.float32)
        self.ema_count = np.ascontiguousarray(self.ema_count, dtype=np.float32)
        self.ema_sum = np.ascontiguousarray(self.ema_sum, dtype=np.float32)
        if self.usage is None:
            self.usage = np.zeros(len(self.codes), dtype=np.int64)
        if self.codes.ndim != 2 or self.ema_sum.shape != self.codes.shape \
                or self.ema_count.shape != (self.codes.shape[0],):
            raise ValueError("CodeBook: inconsistent array shapes")
        if not (0.0 <= self.decay < 1.0) or self.eps <= 0:
            raise ValueError(f"CodeBook: need 0 <= decay < 1 and eps > 0, got {self.decay}, {self.eps}")

    @property
    def n_codes(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def reset_usage(self) -> None:
        self.usage[:] = 0

    def copy(self) -> "CodeBook":
        return CodeBook(self.codes.copy(), self.ema_count.copy(), self.ema_sum.copy(), self.decay,
                        self.eps, self.active_threshold, self.usage.copy(), self.updates, self.frozen)


def init_from_stats(posterior_outputs, n_codes: int, seed: SeedLike = 0, decay: float = 0.99,
                    eps: float = 1e-5) -> CodeBook:
    """Draw ``n_codes`` i.i.d. normal codes matching the per-dimension mean/std of a batch."""
    e = np.asarray(posterior_outputs, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ValueError(f"init_from_stats: need a batch of at least 2 vectors, got shape {e.shape}")
    mu = e.mean(axis=0)
    sigma = e.std(axis=0, ddof=1)
    codes = mu + sigma * _rng(seed).standard_normal((n_codes, e.shape[1]))
    return CodeBook(codes=codes, ema_count=np.zeros(n_codes), ema_sum=codes.copy(), decay=decay, eps=eps)


def squared_distances(e: np.ndarray, codes: np.ndarray) -> np.ndarray:
    # direct differences rather than the |a|^2 - 2ab + |b|^2 expansion: exact ties stay ties
    diff = e[:, None, :].astype(np.float64) - codes[None, :, :]
    return np.einsum("bkc,bkc->bk", diff, diff)


def quantize_batch(e, book: CodeBook, track_usage: bool = True):
    """Nearest code for each row of ``e``; returns (indices, codes, squared distances)."""
    e = np.asarray(e)
    if e.ndim != 2 or e.shape[1] != book.dim:
        raise ValueError(f"quantize: expected vectors of length {book.dim}, got shape {e.shape}")
    if not np.all(np.isfinite(e)):
        raise ValueError("quantize: input contains NaN/Inf")
    e64 = e.astype(np.float64)
    c64 = book.codes.astype(np.float64)
    e2 = (e64 * e64).sum(axis=1, keepdims=True)
    c2 = (c64 * c64).sum(axis=1)
    approx = e2 - 2.0 * (e64 @ c64.T) + c2
    best = approx.min(axis=1, keepdims=True)
    # rows whose runner-up is within rounding of the best get an exact recount
    tol = 1e-9 * (e2 + c2.max()) + 1e-300
    close = (approx <= best + tol).sum(axis=1) > 1
    idx = approx.argmin(axis=1)
    for r in np.flatnonzero(close):
        d = squared_distances(e64[r:r + 1], c64)[0]
        idx[r] = int(d.argmin())  # first minimum wins ties
    diff = e64 - c64[idx]
    dist = (diff * diff).sum(axis=1)
    if track_usage and not book.frozen:
        np.add.at(book.usage, idx, 1)
    return idx, book.codes[idx], dist


def quantize(e, book: CodeBook) -> QuantizeResult:
    e = np.asarray(e)
    if e.ndim != 1:
        raise ValueError(f"quantize: expected a single vector, got shape {e.shape}")
    idx, code, dist = quantize_batch(e[None], book)
    return QuantizeResult(int(idx[0]), code[0].copy(), float(dist[0]))


def straight_through(e, code) -> Tensor:
    """Forward value ``code``; backward copies the incoming gradient to ``e`` unchanged."""
    e = as_tensor(e)
    code = np.asarray(code.data if isinstance(code, Tensor) else code, dtype=e.data.dtype)
    if code.shape != e.shape:
        raise ValueError(f"straight_through: code shape {code.shape} != e shape {e.shape}")
    return make_result(code.copy(), (e,), lambda g: (g,), "straight_through")


def commitment_loss(e, code, beta: float = 0.25) -> Tensor:
    """``beta * sum_j (e_j - c_j)^2`` with ``code`` held constant; batches are averaged."""
    if beta <= 0:
        raise ValueError(f"commitment_loss: beta must be positive, got {beta}")
    e = as_tensor(e)
    c = np.asarray(code.data if isinstance(code, Tensor) else code, dtype=e.data.dtype)
    d2 = ops.square(ops.sub(e, Tensor(c)))
    if e.ndim == 1:
        return ops.mul(ops.sum(d2), beta)
    return ops.mul(ops.mean(ops.sum(d2, axis=-1)), beta)


def smoothed_counts(book: CodeBook) -> np.ndarray:
    n = float(book.ema_count.sum())
    k = book.n_codes
    return (book.ema_count.astype(np.float64) + book.eps) / (n + k * book.eps) * n


def ema_update(book: CodeBook, indices, vectors) -> CodeBook:
    """Move assigned codes toward the running mean of their assigned vectors.

    The running averages are zero-debiased: the effective decay at update
    ``t`` is ``decay * (1 - decay**(t-1)) / (1 - decay**t)``, which equals 0 on
    the first update and approaches ``decay``. The initial statistics thus
    never leak into the codes.
    """
    if book.frozen:
        raise RuntimeError("ema_update: codebook is frozen")
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    vectors = np.asarray(vectors, dtype=np.float64).reshape(len(indices), -1) if len(indices) else \
        np.zeros((0, book.dim))
    if vectors.shape[1] != book.dim:
        raise ValueError(f"ema_update: vectors have length {vectors.shape[1]}, codes {book.dim}")
    counts = np.bincount(indices, minlength=book.n_codes).astype(np.float64)
    sums = np.zeros((book.n_codes, book.dim))
    np.add.at(sums, indices, vectors)

    g = book.decay
    t = book.updates + 1
    g_t = g * (1.0 - g ** (t - 1)) / (1.0 - g ** t) if g > 0 else 0.0
    book.ema_count = (g_t * book.ema_count + (1.0 - g_t) * counts).astype(np.float32)
    book.ema_sum = (g_t * book.ema_sum + (1.0 - g_t) * sums).astype(np.float32)
    book.updates = t

    live = book.ema_count >= book.active_threshold
    if np.any(live):
        smoothed = smoothed_counts(book)
        book.codes[live] = (book.ema_sum[live] / smoothed[live, None]).astype(np.float32)
    return book


def reseed_dead_codes(book: CodeBook, recent_es, threshold: float = 1e-3,
                      seed: SeedLike = 0) -> CodeBook:
    """Replace codes whose EMA count fell below ``threshold`` with random pool vectors."""
    pool = np.asarray(recent_es, dtype=np.float32)
    if pool.ndim != 2 or len(pool) == 0:
        raise ValueError("reseed_dead_codes: empty pool")
    if book.frozen:
        raise RuntimeError("reseed_dead_codes: codebook is frozen")
    dead = np.flatnonzero(book.ema_count < threshold)
    if dead.size:
        picks = pool[_rng(seed).integers(0, len(pool), size=dead.size)]
        book.codes[dead] = picks
        book.ema_sum[dead] = picks
        book.ema_count[dead] = 1.0
    return book


def active_code_count(book: CodeBook, min_usage: int = 1) -> int:
    return int(np.count_nonzero(book.usage >= min_usage))
