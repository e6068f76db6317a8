"""Prior encoder, posterior encoder and decoder around a shared codebook.

The prior encoder maps ``x`` to skip features plus logits over the codes;
the posterior encoder maps ``(x, y)`` to a continuous vector that is snapped
to its nearest code during training. The decoder only sees the code through
one tile-and-concatenate at a single level, everything else comes from the
prior encoder's skip features.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, backward, no_grad, ops
from .autodiff.nn import Conv2d, ConvResBlock, DenseResBlock, Linear, Module
from .codebook import (
    CodeBook,
    commitment_loss,
    ema_update,
    init_from_stats,
    quantize_batch,
    straight_through,
)

log = logging.getLogger(__name__)


@dataclass
class Architecture:
    kind: str  # "dense" or "conv"
    in_shape: Tuple[int, ...]
    label_shape: Tuple[int, ...]
    skip_widths: Tuple[int, ...]
    latent_widths: Tuple[int, ...]
    decoder_widths: Tuple[int, ...]
    code_dim: int
    n_codes: int
    level: int = 1

    def __post_init__(self):
        self.in_shape = tuple(self.in_shape)
        self.label_shape = tuple(self.label_shape)
        if self.kind not in ("dense", "conv"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if not self.skip_widths or not self.latent_widths or not self.decoder_widths:
            raise ValueError("architecture needs skip, latent and decoder widths")
        if len(self.decoder_widths) > len(self.skip_widths):
            raise ValueError("more decoder levels than skip features")
        if not 1 <= self.level <= len(self.decoder_widths):
            raise ValueError(f"incorporation level {self.level} outside 1..{len(self.decoder_widths)}")
        if self.kind == "conv" and self.decoder_widths[-1] != self.label_shape[0]:
            raise ValueError("last decoder width must equal the label channel count")


def vector_game_arch(n_codes: int = 512, code_dim: int = 32, level: int = 1) -> Architecture:
    return Architecture("dense", (32,), (32,), (64, 64), (128, 128), (64, 64), code_dim, n_codes, level)


def image_game_arch(n_codes: int = 512, code_dim: int = 128, level: int = 1) -> Architecture:
    return Architecture("conv", (1, 28, 112), (1, 28, 112), (16, 32, 64, 128), (128, 128),
                        (64, 32, 16, 1), code_dim, n_codes, level)


# networks ----------------------------------------------------------------------

class DenseEncoder(Module):
    def __init__(self, n_in: int, skip_widths, latent_widths, rng):
        widths = list(skip_widths) + list(latent_widths)
        ins = [n_in] + widths[:-1]
        self.n_skip = len(skip_widths)
        self.blocks = [DenseResBlock(a, b, rng) for a, b in zip(ins, widths)]

    def __call__(self, x) -> Tuple[List[Tensor], Tensor]:
        feats, h = [], x
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < self.n_skip:
                feats.append(h)
        return feats, h


class ConvEncoder(Module):
    """Residual levels; every level but the first and last halves the resolution first."""

    def __init__(self, c_in: int, skip_widths, latent_widths, rng):
        widths = list(skip_widths) + list(latent_widths)
        ins = [c_in] + widths[:-1]
        self.n_skip = len(skip_widths)
        self.blocks = [ConvResBlock(a, b, rng) for a, b in zip(ins, widths)]

    def __call__(self, x) -> Tuple[List[Tensor], Tensor]:
        feats, h = [], x
        last = len(self.blocks) - 1
        for i, block in enumerate(self.blocks):
            if 0 < i < last:
                h = ops.downsample2x(h)
            h = block(h)
            if i < self.n_skip:
                feats.append(h)
        return feats, h


class PriorEncoder(Module):
    def __init__(self, arch: Architecture, rng):
        if arch.kind == "dense":
            self.trunk = DenseEncoder(arch.in_shape[0], arch.skip_widths, arch.latent_widths, rng)
        else:
            self.trunk = ConvEncoder(arch.in_shape[0], arch.skip_widths, arch.latent_widths, rng)
        self.head = Linear(arch.latent_widths[-1], arch.n_codes, rng)
        self.kind = arch.kind

    def __call__(self, x):
        feats, h = self.trunk(x)
        if self.kind == "conv":
            h = ops.global_avg_pool(h)
        return feats, self.head(h)


class PosteriorEncoder(Module):
    def __init__(self, arch: Architecture, rng):
        self.kind = arch.kind
        if arch.kind == "dense":
            n_in = arch.in_shape[0] + arch.label_shape[0]
            self.trunk = DenseEncoder(n_in, arch.skip_widths, arch.latent_widths, rng)
            self.proj = Linear(arch.latent_widths[-1], arch.code_dim, rng)
        else:
            c_in = arch.in_shape[0] + arch.label_shape[0]
            self.trunk = ConvEncoder(c_in, arch.skip_widths, arch.latent_widths, rng)
            self.proj = Conv2d(arch.latent_widths[-1], arch.code_dim, 1, rng)

    def __call__(self, x, y) -> Tensor:
        axis = 1  # feature / channel axis
        _, h = self.trunk(ops.concat([x, y], axis=axis))
        if self.kind == "dense":
            return self.proj(h)  # pooling over a 1x1 "spatial" extent is the identity
        return ops.global_avg_pool(self.proj(h))


class Decoder(Module):
    """Consumes prior skip features bottom-up; the code joins at level ``arch.level`` only."""

    def __init__(self, arch: Architecture, rng):
        self.kind = arch.kind
        self.level = arch.level
        skips = list(arch.skip_widths)[::-1]
        blocks = []
        prev = 0
        for lvl, width in enumerate(arch.decoder_widths, start=1):
            n_in = prev + skips[lvl - 1] + (arch.code_dim if lvl == self.level else 0)
            last = lvl == len(arch.decoder_widths)
            if arch.kind == "dense":
                blocks.append(DenseResBlock(n_in, width, rng))
            else:
                blocks.append(ConvResBlock(n_in, width, rng, final_act=not last))
            prev = width
        self.blocks = blocks
        self.head = Linear(prev, arch.label_shape[0], rng) if arch.kind == "dense" else None

    def __call__(self, code, feats: Sequence[Tensor]) -> Tensor:
        """Logits of the label; apply a sigmoid for probabilities."""
        feats = list(feats)[::-1]
        h = None
        for lvl, block in enumerate(self.blocks, start=1):
            skip = feats[lvl - 1]
            parts = []
            if h is not None:
                if self.kind == "conv" and h.shape[-2:] != skip.shape[-2:]:
                    h = ops.resize_bilinear(h, *skip.shape[-2:])
                parts.append(h)
            parts.append(skip)
            if lvl == self.level:
                parts.append(code if self.kind == "dense" else ops.tile(code, *skip.shape[-2:]))
            h = block(ops.concat(parts, axis=1))
        return self.head(h) if self.head is not None else h


# model -------------------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    ce: float
    recon: float
    commit: float
    total: float
    warmed_up: bool


@dataclass
class Prediction:
    code_index: int
    probability: float
    output: np.ndarray = field(repr=False)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, breakdown: LossBreakdown, iteration: int):
        self.breakdown = breakdown
        self.iteration = iteration
        super().__init__(f"non-finite loss at iteration {iteration}: {breakdown}")


class MueModel(Module):
    def __init__(self, arch: Architecture, rng: np.random.Generator, book: Optional[CodeBook] = None):
        self.arch = arch
        self.prior = PriorEncoder(arch, rng)
        self.posterior = PosteriorEncoder(arch, rng)
        self.decoder = Decoder(arch, rng)
        self.book = book

    def _check(self, name: str, a, shape) -> None:
        s = tuple(np.shape(a.data if isinstance(a, Tensor) else a))
        if len(s) < 1 or s[1:] != tuple(shape):
            raise ValueError(f"{name}: expected batch of shape (N, {', '.join(map(str, shape))}), got {s}")

    def prior_forward(self, x):
        """Skip features (shallow to deep) and logits over the codebook."""
        self._check("prior_forward", x, self.arch.in_shape)
        return self.prior(x)

    def posterior_forward(self, x, y) -> Tensor:
        self._check("posterior_forward", x, self.arch.in_shape)
        self._check("posterior_forward", y, self.arch.label_shape)
        return self.posterior(x, y)

    def decode_logits(self, code, feats) -> Tensor:
        code = code if isinstance(code, Tensor) else Tensor(code)
        if code.ndim != 2 or code.shape[1] != self.arch.code_dim:
            raise ValueError(f"decode: expected codes of shape (N, {self.arch.code_dim}), got {code.shape}")
        return self.decoder(code, feats)

    def decode(self, code, feats) -> Tensor:
        return ops.sigmoid(self.decode_logits(code, feats))

    def init_codebook(self, x, y, seed=0, decay: float = 0.99, eps: float = 1e-5) -> CodeBook:
        with no_grad():
            e = self.posterior_forward(x, y).data
        self.book = init_from_stats(e, self.arch.n_codes, seed, decay=decay, eps=eps)
        return self.book

    def freeze(self) -> None:
        self.book.frozen = True

    def unfreeze(self) -> None:
        self.book.frozen = False


def compute_loss(model: MueModel, x, y, beta: float = 0.25, warmed_up: bool = True,
                 track_usage: bool = True):
    """Forward pass of the training objective.

    Returns ``(total, parts, indices, e)`` where ``parts`` maps ce/recon/commit
    to scalar Tensors and ``indices`` are the codes the batch was snapped to.
    """
    feats, logits = model.prior_forward(x)
    e = model.posterior_forward(x, y)
    idx, codes, _ = quantize_batch(e.data, model.book, track_usage=track_usage)
    y_logits = model.decode_logits(straight_through(e, codes), feats)
    recon = ops.bce_with_logits(y_logits, y)
    commit = commitment_loss(e, codes, beta)
    ce = ops.cross_entropy(logits, idx)  # target index is a constant label
    total = recon + commit
    if warmed_up:
        total = total + ce
    return total, {"ce": ce, "recon": recon, "commit": commit}, idx, e


def training_step(model: MueModel, x, y, opt: AdamState, iteration: int, *, lr: float,
                  beta: float = 0.25, warmup_iters: int = 0) -> LossBreakdown:
    """One optimisation step: loss, backward, Adam, then the EMA code update."""
    if model.book is None or model.book.frozen:
        raise RuntimeError("training_step: model has no codebook or is frozen")
    warmed = iteration >= warmup_iters
    model.zero_grad()
    total, parts, idx, e = compute_loss(model, x, y, beta, warmed)
    out = LossBreakdown(parts["ce"].item(), parts["recon"].item(), parts["commit"].item(),
                        total.item(), warmed)
    if not all(np.isfinite([out.ce, out.recon, out.commit, out.total])):
        raise NonFiniteLossError(out, iteration)
    backward(total)
    params = model.parameters()
    if not warmed:
        # the prior's logit path is outside the graph until the CE term switches on
        params = {k: p for k, p in params.items() if p.grad is not None or not k.startswith("prior.")}
    adam_step(params, opt, lr)
    ema_update(model.book, idx, e.data)
    return out


def topk_batch(model: MueModel, x, k: int, decode: bool = True):
    """Top-``k`` codes per input with their softmax probabilities, plus decoded outputs.

    Returns ``(indices (n, k), probs (n, k), outputs (n, k, *label_shape) or None)``.
    """
    if k <= 0:
        raise ValueError(f"predict_topk: k must be positive, got {k}")
    k = min(k, model.arch.n_codes)
    with no_grad():
        feats, logits = model.prior_forward(x)
        probs = ops.softmax(logits, axis=1).data.astype(np.float64)
        n = probs.shape[0]
        # stable sort on -p keeps equal probabilities in index order
        order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
        top_p = np.take_along_axis(probs, order, axis=1)
        if not decode:
            return order, top_p, None
        rep = [Tensor(np.repeat(f.data, k, axis=0)) for f in feats]
        codes = model.book.codes[order.reshape(-1)]
        y = model.decode(codes, rep).data
    return order, top_p, y.reshape((n, k) + model.arch.label_shape)


def predict_topk(x, model: MueModel, k: int) -> List[Prediction]:
    """Ranked predictions for a single input, most probable code first."""
    x = np.asarray(x)
    idx, p, y = topk_batch(model, x[None], k)
    return [Prediction(int(i), float(q), o) for i, q, o in zip(idx[0], p[0], y[0])]
