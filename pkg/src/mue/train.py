from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff import AdamState, no_grad, piecewise_lr
from .checkpoint import Checkpoint, capture, restore
from .codebook import reseed_dead_codes
from .config import RunConfig
from .model import Architecture, LossBreakdown, MueModel, training_step
from .tasks import DEFAULT_SPEC, DigitBank, load_mnist_idx, sample_batch

log = logging.getLogger(__name__)

LOG_HEADER = ["iter", "ce", "recon", "commit", "total", "active_codes", "lr"]


def architecture_for(cfg: RunConfig) -> Architecture:
    cfg = cfg.resolved()
    if cfg.task == "vector_game":
        kind, shape = "dense", (32,)
    else:
        kind, shape = "conv", (1, 28, 112)
    return Architecture(kind, shape, shape, tuple(cfg.skip_widths), tuple(cfg.latent_widths),
                        tuple(cfg.decoder_widths), cfg.code_dim, cfg.n_codes, cfg.incorporation_level)


def build_bank(cfg: RunConfig, split: str = "train") -> DigitBank:
    if cfg.task == "vector_game":
        return DigitBank.vector(cfg.anchor_seed, cfg.digit_noise)
    if split == "train":
        return load_mnist_idx(cfg.mnist_train_images, cfg.mnist_train_labels)
    return load_mnist_idx(cfg.mnist_test_images, cfg.mnist_test_labels)


class Trainer:
    """Owns the model, optimizer, data stream and iteration counter of one run."""

    def __init__(self, cfg: RunConfig, bank: Optional[DigitBank] = None):
        self.cfg = cfg.validate().resolved()
        init_seq, data_seq, book_seq = np.random.SeedSequence(self.cfg.seed).spawn(3)
        self.arch = architecture_for(self.cfg)
        self.model = MueModel(self.arch, np.random.Generator(np.random.PCG64(init_seq)))
        self.bank = bank if bank is not None else build_bank(self.cfg, "train")
        self.data_rng = np.random.Generator(np.random.PCG64(data_seq))
        self.opt = AdamState()
        self.iteration = 0
        first = self.next_batch()
        self.model.init_codebook(first.x, first.y, np.random.Generator(np.random.PCG64(book_seq)),
                                 decay=self.cfg.ema_decay, eps=self.cfg.ema_eps)

    def next_batch(self):
        return sample_batch(DEFAULT_SPEC, self.bank, self.data_rng, self.cfg.batch_size)

    def lr(self) -> float:
        return piecewise_lr(self.iteration, self.cfg.lr_values, self.cfg.lr_boundaries)

    def step(self):
        """Run one iteration; returns (LossBreakdown, learning rate, distinct codes in batch)."""
        batch = self.next_batch()
        lr = self.lr()
        before = self.model.book.usage.copy()
        out = training_step(self.model, batch.x, batch.y, self.opt, self.iteration, lr=lr,
                            beta=self.cfg.beta, warmup_iters=self.cfg.warmup_iters)
        active = int(np.count_nonzero(self.model.book.usage - before))
        self.iteration += 1
        if self.cfg.reseed_dead_codes and self.iteration % self.cfg.reseed_interval == 0:
            with no_grad():
                pool = self.model.posterior_forward(batch.x, batch.y).data
            reseed_dead_codes(self.model.book, pool, self.cfg.reseed_threshold,
                              np.random.SeedSequence([self.cfg.seed, self.iteration]).generate_state(1)[0])
        return out, lr, active

    def run(self, until: int, log_path=None, on_checkpoint: Optional[Callable] = None) -> Optional[LossBreakdown]:
        """Train up to iteration ``until``, appending CSV rows to ``log_path``."""
        fh = writer = None
        if log_path is not None:
            new = not Path(log_path).exists() or Path(log_path).stat().st_size == 0
            fh = open(log_path, "a", newline="")
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(LOG_HEADER)
        last = None
        try:
            while self.iteration < until:
                it = self.iteration
                last, lr, active = self.step()
                if writer is not None:
                    writer.writerow([it, repr(last.ce), repr(last.recon), repr(last.commit),
                                     repr(last.total), active, repr(lr)])
                    if self.iteration % self.cfg.log_flush_interval == 0:
                        fh.flush()
                if self.iteration % 1000 == 0:
                    log.info("iter %d total %.4f recon %.4f ce %.4f active %d", it, last.total, last.recon,
                             last.ce, active)
                if on_checkpoint is not None and self.iteration % self.cfg.checkpoint_interval == 0:
                    on_checkpoint(self)
        finally:
            if fh is not None:
                fh.close()
        return last

    # persistence ---------------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        return capture(self.model, self.opt, self.iteration, self.cfg.dumps(), self.data_rng.bit_generator.state)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, bank: Optional[DigitBank] = None) -> "Trainer":
        cfg = RunConfig.loads(ckpt.header["config"])
        self = cls.__new__(cls)
        self.cfg = cfg.resolved()
        self.arch = architecture_for(self.cfg)
        self.model = MueModel(self.arch, np.random.Generator(np.random.PCG64(0)))
        self.bank = bank
        self.data_rng = np.random.Generator(np.random.PCG64(0))
        self.data_rng.bit_generator.state = ckpt.header["rng_state"]
        self.opt = AdamState()
        self.iteration = int(ckpt.header["iteration"])
        restore(ckpt, self.model, self.opt)
        return self


def load_model(path) -> MueModel:
    """Model from a checkpoint file, frozen for inference."""
    model = Trainer.from_checkpoint(Checkpoint.load(path)).model
    model.freeze()
    return model
