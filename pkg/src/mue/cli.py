"""Command line: ``mue train``, ``mue eval``, ``mue report``.

Exit codes: 0 ok, 2 bad configuration or missing inputs, 3 non-finite loss,
4 checkpoint format version mismatch.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, CheckpointVersionError
from .config import ConfigError, RunConfig
from .eval import calibrate, ged_report
from .model import NonFiniteLossError, topk_batch
from .report import (
    read_csv,
    summary_text,
    write_calibration_csv,
    write_curves_svg,
    write_ged_csv,
    write_topk_csv,
)
from .tasks import DEFAULT_SPEC, sample_batch
from .train import Trainer, build_bank

log = logging.getLogger("mue")

EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_VERSION = 4


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    try:
        cfg = RunConfig.load(args.config)
        if os.environ.get("MUE_SEED"):
            try:
                cfg.seed = int(os.environ["MUE_SEED"])
            except ValueError:
                raise ConfigError("seed", f"MUE_SEED must be an integer, got {os.environ['MUE_SEED']!r}") from None
        if args.out:
            cfg.output_dir = args.out
        cfg.validate()
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"invalid config field {exc}")
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"cannot read config: {exc}")

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        trainer = Trainer(cfg)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_CONFIG, f"cannot set up training data: {exc}")
    (out / "config.txt").write_text(trainer.cfg.dumps())
    log_path = out / "train_log.csv"
    if log_path.exists():
        log_path.unlink()

    def save(t: Trainer) -> None:
        t.checkpoint().save(out / f"ckpt_{t.iteration:06d}.mue")

    try:
        trainer.run(trainer.cfg.max_iters, log_path, on_checkpoint=save)
    except NonFiniteLossError as exc:
        b = exc.breakdown
        return _fail(EXIT_NAN, f"non-finite loss at iteration {exc.iteration}: ce={b.ce} recon={b.recon} "
                               f"commit={b.commit} total={b.total}")
    trainer.checkpoint().save(out / "final.mue")
    print(f"trained {trainer.iteration} iterations; checkpoint {out / 'final.mue'}")
    return 0


def cmd_eval(args) -> int:
    try:
        ckpt = Checkpoint.load(args.checkpoint)
    except CheckpointVersionError as exc:
        return _fail(EXIT_VERSION, str(exc))
    except (OSError, CheckpointError) as exc:
        return _fail(EXIT_CONFIG, f"cannot load checkpoint: {exc}")
    try:
        trainer = Trainer.from_checkpoint(ckpt)
    except (ConfigError, CheckpointError) as exc:
        return _fail(EXIT_CONFIG, f"checkpoint does not restore: {exc}")
    cfg = trainer.cfg
    if args.task and args.task != cfg.task:
        return _fail(EXIT_CONFIG, f"--task {args.task} does not match checkpoint task {cfg.task}")
    n_per_cat = args.inputs_per_category or cfg.eval_inputs_per_category
    k = args.topk or cfg.calib_topk
    top_n = args.ged_topn or cfg.ged_topn
    seed = cfg.eval_seed if args.seed is None else args.seed
    try:
        bank = build_bank(cfg, "test")
    except (OSError, ValueError) as exc:
        return _fail(EXIT_CONFIG, f"cannot load evaluation data: {exc}")

    model = trainer.model
    model.freeze()
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    calib_rng, ged_rng, topk_rng = [np.random.Generator(np.random.PCG64(s))
                                     for s in np.random.SeedSequence(seed).spawn(3)]

    table = calibrate(model, DEFAULT_SPEC, bank, n_per_cat, k, calib_rng)
    write_calibration_csv(out / "calibration.csv", table)
    ged = ged_report(model, DEFAULT_SPEC, bank, 4 * n_per_cat, top_n, ged_rng)
    write_ged_csv(out / "ged.csv", ged)
    sample = sample_batch(DEFAULT_SPEC, bank, topk_rng, args.topk_inputs)
    idx, probs, _ = topk_batch(model, sample.x, top_n, decode=False)
    write_topk_csv(out / "topk.csv", idx, probs)

    for row in table.rows:
        print(f"{row.name}: truth {np.round(row.truth, 3).tolist()} predicted "
              f"{np.round(row.predicted, 3).tolist()} ambiguous {row.ambiguous:.3f} L1 {row.l1_error:.4f}")
    print(f"GED mean {ged.mean:.4f} std {ged.std:.4f} over {len(ged.values)} inputs")
    return 0


def cmd_report(args) -> int:
    run = Path(args.run)
    calib, train_log = run / "calibration.csv", run / "train_log.csv"
    missing = [str(p) for p in (calib, train_log) if not p.exists()]
    if missing:
        return _fail(EXIT_CONFIG, f"missing inputs: {', '.join(missing)}")
    text = summary_text(read_csv(calib))
    ged_path = run / "ged.csv"
    if ged_path.exists():
        stats = {r["input_id"]: r["d2ged"] for r in read_csv(ged_path) if r["input_id"] in ("mean", "std")}
        if stats:
            text += f"\nGED mean {float(stats['mean']):.4f} std {float(stats['std']):.4f}\n"
    (run / "summary.txt").write_text(text)
    write_curves_svg(run / "curves.svg", read_csv(train_log))
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mue", description="Modal uncertainty estimation with a discrete codebook")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="override output_dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="calibration, GED and top-k reports for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", choices=["vector_game", "image_game"])
    e.add_argument("--out")
    e.add_argument("--inputs-per-category", type=int)
    e.add_argument("--topk", type=int, help="codes decoded per input for calibration")
    e.add_argument("--ged-topn", type=int)
    e.add_argument("--topk-inputs", type=int, default=16)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="summary table and SVG curves for a run directory")
    r.add_argument("--run", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
