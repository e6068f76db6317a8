"""Train, evaluate and summarise the vector guessing game in one go.

    python scripts/train_vector_game.py --out runs/vector_game
    python scripts/train_vector_game.py --iters 3000 --out runs/smoke

Writes config.txt, train_log.csv, checkpoints, calibration.csv, ged.csv,
topk.csv, summary.txt and curves.svg into the output directory.
"""
import argparse
import sys
import tempfile
from pathlib import Path

from mue.cli import main as cli
from mue.config import RunConfig

HERE = Path(__file__).resolve().parent


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(HERE / "configs" / "vector_game.cfg"))
    p.add_argument("--out", default="runs/vector_game")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int, help="stop early (default: max_iters from the config)")
    args = p.parse_args(argv)

    cfg = RunConfig.load(args.config)
    cfg.output_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iters is not None:
        cfg.max_iters = args.iters
    with tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False) as fh:
        fh.write(cfg.dumps())
    code = cli(["-v", "train", "--config", fh.name])
    if code:
        return code
    code = cli(["eval", "--checkpoint", str(Path(args.out) / "final.mue")])
    if code:
        return code
    return cli(["report", "--run", args.out])


if __name__ == "__main__":
    sys.exit(run())
