"""Extended run: the MNIST composite guessing game at full scale.

Needs the four MNIST IDX files (uncompressed) in one directory:

    python scripts/run_image_game.py --mnist-dir data/mnist --out runs/image_game

At full scale (120k iterations of a convolutional model on numpy) this takes
many hours on a desktop CPU; ``--iters`` shortens it for a smoke run.
"""
import argparse
import sys
import tempfile
from pathlib import Path

from mue.cli import main as cli
from mue.config import RunConfig

HERE = Path(__file__).resolve().parent
FILES = {
    "mnist_train_images": "train-images-idx3-ubyte",
    "mnist_train_labels": "train-labels-idx1-ubyte",
    "mnist_test_images": "t10k-images-idx3-ubyte",
    "mnist_test_labels": "t10k-labels-idx1-ubyte",
}


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--mnist-dir", required=True)
    p.add_argument("--config", default=str(HERE / "configs" / "image_game.cfg"))
    p.add_argument("--out", default="runs/image_game")
    p.add_argument("--iters", type=int)
    p.add_argument("--inputs-per-category", type=int, default=250)
    args = p.parse_args(argv)

    cfg = RunConfig.load(args.config)
    for field, name in FILES.items():
        path = Path(args.mnist_dir) / name
        if not path.exists():
            print(f"error: missing {path}", file=sys.stderr)
            return 2
        setattr(cfg, field, str(path))
    cfg.output_dir = args.out
    if args.iters is not None:
        cfg.max_iters = args.iters
    with tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False) as fh:
        fh.write(cfg.dumps())
    code = cli(["-v", "train", "--config", fh.name])
    if code:
        return code
    code = cli(["eval", "--checkpoint", str(Path(args.out) / "final.mue"),
                "--inputs-per-category", str(args.inputs_per_category)])
    if code:
        return code
    return cli(["report", "--run", args.out])


if __name__ == "__main__":
    sys.exit(run())
