import csv
import subprocess
import sys
from xml.etree import ElementTree

import pytest

from mue.autodiff import set_debug
from mue.checkpoint import Checkpoint
from mue.cli import main
from mue.train import LOG_HEADER

CFG = """\
n_codes = 16
code_dim = 4
skip_widths = [8, 8]
latent_widths = [8, 8]
decoder_widths = [8, 8]
batch_size = 16
warmup_iters = 2
max_iters = 6
checkpoint_interval = 3
log_flush_interval = 2
eval_inputs_per_category = 8
"""


@pytest.fixture
def run_dir(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CFG + f'output_dir = "{tmp_path / "out"}"\n')
    assert main(["train", "--config", str(cfg)]) == 0
    return tmp_path / "out"


def test_train_writes_outputs(run_dir):
    assert (run_dir / "config.txt").exists()
    assert (run_dir / "ckpt_000003.mue").exists() and (run_dir / "ckpt_000006.mue").exists()
    rows = list(csv.reader(open(run_dir / "train_log.csv")))
    assert rows[0] == LOG_HEADER
    assert [int(r[0]) for r in rows[1:]] == list(range(6))
    assert Checkpoint.load(run_dir / "final.mue").header["iteration"] == 6


def test_eval_and_report(run_dir, capsys):
    assert main(["eval", "--checkpoint", str(run_dir / "final.mue"), "--task", "vector_game"]) == 0
    calib = list(csv.DictReader(open(run_dir / "calibration.csv")))
    assert len(calib) == 16 and {r["category"] for r in calib} == set("ABCD")
    ged = list(csv.reader(open(run_dir / "ged.csv")))
    assert ged[-2][0] == "mean" and ged[-1][0] == "std" and len(ged) == 1 + 32 + 2
    topk = list(csv.DictReader(open(run_dir / "topk.csv")))
    assert len(topk) == 16 * 8
    for r in calib:
        for key in ("truth_prob", "pred_prob", "ambiguous_mass"):
            assert 0.0 <= float(r[key]) <= 1.0
    assert [float(r["truth_prob"]) for r in calib if r["category"] == "C"] == [0.3, 0.5, 0.1, 0.1]
    values = [float(r[1]) for r in ged[1:-2]]
    assert abs(float(ged[-2][1]) - sum(values) / len(values)) < 1e-9
    for i in range(16):
        p = [float(r["probability"]) for r in topk if r["input_id"] == str(i)]
        assert p == sorted(p, reverse=True) and all(0 <= q <= 1 for q in p)

    assert main(["report", "--run", str(run_dir)]) == 0
    table = (run_dir / "summary.txt").read_text().splitlines()
    assert sum(1 for line in table if line[:1] in "ABCD" and line[:1]) == 16
    root = ElementTree.parse(run_dir / "curves.svg").getroot()
    assert root.tag.endswith("svg")


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CFG + f'output_dir = "{tmp_path / "out"}"\n')
    monkeypatch.setenv("MUE_SEED", "17")
    assert main(["train", "--config", str(cfg)]) == 0
    assert "seed = 17" in (tmp_path / "out" / "config.txt").read_text()


def test_invalid_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("beta = -3\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "beta" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore:overflow")
def test_nan_loss_exit_3(tmp_path, capsys):
    set_debug(False)  # let the loss itself overflow instead of the op-level check
    cfg = tmp_path / "nan.cfg"
    cfg.write_text(CFG + "beta = 1e308\n" + f'output_dir = "{tmp_path / "out"}"\n')
    assert main(["train", "--config", str(cfg)]) == 3
    err = capsys.readouterr().err
    assert "recon" in err and "commit" in err


def test_version_mismatch_exit_4(run_dir, tmp_path):
    raw = bytearray((run_dir / "final.mue").read_bytes())
    raw[4:8] = (2).to_bytes(4, "little")
    bad = tmp_path / "v2.mue"
    bad.write_bytes(bytes(raw))
    assert main(["eval", "--checkpoint", str(bad)]) == 4


def test_task_mismatch_exit_2(run_dir):
    assert main(["eval", "--checkpoint", str(run_dir / "final.mue"), "--task", "image_game"]) == 2


def test_report_missing_inputs_exit_2(tmp_path):
    assert main(["report", "--run", str(tmp_path)]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mue", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "train" in out.stdout
