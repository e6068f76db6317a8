"""CSV report writers and the human-readable run summary."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, List

import numpy as np

from .eval import CalibrationTable, GedReport

CALIBRATION_HEADER = ["category", "mode", "truth_prob", "pred_prob", "ambiguous_mass", "l1_error"]


def _f(x: float) -> str:
    # repr is locale independent and round-trips
    return repr(float(x))


def write_calibration_csv(path, table: CalibrationTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_HEADER)
        for row in table.rows:
            for m in range(len(row.truth)):
                w.writerow([row.name, m + 1, _f(row.truth[m]), _f(row.predicted[m]),
                            _f(row.ambiguous), _f(row.l1_error)])


def write_ged_csv(path, report: GedReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input_id", "d2ged"])
        for i, v in enumerate(report.values):
            w.writerow([i, _f(v)])
        w.writerow(["mean", _f(report.mean)])
        w.writerow(["std", _f(report.std)])


def write_topk_csv(path, indices: np.ndarray, probs: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input_id", "rank", "code_index", "probability"])
        for i, (idx, p) in enumerate(zip(indices, probs)):
            for r, (c, q) in enumerate(zip(idx, p), start=1):
                w.writerow([i, r, int(c), _f(q)])


def read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary_text(calibration_rows: Iterable[dict]) -> str:
    rows = list(calibration_rows)
    lines = ["category  mode  truth    predicted  |error|   ambiguous  L1(category)",
             "--------  ----  -------  ---------  --------  ---------  ------------"]
    for r in rows:
        t, p = float(r["truth_prob"]), float(r["pred_prob"])
        lines.append(f"{r['category']:<8}  {r['mode']:>4}  {t:7.4f}  {p:9.4f}  {abs(t - p):8.4f}  "
                     f"{float(r['ambiguous_mass']):9.4f}  {float(r['l1_error']):12.4f}")
    return "\n".join(lines) + "\n"


def write_curves_svg(path, log_rows: List[dict]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    it = np.array([int(r["iter"]) for r in log_rows])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for key in ("total", "recon", "ce", "commit"):
        ax1.plot(it, [float(r[key]) for r in log_rows], label=key, linewidth=0.8)
    ax1.set_yscale("symlog", linthresh=1e-3)
    ax1.set_ylabel("loss")
    ax1.legend(loc="upper right")
    ax2.plot(it, [int(r["active_codes"]) for r in log_rows], color="k", linewidth=0.8)
    ax2.set_ylabel("codes used in batch")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
