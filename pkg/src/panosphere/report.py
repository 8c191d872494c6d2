"""Figures from a training log.

Reads the line-delimited records fit writes and drops PNG figures next to
them: the loss curve, the stage schedule (perturbation decay and the
level ramp), and held-out PSNR when the run evaluated any.  Everything is
derived from the log alone so reports can be regenerated long after the
run, or for a run that aborted partway.
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be set first


class ReportError(RuntimeError):
    """Log unreadable or empty."""


def load_log(path):
    """Parsed records, in file order.  Blank lines are skipped."""
    records = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ReportError(f"{path}:{ln}: bad record: {e}") from e
    if not records:
        raise ReportError(f"{path}: no records")
    return records


def split_records(records):
    """(step records, evaluation records); evaluations carry a psnr."""
    evals = [r for r in records if "psnr" in r]
    steps = [r for r in records if "psnr" not in r]
    return steps, evals


def fig_loss(steps, path):
    xs = range(len(steps))
    ys = [r["loss"] for r in steps]
    fin = [(x, y) for x, y in zip(xs, ys) if y is not None]
    fig, ax = plt.subplots(figsize=(7, 4))
    if fin:
        ax.plot(*zip(*fin), lw=0.6, color="tab:blue")
        ax.set_yscale("log")
    bad = [x for x, y in zip(xs, ys) if y is None]
    if bad:
        ax.axvline(bad[0], color="tab:red", ls="--", label="aborted")
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("L1 loss")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_schedule(steps, path):
    # one point per epoch; the schedule is constant within an epoch
    by_epoch = {}
    for r in steps:
        by_epoch[r["epoch"]] = (r["eta_p"], r["active_levels"])
    epochs = sorted(by_epoch)
    eta = [by_epoch[e][0] for e in epochs]
    g1 = [by_epoch[e][1][0] for e in epochs]
    g2 = [by_epoch[e][1][1] for e in epochs]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, eta, color="tab:orange", label="origin perturbation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("perturbation radius")
    ax2 = ax.twinx()
    ax2.step(epochs, g1, where="post", color="tab:green",
             label="point levels")
    ax2.step(epochs, g2, where="post", color="tab:purple",
             label="sphere levels")
    ax2.set_ylabel("active grid levels")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="center right")
    ax.set_title("stage schedule")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_psnr(evals, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([r["epoch"] for r in evals], [r["psnr"] for r in evals],
            marker="o", color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("held-out PSNR (dB)")
    ax.set_title("held-out quality")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(log_path, out_dir=None):
    """Render all applicable figures.  Returns {figure name: path}."""
    log_path = Path(log_path)
    out = Path(out_dir) if out_dir is not None else log_path.parent
    out.mkdir(parents=True, exist_ok=True)
    steps, evals = split_records(load_log(log_path))
    stem = log_path.stem.replace(".log", "").replace(".jsonl", "")
    written = {}
    if steps:
        p = out / f"{stem}_loss.png"
        fig_loss(steps, p)
        written["loss"] = p
        p = out / f"{stem}_schedule.png"
        fig_schedule(steps, p)
        written["schedule"] = p
    if evals:
        p = out / f"{stem}_psnr.png"
        fig_psnr(evals, p)
        written["psnr"] = p
    return written
