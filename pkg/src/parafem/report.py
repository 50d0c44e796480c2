"""Record and report files (CSV) plus rendered convergence figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RECORDS_SCHEMA_VERSION = 1
RECORDS_COLUMNS = ["step", "k", "nov", "eta_global", "itero",
                   "adam_epochs", "lbfgs_iters", "wall_ms"]
REPORT_COLUMNS = ["step", "k", "nov", "grad_error", "eta_global", "eff_index"]


def write_records_csv(records, path) -> None:
    """One line per (step, iteration); training columns repeat per step."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# parafem-records-v{RECORDS_SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(RECORDS_COLUMNS)
        for rec in records:
            tr = rec.train_report
            adam = tr.adam_epochs if tr else 0
            lbfgs = tr.lbfgs_iters if tr else 0
            wall_ms = rec.wall_seconds * 1e3
            for e in rec.entries:
                writer.writerow(
                    [e.step, e.k, e.nov, f"{e.eta_global:.12g}", e.ite_ro,
                     adam, lbfgs, f"{wall_ms:.3f}"]
                )


def write_report_csv(records, path) -> None:
    """Convergence report rows for entries carrying a measured error."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# parafem-report-v{RECORDS_SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for rec in records:
            for e in rec.entries:
                if e.grad_error is None:
                    continue
                eff = e.eta_global / e.grad_error if e.grad_error > 0 else 0.0
                writer.writerow(
                    [e.step, e.k, e.nov, f"{e.grad_error:.12g}",
                     f"{e.eta_global:.12g}", f"{eff:.12g}"]
                )


def read_csv_rows(path) -> list[dict]:
    """Read a records or report CSV back into typed row dicts."""
    rows = []
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    for raw in reader:
        row = {}
        for key, val in raw.items():
            if key in ("step", "k", "nov", "itero", "adam_epochs", "lbfgs_iters"):
                row[key] = int(val)
            else:
                row[key] = float(val)
        rows.append(row)
    return rows


def plot_convergence(rows, path, error_key: str = "grad_error") -> None:
    """Log-log error and estimator history against the vertex count."""
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    nov = [r["nov"] for r in rows]
    if any(error_key in r for r in rows):
        ax.loglog(nov, [r[error_key] for r in rows], "o-", label="gradient error")
    ax.loglog(nov, [r["eta_global"] for r in rows], "s--", label="estimator")
    lo, hi = min(nov), max(nov)
    ref = rows[0]["eta_global"]
    ax.loglog([lo, hi], [ref, ref * (hi / lo) ** -0.5], "k:", label="slope -1/2")
    ax.set_xlabel("number of vertices")
    ax.set_ylabel("error / estimator")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_nov_history(rows, path) -> None:
    """Vertex counts per adaptive iteration, one line per time step."""
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    steps = sorted({r["step"] for r in rows})
    for s in steps:
        sub = [r for r in rows if r["step"] == s]
        ax.semilogy([r["k"] for r in sub], [r["nov"] for r in sub], "o-",
                    label=f"step {s}")
    ax.set_xlabel("adaptive iteration")
    ax.set_ylabel("number of vertices")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_history(rows, path) -> None:
    """Optimizer iterations spent per time step."""
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    seen = {}
    for r in rows:
        seen[r["step"]] = (r.get("adam_epochs", 0), r.get("lbfgs_iters", 0))
    steps = sorted(seen)
    ax.plot(steps, [seen[s][0] for s in steps], "o-", label="Adam epochs")
    ax.plot(steps, [seen[s][1] for s in steps], "s-", label="L-BFGS iterations")
    ax.set_xlabel("time step")
    ax.set_ylabel("iterations")
    ax.set_yscale("symlog")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(rows, out_dir, prefix: str = "") -> list:
    """Write the standard figure set next to the delimited output."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    made = []
    errored = [r for r in rows if "grad_error" in r and r["grad_error"] > 0]
    if len(errored) >= 2:
        p = out / f"{prefix}convergence.png"
        plot_convergence(errored, p)
        made.append(p)
    p = out / f"{prefix}nov_history.png"
    plot_nov_history(rows, p)
    made.append(p)
    if any("adam_epochs" in r for r in rows):
        p = out / f"{prefix}training.png"
        plot_training_history(rows, p)
        made.append(p)
    return made
