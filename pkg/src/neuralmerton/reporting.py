"""CSV tables, companion gnuplot scripts and matplotlib figures.

Every CSV starts with a ``# config_sha256=... seed=...`` comment line and a
header row.  Float columns use ``repr`` so files round-trip exactly and
reruns are byte-identical.  Timestamps go into ``<file>.meta.json``
sidecars only.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import platform
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import __version__  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 120,
})


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return x


def write_csv(path, header, rows, comment: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        out = csv.writer(fh)
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(x) for x in row])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_meta(path, **info) -> None:
    """Sidecar with wall-clock and environment details for ``path``."""
    meta = {"file": Path(path).name, "created": dt.datetime.now().isoformat(timespec="seconds"),
            "version": __version__, "python": platform.python_version(), **info}
    Path(f"{path}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def provenance(config_hash: str, seed) -> str:
    return f"config_sha256={config_hash} seed={seed}"


# ---------------------------------------------------------------------------
# table writers

EVAL_HEADER = ["policy", "eta_inv", "mean", "stderr", "n_rep", "seed"]


def write_eval_csv(path, rows, comment=None) -> Path:
    """``rows``: iterable of ``(policy name, eta, EvalReport)``."""
    body = []
    for name, eta, rep in rows:
        eta_inv = float("inf") if eta == 0 else 1.0 / eta
        body.append([name, eta_inv, rep.mean, rep.stderr, rep.n_rep, rep.seed])
    return write_csv(path, EVAL_HEADER, body, comment)


def write_profile_csv(path, table: np.ndarray, comment=None) -> Path:
    return write_csv(path, ["t", "y", "pi"], table.tolist(), comment)


def write_wealth_csv(path, paths: dict, times: np.ndarray, comment=None) -> Path:
    rows = []
    for name, W in paths.items():
        if name.startswith("_"):
            continue
        for b in range(W.shape[0]):
            for k in range(W.shape[1]):
                rows.append([name, b, k, float(times[k]), float(W[b, k])])
    return write_csv(path, ["policy", "path", "step", "t", "W"], rows, comment)


# ---------------------------------------------------------------------------
# gnuplot companions (plain text; run with `gnuplot file.gp`)

def _gnuplot_head(csv_name: str, out_png: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        "set terminal pngcairo size 800,560",
        f"set output '{out_png}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set grid",
    ]


def write_profile_gnuplot(csv_path, by: str = "t") -> Path:
    csv_path = Path(csv_path)
    x, other = (1, 2) if by == "t" else (2, 1)
    lines = _gnuplot_head(csv_path.name, csv_path.stem + "_gnuplot.png",
                          "t (years)" if by == "t" else "squared volatility y", "stock weight pi")
    lines.append(f"plot '{csv_path.name}' every ::1 using {x}:3:{other} with points pt 7 ps 0.5 "
                 "palette title 'pi'")
    return _write_script(csv_path, lines)


def write_eval_gnuplot(csv_path) -> Path:
    csv_path = Path(csv_path)
    lines = _gnuplot_head(csv_path.name, csv_path.stem + "_gnuplot.png", "1/eta", "mean terminal utility")
    lines.append(f"plot '{csv_path.name}' using 2:3:4 with yerrorbars title 'mean +/- SE'")
    return _write_script(csv_path, lines)


def write_wealth_gnuplot(csv_path) -> Path:
    csv_path = Path(csv_path)
    lines = _gnuplot_head(csv_path.name, csv_path.stem + "_gnuplot.png", "t (years)", "wealth")
    lines.append(f"plot '{csv_path.name}' using 4:5 with dots title 'W'")
    return _write_script(csv_path, lines)


def write_log_gnuplot(csv_path) -> Path:
    csv_path = Path(csv_path)
    lines = _gnuplot_head(csv_path.name, csv_path.stem + "_gnuplot.png", "step", "minibatch J")
    lines.append(f"plot '{csv_path.name}' using 2:3 with lines title 'J'")
    return _write_script(csv_path, lines)


def _write_script(csv_path: Path, lines: list[str]) -> Path:
    gp = csv_path.with_suffix(".gp")
    gp.write_text("\n".join(lines) + "\n")
    return gp


# ---------------------------------------------------------------------------
# matplotlib figures

def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_profile(path, table: np.ndarray, by: str = "t", reference=None, band=None) -> Path:
    """Weight vs ``t`` (one line per ``y``) or vs ``y`` (one line per ``t``).

    ``reference`` is an optional callable ``(t, y) -> pi`` drawn dashed;
    ``band`` an optional ``(lo, hi)`` range of ``y`` to shade.
    """
    t, y, pi = table[:, 0], table[:, 1], table[:, 2]
    x_col, g_col = (t, y) if by == "t" else (y, t)
    fig, ax = plt.subplots()
    groups = np.unique(g_col)
    cmap = plt.get_cmap("viridis")
    for i, g in enumerate(groups[:12]):
        sel = g_col == g
        order = np.argsort(x_col[sel])
        label = f"{'y' if by == 't' else 't'} = {g:.4g}"
        ax.plot(x_col[sel][order], pi[sel][order], color=cmap(i / max(len(groups) - 1, 1)), label=label)
    if reference is not None:
        xs = np.unique(x_col)
        if by == "t":
            ref = reference(xs, np.full_like(xs, groups[0]))
        else:
            ref = reference(np.zeros_like(xs), xs)
        ax.plot(xs, ref, "k--", label="analytic")
    if band is not None:
        ax.axvspan(band[0], band[1], color="grey", alpha=0.15, label="typical y range")
    ax.set_xlabel("t (years)" if by == "t" else "squared volatility y")
    ax.set_ylabel("stock weight")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_weight_vs_eta_inv(path, eta_inv, ann_weight, analytic_weight, fit=None) -> Path:
    fig, ax = plt.subplots()
    ax.plot(eta_inv, analytic_weight, "k-", label="Merton ratio")
    ax.plot(eta_inv, ann_weight, "o", label="ANN (time-averaged)")
    if fit is not None:
        slope, intercept = fit
        xs = np.asarray(eta_inv)
        ax.plot(xs, intercept + slope * xs, ":", label=f"LS fit: {slope:.3f} x + {intercept:.3f}")
    ax.set_xlabel("1/eta")
    ax.set_ylabel("stock weight")
    ax.legend()
    return _save(fig, path)


def plot_eval(path, rows) -> Path:
    fig, ax = plt.subplots()
    by_policy: dict = {}
    for name, eta, rep in rows:
        by_policy.setdefault(name, []).append((1.0 / eta if eta else np.inf, rep.mean, rep.stderr))
    for name, pts in by_policy.items():
        pts = sorted(pts)
        x, m, s = (np.array(v) for v in zip(*pts))
        ax.errorbar(x, m, yerr=s, marker="o", capsize=3, label=name)
    ax.set_xlabel("1/eta")
    ax.set_ylabel("mean terminal utility")
    ax.legend()
    return _save(fig, path)


def plot_wealth(path, paths: dict, times) -> Path:
    fig, ax = plt.subplots()
    styles = ["-", "--", ":", "-."]
    names = [k for k in paths if not k.startswith("_")]
    for j, name in enumerate(names):
        W = paths[name]
        for b in range(W.shape[0]):
            ax.plot(times, W[b], styles[j % len(styles)], color=f"C{b % 10}", lw=1,
                    label=name if b == 0 else None)
    ax.set_xlabel("t (years)")
    ax.set_ylabel("wealth")
    ax.legend()
    return _save(fig, path)


def plot_market_fan(path, times, S, Y) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for b in range(S.shape[0]):
        a1.plot(times, S[b], lw=1)
        a2.plot(times, Y[b], lw=1)
    a1.set_xlabel("t (years)")
    a1.set_ylabel("S")
    a2.set_xlabel("t (years)")
    a2.set_ylabel("Y")
    return _save(fig, path)


def plot_training(path, records) -> Path:
    steps = np.array([r.step for r in records])
    J = np.array([r.J for r in records])
    fig, ax = plt.subplots()
    ax.plot(steps, J, lw=0.5, alpha=0.5, label="minibatch J")
    if J.size >= 25:
        k = 25
        ax.plot(steps[k - 1:], np.convolve(J, np.ones(k) / k, mode="valid"), lw=1.5, label="running mean")
    ax.set_xlabel("step")
    ax.set_ylabel("J")
    ax.legend()
    return _save(fig, path)
