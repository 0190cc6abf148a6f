"""Figure helpers for the report path. Always renders off-screen (Agg)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .gaussian import to_db  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "cvcluster",
}
METADATA = {"png": {"Software": None}, "svg": {"Date": None}, "pdf": {"CreationDate": None}}


def new_figure(ncols: int = 1, nrows: int = 1, width: float = 6.4, height: float | None = None):
    height = height or 0.62 * width * nrows / max(ncols, 1) * max(1, ncols / 2)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(width, height), squeeze=False)
    return fig, axes


def save(fig, path) -> Path:
    """Write ``fig`` without timestamps so reruns give identical bytes."""
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "png"
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, format=fmt, metadata=METADATA.get(fmt))
    plt.close(fig)
    return path


def plot_nullifiers(rows, path):
    """``rows``: (r, convention, variance, expected) tuples."""
    fig, axes = new_figure()
    ax = axes[0, 0]
    for conv, marker in (("cluster_type", "o"), ("approximate", "s")):
        pts = sorted((r, v, e) for r, c, v, e in rows if c == conv)
        if not pts:
            continue
        r, v, e = map(np.array, zip(*pts))
        ax.plot(r, to_db(v), marker, label=f"{conv} simulated")
        ax.plot(r, to_db(e), "-", lw=1, label=f"{conv} closed form")
    ax.set_xlabel("squeezing parameter r")
    ax.set_ylabel("nullifier variance [dB rel. vacuum]")
    ax.legend(fontsize=7)
    return save(fig, path)


def plot_symplectic_vs_parameter(param, S_hat, S_err, S_expected, path, label="parameter"):
    """Entries of 2x2 estimated matrices against the gate parameter."""
    param = np.asarray(param)
    S_hat, S_err, S_expected = (np.asarray(a) for a in (S_hat, S_err, S_expected))
    fig, axes = new_figure(2, 2, width=6.4, height=5.0)
    for i in range(2):
        for j in range(2):
            ax = axes[i, j]
            ax.errorbar(param, S_hat[:, i, j], yerr=S_err[:, i, j], fmt="o", ms=3, capsize=2, label="estimate")
            order = np.argsort(param)
            ax.plot(param[order], S_expected[order, i, j], "-", lw=1, label="expected")
            ax.set_title(f"S[{i + 1},{j + 1}]")
            ax.set_xlabel(label)
    axes[0, 0].legend(fontsize=7)
    return save(fig, path)


def plot_matrix(S_hat, path, title="estimated transfer"):
    S_hat = np.asarray(S_hat)
    fig, axes = new_figure(width=4.5, height=4.0)
    ax = axes[0, 0]
    lim = max(1.0, float(np.max(np.abs(S_hat))))
    im = ax.imshow(S_hat, cmap="RdBu_r", vmin=-lim, vmax=lim)
    n = S_hat.shape[0] // 2
    ticks = [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    ax.set_xticks(range(2 * n), ticks)
    ax.set_yticks(range(2 * n), ticks)
    ax.grid(False)
    for (i, j), v in np.ndenumerate(S_hat):
        ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=6)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return save(fig, path)


def plot_noise(labels, noise, noise_err, expected, path, reference_db=None):
    """Per-output gate-noise variances in dB with expected values."""
    noise, expected = np.asarray(noise, dtype=float), np.asarray(expected, dtype=float)
    err = np.asarray(noise_err, dtype=float)
    x = np.arange(len(noise))
    fig, axes = new_figure(width=max(4.0, 0.35 * len(noise) + 2))
    ax = axes[0, 0]
    lo = to_db(np.maximum(noise - err, 1e-300))
    hi = to_db(noise + err)
    db = to_db(noise)
    ax.errorbar(x, db, yerr=[db - lo, hi - db], fmt="o", ms=3, capsize=2, label="estimated")
    ax.plot(x, to_db(expected), "_", ms=12, mew=2, label="expected")
    if reference_db is not None:
        ax.axhline(reference_db, ls="--", lw=1, color="gray", label="squeezed source")
    ax.set_xticks(x, labels, rotation=60, fontsize=6)
    ax.set_ylabel("gate noise [dB rel. vacuum]")
    ax.legend(fontsize=7)
    return save(fig, path)


def plot_noise_curve(curve, path):
    """Gate noise versus pump for a :class:`cvcluster.opo.NoiseCurve`."""
    fig, axes = new_figure()
    ax = axes[0, 0]
    ax.plot(curve.pump, to_db(curve.gate_noise), "-", label="no phase jitter")
    if curve.gate_noise_jitter is not None:
        ax.plot(curve.pump, to_db(curve.gate_noise_jitter), "o-", ms=3, label=f"phase jitter {curve.jitter_deg:g} deg")
    ax.plot(curve.pump, to_db(curve.var_p), ":", label="squeezed quadrature")
    ax.axhline(to_db(4 * 0.5), ls="--", lw=1, color="gray", label="vacuum cluster")
    ax.set_xlabel("pump power / threshold")
    ax.set_ylabel("variance [dB rel. vacuum]")
    ax.legend(fontsize=7)
    return save(fig, path)


def plot_regression(labels, estimate, std_error, analytic, predictor, path):
    x = np.arange(len(labels))
    fig, axes = new_figure(width=max(4.0, 0.5 * len(labels) + 2))
    ax = axes[0, 0]
    ax.errorbar(x - 0.1, estimate, yerr=3 * np.asarray(std_error), fmt="o", ms=3, capsize=2, label="regression (3 SE)")
    ax.plot(x, analytic, "x", label="analytic by-product")
    ax.plot(x + 0.1, predictor, "+", label="best linear predictor")
    ax.set_xticks(x, labels, rotation=60, fontsize=6)
    ax.set_ylabel("coefficient")
    ax.legend(fontsize=7)
    return save(fig, path)
