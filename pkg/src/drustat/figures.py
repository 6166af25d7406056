"""Figure rendering for the Monte Carlo outputs.

Renders the two standard views of a coverage study to image files next to
the CSV output: Wald coverage against sample size per method, and the
distribution of sqrt(n)-scaled errors at the largest sample size.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .simulation import SimResults

_METHOD_LABELS = {
    "aipw": "AIPW",
    "omega": "omega-corrected",
    "mu": "mu-corrected",
    "main": "double-kernel",
    "oracle": "oracle AIPW",
}


def plot_coverage(results: SimResults, path: str) -> None:
    """Coverage vs n, one line per method, with the nominal level marked."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ns = list(results.config.n_values)
    for method in results.config.methods:
        cov = [results.summary(method, n).coverage for n in ns]
        ax.plot(ns, cov, marker="o", label=_METHOD_LABELS.get(method, method))
    ax.axhline(1.0 - results.config.alpha, color="grey", linestyle="--", linewidth=1)
    ax.set_xlabel("sample size n")
    ax.set_ylabel("Wald coverage")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(
        f"coverage (r_pi={results.config.r_pi}, r_mu={results.config.r_mu}, "
        f"reps={results.config.reps})"
    )
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_error_distribution(results: SimResults, path: str) -> None:
    """Boxplots of sqrt(n) * (psi_hat - psi) per method at the largest n."""
    n_show = max(results.config.n_values)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    series, labels = [], []
    for method in results.config.methods:
        errs = [
            r.sqrt_n_error
            for r in results.records
            if r.method == method and r.n == n_show and not r.failed
        ]
        if errs:
            series.append(errs)
            labels.append(_METHOD_LABELS.get(method, method))
    ax.boxplot(series, tick_labels=labels)
    ax.axhline(0.0, color="grey", linestyle="--", linewidth=1)
    ax.set_ylabel(r"$\sqrt{n}\,(\hat\psi - \psi)$")
    ax.set_title(
        f"error distribution at n={n_show} "
        f"(r_pi={results.config.r_pi}, r_mu={results.config.r_mu})"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_simulation_figures(results: SimResults, out_dir: str) -> list[str]:
    """Write coverage.png and errors.png into ``out_dir``; returns the paths."""
    import os

    cov_path = os.path.join(out_dir, "coverage.png")
    err_path = os.path.join(out_dir, "errors.png")
    plot_coverage(results, cov_path)
    plot_error_distribution(results, err_path)
    return [cov_path, err_path]
