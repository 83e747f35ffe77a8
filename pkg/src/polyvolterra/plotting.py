"""PNG figures written next to the CSV reports (matplotlib, Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _alpha_label(alpha):
    return "(" + ",".join(str(a) for a in alpha) + ")"


def plot_estimates(results, path):
    """One panel per target time: value of each method per multi-index, with 3 se bars."""
    rows = [e for rs in results.values() for e in rs]
    times = sorted({e.t for e in rows})
    methods = [m for m, rs in results.items() if rs]
    fig, axes = plt.subplots(1, len(times), figsize=(5 * len(times), 4), squeeze=False)
    for ax, t in zip(axes[0], times):
        alphas = sorted({e.alpha for e in rows if e.t == t}, key=lambda a: (sum(a), a))
        pos = {a: i for i, a in enumerate(alphas)}
        width = 0.8 / max(len(methods), 1)
        for k, m in enumerate(methods):
            sel = [e for e in results[m] if e.t == t]
            x = np.array([pos[e.alpha] for e in sel]) - 0.4 + (k + 0.5) * width
            ax.errorbar(x, [e.value for e in sel], yerr=[3 * e.stderr for e in sel],
                        fmt="o", ms=4, capsize=2, label=m)
        ax.set_xticks(range(len(alphas)))
        ax.set_xticklabels([_alpha_label(a) for a in alphas])
        ax.set_xlabel("multi-index")
        ax.set_ylabel("E[X_t^alpha]")
        ax.set_title(f"t = {t:g}")
        ax.set_yscale("log" if all(e.value > 0 for e in rows if e.t == t) else "linear")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_convergence(study, path):
    """Log-log error against the study parameter with the fitted slope."""
    x = np.asarray(study.params, float)
    y = np.asarray(study.errors, float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ok = y > 0
    if ok.any():
        ax.loglog(x[ok], y[ok], "o-", label=f"{study.method}, slope {study.slope:.3g}")
        ax.legend(fontsize=8)
    else:
        ax.plot(x, y, "o-")
        ax.set_xscale("log")
    ax.set_xlabel(study.param)
    ax.set_ylabel("standard error" if study.param == "paths" else "max abs error")
    ax.set_title(f"reference: {study.reference}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_moment_series(table, alphas, path):
    """Diagonal moments against time for the given multi-indices."""
    fig, ax = plt.subplots(figsize=(5, 4))
    t = table.grid.times
    for a in alphas:
        ax.plot(t, table.series(a), label=_alpha_label(a))
    ax.set_xlabel("t")
    ax.set_ylabel("E[X_t^alpha]")
    ax.set_title(f"{table.method}, M = {table.grid.M}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_paths(ensemble, path, n_show=20):
    """A few recorded paths per coordinate."""
    d = ensemble.d
    fig, axes = plt.subplots(1, d, figsize=(5 * d, 4), squeeze=False)
    t = ensemble.times
    live = np.flatnonzero(~ensemble.aborted)[:n_show]
    for i, ax in enumerate(axes[0]):
        ax.plot(t, ensemble.states[live, :, i].T, lw=0.7)
        ax.set_xlabel("t")
        ax.set_ylabel(f"x_{i + 1}")
    fig.suptitle(f"{ensemble.scheme}: {len(live)} of {ensemble.n_paths} paths")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
