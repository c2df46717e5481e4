"""Figures for run reports.

Figures are drawn on standalone ``Figure`` objects with the Agg canvas, so
nothing touches pyplot's global state and runs may render concurrently.
Each renderer has a gnuplot twin that reads the same CSV data.
"""

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

RC = {"dpi": 100, "figsize": (7.0, 4.3)}


def _new(nrows=1, ncols=1, **kw):
    fig = Figure(figsize=kw.pop("figsize", RC["figsize"]), dpi=RC["dpi"])
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def plot_stimulus(path_obj, out, stationary=None):
    fig, ax = _new(1, 2, figsize=(9.0, 3.6))
    t = path_obj.times
    stride = max(1, len(t) // 20000)
    for j in range(path_obj.m):
        ax[0, 0].plot(t[::stride], path_obj.values[::stride, j], lw=0.5, label=f"eta_{j + 1}")
    ax[0, 0].set_xlabel("t")
    ax[0, 0].set_ylabel("eta")
    ax[0, 1].hist(path_obj.values[:, 0], bins=80, density=True, color="0.6", label="path")
    if stationary is not None:
        u, p = stationary
        ax[0, 1].plot(u, p, "k-", lw=1.2, label="stationary density")
    ax[0, 1].set_xlabel("eta_1")
    ax[0, 1].legend(frameon=False, fontsize=8)
    return _save(fig, out)


def plot_trajectories(trajs, out, speeds=None, bound_C=None):
    n = 2 if speeds is not None else 1
    fig, ax = _new(1, n, figsize=(4.6 * n, 3.6))
    for tr in trajs:
        for j in range(tr.states.shape[1]):
            ax[0, 0].plot(tr.times, tr.states[:, j], lw=0.8)
    ax[0, 0].set_xlabel("t")
    ax[0, 0].set_ylabel("x")
    if speeds is not None:
        a = ax[0, 1]
        for tr, v in zip(trajs, speeds):
            pos = v > 0
            a.loglog(tr.times[pos], v[pos], lw=0.6)
        if bound_C is not None:
            t = np.geomspace(trajs[0].times[0], trajs[0].times[-1], 50)
            a.loglog(t, bound_C / t, "k--", lw=1.0, label="C/t")
            a.legend(frameon=False, fontsize=8)
        a.set_xlabel("t")
        a.set_ylabel("|dx/dt|")
    return _save(fig, out)


def plot_sweep(sweep, out):
    fig, ax = _new(1, 2, figsize=(9.0, 3.6))
    t0 = np.array(sweep.t0_sequence)
    gaps = np.array(sweep.hausdorff_gaps, dtype=float)
    ok = np.isfinite(gaps) & (gaps > 0)
    ax[0, 0].semilogy(t0[ok], gaps[ok], "o-")
    ax[0, 0].axhline(sweep.eps, color="k", ls="--", lw=0.8)
    ax[0, 0].set_xlabel("t0")
    ax[0, 0].set_ylabel("Hausdorff gap")
    _scatter_set(ax[0, 1], sweep.final)
    ax[0, 1].set_title(f"A(t) estimate, t={sweep.target_t:g}", fontsize=9)
    return _save(fig, out)


def plot_set(estimate, out, title=""):
    fig, ax = _new()
    _scatter_set(ax[0, 0], estimate)
    ax[0, 0].set_title(title, fontsize=9)
    return _save(fig, out)


def _scatter_set(a, est):
    p = est.points
    if p.shape[1] == 1:
        a.plot(p[:, 0], np.zeros(len(p)), "|", ms=12)
        a.set_yticks([])
        a.set_xlabel("x")
    else:
        a.plot(p[:, 0], p[:, 1], ".", ms=2)
        a.set_xlabel("x_1")
        a.set_ylabel("x_2")


def gnuplot_script(out, png, series, xlabel="t", ylabel="", logscale=False):
    """Write a gnuplot script plotting ``(csv, xcol, ycol, title)`` series."""
    lines = ["set datafile separator ','", "set key autotitle columnhead",
             f"set xlabel '{xlabel}'", f"set ylabel '{ylabel}'",
             "set terminal pngcairo size 800,500", f"set output '{png}'"]
    if logscale:
        lines.append("set logscale xy")
    parts = [f"'{csv}' using {x}:{y} with lines title '{title}'" for csv, x, y, title in series]
    lines.append("plot " + ", \\\n     ".join(parts))
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return out
