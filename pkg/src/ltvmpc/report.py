"""CSV/JSON emission and figure rendering for completed runs."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import control_loop as cl
from .matrixcore import spectral_bounds

SCHEMA = 1


def fmt(v):
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return f"{v:.12g}"


def trajectory_header(n, m):
    return (
        ["t"]
        + [f"x_{i + 1}" for i in range(n)]
        + [f"u_{j + 1}" for j in range(m)]
        + ["gamma", "V", "constraint_value", "controller_source", "solve_time_ms"]
    )


def trajectory_rows(summary, timings=True):
    m = summary.weights.m
    for r in summary.records:
        u = [fmt(v) for v in r.u] if r.u is not None else [""] * m
        st = fmt(1e3 * r.solve_time) if timings and r.u is not None else ""
        yield (
            [str(r.t)]
            + [fmt(v) for v in r.x]
            + u
            + [fmt(r.gamma), fmt(r.lyapunov_value), fmt(r.constraint_value if r.u is not None else None),
               r.controller_source, st]
        )


def write_trajectory_csv(summary, path, timings=True):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(summary.weights.n, summary.weights.m))
        w.writerows(trajectory_rows(summary, timings))
    return path


def monitor_verdicts(summary):
    out = {"constraint_ok": summary.max_constraint_value <= 1.0 + 1e-6}
    if summary.p_star is None:
        return out
    if summary.c_rpi is not None:
        beta = 1.0 - spectral_bounds(summary.weights.q)[0] / summary.c
        out["rpi_violations"] = cl.monitor_rpi(summary.records, summary.p_star, summary.c_rpi, beta)
    elif summary.mode != cl.BOOTSTRAP:
        out["lyapunov_violations"] = cl.monitor_lyapunov(summary.records, summary.p_star, summary.weights)
    return out


def has_violation(verdicts):
    return (not verdicts["constraint_ok"]) or bool(verdicts.get("rpi_violations")) or bool(
        verdicts.get("lyapunov_violations")
    )


def run_entry(summary):
    return {
        "seed": summary.seed,
        "mode": summary.mode,
        "closed_loop_cost": summary.closed_loop_cost,
        "max_constraint_value": summary.max_constraint_value,
        "fallback_count": summary.fallback_count,
        "infeasible_count": summary.infeasible_count,
        "final_state_norm": summary.final_state_norm,
        "gamma_star": summary.gamma_star,
        "c": summary.c,
        "c_rpi": summary.c_rpi,
        "rpi_entry_time": summary.rpi_entry_time,
        "initial_infeasible": summary.initial_infeasible,
        "feasible_from": summary.feasible_from,
        "infeasible_steps": list(summary.infeasible_steps),
        "monitors": monitor_verdicts(summary),
    }


def summary_document(scenario, mode, runs, baseline=None, comparison=None, notes=()):
    doc = {
        "schema": SCHEMA,
        "scenario": scenario,
        "mode": mode,
        "seeds": [s.seed for s in runs],
        "runs": [run_entry(s) for s in runs],
        "notes": list(notes),
    }
    if baseline is not None:
        doc["baseline"] = [run_entry(s) for s in baseline]
    if comparison is not None:
        doc["comparison"] = {
            "mean_improvement_pct": 100.0 * comparison.mean_improvement,
            "pooled_improvement_pct": 100.0 * comparison.pooled_improvement,
            "per_seed_pct": {str(k): 100.0 * v for k, v in comparison.per_seed.items()},
        }
    return doc


def write_summary_json(doc, path):
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# --- plot data ---------------------------------------------------------------


def emit_plot_data(families, outdir):
    """Per-figure CSVs in long format.

    ``families`` maps a label (e.g. ``"adaptive"``) to a list of run
    summaries.  Writes ``state_norms.csv``, ``inputs.csv`` and
    ``overlay.csv``; an empty mapping gives header-only files.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    with (outdir / "state_norms.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "seed", "t", "state_norm"])
        for label, runs in families.items():
            for s in runs:
                for r in s.records:
                    w.writerow([label, s.seed, r.t, fmt(np.linalg.norm(r.x))])
    paths["state_norms"] = outdir / "state_norms.csv"
    with (outdir / "inputs.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "seed", "t", "input", "value"])
        for label, runs in families.items():
            for s in runs:
                for r in s.records:
                    if r.u is None:
                        continue
                    for j, v in enumerate(r.u):
                        w.writerow([label, s.seed, r.t, j + 1, fmt(v)])
    paths["inputs"] = outdir / "inputs.csv"
    with (outdir / "overlay.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n = max((s.weights.n for runs in families.values() for s in runs), default=0)
        w.writerow(["family", "seed", "t"] + [f"x_{i + 1}" for i in range(n)])
        for label, runs in families.items():
            for s in runs:
                for r in s.records:
                    w.writerow([label, s.seed, r.t] + [fmt(v) for v in r.x])
    paths["overlay"] = outdir / "overlay.csv"
    return paths


def render_figures(families, outdir):
    """State-norm and input figures as PNG files; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    colors = dict(zip(families, plt.rcParams["axes.prop_cycle"].by_key()["color"]))
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, runs in families.items():
        for k, s in enumerate(runs):
            t = [r.t for r in s.records]
            ax.semilogy(t, [max(np.linalg.norm(r.x), 1e-300) for r in s.records],
                        color=colors[label], alpha=0.7, label=label if k == 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("||x_t||")
    ax.legend()
    fig.tight_layout()
    fig.savefig(outdir / "state_norms.png", dpi=120)
    plt.close(fig)
    written.append(outdir / "state_norms.png")

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, runs in families.items():
        for k, s in enumerate(runs):
            recs = [r for r in s.records if r.u is not None]
            ax.step([r.t for r in recs], [r.u[0] for r in recs], where="post",
                    color=colors[label], alpha=0.7, label=label if k == 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("u_t")
    ax.legend()
    fig.tight_layout()
    fig.savefig(outdir / "inputs.png", dpi=120)
    plt.close(fig)
    written.append(outdir / "inputs.png")
    return written
