"""Report figures rendered to files: metric bars, per-stream activation
profiles, plan maps with the traveled path, and training curves.

Everything draws through the Agg backend so the CLI works headless; each
function writes one PNG and returns the path it wrote.
"""

from __future__ import annotations

import json

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np

from .env import CELL_METERS, FloorPlan
from .metrics import EpisodeTrace, MetricsReport
from .model import STREAMS

METRIC_LABELS = ("SR", "SPL", "SSR", "NSNPL", "REP", "CP")


def render_metrics_bars(report: MetricsReport, path) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.38
    xs = np.arange(len(METRIC_LABELS))
    for offset, (label, sub) in enumerate((("ALL", report.overall),
                                           ("L>5", report.long))):
        vals = [sub.sr, sub.spl, sub.ssr,
                0.0 if sub.nsnpl is None else sub.nsnpl, sub.rep, sub.cp]
        ax.bar(xs + offset * width, vals, width, label=f"{label} (F={sub.episodes})")
    ax.set_xticks(xs + width / 2)
    ax.set_xticklabels(METRIC_LABELS)
    ax.set_ylabel("percent")
    ax.set_ylim(0, 100)
    ax.legend()
    ax.set_title("evaluation metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_activation_profile(traces: list, path, max_len: int = 100) -> str:
    """Mean activation magnitude per stream at each step index, averaged
    over the traces still running at that index."""
    longest = min(max(len(t.steps) for t in traces), max_len)
    sums = np.zeros((longest, len(STREAMS)))
    counts = np.zeros(longest)
    for t in traces:
        for i, rec in enumerate(t.steps[:longest]):
            sums[i] += np.asarray(rec.activation_means)
            counts[i] += 1
    means = sums / np.maximum(counts, 1.0)[:, None]
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, name in enumerate(STREAMS):
        ax.plot(np.arange(longest), means[:, k], label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("mean activation")
    ax.set_title(f"stream activations over {len(traces)} episodes")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_plan_map(plan: FloorPlan, trace: EpisodeTrace, path) -> str:
    """Occupancy map with the episode's path, start, end, and targets."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(plan.grid, cmap="gray_r", origin="upper")
    cells = [(trace.start_pose[0] / CELL_METERS, trace.start_pose[1] / CELL_METERS)]
    cells += [(r.pose[0] / CELL_METERS, r.pose[1] / CELL_METERS) for r in trace.steps]
    xs = [c[0] for c in cells]
    ys = [c[1] for c in cells]
    ax.plot(xs, ys, "-o", markersize=2.5, linewidth=1.2, color="tab:blue",
            label="path")
    ax.plot(xs[0], ys[0], "s", color="tab:green", markersize=8, label="start")
    ax.plot(xs[-1], ys[-1], "D", color="tab:red", markersize=7, label="end")
    for obj in plan.instances(trace.target):
        ax.plot(obj.position[0], obj.position[1], "*", color="gold",
                markersize=14, markeredgecolor="black", label="target")
    handles, labels = ax.get_legend_handles_labels()
    uniq = dict(zip(labels, handles))
    ax.legend(uniq.values(), uniq.keys(), loc="upper right", fontsize=8)
    outcome = "success" if trace.success else "failure"
    ax.set_title(f"{trace.episode_id} ({outcome})")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_training_curve(log_path, path, window: int = 50) -> str:
    """Episode reward and success moving averages from a training log."""
    episodes = []
    with open(log_path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("kind") == "episode":
                episodes.append((rec["episode_index"], rec["reward"],
                                 1.0 if rec["success"] else 0.0))
    episodes.sort()
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    if episodes:
        idx = np.array([e[0] for e in episodes])
        rewards = np.array([e[1] for e in episodes])
        succ = np.array([e[2] for e in episodes])
        w = max(1, min(window, len(episodes)))
        kernel = np.ones(w) / w
        axes[0].plot(idx[w - 1:], np.convolve(rewards, kernel, "valid"),
                     color="tab:blue")
        axes[1].plot(idx[w - 1:], 100 * np.convolve(succ, kernel, "valid"),
                     color="tab:orange")
    axes[0].set_ylabel(f"reward (avg {window})")
    axes[1].set_ylabel("success %")
    axes[1].set_xlabel("episode")
    axes[0].set_title("training progress")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_ablation_bars(means: dict, path, metric: str = "sr") -> str:
    """Mean value of one metric per ablation variant."""
    variants = list(means)
    vals = [0.0 if means[v][metric] is None else means[v][metric]
            for v in variants]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(len(variants)), vals, color="tab:purple")
    ax.set_xticks(np.arange(len(variants)))
    ax.set_xticklabels(variants, rotation=30, ha="right")
    ax.set_ylabel(f"{metric.upper()} (mean over seeds)")
    ax.set_title("ablation sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
