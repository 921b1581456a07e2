"""Trace-level evaluation metrics and plot emission.

Metric definitions (also embedded in every metrics report):

    spearman_mean        mean Spearman rank correlation between the value
                         trace v_hat(t) and the ground-truth return G_t,
                         over success episodes
    auc_mid_episode      probability that a failure episode's v_hat at the
                         frame nearest T/2 ranks above a success episode's
                         (ties count 1/2), over all episode pairs
    failure_sensitivity  mean value jump across the injected failure step:
                         mean v_hat over (s, s+w] minus mean over [s-w, s),
                         w = max(5, round(0.15 T)); positive means the
                         value rises toward the failure range at the event
    failure_jump_positive_frac  fraction of failure episodes whose jump is
                         positive
    isotonic_deviation   mean squared deviation of a success episode's
                         trace from its best non-increasing fit (trace
                         jitter), averaged over success episodes
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import stats

from .baseline import BaselineCheckpoint, baseline_trace
from .episodes import Episode
from .sampling import SamplerConfig, value_trace
from .training import Checkpoint

METRIC_DEFINITIONS = {
    "spearman_mean": "mean Spearman(v_hat trace, G_t) over success episodes",
    "auc_mid_episode": "P(failure v_hat > success v_hat) at the frame nearest T/2, ties 1/2",
    "failure_sensitivity": "mean of [mean v_hat over (s, s+w] - mean over [s-w, s)] at the "
    "injected failure step s, w = max(5, round(0.15 T)); positive = value rises toward "
    "the failure range",
    "failure_jump_positive_frac": "fraction of failure episodes with a positive jump",
    "isotonic_deviation": "mean squared deviation from the best non-increasing fit, "
    "success episodes",
}


def spearman(a, b) -> float:
    """Spearman rank correlation; 0.0 when either input is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    rho = stats.spearmanr(a, b).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def pairwise_auc(pos, neg) -> float:
    """Rank AUC: P(pos > neg) + 0.5 P(pos == neg) over all pairs."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one episode of each label")
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (len(pos) * len(neg)))


def mid_episode_value(rows: list[dict], T: int) -> float:
    """v_hat at the trace point nearest T/2."""
    ts = np.array([r["t"] for r in rows])
    return float(rows[int(np.argmin(np.abs(ts - T / 2)))]["v_hat"])


def failure_jump(rows: list[dict], trigger: int, T: int) -> float:
    """Jump of v_hat across the failure trigger (see METRIC_DEFINITIONS)."""
    w = max(5, round(0.15 * T))
    ts = np.array([r["t"] for r in rows])
    vs = np.array([r["v_hat"] for r in rows])
    pre = (ts >= trigger - w) & (ts < trigger)
    post = (ts > trigger) & (ts <= trigger + w)
    if not pre.any():
        pre = ts == ts[ts < trigger].max() if (ts < trigger).any() else ts == ts.min()
    if not post.any():
        post = ts == ts[ts > trigger].min() if (ts > trigger).any() else ts == ts.max()
    return float(vs[post].mean() - vs[pre].mean())


def pava_nonincreasing(y) -> np.ndarray:
    """Best (least-squares) non-increasing fit via pool adjacent violators."""
    y = np.asarray(y, dtype=np.float64)
    # fit non-decreasing on the negated series
    vals = list(-y)
    means: list[float] = []
    counts: list[int] = []
    for v in vals:
        means.append(v)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, c2 = means.pop(), counts.pop()
            m1, c1 = means.pop(), counts.pop()
            means.append((m1 * c1 + m2 * c2) / (c1 + c2))
            counts.append(c1 + c2)
    fit = np.repeat(means, counts)
    return -fit


def isotonic_deviation(rows: list[dict]) -> float:
    vs = np.array([r["v_hat"] for r in rows], dtype=np.float64)
    fit = pava_nonincreasing(vs)
    return float(np.mean((vs - fit) ** 2))


def build_value_tracer(ckpt: Checkpoint | BaselineCheckpoint, sampler: SamplerConfig | None = None):
    """Closure episode, stride -> trace rows, with the model built once."""
    if isinstance(ckpt, BaselineCheckpoint):
        return lambda episode, stride: baseline_trace(ckpt, episode, stride)
    model = ckpt.build_model()
    model.eval()
    codec = ckpt.build_codec()
    cfg = sampler or SamplerConfig()
    return lambda episode, stride: value_trace(model, codec, episode, stride, cfg)


def evaluate_traces(
    traces_by_model: dict[str, list[list[dict]]], episodes: list[Episode]
) -> dict:
    """Aggregate metrics per model; returns a JSON-ready report."""
    report: dict = {"definitions": METRIC_DEFINITIONS, "warnings": [], "models": {}}
    failure_meta = [
        (i, ep.meta.get("failure_event"))
        for i, ep in enumerate(episodes)
        if not ep.success
    ]
    have_triggers = all(ev is not None for _, ev in failure_meta) and failure_meta

    for name, traces in traces_by_model.items():
        succ_rhos, succ_dev = [], []
        mid_pos, mid_neg = [], []
        jumps = []
        for ep, rows in zip(episodes, traces):
            mid = mid_episode_value(rows, ep.T)
            if ep.success:
                succ_rhos.append(
                    spearman([r["v_hat"] for r in rows], [r["g_true"] for r in rows])
                )
                succ_dev.append(isotonic_deviation(rows))
                mid_neg.append(mid)
            else:
                mid_pos.append(mid)
                ev = ep.meta.get("failure_event")
                if ev is not None:
                    jumps.append(failure_jump(rows, ev["trigger"], ep.T))

        entry = {
            "n_episodes": len(episodes),
            "n_success": len(mid_neg),
            "n_failure": len(mid_pos),
            "spearman_mean": float(np.mean(succ_rhos)) if succ_rhos else None,
            "isotonic_deviation": float(np.mean(succ_dev)) if succ_dev else None,
            "auc_mid_episode": pairwise_auc(mid_pos, mid_neg) if mid_pos and mid_neg else None,
        }
        if have_triggers and jumps:
            entry["failure_sensitivity"] = float(np.mean(jumps))
            entry["failure_jump_positive_frac"] = float(np.mean([j > 0 for j in jumps]))
        else:
            entry["failure_sensitivity"] = None
            entry["failure_jump_positive_frac"] = None
            if mid_pos:
                msg = f"{name}: failure episodes lack event metadata; failure_sensitivity disabled"
                report["warnings"].append(msg)
        report["models"][name] = entry
    return report


def write_metrics_json(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def plot_traces(
    episodes: list[Episode],
    traces_by_model: dict[str, list[list[dict]]],
    out_dir: str | Path,
) -> list[Path]:
    """One PNG per episode, all models overlaid, failure window shaded."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, ep in enumerate(episodes):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        first = next(iter(traces_by_model.values()))[i]
        ax.plot(
            [r["t"] for r in first],
            [r["g_true"] for r in first],
            "k--",
            lw=1,
            label="G_t (ground truth)",
        )
        for name, traces in traces_by_model.items():
            rows = traces[i]
            ax.plot([r["t"] for r in rows], [r["v_hat"] for r in rows], lw=1.4, label=name)
        ev = ep.meta.get("failure_event")
        if ev is not None:
            s = ev["trigger"]
            ax.axvspan(s, min(s + max(5, round(0.15 * ep.T)), ep.T), color="tab:red", alpha=0.15)
        ax.set_xlabel("step t")
        ax.set_ylabel("value")
        ax.set_ylim(-0.1, 2.1)
        outcome = "success" if ep.success else f"failure ({ev['kind']})" if ev else "failure"
        ax.set_title(f"{ep.ep_id or ep.task_id}: {outcome}")
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = out_dir / f"trace_{i:03d}.png"
        fig.savefig(p, dpi=110)
        plt.close(fig)
        paths.append(p)
    return paths
