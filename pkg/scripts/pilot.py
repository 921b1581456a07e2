"""Pilot runs for freezing acceptance tolerances.

Trains the desk-scale experiment config on the overfit corpus (8 eps) and
on the main corpus (200 eps), then prints decoded-MSE / trace metrics so
the gate thresholds can be confirmed before they are frozen in the
acceptance suite.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import flowval as fv
from flowval.evaluation import build_value_tracer, evaluate_traces
from flowval.model import ModelConfig
from flowval.sampling import SamplerConfig, infer
from flowval.training import LossWeights, TrainSchedule, train

SMALL = ModelConfig(n_layers=3, width=96, heads=4, token_patch=2, horizon=50)


def decoded_mses(ckpt, episodes, stride=7):
    model = ckpt.build_model()
    model.eval()
    codec = ckpt.build_codec()
    sc = SamplerConfig()
    ev, eq = [], []
    for ep in episodes:
        for t in range(0, ep.T + 1, stride):
            qh, est = infer(model, codec, ep.step(t), sc)
            g = (ep.T - t) / ep.T + (0 if ep.success else 1)
            ev.append((est.v_hat - g) ** 2)
            fut = min(t + ckpt.config.horizon, ep.T)
            eq.append(float(np.mean((qh.values - ep.proprio[fut]) ** 2)))
    return float(np.mean(ev)), float(np.mean(eq))


def main():
    print("=== overfit pilots (8 episodes) ===", flush=True)
    eps8 = fv.generate_corpus(4, 4, seed=21)
    for lr in (3e-4, 1e-3):
        t0 = time.time()
        ckpt, rows = train(eps8, SMALL, fv.LossWeights(), TrainSchedule(2000, 16, lr, 0))
        mse_v, mse_q = decoded_mses(ckpt, eps8)
        tail = np.mean([r["total_loss"] for r in rows[-50:]])
        print(
            f"lr={lr}: {time.time()-t0:.0f}s  final-50 loss {tail:.4f}  "
            f"value MSE {mse_v:.5f}  proprio MSE {mse_q:.5f}",
            flush=True,
        )

    print("=== quality pilot (200 train / 50 held out) ===", flush=True)
    t0 = time.time()
    train_eps = fv.generate_corpus(100, 100, seed=11)
    hold_eps = fv.generate_corpus(25, 25, seed=12)
    print(f"corpora in {time.time()-t0:.0f}s", flush=True)

    for steps, lr in ((4000, 3e-4), (4000, 6e-4)):
        t0 = time.time()
        ckpt, rows = train(train_eps, SMALL, fv.LossWeights(), TrainSchedule(steps, 16, lr, 0))
        t_train = time.time() - t0
        t0 = time.time()
        tracer = build_value_tracer(ckpt, SamplerConfig())
        traces = [tracer(ep, 5) for ep in hold_eps]
        report = evaluate_traces({"viva": traces}, hold_eps)
        m = report["models"]["viva"]
        print(
            f"steps={steps} lr={lr}: train {t_train:.0f}s eval {time.time()-t0:.0f}s  "
            f"spearman {m['spearman_mean']:.3f}  auc {m['auc_mid_episode']:.3f}  "
            f"jump+ {m['failure_jump_positive_frac']:.2f}  "
            f"sens {m['failure_sensitivity']:.3f}  isodev {m['isotonic_deviation']:.5f}",
            flush=True,
        )


if __name__ == "__main__":
    main()
