#!/usr/bin/env python3
"""Planted-model multi-label benchmark: exact scan vs hashed diverse
prediction at growing label counts. Prints per-method precision, evaluated
label fraction, and mean prediction time.

Run: python scripts/multilabel_benchmark.py [--labels 2000,10000]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import hashdiv as hd
from hashdiv.experiment import make_planted


def bench(n_labels, rank, d, n_queries, alpha, lam, l, L, seed):
    model, X, truth = make_planted(n_labels, rank, d, n_queries, n_clusters=max(10, n_labels // 200), seed=seed)
    index = hd.build_label_index(model, l, L, seed=seed)
    for i in range(10):
        hd.predict_exact(model, X[i], alpha)
        hd.predict_diverse(model, index, X[i], alpha, lam)

    t0 = time.perf_counter()
    exact = [hd.predict_exact(model, X[i], alpha) for i in range(n_queries)]
    t_exact = (time.perf_counter() - t0) / n_queries
    t0 = time.perf_counter()
    diverse = [hd.predict_diverse(model, index, X[i], alpha, lam) for i in range(n_queries)]
    t_div = (time.perf_counter() - t0) / n_queries

    def precision(preds):
        return float(np.mean([len(set(p.labels.tolist()) & truth[i]) / alpha for i, p in enumerate(preds)]))

    evals = float(np.mean([p.eval_count for p in diverse]))
    return {
        "exact": (precision(exact), 1.0, t_exact * 1e3),
        "lsh-sdiv": (precision(diverse), evals / n_labels, t_div * 1e3),
    }


def run(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--labels", default="2000,10000")
    parser.add_argument("--rank", type=int, default=20)
    parser.add_argument("--d", type=int, default=50)
    parser.add_argument("--n-queries", type=int, default=200)
    parser.add_argument("--alpha", type=int, default=10)
    parser.add_argument("--lambda", dest="lam", type=float, default=0.9)
    parser.add_argument("--l", type=int, default=14)
    parser.add_argument("--L", type=int, default=12)
    parser.add_argument("--seed", type=int, default=5)
    args = parser.parse_args(argv)

    print(f"{'labels':>8} {'method':>10} {'P@alpha':>8} {'eval frac':>10} {'ms/query':>9}")
    for n_labels in (int(t) for t in args.labels.split(",")):
        rows = bench(n_labels, args.rank, args.d, args.n_queries, args.alpha, args.lam, args.l, args.L, args.seed)
        for method, (p, frac, ms) in rows.items():
            print(f"{n_labels:>8} {method:>10} {p:>8.3f} {frac:>10.4f} {ms:>9.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
