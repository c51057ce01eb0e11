#!/usr/bin/env python3
"""Compare advantage-estimator modes on the synthetic landscape.

Runs the same seeded loop under each estimator mode plus a uniform
random-search baseline with the same evaluation budget, and prints the final
best score, skip-step count, and mean late-phase gradient norm per mode.

Usage: python scripts/compare_estimators.py [--iterations 200] [--seed 0] [--out runs/compare]
"""

import argparse
from pathlib import Path

import numpy as np

from phasevolve.config import MODES, RunConfig
from phasevolve.orchestrator import random_search_best, run_evolution
from phasevolve.tasks import make_task


def build_config(mode: str, seed: int, iterations: int) -> RunConfig:
    return RunConfig(
        task="synthetic",
        mode=mode,
        seed=seed,
        iterations=iterations,
        samples_per_group=8,
        top_k=4,
        learning_rate=0.05,
        weight_decay=0.0,
        synthetic_delta0=0.3,
        synthetic_decay=1e12,
        synthetic_noise=0.0,
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iterations", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="directory for per-mode trace files")
    args = parser.parse_args()

    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    print(f"{'mode':<10} {'best':>8} {'skips':>6} {'late |g|':>9} {'late H':>7}")
    for mode in MODES:
        config = build_config(mode, args.seed, args.iterations)
        task = make_task(config)
        trace_path = out_dir / f"{mode}.jsonl" if out_dir else None
        result = run_evolution(config, task, trace_path=trace_path)
        tail = result.steps[-max(1, args.iterations // 5) :]
        late_grad = float(np.mean([s.grad_norm for s in tail]))
        late_entropy = float(np.mean([s.entropy for s in tail]))
        print(
            f"{mode:<10} {result.best_score:>8.4f} {result.skip_steps:>6d}"
            f" {late_grad:>9.4f} {late_entropy:>7.3f}"
        )

    config = build_config("phase", args.seed, args.iterations)
    baseline = random_search_best(
        make_task(config),
        config.iterations,
        config.samples_per_group,
        config.seq_length,
        config.vocab_size,
        args.seed,
    )
    print(f"{'random':<10} {baseline:>8.4f} {'-':>6} {'-':>9} {'-':>7}")


if __name__ == "__main__":
    main()
