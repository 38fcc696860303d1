#!/usr/bin/env python3
"""Staged-pruning demo on a synthetic ResNet18-shaped network.

Generates spec/weights/cost-model fixtures into a work directory, builds the
latency table, runs a multi-stage plan, and prints how pruning concentrates
in wide layers.  Artifacts are left on disk so the CLI can be pointed at them:

    python scripts/run_staged_demo.py --workdir /tmp/splamp-demo
    python -m splamp verify /tmp/splamp-demo/plan.json /tmp/splamp-demo/table.json \\
        /tmp/splamp-demo/spec.json /tmp/splamp-demo/weights.splw --oracle
"""

import argparse
import json
import sys
import time
from collections import defaultdict
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from splamp.latency import CostModelParams, LinearCoeffs, build_lookup_table
from splamp.model import dump_tensors
from splamp.planner import PlannerConfig, run_plan
from splamp.zoo import random_store, resnet18_like, spec_to_json


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="demo-out")
    ap.add_argument("--remove-ratio", type=float, default=0.95)
    ap.add_argument("--stages", type=int, default=10)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    out = Path(args.workdir)
    out.mkdir(parents=True, exist_ok=True)
    spec = resnet18_like()
    store = random_store(spec, seed=args.seed)
    params = CostModelParams(default=LinearCoeffs(alpha=1e-9, beta=2e-6, gamma=1e-4))

    (out / "spec.json").write_text(spec_to_json(spec))
    (out / "weights.splw").write_bytes(dump_tensors(store.tensors))
    (out / "cost.json").write_text(
        json.dumps({"model": "linear",
                    "default": {"alpha": 1e-9, "beta": 2e-6, "gamma": 1e-4}}) + "\n"
    )

    t0 = time.time()
    table = build_lookup_table(spec, params, scale=10000)
    target = int(round((1.0 - args.remove_ratio) * table.full_latency))
    config = PlannerConfig(target_latency=target, stages=args.stages,
                           scale=10000, source="analytic")
    plan = run_plan(spec, store, table, config, params)
    elapsed = time.time() - t0
    (out / "plan.json").write_text(plan.to_json())

    print(f"full latency {table.full_latency} units, target {target} "
          f"({args.remove_ratio:.0%} removed), {args.stages} stages, {elapsed:.1f}s")
    print(f"{'stage':>5} {'capacity':>9} {'surrogate':>9} {'exact':>9} {'score':>9}")
    for i, rec in enumerate(plan.stages, 1):
        print(f"{i:>5} {rec.capacity:>9} {rec.surrogate_latency:>9} "
              f"{rec.exact_latency:>9} {rec.score:>9.2f}")

    by_width = defaultdict(list)
    for layer in spec.layers:
        kept = len(plan.final_masks[layer.id])
        by_width[layer.out_channels].append(1.0 - kept / layer.out_channels)
    print("\npruned fraction by initial layer width:")
    for width, fracs in sorted(by_width.items()):
        print(f"  width {width:>4}: {min(fracs):.2f} .. {max(fracs):.2f}")
    print(f"\nFLOPs {plan.flops_before:,} -> {plan.flops_after:,} "
          f"({1 - plan.flops_after / plan.flops_before:.1%} removed)")
    print(f"artifacts in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
