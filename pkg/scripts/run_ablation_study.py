#!/usr/bin/env python3
"""Train and evaluate the full model and its three ablation variants on one
dataset under identical seeds/splits, writing a consolidated CSV table."""

import argparse
import json
from pathlib import Path

from dysignet.harness import TrainConfig, ablation_table, run_ablation
from dysignet.heads import TaskKind


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--task", default="signed-existence",
                        choices=[t.value for t in TaskKind])
    parser.add_argument("--batch-size", type=int, default=1000)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/ablation")
    args = parser.parse_args()

    base = TrainConfig(dataset=args.dataset, task=TaskKind.from_name(args.task),
                       batch_size=args.batch_size, lr=args.lr,
                       max_epochs=args.epochs, seed=args.seed)
    reports = run_ablation(base)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = ablation_table(reports)
    (out_dir / "ablation_table.csv").write_text(table)
    for name, report in reports.items():
        (out_dir / f"report_{name}.json").write_text(json.dumps(report.to_dict(), indent=2))
    print(table)
    print(f"reports under {out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
