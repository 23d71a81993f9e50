#!/usr/bin/env python3
"""Emit a balance-governed synthetic stream as a CSV usable by the CLI.

Every link sign is the product of two hidden node factions, so all
triangles are balanced and the sign task is exactly solvable from the
routing structure.  The faction assignment is written alongside.
"""

import argparse
from pathlib import Path

import numpy as np

from dysignet.synthetic import generate_balanced_stream


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--nodes", type=int, default=500)
    parser.add_argument("--events", type=int, default=6000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--major-fraction", type=float, default=0.9)
    parser.add_argument("--out", default="data/synthetic_balanced.csv")
    args = parser.parse_args()

    log, factions = generate_balanced_stream(
        n_nodes=args.nodes, n_events=args.events, seed=args.seed,
        major_fraction=args.major_fraction)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log.write_csv(out)
    faction_path = out.with_suffix(".factions.csv")
    np.savetxt(faction_path, np.column_stack([np.arange(len(factions)), factions]),
               fmt="%d", delimiter=",", header="node,faction", comments="")
    print(f"wrote {out} ({len(log)} events over {log.node_count} nodes)")
    print(f"wrote {faction_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
