"""Synthetic stream generators for controlled experiments.

The two-faction stream assigns every node a hidden faction and signs each
uniformly-drawn edge by the product of the endpoint factions, so all
triangles are balanced and signs are deterministically closed under the
balance rules.  Pair selection carries no faction information, which makes
the sign task unsolvable for a sign-blind encoder.
"""

from __future__ import annotations

import numpy as np

from .events import EventLog, SignedEvent


def generate_balanced_stream(n_nodes: int = 500, n_events: int = 6000, seed: int = 0,
                             magnitude: float = 1.0, major_fraction: float = 0.9):
    """Returns (EventLog, factions) with factions in {-1, +1} per node.

    ``major_fraction`` controls the faction imbalance; real trust networks
    are strongly majority-positive, which corresponds to one dominant
    faction.
    """
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(seed)
    factions = np.where(rng.random(n_nodes) < major_fraction, 1, -1)
    if np.all(factions == factions[0]):  # degenerate draw on tiny graphs
        factions[0] = -factions[0]
    events = []
    for i in range(n_events):
        u = int(rng.integers(n_nodes))
        v = int(rng.integers(n_nodes - 1))
        if v >= u:
            v += 1
        sign = int(factions[u] * factions[v])
        events.append(SignedEvent(float(i + 1), u, v, sign * magnitude))
    log = EventLog(events, n_nodes, {i: i for i in range(n_nodes)})
    return log, factions
