"""Shared test utilities: finite-difference oracles and tiny model configs."""

import numpy as np

from dysignet.encoder import AblationConfig
from dysignet.harness import TrainConfig
from dysignet.heads import TaskKind
from dysignet.tensor import backward


def fd_gradients(build_loss, params, eps=1e-5):
    """Central finite differences of a rebuildable scalar loss w.r.t. every
    parameter.  ``build_loss`` must recompute the full forward pass."""
    out = {}
    for name, p in params.items():
        flat = p.data.ravel()
        g = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = build_loss().item()
            flat[i] = orig - eps
            down = build_loss().item()
            flat[i] = orig
            g[i] = (up - down) / (2 * eps)
        out[name] = g.reshape(p.data.shape)
    return out


def analytic_gradients(build_loss, params):
    grads = backward(build_loss(), leaves=params.tensors())
    return {name: grads[p] for name, p in params.items()}


def max_grad_error(build_loss, params, eps=1e-5):
    """Worst relative error between analytic and finite-difference grads
    (absolute near zero)."""
    fd = fd_gradients(build_loss, params, eps=eps)
    an = analytic_gradients(build_loss, params)
    worst = 0.0
    for name in fd:
        a, f = an[name].ravel(), fd[name].ravel()
        for x, y in zip(a, f):
            scale = max(abs(x), abs(y))
            if scale < 1e-7:
                continue
            worst = max(worst, abs(x - y) / scale)
    return worst


def tiny_config(task=TaskKind.SIGN, ablation="none", **overrides) -> TrainConfig:
    base = dict(
        task=task,
        batch_size=8,
        embedding_dim=8,
        memory_dim=4,
        heads=2,
        feature_dim=2,
        neighbor_cap=16,
        time_scale=0.25,
        lr=1e-2,
        max_epochs=2,
        patience=2,
        seed=0,
        ablation=AblationConfig.from_name(ablation),
    )
    base.update(overrides)
    return TrainConfig(**base)
