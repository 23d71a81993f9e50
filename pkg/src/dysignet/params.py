"""Named parameter registry with Adam state and bit-exact checkpoints."""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_FORMAT = "dysignet-params"
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Optimization produced a non-finite value."""


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


class ParameterSet:
    """Flat map of named weight tensors plus per-parameter Adam moments."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def moments(self, name: str):
        return self._m[name], self._v[name]

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            missing = set(self._params) - set(values)
            extra = set(values) - set(self._params)
            raise ValueError(f"parameter name mismatch (missing={missing}, extra={extra})")
        for name, arr in values.items():
            t = self._params[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data[...] = arr

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.step).encode())
        for name in sorted(self._params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._params[name].data).tobytes())
            h.update(np.ascontiguousarray(self._m[name]).tobytes())
            h.update(np.ascontiguousarray(self._v[name]).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "params": {},
        }
        for name, t in self._params.items():
            doc["params"][name] = {
                "shape": list(t.data.shape),
                "data": _encode(t.data),
                "m": _encode(self._m[name]),
                "v": _encode(self._v[name]),
            }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "ParameterSet":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a parameter checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
        ps = cls()
        ps.step = int(doc["step"])
        for name, entry in doc["params"].items():
            shape = tuple(entry["shape"])
            ps.add(name, _decode(entry["data"], shape))
            ps._m[name] = _decode(entry["m"], shape)
            ps._v[name] = _decode(entry["v"], shape)
        return ps


def adam_step(params: ParameterSet, grads, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """One in-place Adam update.  ``grads`` maps parameter tensor -> array."""
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(p)
        if g is None:
            raise ValueError(f"gradient map is missing parameter {name!r}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
