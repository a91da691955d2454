"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ddcn.core.tensor import Tensor
from ddcn.errors import GradCheckError


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    location: tuple[int, ...]
    checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol

    def __str__(self) -> str:
        return (f"{self.op}: max rel err {self.max_rel_error:.3e} at {self.location} "
                f"({self.checked} entries)")


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def _scalar(f, x: Tensor) -> float:
    val = f(x)
    v = float(val.data.sum()) if isinstance(val, Tensor) else float(val)
    if not np.isfinite(v):
        raise GradCheckError(f"function is not finite at the probe point ({v})")
    return v


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-3, *,
               indices: Sequence[tuple[int, ...]] | None = None,
               name: str = "f") -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    ``indices`` restricts the numeric probe to a subset of entries (the
    analytic gradient is still computed in a single backward pass).
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise GradCheckError(f"{name}: function is not finite at the probe point")
    if out.data.size != 1:
        raise GradCheckError(f"{name}: function must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    if indices is None:
        indices = list(np.ndindex(*base.shape))
    worst, where = 0.0, tuple(indices[0]) if len(indices) else ()
    for idx in indices:
        idx = tuple(int(i) for i in idx)
        plus = base.copy()
        plus[idx] += eps
        minus = base.copy()
        minus[idx] -= eps
        numeric = (_scalar(f, Tensor(plus)) - _scalar(f, Tensor(minus))) / (2 * eps)
        err = float(relative_error(analytic[idx], numeric))
        if err > worst or not np.isfinite(err):
            worst, where = err, idx
    return GradCheckReport(name, worst, where, len(indices))
