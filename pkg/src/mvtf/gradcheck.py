"""Finite-difference verification of reverse-mode gradients.

The numeric side is a central difference evaluated through plain forward
passes; it never touches the autodiff machinery it is checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError
from .tensor import Tensor, no_grad

REL_ERROR_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    tested_shapes: list = field(default_factory=list)

    def __str__(self) -> str:
        shapes = ", ".join(str(s) for s in self.tested_shapes)
        return f"{self.op_name}: max_rel_error={self.max_rel_error:.3e} over [{shapes}]"


def grad_check(op: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-5, name: str | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of ``op`` against central differences.

    Non-scalar outputs are contracted with a fixed random weighting so both
    sides differentiate the same scalar. All inputs are promoted to 64-bit
    copies; the originals are untouched. Returns the worst relative error
    with denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    name = name or getattr(op, "__name__", "op")
    work = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]

    out = op(*work)
    if not np.all(np.isfinite(out.data)):
        raise NumericalError(f"{name} produced non-finite forward values")

    seed_rng = np.random.default_rng(0x5EED)
    weight = seed_rng.standard_normal(out.data.shape)
    out.backward(weight)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in work]

    def scalar_eval() -> float:
        with no_grad():
            value = op(*work)
        if not np.all(np.isfinite(value.data)):
            raise NumericalError(f"{name} produced non-finite forward values")
        return float((value.data * weight).sum())

    max_rel = 0.0
    for t, a in zip(work, analytic):
        flat = t.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            f_plus = scalar_eval()
            flat[i] = keep - eps
            f_minus = scalar_eval()
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), REL_ERROR_FLOOR)
            max_rel = max(max_rel, abs(a_flat[i] - numeric) / denom)

    return GradCheckReport(name, max_rel, [t.shape for t in inputs])
