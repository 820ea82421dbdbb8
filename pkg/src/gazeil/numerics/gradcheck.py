"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    errors: Dict[str, float] = field(default_factory=dict)


def _scalarize(out: Tensor, weights):
    if out.size == 1:
        return out.reshape(()) if out.ndim else out
    return (out * Tensor(weights)).sum()


def finite_diff_check(fn: Callable[..., Tensor], inputs: Sequence, tolerance: float = 1e-4,
                      h: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Compare backward() against central differences for every input array.

    ``fn`` receives one Tensor per input and returns a Tensor; non-scalar
    outputs are reduced with a fixed random weighting. The relative error of
    an input is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
    ``fn`` must be deterministic (seed any dropout draws inside it).
    """
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    probe = fn(*[Tensor(a) for a in arrays])
    weights = np.random.default_rng(seed).standard_normal(probe.shape) if probe.size > 1 else None

    def value(arrs):
        return _scalarize(fn(*[Tensor(a) for a in arrs]), weights).item()

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    backward(_scalarize(fn(*leaves), weights), params=leaves)

    errors = {}
    for k, a in enumerate(arrays):
        analytic = leaves[k].grad
        numeric = np.zeros_like(a)
        flat = a.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value(arrays)
            flat[i] = orig - h
            fm = value(arrays)
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * h)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        err = 0.0 if scale == 0.0 else float(np.linalg.norm(analytic - numeric) / scale)
        errors[f"input{k}"] = err
    worst = max(errors.values()) if errors else 0.0
    return GradCheckReport(worst, bool(worst < tolerance), errors)
