"""Finite-difference verification of the reverse-mode gradients.

Every analytic gradient used in training must agree with a central
difference to 1e-4 relative error in float64; the training code itself is
never consulted for the reference values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from ..errors import EvaluationError
from .rng import Rng
from .tensor import Tensor

LossFn = Callable[[Mapping[str, Tensor]], Tensor]

DEFAULT_STEP = 1e-3
DEFAULT_MAX_COORDS = 50


@dataclass(frozen=True)
class GradCheckReport:
    """Worst relative disagreement observed for one parameter tensor."""

    name: str
    max_rel_error: float
    coords_checked: int


def _eval_loss(loss_fn: LossFn, arrays: Mapping[str, np.ndarray]) -> float:
    leaves = {name: Tensor(a) for name, a in arrays.items()}
    value = float(loss_fn(leaves))
    if not np.isfinite(value):
        raise EvaluationError(f"loss is non-finite: {value}")
    return value


def grad_check(loss_fn: LossFn, params: Mapping[str, np.ndarray], rng: Rng,
               step: float = DEFAULT_STEP,
               max_coords: int = DEFAULT_MAX_COORDS) -> list[GradCheckReport]:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` receives a name -> Tensor mapping and must return a scalar;
    it has to be deterministic (freeze any noise before calling). At most
    ``max_coords`` coordinates per tensor are probed, stepping ``step`` in
    each direction. The relative error is
    ``|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)``.
    """
    arrays = {name: np.asarray(a, dtype=np.float64) for name, a in params.items()}
    leaves = {name: Tensor(a, requires_grad=True) for name, a in arrays.items()}
    loss = loss_fn(leaves)
    if not np.isfinite(float(loss)):
        raise EvaluationError(f"loss is non-finite: {float(loss)}")
    loss.backward()

    reports = []
    for name, base in arrays.items():
        analytic = leaves[name].grad
        if analytic is None:  # loss does not depend on this tensor
            analytic = np.zeros_like(base)
        count = min(max_coords, base.size)
        coords = rng.choice(base.size, size=count)
        worst = 0.0
        for flat in coords:
            flat = int(flat)
            perturbed = dict(arrays)
            plus = base.copy()
            plus.flat[flat] += step
            perturbed[name] = plus
            f_plus = _eval_loss(loss_fn, perturbed)
            minus = base.copy()
            minus.flat[flat] -= step
            perturbed[name] = minus
            f_minus = _eval_loss(loss_fn, perturbed)
            g_fd = (f_plus - f_minus) / (2.0 * step)
            g_a = float(analytic.flat[flat])
            err = abs(g_a - g_fd) / max(1e-8, abs(g_a) + abs(g_fd))
            worst = max(worst, err)
        reports.append(GradCheckReport(name=name, max_rel_error=worst,
                                       coords_checked=count))
    return reports
