"""Finite-difference verification of the hand-derived gradients.

Every backward pass in this package is written by hand, so this harness is
the contract that keeps them honest: central differences around the current
parameters, compared coordinate-by-coordinate against the analytic
gradient, with the relative error

    rel = |a - n| / max(1e-8, |a| + |n|)

A loss function handed to grad_check must be deterministic given the store
(sampled quantities fixed beforehand) and is expected to fill the store's
gradient buffers when asked to.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError
from .params import ParamStore

# fn(store, compute_grads) -> loss; fills store grads iff compute_grads
LossFn = Callable[[ParamStore, bool], float]


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    worst_index: tuple[int, int]
    checked: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def grad_check(
    loss_fn: LossFn,
    params: ParamStore,
    eps: float = 1e-5,
    subsample: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Probe up to `subsample` coordinates of every parameter jointly.

    Coordinates are drawn without replacement across the whole store, so
    small parameters are not starved by large ones on average.
    """
    params.zero_grads()
    base = loss_fn(params, True)
    if not np.isfinite(base):
        raise NumericalError("non-finite loss at the expansion point")
    analytic = {n: params.grad(n).copy() for n in params.names()}

    coords: list[tuple[str, int, int]] = []
    for name in params.names():
        r, c = params.get(name).shape
        coords.extend((name, i, j) for i in range(r) for j in range(c))
    if subsample and len(coords) > subsample:
        if rng is None:
            rng = np.random.default_rng(0)
        pick = rng.choice(len(coords), size=subsample, replace=False)
        coords = [coords[int(k)] for k in sorted(pick)]

    worst = GradCheckResult(0.0, "", (0, 0), 0)
    for name, i, j in coords:
        mat = params.get(name)
        saved = mat[i, j]
        mat[i, j] = saved + eps
        up = loss_fn(params, False)
        mat[i, j] = saved - eps
        down = loss_fn(params, False)
        mat[i, j] = saved
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalError(f"non-finite loss probing {name}[{i},{j}]")
        numeric = (up - down) / (2.0 * eps)
        a = analytic[name][i, j]
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        if rel > worst.max_rel_err:
            worst = GradCheckResult(rel, name, (i, j), 0)
    worst.checked = len(coords)
    return worst
