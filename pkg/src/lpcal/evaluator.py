"""Exact and empirical calibration-error measurement.

For a finite world every quantity of interest is a finite sum, so the
evaluator computes them exactly: the per-(bin, class) calibration error

    err(h, v, j) = | sum_x mass(x) * (h(x)_j - conditional(x)_j)
                                   * 1[ round(h(x)) = v ] |,

its p-norm over all (bin, class) pairs, and the expected squared error
``E ||h(x) - y||^2`` with the label expectation taken in closed form.  Note
the conditioning: evaluating a predictor always bins by that predictor's own
rounded outputs, never by the bins of whatever predictor it was derived
from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simplex import Level, round_down
from .world import Predictor, SampleBatch, World

PList = tuple[float, ...]


def _as_table(pred: Predictor | np.ndarray) -> np.ndarray:
    if isinstance(pred, Predictor):
        return pred.table
    return np.asarray(pred, dtype=float)


def exact_error_table(
    world: World, pred: Predictor | np.ndarray, lam: int
) -> dict[Level, np.ndarray]:
    """Per-bin, per-class exact calibration error of ``pred``.

    Only bins realized by some feature appear; all other bins contribute
    exactly zero.
    """
    table = _as_table(pred)
    signed: dict[Level, np.ndarray] = {}
    for x in range(world.n_features):
        v = round_down(table[x], lam)
        gap = world.mass[x] * (table[x] - world.conditional[x])
        if v in signed:
            signed[v] = signed[v] + gap
        else:
            signed[v] = gap.copy()
    return {v: np.abs(g) for v, g in signed.items()}


def exact_bin_class_error(
    world: World, pred: Predictor | np.ndarray, lam: int, v: Level, j: int
) -> float:
    """Exact calibration error of one (bin, class) pair."""
    return float(exact_error_table(world, pred, lam).get(v, np.zeros(world.k))[j])


def lp_aggregate(errors: dict[Level, np.ndarray], p: float) -> float:
    """p-norm over all (bin, class) error entries; p = inf takes the max."""
    if not errors:
        return 0.0
    flat = np.concatenate([e.ravel() for e in errors.values()])
    if math.isinf(p):
        return float(np.max(flat))
    if p < 1:
        raise ValueError("p must be at least 1")
    return float(np.sum(flat**p) ** (1.0 / p))


def exact_lp_error(world: World, pred: Predictor | np.ndarray, lam: int, p: float) -> float:
    """Exact lp calibration error of ``pred`` at granularity ``lam``."""
    return lp_aggregate(exact_error_table(world, pred, lam), p)


def exact_sq_error(world: World, pred: Predictor | np.ndarray) -> float:
    """Exact expected squared error E ||pred(x) - y||^2 with one-hot labels.

    For a fixed feature, E_y ||q - y||^2 = ||q||^2 + 1 - 2 <q, conditional>.
    """
    table = _as_table(pred)
    per_feature = (
        np.sum(table**2, axis=1)
        + 1.0
        - 2.0 * np.sum(table * world.conditional, axis=1)
    )
    return float(world.mass @ per_feature)


@dataclass(frozen=True)
class ErrorReport:
    """Exact (or empirical) error summary of one predictor."""

    per_bin: dict[Level, np.ndarray]
    aggregates: dict[float, float]  # p -> Err_p
    sq_error: float

    def max_bin_class_error(self) -> float:
        return lp_aggregate(self.per_bin, math.inf)


def exact_report(
    world: World, pred: Predictor | np.ndarray, lam: int, p_list: PList = (1.0, 2.0, math.inf)
) -> ErrorReport:
    errors = exact_error_table(world, pred, lam)
    return ErrorReport(
        per_bin=errors,
        aggregates={p: lp_aggregate(errors, p) for p in p_list},
        sq_error=exact_sq_error(world, pred),
    )


def empirical_report(
    samples: SampleBatch,
    pred: Predictor | np.ndarray,
    lam: int,
    p_list: PList = (1.0, 2.0, math.inf),
    weights: np.ndarray | None = None,
) -> ErrorReport:
    """Sampled analogue of :func:`exact_report`.

    Per-sample weights default to 1/n; passing the exact joint weights of an
    exhaustive (feature, label) enumeration reproduces the exact report.
    """
    if len(samples) == 0:
        raise ValueError("samples must be nonempty")
    table = _as_table(pred)
    k = table.shape[1]
    if weights is None:
        weights = np.full(len(samples), 1.0 / len(samples))
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(samples),):
            raise ValueError("weights must parallel the samples")
    levels = [round_down(row, lam) for row in table]
    onehot = np.eye(k)
    signed: dict[Level, np.ndarray] = {}
    sq = 0.0
    for x, y, w in zip(samples.features, samples.labels, weights):
        v = levels[x]
        gap = w * (table[x] - onehot[y])
        if v in signed:
            signed[v] = signed[v] + gap
        else:
            signed[v] = gap
        sq += w * float(np.sum((table[x] - onehot[y]) ** 2))
    errors = {v: np.abs(g) for v, g in signed.items()}
    return ErrorReport(
        per_bin=errors,
        aggregates={p: lp_aggregate(errors, p) for p in p_list},
        sq_error=sq,
    )
