"""Synthetic finite data distributions with exact ground truth.

A :class:`World` is a finite distribution over abstract feature indices, each
carrying an exact conditional label distribution.  Features are plain
indices: only the predictor's value at a feature and the label law matter, so
predictors are lookup tables.  Finiteness is what makes the exact evaluator
possible: every expectation is a finite sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .simplex import Level, check_prob_vector, project_simplex, round_down
from .streams import stream_rng

SCENARIOS = ("perfect", "overconfident", "shifted", "random-miscalibrated")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class World:
    """Finite data distribution: feature masses and conditional label laws.

    mass:        (n_features,) nonnegative, sums to 1 within 1e-12.
    conditional: (n_features, k) rows are probability vectors.
    """

    mass: np.ndarray
    conditional: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mass", _frozen(self.mass))
        object.__setattr__(self, "conditional", _frozen(self.conditional))
        if self.mass.ndim != 1 or self.conditional.ndim != 2:
            raise ValueError("mass must be 1-d and conditional 2-d")
        if self.mass.shape[0] != self.conditional.shape[0]:
            raise ValueError("mass and conditional disagree on n_features")
        if np.any(self.mass < 0):
            raise ValueError("masses must be nonnegative")
        if abs(float(self.mass.sum()) - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {self.mass.sum()}, not 1")
        for row in self.conditional:
            check_prob_vector(row)

    @property
    def n_features(self) -> int:
        return self.mass.shape[0]

    @property
    def k(self) -> int:
        return self.conditional.shape[1]


@dataclass(frozen=True)
class Predictor:
    """A predictor as a lookup table: row x is its prediction at feature x."""

    table: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "table", _frozen(self.table))
        if self.table.ndim != 2:
            raise ValueError("table must be 2-d")
        for row in self.table:
            check_prob_vector(row)

    @property
    def k(self) -> int:
        return self.table.shape[1]

    def levels(self, lam: int) -> list[Level]:
        """Rounded level set of each row."""
        return [round_down(row, lam) for row in self.table]


@dataclass(frozen=True)
class SampleBatch:
    """A batch of i.i.d. samples: parallel feature and label index arrays."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=np.int64)
        l = np.asarray(self.labels, dtype=np.int64)
        if f.shape != l.shape or f.ndim != 1:
            raise ValueError("features and labels must be parallel 1-d arrays")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", l)

    def __len__(self) -> int:
        return int(self.features.shape[0])


def draw(world: World, rng: np.random.Generator, n: int) -> SampleBatch:
    """Draw ``n`` i.i.d. samples.  Deterministic given the generator state."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    features = rng.choice(world.n_features, size=n, p=world.mass)
    u = rng.random(n)
    cum = np.cumsum(world.conditional, axis=1)
    labels = np.sum(cum[features] <= u[:, None], axis=1)
    np.clip(labels, 0, world.k - 1, out=labels)
    return SampleBatch(features, labels)


def joint_counts(world: World, rng: np.random.Generator, n: int) -> np.ndarray:
    """Counts of ``n`` i.i.d. samples per (feature, label) cell.

    The (n_features, k) count table is a sufficient statistic for any
    per-sample average, so huge pools never materialize sample lists.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    joint = (world.mass[:, None] * world.conditional).ravel()
    joint = joint / joint.sum()
    counts = rng.multinomial(n, joint)
    return counts.reshape(world.n_features, world.k)


def exact_event_stats(
    world: World, predictor: Predictor, lam: int, bins: Iterable[Level]
) -> tuple[float, np.ndarray]:
    """Exact mass and per-class label mass of a bin-set event.

    Returns ``P[R(f(x)) in bins]`` and the vector ``E[y_j * 1[R(f(x)) in
    bins]]`` computed by full enumeration over features.  The label vector is
    unnormalized (it sums to the event mass).
    """
    bins = frozenset(bins)
    if not bins:
        raise ValueError("bins must be nonempty")
    sel = np.fromiter(
        (lvl in bins for lvl in predictor.levels(lam)), dtype=bool, count=world.n_features
    )
    mass = float(world.mass[sel].sum())
    mean_label = world.mass[sel] @ world.conditional[sel]
    return mass, np.asarray(mean_label, dtype=float)


def make_scenario(
    name: str,
    k: int,
    n_features: int,
    seed: int,
    *,
    mass: np.ndarray | None = None,
    conditional: np.ndarray | None = None,
    gamma: float = 0.75,
    shift: float = 0.3,
) -> tuple[World, Predictor]:
    """Reproducible world + initial predictor for a named scenario.

    perfect:               f(x) = conditional(x).
    overconfident:         f moves conditional toward its argmax vertex by
                           factor ``gamma``.
    shifted:               f adds ``shift`` to class 0 and reprojects.
    random-miscalibrated:  f rows drawn uniformly from the simplex,
                           independent of the conditionals.

    ``mass``/``conditional`` override the random world (single-feature worlds
    in tests); everything random comes from the "scenario" stream of ``seed``.
    """
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    rng = stream_rng(seed, "scenario")
    if mass is None:
        mass = rng.dirichlet(np.ones(n_features))
    if conditional is None:
        conditional = rng.dirichlet(np.ones(k), size=n_features)
    world = World(np.asarray(mass, float), np.asarray(conditional, float))
    cond = world.conditional
    if name == "perfect":
        table = cond.copy()
    elif name == "overconfident":
        vertex = np.eye(world.k)[np.argmax(cond, axis=1)]
        table = cond + gamma * (vertex - cond)
    elif name == "shifted":
        biased = cond.copy()
        biased[:, 0] += shift
        table = np.stack([project_simplex(row) for row in biased])
    else:  # random-miscalibrated
        table = rng.dirichlet(np.ones(world.k), size=world.n_features)
    return world, Predictor(table)


def world_to_dict(world: World, predictor: Predictor) -> dict:
    """JSON-ready document: {k, masses[], conditionals[][], predictor[][]}."""
    if predictor.table.shape != world.conditional.shape:
        raise ValueError("predictor shape does not match world")
    return {
        "k": world.k,
        "masses": [float(m) for m in world.mass],
        "conditionals": [[float(c) for c in row] for row in world.conditional],
        "predictor": [[float(c) for c in row] for row in predictor.table],
    }


def world_from_dict(doc: dict) -> tuple[World, Predictor]:
    """Inverse of :func:`world_to_dict`."""
    k = int(doc["k"])
    cond = np.asarray(doc["conditionals"], dtype=float)
    if cond.shape[1] != k:
        raise ValueError("conditionals disagree with k")
    world = World(np.asarray(doc["masses"], dtype=float), cond)
    predictor = Predictor(np.asarray(doc["predictor"], dtype=float))
    if predictor.table.shape != cond.shape:
        raise ValueError("predictor shape does not match world")
    return world, predictor
