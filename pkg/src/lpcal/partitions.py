"""Twin merge-only partitions of the high-probability bins.

The estimation partition splits the bin set into groups whose sizes are
always powers of two; every group ever created within one size class is
pairwise disjoint with the others, so each size class can share one
disjoint-event query pool per estimate kind.  The prediction partition
groups the same bins by the prediction vector they currently share, with a
cached error estimate per class.

Both structures only merge, never split: group counts are nonincreasing and
a run performs at most one fewer merge than there are bins, per structure.
Every prediction group is at all times a disjoint union of current
estimation groups, so its statistics aggregate over at most
``floor(log2 n_bins) + 1`` stored estimates (all constituents have distinct
power-of-two sizes; equal sizes would already have merged).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import InvariantError
from .simplex import Level, canonical, round_down
from .estimation import DisjointQueryPool
from .world import Predictor

# (kind, event bins, answer) -> None; kind is "prob" or "label".
EstimateHook = Callable[[str, frozenset[Level], np.ndarray], None]


def estimated_error(prob_sum: float, pred: np.ndarray, label_sum: np.ndarray) -> np.ndarray:
    """Per-class error estimate of a group.

    The absolute gap between the label mass the prediction implies for the
    group and the estimated label mass: ``|prob_sum * pred_j - label_sum_j|``.
    """
    return np.abs(prob_sum * np.asarray(pred, float) - np.asarray(label_sum, float))


@dataclass
class EstimationGroup:
    gid: int
    bins: frozenset[Level]
    prob: float  # estimated event probability of the group
    label_mass: np.ndarray  # (k,) estimated per-class label mass

    @property
    def size(self) -> int:
        return len(self.bins)


@dataclass
class PredictionGroup:
    gid: int
    bins: frozenset[Level]
    pred: np.ndarray
    level: Level  # cache of round_down(pred)
    err: np.ndarray  # (k,) cached per-class error estimate


@dataclass(frozen=True)
class MergeEvent:
    """One estimation merge: two equal-size groups replaced by their union."""

    new_gid: int
    left_gid: int
    right_gid: int
    size: int  # cardinality of the merged group


class EstimationPartition:
    """Bin partition carrying pooled statistics, merged in size classes."""

    def __init__(
        self,
        pools: Mapping[int, tuple[DisjointQueryPool, DisjointQueryPool]],
        predictor: Predictor,
        lam: int,
        max_subsets: int,
        on_estimate: EstimateHook | None = None,
    ) -> None:
        self.pools = dict(pools)  # size class i -> (prob pool, label pool)
        self.predictor = predictor
        self.lam = lam
        self.max_subsets = max_subsets
        self.on_estimate = on_estimate
        self.groups: dict[int, EstimationGroup] = {}
        # size class -> ledger of every group's bins ever created in it
        self.history: dict[int, list[frozenset[Level]]] = {}
        self._next_gid = 0

    def _estimate(self, size_class: int, bins: frozenset[Level]) -> tuple[float, np.ndarray]:
        prob_pool, label_pool = self.pools[size_class]
        prob = float(prob_pool.query(bins, self.predictor, self.lam)[0])
        label_mass = label_pool.query(bins, self.predictor, self.lam)
        if self.on_estimate is not None:
            self.on_estimate("prob", bins, np.array([prob]))
            self.on_estimate("label", bins, label_mass)
        return prob, label_mass

    def _record(self, size_class: int, bins: frozenset[Level]) -> None:
        ledger = self.history.setdefault(size_class, [])
        for earlier in ledger:
            if earlier & bins:
                raise InvariantError(
                    f"size class {size_class}: new group overlaps an earlier equal-size group"
                )
        ledger.append(bins)

    def add_singleton(self, v: Level) -> int:
        """Create the initial one-bin group for ``v``, queried on size class 0."""
        bins = frozenset([v])
        self._record(0, bins)
        prob, label_mass = self._estimate(0, bins)
        gid = self._next_gid
        self._next_gid += 1
        self.groups[gid] = EstimationGroup(gid, bins, prob, label_mass)
        return gid

    def constituents(self, bins: frozenset[Level]) -> list[EstimationGroup]:
        """Current groups making up ``bins`` (must tile it exactly)."""
        parts = [g for g in self.groups.values() if g.bins <= bins]
        covered = sum(g.size for g in parts)
        if covered != len(bins):
            raise InvariantError("bin set is not a union of current estimation groups")
        return parts

    def aggregate(self, bins: frozenset[Level]) -> tuple[float, np.ndarray, int]:
        """Sum stored estimates over the constituents of ``bins``.

        Also enforces the structural bound: a prediction group never
        decomposes into more than ``floor(log2 n_bins) + 1`` pieces.
        """
        parts = self.constituents(bins)
        if len(parts) > self.max_subsets:
            raise InvariantError(
                f"{len(parts)} constituents exceed the bound {self.max_subsets}"
            )
        prob_sum = float(sum(g.prob for g in parts))
        label_sum = np.sum([g.label_mass for g in parts], axis=0)
        return prob_sum, np.asarray(label_sum, float), len(parts)

    def merge_pass(self, target: frozenset[Level]) -> list[MergeEvent]:
        """Merge equal-size groups inside ``target`` until all sizes differ.

        Binary-counter behaviour: repeatedly merges the two smallest-id
        groups of the smallest duplicated size.  Each merged group gets fresh
        estimates from its own size class's pools.
        """
        events: list[MergeEvent] = []
        while True:
            inside = sorted(
                (g for g in self.groups.values() if g.bins <= target),
                key=lambda g: (g.size, g.gid),
            )
            pair = None
            for a, b in zip(inside, inside[1:]):
                if a.size == b.size:
                    pair = (a, b)
                    break
            if pair is None:
                return events
            a, b = pair
            merged = a.bins | b.bins
            size_class = len(merged).bit_length() - 1
            if size_class not in self.pools:
                raise InvariantError(f"no pools for size class {size_class}")
            self._record(size_class, merged)
            prob, label_mass = self._estimate(size_class, merged)
            del self.groups[a.gid]
            del self.groups[b.gid]
            gid = self._next_gid
            self._next_gid += 1
            self.groups[gid] = EstimationGroup(gid, merged, prob, label_mass)
            events.append(MergeEvent(gid, a.gid, b.gid, len(merged)))

    def check_invariants(self, universe: frozenset[Level]) -> None:
        """Power-of-two sizes, exact partition, historical disjointness."""
        total = 0
        seen: set[Level] = set()
        for g in self.groups.values():
            if g.size & (g.size - 1):
                raise InvariantError(f"group {g.gid} has non-power-of-2 size {g.size}")
            if seen & g.bins:
                raise InvariantError("current estimation groups overlap")
            seen |= g.bins
            total += g.size
        if total != len(universe) or seen != universe:
            raise InvariantError("current estimation groups do not partition the bin set")
        for size_class, ledger in self.history.items():
            for i, a in enumerate(ledger):
                for b in ledger[i + 1 :]:
                    if a & b:
                        raise InvariantError(
                            f"historical groups of size class {size_class} overlap"
                        )


class PredictionPartition:
    """Bin partition by shared prediction vector, with cached errors."""

    def __init__(self, lam: int) -> None:
        self.lam = lam
        self.groups: dict[int, PredictionGroup] = {}
        self._next_gid = 0

    def add_singleton(self, v: Level, pred: np.ndarray, err: np.ndarray) -> int:
        gid = self._next_gid
        self._next_gid += 1
        self.groups[gid] = PredictionGroup(
            gid, frozenset([v]), pred, round_down(pred, self.lam), err
        )
        return gid

    def set_pred(self, gid: int, pred: np.ndarray) -> None:
        g = self.groups[gid]
        g.pred = np.asarray(pred, float)
        g.level = round_down(g.pred, self.lam)

    def find_collision(self, level: Level, exclude: int) -> int | None:
        """The unique other group whose prediction rounds to ``level``."""
        matches = [g.gid for g in self.groups.values() if g.gid != exclude and g.level == level]
        if len(matches) > 1:
            raise InvariantError(f"multiple groups share level {level}: {matches}")
        return matches[0] if matches else None

    def merge(self, a: int, b: int, winner_pred: np.ndarray) -> int:
        """Replace groups ``a`` and ``b`` by their union with the winning pred.

        The caller picks the winner (larger aggregated probability mass) and
        recomputes the cached errors afterwards.
        """
        if a == b:
            raise ValueError("cannot merge a group with itself")
        ga, gb = self.groups.pop(a), self.groups.pop(b)
        gid = self._next_gid
        self._next_gid += 1
        pred = np.asarray(winner_pred, float)
        self.groups[gid] = PredictionGroup(
            gid,
            ga.bins | gb.bins,
            pred,
            round_down(pred, self.lam),
            np.full_like(ga.err, np.nan),
        )
        return gid

    def routing(self) -> dict[Level, np.ndarray]:
        """Bin -> current group prediction, for assembling the final predictor."""
        out: dict[Level, np.ndarray] = {}
        for g in self.groups.values():
            for v in g.bins:
                out[v] = g.pred
        return out

    def check_invariants(self, universe: frozenset[Level]) -> None:
        """Exact partition of the bin set and pairwise distinct levels."""
        seen: set[Level] = set()
        levels: set[Level] = set()
        for g in self.groups.values():
            if seen & g.bins:
                raise InvariantError("current prediction groups overlap")
            seen |= g.bins
            if g.level in levels:
                raise InvariantError(f"two prediction groups round to level {g.level}")
            levels.add(g.level)
        if seen != universe:
            raise InvariantError("prediction groups do not partition the bin set")


def check_refinement(pred_part: PredictionPartition, est_part: EstimationPartition) -> None:
    """Every prediction group must be a disjoint union of estimation groups."""
    used = 0
    for g in pred_part.groups.values():
        parts = est_part.constituents(g.bins)
        used += len(parts)
    if used != len(est_part.groups):
        raise InvariantError("some estimation group is split across prediction groups")


def init_structures(
    bins: Iterable[Level],
    pools: Mapping[int, tuple[DisjointQueryPool, DisjointQueryPool]],
    predictor: Predictor,
    lam: int,
    max_subsets: int,
    on_estimate: EstimateHook | None = None,
) -> tuple[EstimationPartition, PredictionPartition]:
    """Singleton initialization of both partitions.

    Every bin gets a one-bin group in each structure; its statistics come
    from one query pair to the size-class-0 pools, its prediction is the
    bin's canonical distribution, and its cached error is the estimated gap
    ``|prob * pred_j - label_mass_j|``.
    """
    bins = sorted(bins)
    if not bins:
        raise ValueError("bin set must be nonempty")
    est = EstimationPartition(pools, predictor, lam, max_subsets, on_estimate)
    pred_part = PredictionPartition(lam)
    for v in bins:
        gid = est.add_singleton(v)
        grp = est.groups[gid]
        pred = canonical(v, lam)
        pred_part.add_singleton(v, pred, estimated_error(grp.prob, pred, grp.label_mass))
    return est, pred_part
