"""The iterative recalibration loop.

Given a predictor and a sample source, the calibrator derives the working
budget ``beta`` from the target norm and error, selects the bins that carry
enough mass to matter, and then repeatedly picks the (group, class) pair with
the largest cached error estimate, moves that coordinate of the group's
prediction to the estimated conditional label frequency, reprojects onto the
simplex, and merges groups whose predictions land in the same level set.

Termination is only guaranteed when the accuracy events hold, so the loop
carries falsifiable runtime guards instead of assumptions: an iteration cap
derived from the squared-error descent argument, a positivity check on
aggregated group masses, and a cap on the number of selected bins.  Tripping
any guard raises :class:`~lpcal.errors.EstimateFailureError`; continuing
would void the guarantees the run is meant to certify.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import EstimateFailureError, InvariantError
from .estimation import (
    BinMassTable,
    bin_mass_terms,
    estimate_bin_masses,
    pool_create,
)
from .partitions import (
    MergeEvent,
    check_refinement,
    estimated_error,
    init_structures,
)
from .simplex import Level, canonical, level_count, project_simplex, round_down
from .streams import stream_rng
from .world import Predictor, World, draw, exact_event_stats

PNorm = Fraction | float  # a rational > 1, or math.inf


def _ceil_tol(x: float) -> int:
    # ceil that forgives float noise just above an exact integer
    return math.ceil(x - 1e-9)


@dataclass(frozen=True)
class CalibParams:
    """Derived run parameters; all thresholds are fixed by (p, eps, delta).

    beta is the working budget ``eps^(p/(p-1)) / 2^(1/(p-1))`` (equal to eps
    at p = infinity); it is calibrated so that the aggregate guarantee
    ``(Err_p)^p <= 2 * beta^(p-1)`` coincides with ``Err_p <= eps``.
    """

    p: PNorm
    eps: float
    delta: float
    beta: float
    lam: int
    error_threshold: float  # beta/2: loop keeps running above this
    bin_threshold: float  # beta/6: minimum estimated mass to select a bin
    mass_accuracy: float  # beta/12: accuracy target of the bin-mass table
    t_max: int  # iteration cap from the squared-error descent argument

    @property
    def mass_delta(self) -> float:
        return self.delta / 3.0

    @property
    def bin_cap(self) -> int:
        """Most bins that can pass selection when the mass table is accurate."""
        return _ceil_tol(12.0 / self.beta)

    def size_classes(self, n_bins: int) -> int:
        """Number of power-of-2 size classes: floor(log2 n) + 1."""
        if n_bins < 1:
            raise ValueError("n_bins must be positive")
        return n_bins.bit_length()

    def pool_accuracy(self, n_bins: int) -> float:
        return self.beta / (36.0 * self.size_classes(n_bins))

    def pool_delta(self, n_bins: int) -> float:
        return self.delta / (3.0 * self.size_classes(n_bins))


def derive_params(p: PNorm, eps: float, delta: float) -> CalibParams:
    """Validate (p, eps, delta) and derive every run parameter.

    p must exceed 1 (at p = 1 the budget exponent p/(p-1) diverges) or be
    ``math.inf``.  Rational p is kept exact so the exponents carry no float
    drift for common values like 2, 3, or infinity.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0,1), got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    if p == math.inf:
        beta = float(eps)
    else:
        p = Fraction(p)
        if p <= 1:
            raise ValueError(f"p must exceed 1 (or be inf), got {p}")
        e_eps = p / (p - 1)
        e_two = 1 / (p - 1)
        beta = float(eps) ** float(e_eps) / 2.0 ** float(e_two)
    lam = _ceil_tol(1.0 / beta)
    t_max = _ceil_tol((9.0 + (36.0 / lam) * math.log2(36.0 / beta)) / beta**2)
    return CalibParams(
        p=p,
        eps=float(eps),
        delta=float(delta),
        beta=beta,
        lam=lam,
        error_threshold=beta / 2.0,
        bin_threshold=beta / 6.0,
        mass_accuracy=beta / 12.0,
        t_max=t_max,
    )


def select_bins(masses: BinMassTable, params: CalibParams) -> list[Level]:
    """Bins whose estimated mass reaches beta/6, in lexicographic order."""
    return sorted(v for v, mu in masses.masses.items() if mu >= params.bin_threshold)


@dataclass(frozen=True)
class CalibratedPredictor:
    """Final predictor: route selected bins to their group's prediction.

    Any bin outside the selected set falls back to the bin's canonical
    distribution.
    """

    routing: dict[Level, np.ndarray]
    base: Predictor
    lam: int

    def apply(self, x: int) -> np.ndarray:
        v = round_down(self.base.table[x], self.lam)
        pred = self.routing.get(v)
        if pred is None:
            return canonical(v, self.lam)
        return np.array(pred, copy=True)

    def to_table(self) -> np.ndarray:
        """Predictions for every feature, for exact evaluation."""
        return np.stack([self.apply(x) for x in range(self.base.table.shape[0])])


@dataclass
class IterationRecord:
    """One loop iteration, sufficient to replay and audit the run."""

    t: int
    gid: int
    bins: tuple[Level, ...]
    class_j: int
    est_err: float
    target: np.ndarray  # updated prediction vector before reprojection
    target_j: float
    partner_gid: int  # -1 when no collision
    moved_gid: int  # the side whose prediction was discarded; -1 if none
    merged_gid: int  # id of the union group; -1 if none
    est_merges: tuple[MergeEvent, ...]
    post_err: float  # recomputed max error of the (possibly merged) group


@dataclass
class PoolStats:
    name: str
    kind: str  # "prob" or "label"
    size_class: int
    m: int
    n_events: int
    value_dim: int
    alpha: float
    delta: float
    noise_scale: float
    queries_issued: int


@dataclass
class EventMonitor:
    """Tracks worst-case deviation of every estimate from its exact value.

    The accuracy events are statements about estimates the algorithm cannot
    check, but a synthetic world can.  The monitor compares every estimate
    against full-enumeration ground truth so runs can report whether the
    events actually held.
    """

    world: World
    predictor: Predictor
    lam: int
    mass_table_max_dev: float = 0.0
    pool_prob_max_dev: float = 0.0
    pool_label_max_dev: float = 0.0

    def observe_mass_table(self, table: BinMassTable) -> None:
        exact: dict[Level, float] = {}
        for x, lvl in enumerate(self.predictor.levels(self.lam)):
            exact[lvl] = exact.get(lvl, 0.0) + float(self.world.mass[x])
        for v in set(table.masses) | set(exact):
            dev = abs(table.mass(v) - exact.get(v, 0.0))
            self.mass_table_max_dev = max(self.mass_table_max_dev, dev)

    def observe_pool_answer(self, kind: str, bins: frozenset[Level], answer: np.ndarray) -> None:
        mass, mean_label = exact_event_stats(self.world, self.predictor, self.lam, bins)
        if kind == "prob":
            self.pool_prob_max_dev = max(self.pool_prob_max_dev, abs(float(answer[0]) - mass))
        else:
            dev = float(np.max(np.abs(answer - mean_label)))
            self.pool_label_max_dev = max(self.pool_label_max_dev, dev)


@dataclass
class RunTrace:
    """Per-iteration records plus the run-level summary."""

    bins: list[Level]
    records: list[IterationRecord] = field(default_factory=list)
    iterations: int = 0
    bin_mass_stats: dict = field(default_factory=dict)
    pool_stats: list[PoolStats] = field(default_factory=list)
    moved_counts: dict[Level, int] = field(default_factory=dict)
    moved_bound: float = 0.0  # per-bin cap on discarded-prediction merges
    events: dict = field(default_factory=dict)
    t_max: int = 0
    final_max_err: float = 0.0  # largest cached error estimate at loop exit
    wall_time_s: float = 0.0  # diagnostic only; never serialized

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    @property
    def max_moved(self) -> int:
        return max(self.moved_counts.values(), default=0)


def calibrate(
    world: World,
    predictor: Predictor,
    params: CalibParams,
    seed: int,
    *,
    sample_mode: str = "auto",
    manual_sizes: dict | None = None,
    check_invariants: bool = True,
    monitor_events: bool = True,
) -> tuple[CalibratedPredictor, RunTrace]:
    """Run the full calibration loop against a synthetic world.

    ``sample_mode="auto"`` sizes every sample pool by the accuracy formulas;
    ``"manual"`` takes sizes from ``manual_sizes`` (keys "bin_mass",
    "pool_prob", "pool_label") and only monitors the accuracy events instead
    of promising them.  All randomness derives from ``seed`` through named
    streams, so a (config, seed) pair fully determines the trace.
    """
    if sample_mode not in ("auto", "manual"):
        raise ValueError(f"unknown sample_mode {sample_mode!r}")
    if sample_mode == "manual" and not manual_sizes:
        raise ValueError("manual sample_mode requires manual_sizes")
    manual_sizes = manual_sizes or {}
    lam, k = params.lam, world.k
    start = time.perf_counter()

    monitor = EventMonitor(world, predictor, lam) if monitor_events else None

    # Stage 0: bin-mass table and high-probability bin selection.
    n_levels = level_count(lam, k)
    m1, m2 = bin_mass_terms(params.mass_accuracy, params.mass_delta, n_levels)
    m_mass = manual_sizes.get("bin_mass", m1 + m2) if sample_mode == "manual" else m1 + m2
    mass_samples = draw(world, stream_rng(seed, "data:bin-mass"), m_mass)
    mass_table = estimate_bin_masses(mass_samples, predictor, lam)
    if monitor is not None:
        monitor.observe_mass_table(mass_table)

    bins = select_bins(mass_table, params)
    trace = RunTrace(bins=bins, t_max=params.t_max)
    trace.bin_mass_stats = {
        "m1": m1,
        "m2": m2,
        "m": m_mass,
        "alpha": params.mass_accuracy,
        "delta": params.mass_delta,
        "n_levels": n_levels,
    }
    trace.moved_bound = math.log2(36.0 / params.beta)

    if not bins:
        # Nothing carries enough mass to correct; the fallback rounding is
        # already within budget everywhere.
        trace.events = _event_summary(monitor, params, n_bins=0)
        trace.wall_time_s = time.perf_counter() - start
        return CalibratedPredictor({}, predictor, lam), trace

    if len(bins) > params.bin_cap:
        raise EstimateFailureError(
            f"{len(bins)} bins passed selection, above the cap {params.bin_cap}; "
            "the bin-mass table cannot be uniformly accurate"
        )

    n_bins = len(bins)
    classes = params.size_classes(n_bins)
    alpha_pool = params.pool_accuracy(n_bins)
    delta_pool = params.pool_delta(n_bins)

    def on_estimate(kind: str, event: frozenset[Level], answer: np.ndarray) -> None:
        if monitor is not None:
            monitor.observe_pool_answer(kind, event, answer)

    pools = {}
    for i in range(classes):
        m_prob = manual_sizes.get("pool_prob") if sample_mode == "manual" else None
        m_label = manual_sizes.get("pool_label") if sample_mode == "manual" else None
        pools[i] = (
            pool_create(
                world, seed, f"prob:{i}", n_bins, 1, alpha_pool, delta_pool, m=m_prob
            ),
            pool_create(
                world, seed, f"label:{i}", n_bins, k, alpha_pool, delta_pool, m=m_label
            ),
        )

    est_part, pred_part = init_structures(
        bins, pools, predictor, lam, max_subsets=classes, on_estimate=on_estimate
    )
    universe = frozenset(bins)
    if check_invariants:
        est_part.check_invariants(universe)
        pred_part.check_invariants(universe)
        check_refinement(pred_part, est_part)

    trace.moved_counts = {v: 0 for v in bins}
    t = 0
    while True:
        sel_err, sel_gid, sel_j = -1.0, -1, -1
        for gid in sorted(pred_part.groups):
            err = pred_part.groups[gid].err
            if np.any(np.isnan(err)):
                raise InvariantError(f"group {gid} has unset error cache")
            for j in range(k):
                if err[j] > sel_err:
                    sel_err, sel_gid, sel_j = float(err[j]), gid, j
        if sel_err <= params.error_threshold:
            trace.final_max_err = sel_err
            break
        if t >= params.t_max:
            raise EstimateFailureError(
                f"error {sel_err:.6g} still above {params.error_threshold:.6g} "
                f"after t_max={params.t_max} iterations; accuracy events violated"
            )

        group = pred_part.groups[sel_gid]
        sel_bins = tuple(sorted(group.bins))
        prob_sum, label_sum, _ = est_part.aggregate(group.bins)
        if prob_sum <= 0.0:
            raise EstimateFailureError(
                "aggregated group probability is nonpositive; the pooled "
                "probability estimates cannot all be accurate"
            )
        target = np.array(group.pred, copy=True)
        target[sel_j] = min(float(label_sum[sel_j]) / prob_sum, 1.0)
        pred_part.set_pred(sel_gid, project_simplex(target))

        partner_gid = pred_part.find_collision(
            pred_part.groups[sel_gid].level, exclude=sel_gid
        )
        moved_gid, merged_gid = -1, -1
        cur_gid = sel_gid
        if partner_gid is not None:
            prob_sum_partner, _, _ = est_part.aggregate(pred_part.groups[partner_gid].bins)
            if prob_sum <= prob_sum_partner:
                winner_pred = pred_part.groups[partner_gid].pred
                moved_gid = sel_gid
            else:
                winner_pred = pred_part.groups[sel_gid].pred
                moved_gid = partner_gid
            for v in pred_part.groups[moved_gid].bins:
                trace.moved_counts[v] += 1
            merged_gid = pred_part.merge(sel_gid, partner_gid, winner_pred)
            cur_gid = merged_gid

        est_merges = tuple(est_part.merge_pass(pred_part.groups[cur_gid].bins))
        prob_sum2, label_sum2, _ = est_part.aggregate(pred_part.groups[cur_gid].bins)
        pred_part.groups[cur_gid].err = estimated_error(
            prob_sum2, pred_part.groups[cur_gid].pred, label_sum2
        )

        if check_invariants:
            est_part.check_invariants(universe)
            pred_part.check_invariants(universe)
            check_refinement(pred_part, est_part)

        trace.records.append(
            IterationRecord(
                t=t,
                gid=sel_gid,
                bins=sel_bins,
                class_j=sel_j,
                est_err=sel_err,
                target=target,
                target_j=float(target[sel_j]),
                partner_gid=-1 if partner_gid is None else partner_gid,
                moved_gid=moved_gid,
                merged_gid=merged_gid,
                est_merges=est_merges,
                post_err=float(np.max(pred_part.groups[cur_gid].err)),
            )
        )
        t += 1

    trace.iterations = t
    trace.pool_stats = [
        PoolStats(
            name=pool.name,
            kind=kind,
            size_class=i,
            m=pool.m,
            n_events=pool.n_events,
            value_dim=pool.value_dim,
            alpha=pool.alpha,
            delta=delta_pool,
            noise_scale=pool.noise_scale,
            queries_issued=pool.queries_issued,
        )
        for i, pair in sorted(pools.items())
        for kind, pool in zip(("prob", "label"), pair)
    ]
    trace.events = _event_summary(monitor, params, n_bins=n_bins)
    trace.wall_time_s = time.perf_counter() - start
    return CalibratedPredictor(pred_part.routing(), predictor, lam), trace


def _event_summary(monitor: EventMonitor | None, params: CalibParams, n_bins: int) -> dict:
    if monitor is None:
        return {"monitored": False}
    alpha_pool = params.pool_accuracy(n_bins) if n_bins else None
    out = {
        "monitored": True,
        "mass_table_max_dev": monitor.mass_table_max_dev,
        "mass_table_threshold": params.mass_accuracy,
        "mass_table_held": monitor.mass_table_max_dev <= params.mass_accuracy,
        "pool_prob_max_dev": monitor.pool_prob_max_dev,
        "pool_label_max_dev": monitor.pool_label_max_dev,
        "pool_threshold": alpha_pool,
    }
    if n_bins:
        out["pool_prob_held"] = monitor.pool_prob_max_dev <= alpha_pool
        out["pool_label_held"] = monitor.pool_label_max_dev <= alpha_pool
    else:
        out["pool_prob_held"] = True
        out["pool_label_held"] = True
    out["all_held"] = (
        out["mass_table_held"] and out["pool_prob_held"] and out["pool_label_held"]
    )
    return out
