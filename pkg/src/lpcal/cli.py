"""Experiment driver: seeded end-to-end runs, reports, traces, sweeps.

Subcommands:

    run       full pipeline (scenario -> sampling -> calibrate -> exact
              evaluation); writes report.json and trace.csv
    sweep     a grid of runs over eps / p / seed with a CSV summary
    eval      exact error report for a serialized world + predictor
    scenario  generate and serialize a scenario world
    levels    enumerate the reachable level sets for (lambda, k)

Configs are JSON documents; command-line flags override file values.  A
(config, seed) pair determines the report and trace byte for byte, which is
why wall-clock time is printed to the console but never serialized.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .calibrator import (
    CalibParams,
    CalibratedPredictor,
    PNorm,
    RunTrace,
    calibrate,
    derive_params,
)
from .errors import EstimateFailureError
from .evaluator import exact_report
from .simplex import Level, enumerate_levels, level_count
from .world import (
    SCENARIOS,
    Predictor,
    World,
    make_scenario,
    world_from_dict,
    world_to_dict,
)


def parse_p(raw: str | float | int) -> PNorm:
    """Parse a norm exponent: "inf", an integer/float, or a fraction "3/2"."""
    if isinstance(raw, str):
        if raw.strip().lower() in ("inf", "infinity"):
            return math.inf
        return Fraction(raw)
    if raw == math.inf:
        return math.inf
    return Fraction(str(raw))


def p_label(p: PNorm) -> str:
    return "inf" if p == math.inf else str(p)


@dataclass
class RunConfig:
    """One experiment cell; everything that determines a run."""

    scenario: str
    k: int
    n_features: int
    p: PNorm
    eps: float
    delta: float
    seed: int
    sample_mode: str = "auto"
    manual_sizes: dict = field(default_factory=dict)
    scenario_kwargs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        scenario = doc.get("scenario", {})
        if isinstance(scenario, str):
            scenario = {"name": scenario}
        known = ("gamma", "shift")
        kwargs = {key: scenario[key] for key in known if key in scenario}
        sample_mode = doc.get("sample_mode", "auto")
        manual = {}
        if isinstance(sample_mode, dict):
            manual = {k: v for k, v in sample_mode.items() if k != "mode"}
            sample_mode = sample_mode.get("mode", "auto")
        return cls(
            scenario=scenario["name"],
            k=int(scenario.get("k", 3)),
            n_features=int(scenario.get("n_features", 20)),
            p=parse_p(doc.get("p", "inf")),
            eps=float(doc["eps"]),
            delta=float(doc.get("delta", 0.1)),
            seed=int(doc.get("seed", 0)),
            sample_mode=sample_mode,
            manual_sizes=manual,
            scenario_kwargs=kwargs,
        )

    def echo(self) -> dict:
        """Path-free echo of the config for the report."""
        doc: dict = {
            "scenario": {"name": self.scenario, "k": self.k, "n_features": self.n_features},
            "p": p_label(self.p),
            "eps": self.eps,
            "delta": self.delta,
            "seed": self.seed,
            "sample_mode": self.sample_mode,
        }
        doc["scenario"].update(self.scenario_kwargs)
        if self.manual_sizes:
            doc["manual_sizes"] = dict(sorted(self.manual_sizes.items()))
        return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(doc: dict) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def level_str(v: Level) -> str:
    return "-".join(str(n) for n in v)


def bins_str(bins) -> str:
    return ";".join(level_str(v) for v in bins)


SLOP = 1e-12  # absolute slack for float-exact bound checks


def build_report(
    world: World,
    predictor: Predictor,
    calibrated: CalibratedPredictor,
    params: CalibParams,
    trace: RunTrace,
    config_echo: dict,
) -> dict:
    """Exact evaluation of the run plus every bound check as a boolean."""
    beta, lam = params.beta, params.lam
    p = params.p
    p_eval = math.inf if p == math.inf else float(p)
    p_list = tuple(sorted({1.0, 2.0, math.inf, p_eval}))
    rep_f = exact_report(world, predictor, lam, p_list)
    rep_h = exact_report(world, calibrated.to_table(), lam, p_list)

    max_bin_err_h = rep_h.max_bin_class_error()
    err_p_f = rep_f.aggregates[p_eval]
    err_p_h = rep_h.aggregates[p_eval]
    sq_budget = (4.0 / lam) * (1.0 + math.log2(36.0 / beta))
    sq_diff = rep_h.sq_error - rep_f.sq_error
    if p == math.inf:
        aggregate_ok = err_p_h <= beta + SLOP
    else:
        aggregate_ok = err_p_h ** float(p) <= 2.0 * beta ** (float(p) - 1.0) + SLOP

    n_bins = trace.n_bins
    checks = {
        "per_bin_le_beta": bool(max_bin_err_h <= beta + SLOP),
        "aggregate_lp": bool(aggregate_ok),
        "err_le_eps": bool(err_p_h <= params.eps + SLOP),
        "sq_budget": bool(sq_diff <= sq_budget + SLOP),
        "pred_moves_bound": bool(trace.max_moved <= trace.moved_bound + SLOP),
        "iterations_le_t_max": bool(trace.iterations <= params.t_max),
        "events_held": bool(trace.events.get("all_held", False)),
    }

    def agg_block(rep):
        return {("pinf" if math.isinf(q) else f"p{q:g}"): rep.aggregates[q] for q in p_list}

    report = {
        "status": "ok",
        "config": config_echo,
        "params": {
            "p": p_label(p),
            "eps": params.eps,
            "delta": params.delta,
            "beta": beta,
            "lambda": lam,
            "error_threshold": params.error_threshold,
            "bin_threshold": params.bin_threshold,
            "mass_accuracy": params.mass_accuracy,
            "t_max": params.t_max,
        },
        "bins": {
            "count": n_bins,
            "cap": params.bin_cap,
            "selected": [level_str(v) for v in trace.bins],
            "size_classes": params.size_classes(n_bins) if n_bins else 0,
            "pool_accuracy": params.pool_accuracy(n_bins) if n_bins else None,
            "pool_delta": params.pool_delta(n_bins) if n_bins else None,
        },
        "bin_mass_table": trace.bin_mass_stats,
        "pools": [
            {
                "name": s.name,
                "kind": s.kind,
                "size_class": s.size_class,
                "m": s.m,
                "n_events": s.n_events,
                "value_dim": s.value_dim,
                "alpha": s.alpha,
                "delta": s.delta,
                "noise_scale": s.noise_scale,
                "queries_issued": s.queries_issued,
            }
            for s in trace.pool_stats
        ],
        "iterations": trace.iterations,
        "pred_moves": {"max": trace.max_moved, "bound": trace.moved_bound},
        "events": trace.events,
        "errors": {
            "f": agg_block(rep_f),
            "h": agg_block(rep_h),
            "run_p": {"p": p_label(p), "f": err_p_f, "h": err_p_h},
            "max_bin_class_h": max_bin_err_h,
        },
        "sq_error": {
            "f": rep_f.sq_error,
            "h": rep_h.sq_error,
            "diff": sq_diff,
            "budget": sq_budget,
        },
        "checks": checks,
    }
    return report


TRACE_COLUMNS = (
    "t",
    "group_id",
    "bins",
    "class_j",
    "est_err",
    "target_j",
    "partner_id",
    "moved_id",
    "merged_id",
    "est_merges",
)


def trace_to_csv(trace: RunTrace) -> str:
    """Deterministic CSV of the per-iteration records."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace.records:
        writer.writerow(
            [
                r.t,
                r.gid,
                bins_str(r.bins),
                r.class_j,
                repr(r.est_err),
                repr(r.target_j),
                r.partner_gid,
                r.moved_gid,
                r.merged_gid,
                len(r.est_merges),
            ]
        )
    return buf.getvalue()


def run_config(cfg: RunConfig) -> tuple[dict, RunTrace, CalibratedPredictor]:
    """Execute one experiment cell in-process."""
    params = derive_params(cfg.p, cfg.eps, cfg.delta)
    world, predictor = make_scenario(
        cfg.scenario, cfg.k, cfg.n_features, cfg.seed, **cfg.scenario_kwargs
    )
    calibrated, trace = calibrate(
        world,
        predictor,
        params,
        cfg.seed,
        sample_mode=cfg.sample_mode,
        manual_sizes=cfg.manual_sizes or None,
    )
    report = build_report(world, predictor, calibrated, params, trace, cfg.echo())
    return report, trace, calibrated


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _resolve_out_dir(args: argparse.Namespace, doc: dict) -> Path:
    out = args.out_dir or doc.get("out_dir")
    if not out:
        raise ValueError("no output directory: pass --out-dir or set out_dir in the config")
    return Path(out)


def cmd_run(args: argparse.Namespace) -> int:
    doc = _load_config_doc(args)
    cfg = RunConfig.from_dict(doc)
    out_dir = _resolve_out_dir(args, doc)
    try:
        report, trace, _ = run_config(cfg)
    except EstimateFailureError as exc:
        failure = {"status": "estimate-failure", "config": cfg.echo(), "error": str(exc)}
        _write(out_dir / "report.json", dumps_json(failure))
        print(f"estimate-failure: {exc}", file=sys.stderr)
        return 1
    _write(out_dir / "report.json", dumps_json(report))
    _write(out_dir / "trace.csv", trace_to_csv(trace))
    print(
        f"run ok: {trace.iterations} iterations over {trace.n_bins} bins, "
        f"Err_{p_label(cfg.p)}(h) = {report['errors']['run_p']['h']:.6g} "
        f"(eps = {cfg.eps}), wall {trace.wall_time_s:.3f}s -> {out_dir}"
    )
    return 0


SUMMARY_COLUMNS = (
    "p",
    "eps",
    "seed",
    "status",
    "n_bins",
    "iterations",
    "err_p_f",
    "err_p_h",
    "sq_f",
    "sq_h",
    "events_held",
    "per_bin_le_beta",
    "aggregate_lp",
    "err_le_eps",
    "sq_budget",
    "pred_moves_bound",
)


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _load_config_doc(args)
    out_dir = _resolve_out_dir(args, base)
    eps_grid = (
        [float(e) for e in args.eps_grid.split(",")] if args.eps_grid else [float(base["eps"])]
    )
    p_grid = (
        [parse_p(s) for s in args.p_grid.split(",")]
        if args.p_grid
        else [parse_p(base.get("p", "inf"))]
    )
    seeds = _parse_seeds(args.seeds) if args.seeds else [int(base.get("seed", 0))]
    rows: list[list] = []
    failures = 0
    for p in p_grid:
        for eps in eps_grid:
            for seed in seeds:
                doc = dict(base)
                doc.update({"p": p_label(p), "eps": eps, "seed": seed})
                cell = f"p{p_label(p).replace('/', 'over')}-eps{eps:g}-seed{seed}"
                try:
                    cfg = RunConfig.from_dict(doc)
                    report, trace, _ = run_config(cfg)
                except (EstimateFailureError, ValueError) as exc:
                    failures += 1
                    rows.append([p_label(p), eps, seed, f"error: {exc}"] + [""] * 12)
                    continue
                _write(out_dir / cell / "report.json", dumps_json(report))
                _write(out_dir / cell / "trace.csv", trace_to_csv(trace))
                checks = report["checks"]
                rows.append(
                    [
                        p_label(p),
                        eps,
                        seed,
                        "ok",
                        report["bins"]["count"],
                        report["iterations"],
                        repr(report["errors"]["run_p"]["f"]),
                        repr(report["errors"]["run_p"]["h"]),
                        repr(report["sq_error"]["f"]),
                        repr(report["sq_error"]["h"]),
                        checks["events_held"],
                        checks["per_bin_le_beta"],
                        checks["aggregate_lp"],
                        checks["err_le_eps"],
                        checks["sq_budget"],
                        checks["pred_moves_bound"],
                    ]
                )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    writer.writerows(rows)
    _write(out_dir / "summary.csv", buf.getvalue())
    print(f"sweep: {len(rows)} cells, {failures} failed -> {out_dir / 'summary.csv'}")
    return 0 if failures == 0 else 1


def cmd_eval(args: argparse.Namespace) -> int:
    doc = json.loads(Path(args.world).read_text(encoding="utf-8"))
    world, predictor = world_from_dict(doc)
    table = predictor.table
    if args.pred:
        pred_doc = json.loads(Path(args.pred).read_text(encoding="utf-8"))
        table = np.asarray(
            pred_doc["predictor"] if isinstance(pred_doc, dict) else pred_doc, dtype=float
        )
    p_list = tuple(math.inf if s.strip() == "inf" else float(Fraction(s)) for s in args.p.split(","))
    rep = exact_report(world, table, args.lam, p_list)
    out = {
        "lambda": args.lam,
        "aggregates": {("inf" if math.isinf(q) else f"{q:g}"): rep.aggregates[q] for q in p_list},
        "sq_error": rep.sq_error,
        "per_bin": [
            {"level": level_str(v), "errors": rep.per_bin[v]} for v in sorted(rep.per_bin)
        ],
    }
    text = dumps_json(out)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_scenario(args: argparse.Namespace) -> int:
    world, predictor = make_scenario(args.name, args.k, args.n_features, args.seed)
    _write(Path(args.out), dumps_json(world_to_dict(world, predictor)))
    print(f"scenario {args.name}: k={args.k}, {args.n_features} features -> {args.out}")
    return 0


def cmd_levels(args: argparse.Namespace) -> int:
    if args.count_only:
        print(level_count(args.lam, args.k))
        return 0
    for v in enumerate_levels(args.lam, args.k):
        print(",".join(str(n) for n in v))
    return 0


def _load_config_doc(args: argparse.Namespace) -> dict:
    doc: dict = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key in ("eps", "delta", "seed", "p"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    if getattr(args, "scenario", None):
        scen = doc.get("scenario", {})
        if isinstance(scen, str):
            scen = {"name": scen}
        scen["name"] = args.scenario
        doc["scenario"] = scen
    for key in ("k", "n_features"):
        val = getattr(args, key, None)
        if val is not None:
            scen = doc.setdefault("scenario", {})
            scen[key] = val
    return doc


def _parse_seeds(raw: str) -> list[int]:
    """Seed list "0,1,5" or half-open range "0:100"."""
    if ":" in raw:
        lo, hi = raw.split(":")
        return list(range(int(lo), int(hi)))
    return [int(s) for s in raw.split(",")]


def _add_config_flags(sub: argparse.ArgumentParser, grid: bool = False) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--scenario", choices=SCENARIOS)
    sub.add_argument("--k", type=int)
    sub.add_argument("--n-features", dest="n_features", type=int)
    sub.add_argument("--delta", type=float)
    sub.add_argument("--seed", type=int)
    if not grid:
        sub.add_argument("--eps", type=float)
        sub.add_argument("--p")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="lpcal", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="one seeded end-to-end run")
    _add_config_flags(run_p)
    run_p.add_argument("--out-dir")
    run_p.set_defaults(func=cmd_run)

    sweep_p = subs.add_parser("sweep", help="grid of runs with a CSV summary")
    _add_config_flags(sweep_p, grid=True)
    sweep_p.add_argument("--eps", dest="eps_grid", type=str, default=None, help="comma list")
    sweep_p.add_argument("--p", dest="p_grid", type=str, default=None, help="comma list")
    sweep_p.add_argument("--seeds", type=str, help='"0:100" or "0,1,2"')
    sweep_p.add_argument("--out-dir")
    sweep_p.set_defaults(func=cmd_sweep)

    eval_p = subs.add_parser("eval", help="exact report for a serialized world")
    eval_p.add_argument("--world", required=True)
    eval_p.add_argument("--pred", help="optional predictor JSON overriding the world's")
    eval_p.add_argument("--lambda", dest="lam", type=int, required=True)
    eval_p.add_argument("--p", default="inf,2,1")
    eval_p.add_argument("--out")
    eval_p.set_defaults(func=cmd_eval)

    scen_p = subs.add_parser("scenario", help="generate a scenario world")
    scen_p.add_argument("--name", required=True, choices=SCENARIOS)
    scen_p.add_argument("--k", type=int, default=3)
    scen_p.add_argument("--n-features", dest="n_features", type=int, default=20)
    scen_p.add_argument("--seed", type=int, default=0)
    scen_p.add_argument("--out", required=True)
    scen_p.set_defaults(func=cmd_scenario)

    levels_p = subs.add_parser("levels", help="enumerate reachable level sets")
    levels_p.add_argument("--lambda", dest="lam", type=int, required=True)
    levels_p.add_argument("--k", type=int, required=True)
    levels_p.add_argument("--count-only", action="store_true")
    levels_p.set_defaults(func=cmd_levels)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
