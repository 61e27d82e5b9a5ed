"""``repeatlab`` command line: run | sweep | theory | verify | report.

Exit codes: 0 every check passed, 1 a check failed, 2 configuration error,
3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import re
import sys
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from repeatlab import __version__
from repeatlab import experiments as ex
from repeatlab import theory as th
from repeatlab.config import PREPHASE_DEFAULTS, Resolved, build_prephase, parse_config, sweep_lrs
from repeatlab.errors import ConfigurationError, InterventionError, OutputError, RepeatLabError
from repeatlab.metrics import (AggregateRow, AxesSpec, Series, aggregate, read_csv, read_table, write_csv,
                               write_json, write_table)
from repeatlab.seeding import derive_seed

SUBCOMMANDS = ("run", "sweep", "theory", "verify", "report")
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass
class CliInvocation:
    subcommand: str
    out_dir: Path
    config_path: Optional[str] = None
    overrides: List[str] = field(default_factory=list)
    workers: Optional[int] = None
    base_seed: Optional[int] = None

    def resolved_workers(self) -> int:
        if self.workers is not None:
            if self.workers < 1:
                raise ConfigurationError("--workers must be >= 1")
            return self.workers
        return ex.default_workers()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repeatlab", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", dest="config_path", help="JSON config file (defaults are used when omitted)")
    p.add_argument("--out", dest="out_dir", required=True, type=Path, help="output directory (created if absent)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-key override applied after the file, e.g. optim.lr=0.3 (repeatable)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $REPEATLAB_WORKERS, else CPU count)")
    p.add_argument("--seed", dest="base_seed", type=int, default=None, help="base seed (overrides config)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


# ---------------------------------------------------------------- helpers

def _mkdir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {path}: {exc.strerror or exc}") from exc


def _resolve(inv: CliInvocation) -> Resolved:
    res = parse_config(inv.config_path, inv.overrides)
    if inv.base_seed is not None:
        res = res.with_seed(inv.base_seed)
    return res


def _write_meta(inv: CliInvocation, res: Resolved, seeds) -> None:
    meta = {
        "tool": "repeatlab",
        "version": __version__,
        "subcommand": inv.subcommand,
        "base_seed": int(res.raw["base_seed"]),
        "seeds": seeds,
        "config": res.raw,
        "environment": {"python": platform.python_version(), "numpy": np.__version__},
        "notes": {
            "optimizer_state_at_phase_boundary": "carried over",
            "seed_derivation": "derive_seed(base_seed, purpose, seed): splitmix64 fold, see repeatlab.seeding",
        },
    }
    write_json(meta, inv.out_dir / "meta.json")


def _bool_checks(checks: dict) -> dict:
    return {k: v for k, v in checks.items() if isinstance(v, (bool, np.bool_))}


def _report_checks(checks: dict) -> int:
    for k, v in checks.items():
        tag = ("PASS" if v else "FAIL") if isinstance(v, (bool, np.bool_)) else "INFO"
        print(f"[{tag}] {k} = {v}")
    return EXIT_OK if all(_bool_checks(checks).values()) else EXIT_CHECK


def _write_runs(records: Sequence[ex.RunRecord], path: Path) -> None:
    rows = [row for rec in records for row in rec.rows]
    n_layers = max((len(r.layer_norms) for r in rows), default=0)
    write_csv(rows, path, n_layers)


# ---------------------------------------------------------------- subcommands

def cmd_run(inv: CliInvocation, res: Resolved) -> int:
    """Train every configured seed at the configured learning rate."""
    cfg = res.run
    seeds = res.seeds
    _write_meta(inv, res, seeds)
    out = ex.execute([((s,), cfg, s) for s in seeds], inv.resolved_workers())
    records = [out[(s,)] for s in seeds]
    _write_runs(records, inv.out_dir / "runs.csv")
    summary = {"arm": cfg.name, "lr": cfg.optim.lr, "data_size": cfg.data_size, **ex.arm_summary(records)}
    write_table([summary], inv.out_dir / "summary.csv")
    for r in records:
        print(f"{r.run_id}: {r.status} steps_to_threshold={r.steps_to_threshold} final_test_acc={r.final_test_acc}")
    if all(r.status == ex.DIVERGED for r in records):
        print("every seed diverged", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _layer_pairs(raw, lrs):
    if raw is None:
        return [(a, b) for a in lrs for b in lrs]
    try:
        return [(float(a), float(b)) for a, b in raw]
    except (TypeError, ValueError):
        raise ConfigurationError("sweep.layer_lr_pairs must be a list of [eta1, eta2] pairs")


def _run_experiment(c: dict, cfg: ex.RunConfig, seeds: List[int], workers: int) -> dict:
    s = c["sweep"]
    lrs = sweep_lrs(c)
    kind = c["experiment"]
    if kind == "train":
        arm = ex.sweep_arm(cfg, lrs, seeds, "train", workers)
        return {"rows": [{"lr": lr, **summ} for lr, summ in arm.per_lr.items()], "records": arm.all_records,
                "checks": {"best_lr": arm.best_lr, "reached_threshold": arm.summary["success_prob"] > 0}}
    if kind == "gap_sweep":
        out = ex.gap_sweep(cfg, [int(n) for n in s["sizes"]], seeds, lrs, workers)
        out["checks"] = dict(out.get("comparison", {}))
        out["checks"].pop("inconclusive", None)
        return out
    if kind == "init_heatmap":
        return ex.init_heatmap(cfg, s["first_scales"], s["rest_scales"], [int(n) for n in s["sizes"]], seeds, lrs,
                               int(s["budget"]), workers)
    if kind == "layerwise_lr":
        return ex.layerwise_lr_sweep(cfg, _layer_pairs(s["layer_lr_pairs"], lrs), [int(n) for n in s["sizes"]],
                                     seeds, workers)
    if kind == "random_label":
        pre = build_prephase(s["prephase"] or PREPHASE_DEFAULTS)
        return ex.random_label_probe(replace(cfg, data_size=int(s["large"])), pre, seeds, lrs, workers)
    if kind == "bias_refutation":
        return ex.bias_refutation(cfg, int(s["small"]), seeds, lrs, [int(m) for m in s["source_sizes"]],
                                  s["online_steps"], workers, s["bias_mode"])
    if kind == "scaling_ablation":
        return ex.scaling_ablation(cfg, s["axis"], s["values"], int(s["small"]), int(s["large"]), seeds, lrs, workers)
    if kind == "adam_closure":
        out = ex.adam_closure(cfg, int(s["small"]), int(s["large"]), seeds, sweep_lrs(c, "adam"),
                              tuple(float(b) for b in s["beta2s"]), lrs, workers)
        out["checks"] = {"adam_gap_ratio": out["adam_gap_ratio"], "sgd_gap_ratio": out.get("sgd_gap_ratio")}
        return out
    raise ConfigurationError(f"unknown experiment {kind!r}")


def cmd_sweep(inv: CliInvocation, res: Resolved) -> int:
    """Grid over learning rates (and the experiment's own axes); best-of-LR per arm."""
    seeds = res.seeds
    _write_meta(inv, res, seeds)
    out = _run_experiment(res.raw, res.run, seeds, inv.resolved_workers())
    _write_runs(out["records"], inv.out_dir / "runs.csv")
    write_table(out["rows"], inv.out_dir / "summary.csv")
    checks = out.get("checks", {})
    write_json({"experiment": res.raw["experiment"], "checks": checks}, inv.out_dir / "checks.json")
    return _report_checks(checks)


def _theory_kwargs(t: dict) -> dict:
    consts = th.TheoryConstants(float(t["c0"]), float(t["delta"]), float(t["bernstein_C"]))
    kw = {k: t[k] for k in ("d", "lr", "a_star", "width", "eps", "trials", "phase1_labels", "schedule_lr",
                            "schedule_width", "schedule_trials", "delta", "slope_target", "slope_tol", "baseline",
                            "baseline_a_star")}
    kw["Ns"] = None if t["Ns"] is None else [int(n) for n in t["Ns"]]
    kw["consts"] = consts
    return kw


def cmd_theory(inv: CliInvocation, res: Resolved) -> int:
    """Phase-1 scaling and total-step study of the projected quadratic neuron."""
    t = res.raw["theory"]
    base = int(res.raw["base_seed"])
    seeds = {tag: [derive_seed(base, tag, i) for i in range(n)]
             for tag, n in (("theory-fixed", int(t["trials"])), ("theory-schedule", int(t["schedule_trials"])),
                            ("theory-baseline", int(t["schedule_trials"] if t["baseline"] else 0)))}
    _write_meta(inv, res, seeds)
    out = th.scaling_study(base_seed=base, **_theory_kwargs(t))
    write_table(out["rows"], inv.out_dir / "summary.csv")
    write_table(out["trials"], inv.out_dir / "trials.csv")
    write_json({"checks": out["checks"]}, inv.out_dir / "checks.json")
    return _report_checks(out["checks"])


def cmd_verify(inv: CliInvocation, res: Resolved) -> int:
    """Every lemma verifier; verify.json lists each check with its verdict."""
    v = dict(res.raw["verify"])
    base = int(res.raw["base_seed"])
    _write_meta(inv, res, [base])
    v["anticoncentration_pairs"] = [tuple(int(x) for x in p) for p in v["anticoncentration_pairs"]]
    for k in ("opnorm_Ns", "alignment_dims", "drift_Ns"):
        v[k] = tuple(int(x) for x in v[k])
    reports = th.verify_suite(base_seed=base, **v)
    lemmas = [r.to_json() for r in reports]
    n_pass = sum(r.passed for r in reports)
    write_json({"pass": n_pass == len(reports), "n_checks": len(reports), "n_passed": n_pass, "lemmas": lemmas},
               inv.out_dir / "verify.json")
    write_table([{"lemma": r.lemma, "trials": r.trials, "estimate": r.estimate, "ci_low": r.ci_low,
                  "ci_high": r.ci_high, "violations": r.violations, "pass": r.passed} for r in reports],
                inv.out_dir / "summary.csv")
    return _report_checks({r.lemma: r.passed for r in reports})


# ---------------------------------------------------------------- report

def _group(run_id: str) -> str:
    return run_id.rsplit("/", 1)[0] if "/" in run_id else run_id


_LR_TAG = re.compile(r"/(lr\d+|p\d+)(?=/|$)")


def _pick_curves(agg: List[AggregateRow], limit: int = 8) -> dict:
    """Median curve per group; with many groups keep, per arm, the lr group with the best mean median.

    An "arm" is the group key with its learning-rate tag removed, so a sweep
    shows one curve per configuration rather than one per grid point.
    """
    curves = defaultdict(lambda: ([], []))
    for a in agg:
        if math.isfinite(a.median):
            xs, ys = curves[a.group]
            xs.append(a.bucket)
            ys.append(a.median)
    if len(curves) <= limit:
        return dict(curves)
    best = {}
    for g, (xs, ys) in curves.items():
        arm = _LR_TAG.sub("", g)
        score = float(np.mean(ys))
        if arm not in best or score > best[arm][0]:
            best[arm] = (score, g)
    keep = sorted(g for _, g in best.values())[:limit]
    return {g: curves[g] for g in keep}


def _plot_pair(curves: dict, plots: Path, stem: str, axes: AxesSpec, hline=None) -> List[str]:
    from repeatlab.figures import line_figure
    from repeatlab.metrics import plot_series

    curves = {k: v for k, v in curves.items() if len(v[0]) > 0}
    if not curves:
        return []
    plot_series([Series(k, x, y) for k, (x, y) in curves.items()], axes, plots / f"{stem}.svg")
    line_figure(curves, plots / f"{stem}.png", axes.xlabel, axes.ylabel, axes.title, axes.logx, axes.logy, hline)
    return [f"{stem}.svg", f"{stem}.png"]


def _report_runs(out_dir: Path, plots: Path) -> List[str]:
    rows = read_csv(out_dir / "runs.csv")
    made = []
    if not rows:
        return made
    agg_acc = aggregate(rows, key=lambda r: _group(r.run_id), metric="test_acc")
    agg_loss = aggregate(rows, key=lambda r: _group(r.run_id), metric="test_loss", bucket="compute")
    agg_norm = aggregate(rows, key=lambda r: _group(r.run_id), metric="norm_ratio")
    write_table([{"metric": name, "group": a.group, "bucket": a.bucket, "mean": a.mean, "median": a.median,
                  "iqr": a.iqr, "success_prob": a.success_prob, "n_seeds": a.n_seeds, "n_failed": a.n_failed}
                 for name, agg in (("test_acc", agg_acc), ("test_loss", agg_loss), ("norm_ratio", agg_norm))
                 for a in agg], out_dir / "aggregate.csv")
    made.append("aggregate.csv")
    if any(r.test_acc is not None for r in rows):
        made += _plot_pair(_pick_curves(agg_acc), plots, "test_acc",
                           AxesSpec("step", "median test accuracy", "Test accuracy over seeds"), hline=0.99)
    loss_curves = _pick_curves(agg_loss)
    logx = all(min(x) > 0 for x, _ in loss_curves.values() if x)
    made += _plot_pair(loss_curves, plots, "test_loss_compute",
                       AxesSpec("compute (samples processed)", "median test loss", "Test loss vs compute", logx=logx))
    made += _plot_pair(_pick_curves(agg_norm), plots, "norm_ratio",
                       AxesSpec("step", "median ||W2|| / ||W1||", "Layer norm ratio"))
    return made


def _report_summary(out_dir: Path, plots: Path) -> List[str]:
    from repeatlab.figures import heatmap_figure

    rows = read_table(out_dir / "summary.csv")
    if not rows or "first_scale" not in rows[0]:
        return []
    firsts = sorted({r["first_scale"] for r in rows})
    rests = sorted({r["rest_scale"] for r in rows})
    panels = {}
    for n in sorted({r["size"] for r in rows}):
        grid = np.full((len(firsts), len(rests)), np.nan)
        for r in rows:
            if r["size"] == n:
                grid[firsts.index(r["first_scale"]), rests.index(r["rest_scale"])] = r["mean_final_test_acc"]
        panels[f"N={int(n)}"] = grid
    heatmap_figure(panels, firsts, rests, plots / "init_heatmap.png")
    return ["init_heatmap.png"]


def _report_theory(out_dir: Path, plots: Path) -> List[str]:
    rows = read_table(out_dir / "summary.csv")
    curves = {}
    for study, col in (("fixed", "median_T1"), ("schedule", "median_total")):
        pts = sorted((r["N"], r[col]) for r in rows if r.get("study") == study and r.get(col) not in (None, ""))
        pts = [(n, v) for n, v in pts if isinstance(v, float) and math.isfinite(v) and v > 0]
        if pts:
            curves[f"{study}: {col}"] = ([p[0] for p in pts], [p[1] for p in pts])
    return _plot_pair(curves, plots, "theory_steps",
                      AxesSpec("N (phase-1 sample size)", "median steps", "Two-phase steps vs N", logx=True, logy=True))


def _report_verify(out_dir: Path, plots: Path) -> List[str]:
    from repeatlab.figures import interval_figure

    try:
        with open(out_dir / "verify.json", encoding="utf-8") as fh:
            lemmas = json.load(fh)["lemmas"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigurationError(f"cannot read {out_dir / 'verify.json'}: {exc}")
    pts = [(l["lemma"], l["estimate"], l["ci_low"], l["ci_high"], l["pass"]) for l in lemmas
           if all(isinstance(l.get(k), (int, float)) for k in ("estimate", "ci_low", "ci_high"))]
    if not pts:
        return []
    interval_figure(*zip(*pts), path=plots / "verify_estimates.png")
    return ["verify_estimates.png"]


def cmd_report(inv: CliInvocation) -> int:
    """Re-aggregate and plot an existing output directory."""
    d = inv.out_dir
    kinds = [name for name in ("runs.csv", "trials.csv", "verify.json") if (d / name).is_file()]
    if not kinds:
        raise ConfigurationError(f"{d} holds no runs.csv, trials.csv or verify.json to report on")
    plots = d / "plots"
    _mkdir(plots)
    made = []
    if "runs.csv" in kinds:
        made += _report_runs(d, plots)
        if (d / "summary.csv").is_file():
            made += _report_summary(d, plots)
    if "trials.csv" in kinds and (d / "summary.csv").is_file():
        made += _report_theory(d, plots)
    if "verify.json" in kinds:
        made += _report_verify(d, plots)
    for m in made:
        print(f"wrote {m}")
    return EXIT_OK


# ---------------------------------------------------------------- entry

def dispatch(inv: CliInvocation) -> int:
    if inv.subcommand == "report":
        if not inv.out_dir.is_dir():
            raise ConfigurationError(f"output directory {inv.out_dir} does not exist")
        return cmd_report(inv)
    res = _resolve(inv)
    _mkdir(inv.out_dir)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "theory": cmd_theory, "verify": cmd_verify}[inv.subcommand]
    with np.errstate(over="ignore", invalid="ignore"):
        return handler(inv, res)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    inv = CliInvocation(args.subcommand, args.out_dir, args.config_path, list(args.overrides), args.workers,
                        args.base_seed)
    try:
        return dispatch(inv)
    except (ConfigurationError, InterventionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RepeatLabError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
