"""Training runs and the experiment recipes built on them.

Every recipe is a pure function of ``(config, seeds)``. Seed index ``s`` always
maps to the same dataset draw, initialisation, test set and batch stream
(keyed through :func:`repeatlab.seeding.derive_seed`), so arms that differ only
in data size, learning rate or intervention are paired comparisons.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from repeatlab.errors import ConfigurationError, NumericalError
from repeatlab.metrics import MetricsRow, evaluate, steps_summary
from repeatlab.model import InitScheme, MlpParams, init_mlp, layer_norms, loss_and_grad, signs, predict
from repeatlab.optim import AdamState, OptimConfig, adamw_step, sgd_step
from repeatlab.schedule import (ONLINE, ComputeLedger, Phase, PhaseSchedule, PhaseState, build_phases,
                                next_batch, should_advance)
from repeatlab.seeding import derive_seed
from repeatlab.tasks import (BiasedSampler, LabeledDataset, TaskSpec, biased_online_sample, make_dataset,
                             population_dataset, randomize_labels, remove_input_bias, whiten)

OK, FAILED, DIVERGED = "OK", "FAILED", "DIVERGED"
INCONCLUSIVE = "INCONCLUSIVE"
BETA2_GRID = (0.8, 0.9, 0.95, 0.999)
MAX_LR_RATIO = 1.2


@dataclass(frozen=True)
class Prephase:
    """A short stage on the first ``size`` rows before the main schedule."""

    size: int
    steps: int
    labels: str = "random"  # or "true"

    def __post_init__(self):
        if self.labels not in ("random", "true"):
            raise ConfigurationError(f"prephase labels must be 'random' or 'true', got {self.labels!r}")
        if self.size < 1 or self.steps < 0:
            raise ConfigurationError("prephase needs size >= 1 and steps >= 0")


@dataclass(frozen=True)
class Interventions:
    bias_removal: Optional[str] = None
    whiten: bool = False
    random_label_prephase: Optional[Prephase] = None
    biased_online: Optional[int] = None  # source size m


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec
    widths: Tuple[int, ...] = (64, 1)
    init: InitScheme = InitScheme()
    optim: OptimConfig = OptimConfig()
    loss: str = "mse"
    data_size: int = 1024
    batch_size: Optional[int] = 128  # None = full batch
    schedule: Optional[PhaseSchedule] = None
    interventions: Interventions = Interventions()
    test_size: Optional[int] = None
    eval_every: int = 10
    seeds: Tuple[int, ...] = (0,)
    max_steps: int = 1000
    success_threshold: float = 0.99
    loss_target: Optional[float] = None
    stop_at_threshold: bool = True
    base_seed: int = 0
    name: str = "run"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.max_steps < 0:
            raise ConfigurationError("max_steps must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1 (or null for full batch)")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def resolved_test_size(self) -> int:
        if self.test_size is not None:
            return self.test_size
        return 4096 if self.task.kind == "parity" else 5000

    @property
    def resolved_schedule(self) -> PhaseSchedule:
        if self.schedule is not None:
            return self.schedule
        if self.interventions.biased_online is not None:
            return PhaseSchedule([Phase(ONLINE)])
        return PhaseSchedule.single(self.data_size, self.max_steps)


@dataclass
class RunRecord:
    run_id: str
    seed: int
    status: str
    rows: List[MetricsRow]
    ledger: ComputeLedger = field(repr=False)
    steps_to_threshold: float = math.inf
    compute_to_threshold: float = math.inf
    last_finite_step: int = 0
    final_test_acc: Optional[float] = None
    final_test_loss: float = math.nan
    switch_step: Optional[int] = None
    norm_ratio_at_switch: Optional[float] = None

    @property
    def reached(self) -> bool:
        return math.isfinite(self.steps_to_threshold)


# ---------------------------------------------------------------- data plumbing

def _online_sampler(task: TaskSpec, biased: Optional[BiasedSampler]):
    if biased is not None:
        return lambda rng, n: biased_online_sample(biased, task, rng, n)

    def draw(rng, n):
        X = task.sample_inputs(n, rng)
        return X, task.labels(X)

    return draw


def master_dataset(task: TaskSpec, size: int, seed: int) -> LabeledDataset:
    """Seed-fixed master set. A parity size equal to ``2**d`` is the enumerated hypercube,
    row-shuffled so that its prefixes are uniform subsets."""
    if task.kind == "parity" and size == 2 ** task.d and task.d <= 24:
        pop = population_dataset(task)
        perm = np.random.default_rng(seed).permutation(pop.N)
        return replace(pop, X=pop.X[perm], y=pop.y[perm], seed=seed)
    return make_dataset(task, size, seed)


def _intervene(ds: LabeledDataset, iv: Interventions) -> LabeledDataset:
    if iv.bias_removal:
        ds = remove_input_bias(ds, iv.bias_removal)
    if iv.whiten:
        ds = whiten(ds)
    return ds


def _phase_data_size(cfg: RunConfig) -> int:
    sched = cfg.resolved_schedule
    need = [sched.max_size]
    pre = cfg.interventions.random_label_prephase
    if pre is not None and pre.steps > 0:
        need.append(pre.size)
    if cfg.interventions.biased_online is not None:
        need.append(cfg.interventions.biased_online)
    if cfg.schedule is None and cfg.interventions.biased_online is None:
        need.append(cfg.data_size)
    return max(need)


def _realise(cfg: RunConfig, seed: int) -> Tuple[List[PhaseState], LabeledDataset, Optional[int]]:
    """Build phase states and the test set; returns the index of the first main phase."""
    task = cfg.task
    base = cfg.base_seed
    size = _phase_data_size(cfg)
    master = master_dataset(task, size, derive_seed(base, "data", seed)) if size else None
    test = make_dataset(task, cfg.resolved_test_size, derive_seed(base, "test", seed))

    biased = None
    if cfg.interventions.biased_online is not None:
        biased = BiasedSampler.from_dataset(master.head(cfg.interventions.biased_online))
    sched = cfg.resolved_schedule
    states = build_phases(master, sched, derive_seed(base, "subsets", seed), _online_sampler(task, biased))
    for st in states:
        if st.data is not None:
            st.data = _intervene(st.data, cfg.interventions)

    first_main = 0
    pre = cfg.interventions.random_label_prephase
    if pre is not None and pre.steps > 0:
        data = master.head(pre.size)
        if pre.labels == "random":
            data = randomize_labels(data, derive_seed(base, "labels", seed))
        data = _intervene(data, cfg.interventions)
        states.insert(0, PhaseState(-1, Phase(pre.size, steps=pre.steps), data=data, rows=np.arange(pre.size)))
        first_main = 1
    for i, st in enumerate(states):
        st.index = i
    return states, test, first_main


# ---------------------------------------------------------------- training

def _train_metrics(params, state: PhaseState, X, y, loss_kind, task_kind):
    if state.data is not None:
        X, y = state.data.X, state.data.y
    if X is None:  # online phase before the first batch: nothing seen yet
        return None, math.nan
    preds = predict(params, X)
    if loss_kind == "mse":
        loss = float(np.mean((preds - y) ** 2))
    else:
        loss = -float(np.mean(y * preds))
    acc = float(np.mean(signs(preds) == y)) if task_kind == "parity" else None
    return acc, loss


def _row(run_id, seed, phase, step, ledger, params, state, batch, test, cfg) -> MetricsRow:
    tr_acc, tr_loss = _train_metrics(params, state, batch[0], batch[1], cfg.loss, cfg.task.kind)
    te_acc, te_loss = evaluate(params, test, cfg.loss)
    norms, ratio = layer_norms(params)
    return MetricsRow(run_id, seed, phase, step, ledger.compute, tr_acc, te_acc, tr_loss, te_loss, ratio, norms)


def _crossed(row: MetricsRow, cfg: RunConfig) -> bool:
    if cfg.task.kind == "parity":
        return row.test_acc is not None and row.test_acc >= cfg.success_threshold
    return cfg.loss_target is not None and row.test_loss <= cfg.loss_target


def run_training(cfg: RunConfig, seed: int, run_id: Optional[str] = None) -> RunRecord:
    """Train one seed: init, schedule loop, eval every ``cfg.eval_every`` steps.

    Non-finite loss or weights end the run as DIVERGED (rows up to the last
    finite eval are kept). Runs that never cross the threshold are FAILED.
    """
    with threadpool_limits(limits=1), np.errstate(over="ignore", invalid="ignore"):
        return _run_training(cfg, seed, run_id or f"{cfg.name}/s{seed}")


def _run_training(cfg: RunConfig, seed: int, run_id: str) -> RunRecord:
    base = cfg.base_seed
    states, test, first_main = _realise(cfg, seed)
    sched = cfg.resolved_schedule
    params = init_mlp(cfg.task.d, cfg.widths, replace(cfg.init, seed=derive_seed(base, "init", seed)))
    adam = AdamState.zeros_like(params) if cfg.optim.kind == "adamw" else None
    rng = np.random.default_rng(derive_seed(base, "batch", seed))
    ledger = ComputeLedger()
    B = cfg.batch_size

    rec = RunRecord(run_id, seed, FAILED, [], ledger)
    if cfg.max_steps == 0:
        return rec

    pi = 0
    state = states[0]
    if first_main == 0:
        rec.switch_step = None
    batch = (None, None)
    rec.rows.append(_row(run_id, seed, pi, 0, ledger, params, state, batch, test, cfg))
    step = 0
    last_eval = 0
    try:
        while step < cfg.max_steps and pi < len(states):
            X, y = next_batch(state, B, rng, sched.with_replacement)
            batch = (X, y)
            loss, grads = loss_and_grad(params, X, y, cfg.loss)
            if not math.isfinite(loss):
                raise NumericalError("non-finite training loss")
            if adam is None:
                sgd_step(params, grads, cfg.optim)
            else:
                adamw_step(adam, params, grads, cfg.optim)
            step += 1
            state.steps_done += 1
            ledger.record_step(len(y), pi)

            train_acc = None
            epoch_end = state.data is not None and state.steps_done % state.steps_per_epoch(B) == 0
            if state.phase.auto and epoch_end and cfg.task.kind == "parity":
                train_acc = _train_metrics(params, state, X, y, cfg.loss, "parity")[0]
            if should_advance(state.phase, state.epochs_done(B), train_acc, state.steps_done,
                              sched.auto_acc_threshold, sched.auto_max_epochs):
                if pi + 1 == first_main:
                    rec.switch_step = step
                    rec.norm_ratio_at_switch = layer_norms(params)[1]
                pi += 1
                if pi < len(states):
                    state = states[pi]

            if step % cfg.eval_every == 0:
                row = _row(run_id, seed, min(pi, len(states) - 1), step, ledger, params, state, batch, test, cfg)
                if not (math.isfinite(row.test_loss) and math.isfinite(row.train_loss)):
                    raise NumericalError("non-finite evaluation loss")
                rec.rows.append(row)
                last_eval = step
                if not rec.reached and _crossed(row, cfg):
                    rec.steps_to_threshold = step
                    rec.compute_to_threshold = ledger.compute
                    if cfg.stop_at_threshold:
                        break
        if last_eval != step:
            row = _row(run_id, seed, min(pi, len(states) - 1), step, ledger, params, state, batch, test, cfg)
            if not math.isfinite(row.test_loss):
                raise NumericalError("non-finite evaluation loss")
            rec.rows.append(row)
            if not rec.reached and _crossed(row, cfg):
                rec.steps_to_threshold = step
                rec.compute_to_threshold = ledger.compute
        rec.status = OK if rec.reached else FAILED
    except (NumericalError, FloatingPointError):
        rec.status = DIVERGED
    except OverflowError:
        rec.status = DIVERGED
    last = rec.rows[-1]
    rec.last_finite_step = last.step
    rec.final_test_acc = last.test_acc
    rec.final_test_loss = last.test_loss
    return rec


# ---------------------------------------------------------------- parallel execution

def _job(args):
    key, cfg, seed = args
    return key, run_training(cfg, seed)


def default_workers() -> int:
    env = os.environ.get("REPEATLAB_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"REPEATLAB_WORKERS must be an integer, got {env!r}")
        if n < 1:
            raise ConfigurationError("REPEATLAB_WORKERS must be >= 1")
        return n
    return os.cpu_count() or 1


def execute(jobs: Sequence[tuple], workers: int = 1) -> Dict[tuple, RunRecord]:
    """Run ``(key, cfg, seed)`` jobs; results keyed by ``key`` (order-independent)."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return dict(_job(j) for j in jobs)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return dict(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepGrid:
    lrs: Tuple[float, ...] = ()
    sizes: Tuple[int, ...] = ()
    init_scales: Tuple[Tuple[float, float], ...] = ()
    layer_lrs: Tuple[Tuple[float, float], ...] = ()
    widths: Tuple[int, ...] = ()
    depths: Tuple[int, ...] = ()

    def __post_init__(self):
        check_lr_grid(self.lrs)


def lr_grid(lo: float, hi: float, ratio: float = MAX_LR_RATIO) -> Tuple[float, ...]:
    """Geometric grid from ``lo`` to ``hi`` whose consecutive ratio is at most ``ratio``."""
    if not 0 < lo <= hi:
        raise ConfigurationError(f"need 0 < lo <= hi, got {lo}, {hi}")
    if lo == hi:
        return (float(lo),)
    n = math.ceil(math.log(hi / lo) / math.log(ratio) - 1e-9) + 1
    return tuple(float(v) for v in np.geomspace(lo, hi, n))


def check_lr_grid(lrs: Sequence[float], ratio: float = MAX_LR_RATIO) -> None:
    s = sorted(lrs)
    for a, b in zip(s, s[1:]):
        if b / a > ratio * (1 + 1e-9):
            raise ConfigurationError(f"learning-rate grid gap {a:g} -> {b:g} exceeds ratio {ratio}")


def _median_all(values) -> float:
    v = np.asarray(list(values), dtype=float)
    return float(np.median(v)) if v.size else math.inf


def arm_summary(records: Sequence[RunRecord]) -> dict:
    steps = [r.steps_to_threshold for r in records]
    comp = [r.compute_to_threshold for r in records]
    s = steps_summary(steps)
    c = steps_summary(comp)
    n_div = sum(r.status == DIVERGED for r in records)
    accs = [r.final_test_acc for r in records if r.final_test_acc is not None]
    return {
        "median_steps": _median_all(steps),
        "median_compute": _median_all(comp),
        "median_steps_success": s["median"],
        "iqr_steps": s["iqr"],
        "median_compute_success": c["median"],
        "iqr_compute": c["iqr"],
        "n_seeds": s["n_seeds"],
        "n_failed": s["n_failed"],
        "n_diverged": n_div,
        "failure_rate": s["n_failed"] / s["n_seeds"] if s["n_seeds"] else math.nan,
        "success_prob": s["success_prob"],
        "mean_final_test_acc": float(np.mean(accs)) if accs else math.nan,
        "median_final_test_loss": _median_all(r.final_test_loss for r in records),
        "inconclusive": n_div >= 0.25 * len(records),
    }


@dataclass
class ArmResult:
    """Best-of-LR outcome for one configuration."""

    label: str
    best_lr: float
    summary: dict
    records: List[RunRecord]
    per_lr: Dict[float, dict]
    all_records: List[RunRecord] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {"arm": self.label, "best_lr": self.best_lr, **self.summary}


def select_best(per_lr: Dict[float, dict], key: str = "median_steps", maximize: bool = False) -> float:
    """Best learning rate; ties go to the smaller rate (then lower grid index)."""
    best, best_val = None, None
    for lr in sorted(per_lr):
        v = per_lr[lr][key]
        v = -v if maximize else v
        if isinstance(v, float) and math.isnan(v):
            v = math.inf
        if best is None or v < best_val:
            best, best_val = lr, v
    return best


def sweep_arm(cfg: RunConfig, lrs: Sequence[float], seeds: Sequence[int], label: str, workers: int = 1,
              key: str = "median_steps", maximize: bool = False, layer_lrs_fn=None) -> ArmResult:
    """Run every (lr, seed) pair for one configuration and keep the best lr."""
    check_lr_grid(lrs)
    jobs = []
    for i, lr in enumerate(lrs):
        optim = replace(cfg.optim, lr=lr, layer_lrs=layer_lrs_fn(lr) if layer_lrs_fn else cfg.optim.layer_lrs)
        c = replace(cfg, optim=optim, name=f"{cfg.name}/{label}/lr{i}")
        jobs.extend(((label, lr, s), c, s) for s in seeds)
    res = execute(jobs, workers)
    per_lr, recs = {}, {}
    for lr in lrs:
        rs = [res[(label, lr, s)] for s in seeds]
        recs[lr] = rs
        per_lr[lr] = arm_summary(rs)
    best = select_best(per_lr, key, maximize)
    return ArmResult(label, best, per_lr[best], recs[best], per_lr, [r for lr in lrs for r in recs[lr]])


def _size_cfg(cfg: RunConfig, size: int) -> RunConfig:
    return replace(cfg, data_size=size, schedule=None)


def _ratio(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return math.nan
    if b == 0:
        return math.inf
    return a / b


def gap_sweep(cfg: RunConfig, sizes: Sequence[int], seeds: Sequence[int], lrs: Sequence[float],
              workers: int = 1) -> dict:
    """Best-of-LR steps/compute to threshold per dataset size.

    With two or more sizes, the comparison contrasts the smallest and largest.
    """
    arms = [sweep_arm(_size_cfg(cfg, n), lrs, seeds, f"N{n}", workers) for n in sizes]
    rows = [{"size": n, **a.row()} for n, a in zip(sizes, arms)]
    out = {"rows": rows, "arms": arms, "records": [r for a in arms for r in a.all_records]}
    if len(sizes) > 1:
        small = min(range(len(sizes)), key=lambda i: sizes[i])
        large = max(range(len(sizes)), key=lambda i: sizes[i])
        s, l = arms[small].summary, arms[large].summary
        out["comparison"] = {
            "small": sizes[small], "large": sizes[large],
            "step_ratio": _ratio(l["median_steps"], s["median_steps"]),
            "compute_ratio": _ratio(l["median_compute"], s["median_compute"]),
            "small_fewer_steps": s["median_steps"] < l["median_steps"],
            "inconclusive": s["inconclusive"] or l["inconclusive"],
        }
    return out


def init_heatmap(cfg: RunConfig, first_scales: Sequence[float], rest_scales: Sequence[float], sizes: Sequence[int],
                 seeds: Sequence[int], lrs: Sequence[float], budget: int, workers: int = 1) -> dict:
    """Final-iterate mean test accuracy per (first-layer scale, rest scale) cell and size.

    Each cell picks its own best learning rate by mean final accuracy.
    """
    depth = len(cfg.widths)
    out = {"first_scales": list(first_scales), "rest_scales": list(rest_scales), "sizes": list(sizes),
           "acc": {}, "best_lr": {}, "rows": [], "records": []}
    for n in sizes:
        acc = np.zeros((len(first_scales), len(rest_scales)))
        blr = np.zeros_like(acc)
        for i, s1 in enumerate(first_scales):
            for j, s2 in enumerate(rest_scales):
                scales = (s1,) + (s2,) * (depth - 1)
                c = replace(_size_cfg(cfg, n), init=InitScheme("per-layer-constants", layer_scales=scales),
                            max_steps=budget, stop_at_threshold=False)
                arm = sweep_arm(c, lrs, seeds, f"N{n}_i{i}_j{j}", workers, key="mean_final_test_acc", maximize=True)
                out["records"].extend(arm.all_records)
                acc[i, j] = arm.summary["mean_final_test_acc"]
                blr[i, j] = arm.best_lr
                out["rows"].append({"size": n, "first_scale": s1, "rest_scale": s2, "best_lr": arm.best_lr,
                                    "mean_final_test_acc": acc[i, j], "n_diverged": arm.summary["n_diverged"]})
        out["acc"][n] = acc
        out["best_lr"][n] = blr
    if len(sizes) >= 2:
        small, large = min(sizes), max(sizes)
        a_s, a_l = out["acc"][small], out["acc"][large]
        default = (_nearest(first_scales, 1.0), _nearest(rest_scales, 1.0))
        out["checks"] = {
            "gap_closed_somewhere": bool(np.any(a_l >= a_s - 0.02)),
            "small_wins_at_default": bool(a_s[default] > a_l[default]),
            "near_opt_small": int(np.sum(a_s >= a_s.max() - 0.02)),
            "near_opt_large": int(np.sum(a_l >= a_l.max() - 0.02)),
        }
    return out


def _nearest(vals, target):
    return int(np.argmin([abs(math.log(v / target)) for v in vals]))


def layerwise_lr_sweep(cfg: RunConfig, pairs: Sequence[Tuple[float, float]], sizes: Sequence[int],
                       seeds: Sequence[int], workers: int = 1) -> dict:
    """Best ``(eta_1, eta_2)`` per size: first layer at ``eta_1``, every later layer at ``eta_2``."""
    depth = len(cfg.widths)
    out = {"rows": [], "best": {}, "records": []}
    for n in sizes:
        per_pair, recs = {}, {}
        jobs = []
        for k, (e1, e2) in enumerate(pairs):
            c = replace(_size_cfg(cfg, n), optim=replace(cfg.optim, lr=max(e1, e2),
                                                         layer_lrs=(e1,) + (e2,) * (depth - 1)),
                        name=f"{cfg.name}/N{n}/p{k}")
            jobs.extend(((n, k, s), c, s) for s in seeds)
        res = execute(jobs, workers)
        out["records"].extend(res[j[0]] for j in jobs)
        for k, pair in enumerate(pairs):
            rs = [res[(n, k, s)] for s in seeds]
            per_pair[k] = arm_summary(rs)
            out["rows"].append({"size": n, "eta1": pair[0], "eta2": pair[1], **per_pair[k]})
        # ties: smaller eta_1, then smaller eta_2, then grid index
        order = sorted(range(len(pairs)), key=lambda k: (per_pair[k]["median_steps"], pairs[k][0], pairs[k][1], k))
        b = order[0]
        out["best"][n] = {"eta1": pairs[b][0], "eta2": pairs[b][1], **per_pair[b]}
    if len(sizes) >= 2:
        s, l = out["best"][min(sizes)], out["best"][max(sizes)]
        out["checks"] = {
            "large_best_eta1_gt_eta2": l["eta1"] > l["eta2"],
            "large_over_small_steps": _ratio(l["median_steps"], s["median_steps"]),
        }
    return out


def random_label_probe(cfg: RunConfig, prephase: Prephase, seeds: Sequence[int], lrs: Sequence[float],
                       workers: int = 1) -> dict:
    """Three arms on the large set: no prephase, true-label small prephase, random-label small prephase.

    Steps-to-threshold count prephase steps. Each arm uses its own best lr.
    """
    arms = {
        "large_only": cfg,
        "small_true_then_large": replace(cfg, interventions=replace(cfg.interventions,
                                                                    random_label_prephase=replace(prephase, labels="true"))),
        "small_random_then_large": replace(cfg, interventions=replace(cfg.interventions,
                                                                      random_label_prephase=replace(prephase, labels="random"))),
    }
    res = {k: sweep_arm(c, lrs, seeds, k, workers) for k, c in arms.items()}
    rows = []
    for k, arm in res.items():
        ratios = [r.norm_ratio_at_switch for r in arm.records if r.norm_ratio_at_switch is not None]
        rows.append({**arm.row(), "median_norm_ratio_at_switch": _median_all(ratios) if ratios else math.nan})
    # large-only norm ratio at the switch step, read from its eval rows
    lo = res["large_only"]
    at = []
    for r in lo.records:
        cand = [row.norm_ratio for row in r.rows if row.step <= prephase.steps]
        if cand:
            at.append(cand[-1])
    rand = rows[2]
    return {
        "rows": rows,
        "arms": res,
        "records": [r for a in res.values() for r in a.all_records],
        "large_only_norm_ratio_at_switch": _median_all(at) if at else math.nan,
        "checks": {
            "random_faster_than_large": rand["median_steps"] < rows[0]["median_steps"],
            "random_ratio_exceeds_large": rand["median_norm_ratio_at_switch"] > (_median_all(at) if at else math.inf),
        },
    }


def bias_refutation(cfg: RunConfig, small: int, seeds: Sequence[int], lrs: Sequence[float],
                    source_sizes: Sequence[int] = (), online_steps: Optional[int] = None, workers: int = 1,
                    mode: str = "mean-zero") -> dict:
    """Arm A: centred vs plain small set. Arm B: biased-online training per source size."""
    plain = sweep_arm(_size_cfg(cfg, small), lrs, seeds, "small_plain", workers)
    centred = sweep_arm(replace(_size_cfg(cfg, small), interventions=replace(cfg.interventions, bias_removal=mode)),
                        lrs, seeds, "small_centered", workers)
    rows = [plain.row(), centred.row()]
    online = {}
    for m in source_sizes:
        c = replace(cfg, schedule=None, interventions=replace(cfg.interventions, biased_online=m),
                    max_steps=online_steps or cfg.max_steps)
        arm = sweep_arm(c, lrs, seeds, f"biased_online_m{m}", workers)
        online[m] = arm
        rows.append({**arm.row(), "source_m": m})
    out = {"rows": rows, "records": plain.all_records + centred.all_records +
           [r for a in online.values() for r in a.all_records], "checks": {
        "centered_over_plain": _ratio(centred.summary["median_steps"], plain.summary["median_steps"]),
    }}
    if small in online:
        out["checks"]["online_slower_than_small"] = online[small].summary["median_steps"] > plain.summary["median_steps"]
    return out


def scaling_ablation(cfg: RunConfig, axis: str, values: Sequence, small: int, large: int, seeds: Sequence[int],
                     lrs: Sequence[float], workers: int = 1) -> dict:
    """Gap = large-set median steps / small-set median steps for each axis value."""
    rows, records = [], []
    for v in values:
        if axis == "width":
            c = replace(cfg, widths=tuple([int(v)] * (len(cfg.widths) - 1)) + (1,))
        elif axis == "depth":
            hidden = cfg.widths[0]
            c = replace(cfg, widths=tuple([hidden] * (int(v) - 1)) + (1,))
        elif axis == "task-dim":
            t = cfg.task
            c = replace(cfg, task=TaskSpec.parity(int(v), t.k) if t.kind == "parity" else TaskSpec.sim(int(v), t.k))
        else:
            raise ConfigurationError(f"unknown ablation axis {axis!r}; expected width, depth or task-dim")
        res = gap_sweep(replace(c, name=f"{cfg.name}/{axis}{v}"), [small, large], seeds, lrs, workers)
        records.extend(res["records"])
        comp = res["comparison"]
        rows.append({"axis": axis, "value": v, "gap": comp["step_ratio"], "compute_gap": comp["compute_ratio"],
                     "small_median_steps": res["rows"][0]["median_steps"],
                     "large_median_steps": res["rows"][1]["median_steps"]})
    return {"rows": rows, "records": records}


def adam_closure(cfg: RunConfig, small: int, large: int, seeds: Sequence[int], lrs: Sequence[float],
                 beta2s: Sequence[float] = BETA2_GRID, sgd_lrs: Optional[Sequence[float]] = None,
                 workers: int = 1) -> dict:
    """Gap ratio under AdamW (best over lr x beta2 per arm) next to the SGD gap ratio."""
    best = {}
    rows, records = [], []
    for n in (small, large):
        cands = []
        for b2 in beta2s:
            c = replace(_size_cfg(cfg, n), optim=OptimConfig("adamw", lrs[0], beta1=0.9, beta2=b2))
            arm = sweep_arm(c, lrs, seeds, f"adamw_N{n}_b{b2}", workers)
            records.extend(arm.all_records)
            cands.append((arm.summary["median_steps"], arm.best_lr, b2, arm))
            rows.append({"size": n, "beta2": b2, **arm.row()})
        cands.sort(key=lambda t: (t[0], t[1], t[2]))
        best[n] = cands[0]
    gap_adam = _ratio(best[large][0], best[small][0])
    out = {"rows": rows, "best": {n: {"median_steps": b[0], "lr": b[1], "beta2": b[2]} for n, b in best.items()},
           "adam_gap_ratio": gap_adam, "records": records}
    n_seeds = len(list(seeds))
    out["iqr_defined"] = n_seeds > 1
    if sgd_lrs:
        sgd = gap_sweep(replace(cfg, optim=OptimConfig("sgd", sgd_lrs[0])), [small, large], seeds, sgd_lrs, workers)
        out["sgd_gap_ratio"] = sgd["comparison"]["step_ratio"]
        out["records"].extend(sgd["records"])
    return out
