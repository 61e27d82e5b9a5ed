import math
from dataclasses import replace

import numpy as np
import pytest

from repeatlab import experiments as ex
from repeatlab.errors import ConfigurationError
from repeatlab.metrics import MetricsRow
from repeatlab.optim import OptimConfig
from repeatlab.schedule import ComputeLedger, Phase, PhaseSchedule
from repeatlab.tasks import TaskSpec

TASK = TaskSpec.parity(8, 2)


def _cfg(**kw):
    base = dict(task=TASK, widths=(16, 1), optim=OptimConfig(lr=0.1), data_size=128, batch_size=32,
                test_size=256, eval_every=5, max_steps=60)
    base.update(kw)
    return ex.RunConfig(**base)


def _strip(rows):
    return [replace(r, run_id="") for r in rows]


def test_zero_steps():
    rec = ex.run_training(_cfg(max_steps=0), 0)
    assert rec.rows == [] and not rec.reached and rec.status == ex.FAILED


def test_compute_column_matches_ledger():
    rec = ex.run_training(_cfg(stop_at_threshold=False), 1)
    assert rec.ledger.compute == sum(rec.ledger.log) == 32 * rec.ledger.steps
    for row in rec.rows:
        assert row.compute == 32 * row.step
    steps = [r.step for r in rec.rows]
    assert steps == sorted(set(steps))


def test_full_batch_and_schedule_compute():
    sched = PhaseSchedule([Phase(16, steps=4), Phase(128, steps=100)])
    rec = ex.run_training(_cfg(schedule=sched, batch_size=None, stop_at_threshold=False, max_steps=20), 0)
    assert rec.ledger.per_phase[0] == (4, 64)
    assert rec.ledger.compute == 4 * 16 + 16 * 128
    assert [r.compute for r in rec.rows if r.step == 20] == [rec.ledger.compute]


def test_runs_are_deterministic_and_worker_independent():
    cfg = _cfg()
    jobs = [((s,), cfg, s) for s in range(3)]
    a = ex.execute(jobs, 1)
    b = ex.execute(jobs, 2)
    for k in a:
        assert a[k].rows == b[k].rows
        assert a[k].steps_to_threshold == b[k].steps_to_threshold


def test_divergence_is_recorded():
    rec = ex.run_training(_cfg(optim=OptimConfig(lr=1e6)), 0)
    assert rec.status == ex.DIVERGED and not rec.reached
    assert all(math.isfinite(r.test_loss) for r in rec.rows)


def test_population_master_is_shuffled_cube():
    ds = ex.master_dataset(TASK, 256, 3)
    assert len({tuple(r) for r in ds.X}) == 256
    assert not np.array_equal(ds.X[:, 0], np.sort(ds.X[:, 0]))


def test_lr_grid_protocol():
    g = ex.lr_grid(0.1, 0.6)
    assert g[0] == pytest.approx(0.1) and g[-1] >= 0.6
    assert max(b / a for a, b in zip(g, g[1:])) <= 1.2 + 1e-12
    with pytest.raises(ConfigurationError):
        ex.check_lr_grid([0.1, 0.2])


def _rec(steps, status=ex.OK):
    return ex.RunRecord("r", 0, status, [], ComputeLedger(), steps_to_threshold=steps,
                        compute_to_threshold=steps * 10, final_test_acc=1.0)


def test_select_best_ties_to_smaller_lr():
    per = {0.2: {"median_steps": 10.0}, 0.1: {"median_steps": 10.0}, 0.3: {"median_steps": 12.0}}
    assert ex.select_best(per) == 0.1
    assert ex.select_best({0.1: {"median_steps": math.inf}, 0.2: {"median_steps": 50.0}}) == 0.2


def test_arm_summary_failures_and_inconclusive():
    recs = [_rec(10), _rec(20), _rec(math.inf, ex.DIVERGED), _rec(math.inf)]
    s = ex.arm_summary(recs)
    assert s["median_steps"] == math.inf and s["median_steps_success"] == 15
    assert s["n_failed"] == 2 and s["n_diverged"] == 1 and s["inconclusive"]
    assert not ex.arm_summary(recs[:2] + [_rec(30), _rec(math.inf, ex.DIVERGED), _rec(5)])["inconclusive"]


def test_single_size_gap_sweep_has_no_comparison():
    out = ex.gap_sweep(_cfg(), [64], [0], (0.1,))
    assert len(out["rows"]) == 1 and "comparison" not in out


def test_zero_prephase_equals_large_only():
    base = _cfg(max_steps=30)
    pre = replace(base, interventions=ex.Interventions(random_label_prephase=ex.Prephase(32, 0)))
    a, b = ex.run_training(base, 2), ex.run_training(pre, 2)
    assert _strip(a.rows) == _strip(b.rows)


def test_prephase_switch_records_norm_ratio():
    cfg = _cfg(max_steps=30, interventions=ex.Interventions(random_label_prephase=ex.Prephase(32, 10)))
    rec = ex.run_training(cfg, 0)
    assert rec.switch_step == 10 and rec.norm_ratio_at_switch > 0
    assert {r.phase for r in rec.rows} == {0, 1}


def test_layerwise_diagonal_matches_global_sweep():
    cfg = _cfg(max_steps=40)
    lay = ex.layerwise_lr_sweep(cfg, [(0.1, 0.1)], [128], [0, 1])
    arm = ex.sweep_arm(replace(cfg, data_size=128), (0.1,), [0, 1], "g")
    assert lay["best"][128]["median_steps"] == arm.summary["median_steps"]
    assert [r.rows[-1].test_loss for r in lay["records"]] == [r.rows[-1].test_loss for r in arm.records]


def test_singleton_ablation_and_one_seed_adam():
    out = ex.scaling_ablation(_cfg(max_steps=20), "width", [8], 64, 128, [0], (0.1,))
    assert len(out["rows"]) == 1
    adam = ex.adam_closure(_cfg(max_steps=20), 64, 128, [0], (0.01,), beta2s=(0.9,))
    assert adam["iqr_defined"] is False
    assert ex.BETA2_GRID == (0.8, 0.9, 0.95, 0.999)
    with pytest.raises(ConfigurationError):
        ex.scaling_ablation(_cfg(), "height", [1], 64, 128, [0], (0.1,))


def test_bias_refutation_runs():
    out = ex.bias_refutation(_cfg(max_steps=30), 64, [0], (0.1,), source_sizes=[64], online_steps=30)
    assert {"centered_over_plain", "online_slower_than_small"} <= set(out["checks"])
    labels = [r["arm"] for r in out["rows"]]
    assert labels == ["small_plain", "small_centered", "biased_online_m64"]


def test_sim_task_trains_on_loss():
    cfg = ex.RunConfig(TaskSpec.sim(6, 2), widths=(16, 1), data_size=256, test_size=256, max_steps=20,
                       loss_target=1e-9, optim=OptimConfig(lr=0.01))
    rec = ex.run_training(cfg, 0)
    assert rec.rows[0].test_acc is None and rec.status == ex.FAILED
