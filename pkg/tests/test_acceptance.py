"""Acceptance criteria 1-10 at desk scale.

Every test prints exactly one ``ACCEPTANCE <n> PASS|FAIL`` line (visible even
without ``-s``) and then asserts the criterion at its stated tolerance. The
parameters below were fixed before looking at the outcomes. Criteria that do
not hold at this scale fail here and are analysed in the decision ledger.
"""

import itertools
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import beta_cdf_half, finite_difference_grads, max_rel_error, paley_zygmund
from repeatlab import experiments as ex
from repeatlab import theory as th
from repeatlab.cli import main
from repeatlab.model import InitScheme, init_mlp, loss_and_grad
from repeatlab.optim import OptimConfig
from repeatlab.seeding import derive_seed
from repeatlab.tasks import TaskSpec, make_dataset

pytestmark = pytest.mark.acceptance

SMALL, LARGE = 2 ** 10, 2 ** 14
SEEDS = list(range(20))
TASK = TaskSpec.parity(14, 4)
SGD_LRS = ex.lr_grid(0.1, 0.6)


def _announce(capsys, n, ok, text):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {text}")


def _minibatch(name, max_steps=1500):
    return ex.RunConfig(TASK, widths=(64, 1), optim=OptimConfig("sgd", 0.1), batch_size=128, max_steps=max_steps,
                        eval_every=10, name=name)


def test_1_gradient_exactness(capsys):
    t0 = time.perf_counter()
    worst, worst_cell = 0.0, None
    for depth, width, d, loss in itertools.product((2, 4), (4, 8), (3, 5), ("mse", "correlation")):
        seed = derive_seed(0, "acceptance-grad", depth, width, d, loss)
        params = init_mlp(d, [width] * (depth - 1) + [1], InitScheme(seed=seed))
        ds = make_dataset(TaskSpec.parity(d, 2), 16, seed)
        _, g = loss_and_grad(params, ds.X, ds.y, loss)
        err = max_rel_error(g, finite_difference_grads(params.layers, ds.X, ds.y, loss, h=1e-5))
        if err > worst:
            worst, worst_cell = err, (depth, width, d, loss)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 10
    _announce(capsys, 1, ok, f"gradient exactness: max rel err {worst:.2e} at {worst_cell}, {elapsed:.1f}s")
    assert worst < 1e-6
    assert elapsed < 10


def test_2_gap_reproduction(capsys):
    t0 = time.perf_counter()
    cfg = ex.RunConfig(TASK, widths=(64, 1), optim=OptimConfig("sgd", 0.15), batch_size=None, max_steps=800,
                       eval_every=5, name="acc2")
    out = ex.gap_sweep(cfg, [SMALL, LARGE], SEEDS, ex.lr_grid(0.15, 0.6))
    s, l = out["rows"]
    comp = out["comparison"]
    elapsed = time.perf_counter() - t0
    steps_ok = s["median_steps"] < l["median_steps"]
    compute_ok = comp["compute_ratio"] >= 10
    _announce(capsys, 2, steps_ok and compute_ok and elapsed <= 1800,
              f"gap reproduction: median steps {s['median_steps']:g} (N={SMALL}) vs {l['median_steps']:g} "
              f"(N={LARGE}), compute ratio {comp['compute_ratio']:.1f}, {elapsed:.0f}s")
    assert steps_ok, "small set needs at least as many median steps as the population"
    assert compute_ok
    assert elapsed <= 1800


@pytest.fixture(scope="module")
def scaling():
    t0 = time.perf_counter()
    out = th.scaling_study(d=16)
    out["elapsed"] = time.perf_counter() - t0
    return out


def test_3_phase1_scaling(scaling, capsys):
    fixed = [r for r in scaling["rows"] if r["study"] == "fixed"]
    Ns = [r["N"] for r in fixed]
    meds = [r["median_T1"] for r in fixed]
    slope = float(np.polyfit(np.log(Ns), np.log(meds), 1)[0])
    enough = all(r["n_ok"] >= 200 for r in fixed)
    ok = abs(slope - 0.5) <= 0.15 and enough and scaling["elapsed"] < 300
    _announce(capsys, 3, ok, f"phase-1 scaling: slope {slope:.3f} over N={Ns}, medians {meds}, "
                             f"min successes {min(r['n_ok'] for r in fixed)}")
    assert Ns == [16, 64, 256, 1024]
    assert math.isclose(slope, scaling["checks"]["t1_slope"], rel_tol=1e-9)
    assert enough
    assert abs(slope - 0.5) <= 0.15


def test_4_total_steps_monotone(scaling, capsys):
    sched = {r["N"]: r for r in scaling["rows"] if r["study"] == "schedule"}
    at_d, at_d2 = sched[16], sched[256]
    enough = at_d["n_ok"] >= 200 and at_d2["n_ok"] >= 200
    ok = enough and at_d["median_total"] <= at_d2["median_total"]
    _announce(capsys, 4, ok, f"total steps: median {at_d['median_total']:g} (N=d, {at_d['n_ok']} ok) vs "
                             f"{at_d2['median_total']:g} (N=d^2, {at_d2['n_ok']} ok)")
    assert enough
    assert at_d["median_total"] <= at_d2["median_total"]


@pytest.fixture(scope="module")
def lemmas():
    t0 = time.perf_counter()
    reports = th.verify_suite()
    return reports, time.perf_counter() - t0


def _named(reports, name):
    return [r for r in reports if r.lemma == name]


def test_5_zero_violation_lemmas(lemmas, capsys):
    reports, elapsed = lemmas
    (qm,) = _named(reports, "q_monotone")
    (pc,) = _named(reports, "phase2_contraction")
    rest = _named(reports, "phase1_sign_and_q") + _named(reports, "w_drift") + _named(reports, "sign_transfer")
    counts = {"q_monotone": qm.violations, "phase2_contraction": pc.violations}
    for r in rest:
        counts[f"{r.lemma}[N={r.params['N']}]"] = r.violations
    sizes_ok = qm.trials >= 10_000 and pc.trials >= 1_000 and pc.details["max_excess"] <= 1e-12
    kept_ok = all(r.details.get("kept", r.details.get("tested", 0)) > 0 for r in rest)
    total = sum(counts.values())
    ok = total == 0 and sizes_ok and kept_ok and elapsed < 120
    _announce(capsys, 5, ok, f"zero-violation lemmas: {total} violations over {len(counts)} checks, "
                             f"max contraction excess {pc.details['max_excess']:.1e}, {elapsed:.0f}s")
    assert sizes_ok and kept_ok
    assert total == 0, counts
    assert elapsed < 120


def test_6_monte_carlo_bands(lemmas, capsys):
    reports, _ = lemmas
    msgs, ok = [], True
    pz = paley_zygmund(math.sqrt(3 / 8))
    anti = {(r.params["d"], r.params["N"]): r for r in _named(reports, "q0_anticoncentration")}
    for pair in ((10, 40), (50, 200)):
        r = anti[pair]
        ok &= r.trials >= 10_000 and r.estimate >= pz and r.estimate >= 0.1
        msgs.append(f"P|q0|{pair}={r.estimate:.3f}")
    (sm,) = _named(reports, "sign_match")
    ok &= abs(sm.estimate - 0.5) <= 0.02
    msgs.append(f"sign match {sm.estimate:.4f}")
    (bc,) = _named(reports, "beta_cdf_half")
    exact = beta_cdf_half(bc.params["d"])
    ok &= abs(bc.estimate - exact) <= 0.02
    msgs.append(f"beta cdf {bc.estimate:.4f} vs {exact:.4f}")
    quant = [r.estimate for r in _named(reports, "mhat_opnorm")]
    ok &= all(b < a for a, b in zip(quant, quant[1:]))
    msgs.append("opnorm quantiles " + ", ".join(f"{q:.3f}" for q in quant))
    _announce(capsys, 6, ok, "Monte-Carlo bands: " + "; ".join(msgs) + f"; PZ bound {pz:.2e}")
    assert ok


def test_7_random_label_speedup(capsys):
    cfg = replace(_minibatch("acc7"), data_size=LARGE)
    out = ex.random_label_probe(cfg, ex.Prephase(SMALL, 50, "random"), SEEDS, SGD_LRS)
    rows = {r["arm"]: r for r in out["rows"]}
    lo, rnd = rows["large_only"], rows["small_random_then_large"]
    faster = rnd["median_steps"] < lo["median_steps"]
    ratio_ok = rnd["median_norm_ratio_at_switch"] > out["large_only_norm_ratio_at_switch"]
    _announce(capsys, 7, faster and ratio_ok,
              f"random-label speedup: median steps {rnd['median_steps']:g} (random prephase) vs "
              f"{lo['median_steps']:g} (large only); norm ratio at switch {rnd['median_norm_ratio_at_switch']:.3f} "
              f"vs {out['large_only_norm_ratio_at_switch']:.3f}")
    assert faster
    assert ratio_ok


def test_8_interventions(capsys):
    cfg = _minibatch("acc8")
    bias = ex.bias_refutation(cfg, SMALL, SEEDS, SGD_LRS, [SMALL])
    a = bias["checks"]["centered_over_plain"]
    b = bias["checks"]["online_slower_than_small"]

    grid = (0.025, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
    lw = ex.layerwise_lr_sweep(cfg, [(e1, e2) for e1 in grid for e2 in grid], [SMALL, LARGE], SEEDS)
    best_large = lw["best"][LARGE]
    c = best_large["eta1"] > best_large["eta2"] and lw["checks"]["large_over_small_steps"] <= 1.5

    adam = ex.adam_closure(cfg, SMALL, LARGE, SEEDS[:10], ex.lr_grid(0.002, 0.03))
    d = adam["adam_gap_ratio"] <= 1.5

    parts = {"a": a <= 1.25, "b": bool(b), "c": bool(c), "d": bool(d)}
    _announce(capsys, 8, all(parts.values()),
              f"interventions: (a) centred/plain {a:.2f} (b) biased-online slower {b} "
              f"(c) best large pair ({best_large['eta1']:g}, {best_large['eta2']:g}) at "
              f"{lw['checks']['large_over_small_steps']:.2f}x small (d) AdamW gap {adam['adam_gap_ratio']:.2f}")
    assert parts == {"a": True, "b": True, "c": True, "d": True}


def test_9_init_heatmap(capsys):
    scales = [0.25, 0.5, 1.0, 2.0]
    cfg = ex.RunConfig(TASK, widths=(64, 1), optim=OptimConfig("sgd", 0.1), batch_size=128, eval_every=20,
                       name="acc9")
    h = ex.init_heatmap(cfg, scales, scales, [SMALL, LARGE], list(range(5)), SGD_LRS, budget=100)
    a_s, a_l = h["acc"][SMALL], h["acc"][LARGE]
    closed = bool(np.any(a_l >= a_s - 0.02))
    default_win = a_s[2, 2] > a_l[2, 2]
    near_s = int(np.sum(a_s >= a_s.max() - 0.02))
    near_l = int(np.sum(a_l >= a_l.max() - 0.02))
    ok = closed and default_win and near_s >= near_l
    _announce(capsys, 9, ok, f"init heatmap: gap closed somewhere {closed}; default cell {a_s[2, 2]:.3f} (small) "
                             f"vs {a_l[2, 2]:.3f} (large); near-optimal cells {near_s} vs {near_l}")
    assert h["checks"]["small_wins_at_default"] == default_win
    assert closed
    assert default_win
    assert near_s >= near_l


def test_10_determinism(tmp_path, capsys):
    args = ["--set", "experiment=gap_sweep", "--set", "data.batch_size=null", "--set", "sweep.sizes=[1024,16384]",
            "--set", "sweep.lrs=[0.3,0.35,0.42]", "--set", "seeds=[0,1,2,3]", "--set", "max_steps=300",
            "--set", "eval.eval_every=5"]
    codes = {}
    for tag, workers in (("w1", "1"), ("w2", "2"), ("w1_again", "1")):
        codes[tag] = main(["sweep", "--out", str(tmp_path / tag), "--workers", workers, *args])
    same = all((tmp_path / "w1" / f).read_bytes() == (tmp_path / t / f).read_bytes()
               for t in ("w2", "w1_again") for f in ("runs.csv", "summary.csv"))
    meta = json.loads((tmp_path / "w1" / "meta.json").read_text())
    ok = same and len(set(codes.values())) == 1 and codes["w1"] in (0, 1)
    _announce(capsys, 10, ok, f"determinism: runs.csv/summary.csv identical across workers 1, 2 and a rerun: "
                              f"{same}; exit codes {codes}")
    assert meta["base_seed"] == 0
    assert ok
