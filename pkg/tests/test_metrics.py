import json
import os
import tempfile
import math
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from repeatlab.errors import ConfigurationError, OutputError, PlottingError
from repeatlab.metrics import (BASE_COLUMNS, AxesSpec, MetricsRow, Series, aggregate, compute_bucket, evaluate,
                               plot_series, read_csv, read_table, steps_summary, write_csv, write_json,
                               write_table)
from repeatlab.model import InitScheme, MlpParams, init_mlp
from repeatlab.tasks import LabeledDataset, TaskSpec, make_dataset

SVG = "{http://www.w3.org/2000/svg}"


def _row(seed, step, acc, run="g/s", compute=None, ratio=0.5):
    return MetricsRow(f"{run}{seed}", seed, 0, step, step * 10 if compute is None else compute, acc, acc,
                      0.1, 0.2, ratio, [1.0, ratio])


def test_evaluate_examples():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    ds = LabeledDataset(X, np.array([1.0, -1.0]), TaskSpec.parity(2, 1), 0)
    perfect = MlpParams([np.eye(2), np.array([[1.0, -1.0]])])
    acc, loss = evaluate(perfect, ds)
    assert acc == 1.0 and loss == 0.0
    par = make_dataset(TaskSpec.parity(8, 3), 500, 2)
    zero = MlpParams([np.ones((4, 8)), np.zeros((1, 4))])
    acc, _ = evaluate(zero, par)
    assert acc == np.mean(par.y == 1)
    p = init_mlp(8, [4, 1], InitScheme(seed=1))
    assert evaluate(p, par) == evaluate(p, par)
    sim = make_dataset(TaskSpec.sim(8, 2), 50, 0)
    assert evaluate(p, sim)[0] is None
    with pytest.raises(ConfigurationError):
        evaluate(p, None)


def test_aggregate_examples():
    rows = [_row(0, 5, 1.0), _row(1, 5, 1.0), _row(2, 5, 0.0)]
    (a,) = aggregate(rows, key=lambda r: "g", threshold=0.99)
    assert a.success_prob == pytest.approx(2 / 3) and a.n_seeds == 3 and a.n_failed == 0
    (b,) = aggregate([_row(0, 5, 0.7)], key=lambda r: "g")
    assert b.median == 0.7 and b.iqr == 0
    s = steps_summary([math.inf, math.inf])
    assert math.isnan(s["median"]) and s["success_prob"] == 0
    s = steps_summary([10, 30, math.inf])
    assert s["median"] == 20 and s["n_failed"] == 1


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 20), st.floats(0, 1)), min_size=1, max_size=40),
       st.randoms())
def test_aggregate_permutation_invariant(spec, rnd):
    rows = [_row(s, 10 * t, a) for s, t, a in {(s, t): (s, t, a) for s, t, a in spec}.values()]
    shuffled = rows[:]
    rnd.shuffle(shuffled)
    for bucket in ("step", "compute"):
        a = aggregate(rows, key=lambda r: "g", bucket=bucket)
        b = aggregate(shuffled, key=lambda r: "g", bucket=bucket)
        assert a == b
        for r in a:
            assert 0 <= r.success_prob <= 1


def test_compute_bucket_is_geometric():
    edges = [compute_bucket(c) for c in (1, 1.05, 1.1, 1.2, 100)]
    assert edges[0] == edges[1] == 1.0 and edges[2] == pytest.approx(1.1)
    assert compute_bucket(0) == 0.0


def test_csv_header_and_roundtrip(tmp_path):
    write_csv([], tmp_path / "e.csv", n_layers=2)
    assert (tmp_path / "e.csv").read_text() == ",".join(BASE_COLUMNS + ["layer_norm_1", "layer_norm_2"]) + "\n"
    rng = np.random.default_rng(0)
    rows = [MetricsRow("r/s0", 0, 1, i, 64 * i, None if i == 0 else float(rng.random()), float(rng.random()),
                       float(rng.standard_normal()), 1 / 3, math.pi * i, [0.1 + i, 1e-300]) for i in range(5)]
    write_csv(rows, tmp_path / "r.csv")
    assert read_csv(tmp_path / "r.csv") == rows
    first = (tmp_path / "r.csv").read_bytes()
    write_csv(rows, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_bytes() == first


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_seventeen_digits_roundtrip(x):
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "t.csv")
        write_table([{"v": x}], p)
        assert read_table(p)[0]["v"] == x


def test_json_schema_and_idempotence(tmp_path):
    rep = {"b": [1, np.float64(2.5)], "a": np.bool_(True), "c": math.inf}
    write_json(rep, tmp_path / "x.json")
    one = (tmp_path / "x.json").read_bytes()
    data = json.loads(one)
    assert data["schema_version"] == "1" and data["c"] == "inf" and data["a"] is True
    write_json(rep, tmp_path / "x.json")
    assert (tmp_path / "x.json").read_bytes() == one


def test_write_error_names_path(tmp_path):
    bad = tmp_path / "missing" / "x.csv"
    with pytest.raises(OutputError, match="missing"):
        write_csv([], bad)


def _svg(path):
    return ET.parse(path).getroot()


def test_plot_one_series(tmp_path):
    plot_series([Series("a", [0, 1], [2, 3])], AxesSpec(), tmp_path / "p.svg")
    root = _svg(tmp_path / "p.svg")
    lines = root.findall(f"{SVG}polyline")
    assert len(lines) == 1 and len(lines[0].get("points").split()) == 2


def test_plot_legend_order_and_errors(tmp_path):
    plot_series([Series("first", [1, 2], [1, 2]), Series("second", [1, 3], [0, 1])],
                AxesSpec(logx=True, xlabel="x", ylabel="y"), tmp_path / "p.svg")
    labels = [t.text for t in _svg(tmp_path / "p.svg").findall(f"{SVG}text") if t.get("class") == "legend"]
    assert labels == ["first", "second"]
    with pytest.raises(PlottingError, match="empty"):
        plot_series([Series("empty", [], [])], AxesSpec(), tmp_path / "q.svg")
    with pytest.raises(PlottingError):
        plot_series([Series("neg", [0, 1], [1, 2])], AxesSpec(logx=True), tmp_path / "q.svg")
    with pytest.raises(PlottingError):
        plot_series([Series("back", [2, 1], [1, 2])], AxesSpec(), tmp_path / "q.svg")
