import csv
import io
import json

import numpy as np
import pytest
from scipy import integrate

from lcsem import bench_cli, synth
from lcsem.bench_cli import (InputError, main, model_from_dict, model_to_dict, parse_values,
                             run_bench, summarize)
from lcsem.exceptions import ComponentCollapseError
from lcsem.mixture_model import log_likelihood
from lcsem.sem_fit import fit_sem


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def data_file(tmp_path):
    d = synth.sample(synth.FIGURE1, 300, 4)
    p = tmp_path / "data.csv"
    p.write_text("\n".join(repr(float(v)) for v in d.values) + "\n")
    return p


# -- parsing -----------------------------------------------------------------------


def test_parse_plain_and_header():
    np.testing.assert_array_equal(parse_values("1\n2.5\n\n3\n"), [1.0, 2.5, 3.0])
    np.testing.assert_array_equal(parse_values("x\n1\n2\n"), [1.0, 2.0])
    np.testing.assert_array_equal(parse_values("a,b\n1,4\n2,5\n", "b"), [4.0, 5.0])
    np.testing.assert_array_equal(parse_values("1,4\n2,5\n", "1"), [4.0, 5.0])


@pytest.mark.parametrize("text,column,fragment", [
    ("1\n2\nabc\n4\n", None, "line 3"),
    ("", None, "no data"),
    ("x\n", None, "no data"),
    ("a,b\n1,2\n", None, "--column"),
    ("a,b\n1,2\n", "c", "no column"),
    ("1,2\n3,4\n", None, "column index"),
    ("1\nnan\n", None, "line 2"),
])
def test_parse_errors(text, column, fragment):
    with pytest.raises(InputError, match=fragment):
        parse_values(text, column)


# -- fit ---------------------------------------------------------------------------


def test_fit_writes_model_and_grid(tmp_path, data_file):
    out, grid = tmp_path / "model.json", tmp_path / "grid.csv"
    code = main(["fit", "--input", str(data_file), "--components", "2",
                 "--output", str(out), "--grid", str(grid)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["format_version"] == 1 and doc["k"] == 2
    ll = [r["loglik"] for r in doc["trace"]]
    assert all(b >= a - 1e-8 for a, b in zip(ll, ll[1:]))
    assert doc["mu"] == sorted(doc["mu"])
    assert "gmm" in doc

    rows = np.array([[float(v) for v in r.values()] for r in read_csv(grid)])
    assert rows.shape[1] == 4
    assert integrate.trapezoid(rows[:, 1], rows[:, 0]) == pytest.approx(1.0, abs=1e-3)
    np.testing.assert_allclose(rows[:, 1], doc["pi"][0] * rows[:, 2] + doc["pi"][1] * rows[:, 3],
                               rtol=1e-12, atol=1e-300)


def test_model_json_round_trip():
    x = synth.sample(synth.preset(3), 300, 2).values
    m, trace, _ = fit_sem(x, 2)
    doc = json.loads(json.dumps(model_to_dict(m, trace, log_likelihood(m, x))))
    m2, trace2 = model_from_dict(doc)
    assert log_likelihood(m2, x) == log_likelihood(m, x)
    np.testing.assert_array_equal(m2.pi, m.pi)
    assert trace2.logliks.tolist() == trace.logliks.tolist()
    with pytest.raises(ValueError):
        model_from_dict({**doc, "format_version": 99})


def test_fit_bad_row_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("1.0\n2.0\noops\n")
    assert main(["fit", "--input", str(p), "--output", str(tmp_path / "m.json")]) == 2
    assert "line 3" in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def test_fit_missing_file_and_bad_flags(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "none.csv"), "--output", "x.json"]) == 2
    assert main(["fit", "--output", "x.json"]) == 2
    assert main(["nonsense"]) == 2


def test_fit_collapse_exit_3(tmp_path, data_file, monkeypatch, capsys):
    def collapse(*a, **kw):
        raise ComponentCollapseError("component 2 weight 1e-09 below floor at iteration 1")

    monkeypatch.setattr(bench_cli, "fit_sem", collapse)
    code = main(["fit", "--input", str(data_file), "--output", str(tmp_path / "m.json")])
    assert code == 3
    assert "below floor" in capsys.readouterr().err


# -- simulate ----------------------------------------------------------------------


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["simulate", "--model", "1", "--n", "500", "--seed", "7", "--output", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = read_csv(a)
    assert len(rows) == 500
    assert {r["label"] for r in rows} <= {"1", "2"}


def test_simulate_errors(tmp_path):
    out = str(tmp_path / "s.csv")
    assert main(["simulate", "--model", "1", "--n", "0", "--output", out]) == 2
    assert main(["simulate", "--model", "9", "--output", out]) == 2


# -- bench -------------------------------------------------------------------------


def bench(tmp_path, name, *extra):
    out = tmp_path / f"{name}.csv"
    args = ["bench", "--output", str(out), *extra]
    assert main(args) == 0
    return out, tmp_path / f"{name}.summary.csv"


def test_bench_deterministic_and_summary(tmp_path):
    a, sa = bench(tmp_path, "a", "--models", "1", "--reps", "3", "--n", "150", "--seed", "5")
    b, sb = bench(tmp_path, "b", "--models", "1", "--reps", "3", "--n", "150", "--seed", "5")
    assert a.read_bytes() == b.read_bytes()
    assert sa.read_bytes() == sb.read_bytes()
    rows = read_csv(a)
    assert [(r["method"], r["rep"]) for r in rows] == [
        ("gmm", "0"), ("gmm", "1"), ("gmm", "2"), ("sem", "0"), ("sem", "1"), ("sem", "2")]
    assert "rand_index" not in rows[0] and "wall_time_ms" not in rows[0]
    summary = {(s["method"], s["metric"]): s for s in read_csv(sa)}
    for method in ("gmm", "sem"):
        for metric in ("loglik", "misclass", "posterior_error"):
            col = [float(r[metric]) for r in rows if r["method"] == method]
            assert float(summary[method, metric]["mean"]) == pytest.approx(np.mean(col), abs=1e-12)


def test_bench_k3_uses_rand_index(tmp_path):
    out, _ = bench(tmp_path, "m4", "--models", "4", "--reps", "1", "--n", "200", "--timing")
    rows = read_csv(out)
    assert "misclass" not in rows[0]
    assert all(0 <= float(r["rand_index"]) <= 1 for r in rows)
    assert all(float(r["wall_time_ms"]) >= 0 for r in rows)


def test_bench_thread_count_does_not_change_rows():
    serial = run_bench([1], 2, 3, threads=1, n=120)
    parallel = run_bench([1], 2, 3, threads=2, n=120)
    assert bench_cli.rows_csv(serial) == bench_cli.rows_csv(parallel)


def test_bench_errors_recorded_not_fatal():
    rows = [bench_cli.BenchResultRow(1, "sem", 0, 0, 10, 2, status="error:ZeroDensityError"),
            bench_cli.BenchResultRow(1, "sem", 1, 1, 10, 2, loglik=-3.0, misclass=1,
                                     posterior_error=0.1, iterations=4)]
    s = {x["metric"]: x for x in summarize(rows)}
    assert s["loglik"]["count"] == 1 and s["loglik"]["mean"] == -3.0
    assert s["loglik"]["sd"] is None


def test_bench_bad_args(tmp_path):
    out = str(tmp_path / "x.csv")
    assert main(["bench", "--models", "7", "--output", out]) == 2
    assert main(["bench", "--reps", "0", "--output", out]) == 2


def test_thread_env(monkeypatch):
    monkeypatch.setenv(bench_cli.THREADS_ENV, "3")
    assert bench_cli.thread_count() == 3
    monkeypatch.setenv(bench_cli.THREADS_ENV, "many")
    assert bench_cli.thread_count() == 1


# -- faithful and figure1 --------------------------------------------------------------


def test_faithful(tmp_path, faithful_path):
    out = tmp_path / "faithful.json"
    assert main(["faithful", "--input", faithful_path, "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["n"] == 272
    assert rep["sem"]["pi_1"] == pytest.approx(0.355, abs=0.03)
    assert rep["gmm"]["mu_2"] == pytest.approx(80.09, abs=0.5)


def test_faithful_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert main(["faithful", "--input", str(p), "--output", str(tmp_path / "f.json")]) == 2


def test_figure1(tmp_path):
    out, grid = tmp_path / "fig.json", tmp_path / "fig.csv"
    assert main(["figure1", "--seed", "3", "--output", str(out), "--grid", str(grid)]) == 0
    doc = json.loads(out.read_text())
    assert doc["status"] == "converged"
    header = next(csv.reader(io.StringIO(grid.read_text())))
    assert header[:2] == ["x", "g"]
