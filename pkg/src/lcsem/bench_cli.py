"""Command-line front end: fitting, simulation, benchmarks and the geyser example.

Exit codes: 0 success, 2 bad input or arguments, 3 component collapse.
Diagnostics go to standard error; output files are written atomically once
the command has finished.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import synth
from .eval_metrics import (hard_labels, misclassification, posterior_error_frobenius,
                           posterior_error_k2, rand_index)
from .exceptions import ComponentCollapseError, LcsemError
from .gmm_baseline import VARIANCE_MODES, fit_gmm, gmm_posteriors
from .mixture_model import (MixtureModel, SymmetricComponent, component_log_density,
                            log_likelihood, mixture_density, posterior_weights)
from .sem_fit import IterationRecord, SemConfig, SemTrace, fit_sem
from .shape_mle import MonotoneLogConcaveFit

logger = logging.getLogger("lcsem")

FORMAT_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_COLLAPSE = 0, 2, 3
THREADS_ENV = "LCSEM_THREADS"


class InputError(Exception):
    pass


# -- input / output helpers -----------------------------------------------------


def parse_values(text, column=None, source="<input>"):
    """Parse one number per row, or one named column of a CSV with a header.

    A non-numeric first row is treated as a header.  Any other non-numeric
    row raises InputError naming its line.
    """
    rows = [(i, r) for i, r in enumerate(csv.reader(io.StringIO(text)), start=1)
            if r and any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{source}: no data rows")
    col = 0
    first_line, first = rows[0]
    try:
        float(first[0])
        header = None
    except ValueError:
        header = [h.strip() for h in first]
        rows = rows[1:]
    width = max(len(r) for _, r in rows) if rows else 1
    if header is not None and len(header) > 1:
        if column is None:
            raise InputError(f"{source}: {len(header)} columns; choose one with --column")
        if column not in header:
            raise InputError(f"{source}: no column named {column!r}")
        col = header.index(column)
    elif header is None and width > 1:
        if column is None or not str(column).isdigit():
            raise InputError(f"{source}: {width} columns and no header; pass a column index")
        col = int(column)
    values = []
    for line, row in rows:
        try:
            v = float(row[col])
        except (ValueError, IndexError):
            raise InputError(f"{source}: line {line}: not a number: {','.join(row)!r}") from None
        if not math.isfinite(v):
            raise InputError(f"{source}: line {line}: non-finite value")
        values.append(v)
    if not values:
        raise InputError(f"{source}: no data rows")
    return np.array(values)


def read_values(path, column=None):
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    return parse_values(text, column, source=str(path))


def atomic_write(path, text):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v):
    return float(v) if v is not None and math.isfinite(v) else None


def model_to_dict(model, trace=None, loglik=None):
    out = {
        "format_version": FORMAT_VERSION,
        "k": model.k,
        "pi": [float(p) for p in model.pi],
        "mu": [float(c.center) for c in model.components],
        "components": [
            {
                "center": float(c.center),
                "knots": c.half_density.knots.tolist(),
                "psi": c.half_density.psi.tolist(),
                "objective": _num(c.half_density.objective),
                "converged": bool(c.half_density.converged),
            }
            for c in model.components
        ],
        "loglik": _num(loglik),
    }
    if trace is not None:
        out["status"] = trace.status
        out["trace"] = [
            {"iteration": r.iteration, "pi": list(r.pi), "mu": list(r.mu),
             "loglik": _num(r.loglik), "flagged": r.flagged}
            for r in trace.records
        ]
    return out


def model_from_dict(d):
    """Inverse of ``model_to_dict``; returns ``(model, trace or None)``."""
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {d.get('format_version')!r}")
    comps = tuple(
        SymmetricComponent(
            c["center"],
            MonotoneLogConcaveFit(
                np.array(c["knots"]), np.array(c["psi"]),
                objective=c["objective"] if c.get("objective") is not None else float("nan"),
                converged=c.get("converged", True)))
        for c in d["components"])
    model = MixtureModel(np.array(d["pi"]), comps)
    trace = None
    if "trace" in d:
        trace = SemTrace(
            [IterationRecord(r["iteration"], tuple(r["pi"]), tuple(r["mu"]),
                             r["loglik"] if r["loglik"] is not None else -math.inf,
                             r["flagged"]) for r in d["trace"]],
            d.get("status", "unknown"))
    return model, trace


def density_grid(model, data, n_points=2001):
    """Rows of ``(x, g(x), f_1(x), ..., f_k(x))`` spanning data and supports."""
    lo = min(float(np.min(data)), min(c.support[0] for c in model.components))
    hi = max(float(np.max(data)), max(c.support[1] for c in model.components))
    x = np.linspace(lo, hi, n_points)
    cols = [x, mixture_density(model, x)]
    cols += [np.exp(component_log_density(c, x)) for c in model.components]
    return np.column_stack(cols)


def grid_csv(grid):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = grid.shape[1] - 2
    w.writerow(["x", "g"] + [f"f_{j + 1}" for j in range(k)])
    for row in grid:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


# -- benchmark -------------------------------------------------------------------


@dataclass
class BenchResultRow:
    model_id: int
    method: str
    rep: int
    seed: int
    n: int
    k: int
    loglik: float = None
    misclass: int = None
    rand_index: float = None
    posterior_error: float = None
    iterations: int = None
    status: str = "ok"
    wall_time_ms: float = None


METRICS = ("loglik", "misclass", "rand_index", "posterior_error", "iterations")


def _score(row, spec, sample, w_hat):
    k = spec.k
    w_true = synth.true_posteriors(spec, sample.values)
    est = hard_labels(w_hat)
    if k == 2:
        row.misclass = misclassification(sample.labels, est, k)
        row.posterior_error = posterior_error_k2(w_hat, w_true)
    else:
        row.rand_index = rand_index(sample.labels, est)
        row.posterior_error = posterior_error_frobenius(w_hat, w_true, k)


def run_replicate(model_id, rep, seed, n=None, max_iter=200, normal_second_param="variance"):
    """Simulate one data set and score GMM and SEM on it; one row per method."""
    spec = synth.preset(model_id, normal_second_param)
    n = n or spec.default_n
    rseed = synth.stream_seed(seed, rep)
    data = synth.sample(spec, n, rseed)
    x = data.values
    k = spec.k
    gmm_row = BenchResultRow(model_id, "gmm", rep, rseed, n, k)
    sem_row = BenchResultRow(model_id, "sem", rep, rseed, n, k)

    t0 = time.perf_counter()
    try:
        gmm = fit_gmm(x, k)
        gmm_row.loglik = gmm.loglik
        gmm_row.iterations = gmm.n_iter
        _score(gmm_row, spec, data, gmm_posteriors(gmm.model, x))
    except (LcsemError, ValueError, FloatingPointError) as exc:
        gmm_row.status = f"error:{type(exc).__name__}"
    gmm_row.wall_time_ms = 1000 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    try:
        model, trace, _ = fit_sem(x, k, SemConfig(k=k, max_iter=max_iter))
        sem_row.loglik = log_likelihood(model, x)
        sem_row.iterations = trace.n_iter
        if trace.status != "converged":
            sem_row.status = trace.status
        elif trace.flagged_iterations:
            sem_row.status = "flagged"
        _score(sem_row, spec, data, posterior_weights(model, x))
    except (LcsemError, ValueError, FloatingPointError) as exc:
        sem_row.status = f"error:{type(exc).__name__}"
    sem_row.wall_time_ms = 1000 * (time.perf_counter() - t0)
    return [gmm_row, sem_row]


def _replicate_task(args):
    return run_replicate(*args)


def thread_count(default=1):
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return default


def run_bench(models, reps, seed, threads=1, n=None, max_iter=200,
              normal_second_param="variance"):
    tasks = [(m, r, seed, n, max_iter, normal_second_param)
             for m in models for r in range(reps)]
    if threads <= 1:
        results = [_replicate_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_task, tasks))
    rows = [row for pair in results for row in pair]
    rows.sort(key=lambda r: (r.model_id, r.method, r.rep))
    return rows


def _ok(row):
    return not row.status.startswith("error")


def summarize(rows):
    """Mean and sample standard deviation per (model, method, metric)."""
    groups = {}
    for row in rows:
        groups.setdefault((row.model_id, row.method), []).append(row)
    out = []
    for (model_id, method), group in sorted(groups.items()):
        good = [r for r in group if _ok(r)]
        for metric in METRICS:
            vals = np.array([getattr(r, metric) for r in good if getattr(r, metric) is not None],
                            dtype=float)
            if vals.size == 0:
                continue
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else None
            out.append({"model_id": model_id, "method": method, "metric": metric,
                        "count": int(vals.size), "mean": float(np.mean(vals)), "sd": sd})
    return out


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("-inf" if v < 0 else "nan")
    return str(v)


def rows_csv(rows, timing=False):
    """Detail rows as CSV.  Metric columns no row uses (misclass when every
    model has k >= 3, rand_index when every model has k = 2) are left out."""
    unused = {"misclass", "rand_index"} - {"misclass" if r.k == 2 else "rand_index" for r in rows}
    if not timing:
        unused.add("wall_time_ms")
    names = [f.name for f in fields(BenchResultRow) if f.name not in unused]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in rows:
        d = asdict(row)
        w.writerow([_cell(d[k]) for k in names])
    return buf.getvalue()


def summary_csv(summary):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_id", "method", "metric", "count", "mean", "sd"])
    for s in summary:
        w.writerow([s["model_id"], s["method"], s["metric"], s["count"],
                    _cell(s["mean"]), _cell(s["sd"])])
    return buf.getvalue()


# -- commands --------------------------------------------------------------------


def _fail(code, message):
    print(f"lcsem: {message}", file=sys.stderr)
    return code


def cmd_fit(args):
    try:
        x = read_values(args.input, args.column)
    except InputError as exc:
        return _fail(EXIT_INPUT, exc)
    cfg = SemConfig(k=args.components, max_iter=args.max_iter, rel_tol=args.tol,
                    init_variance=args.init_variance)
    try:
        model, trace, gmm = fit_sem(x, args.components, cfg, seed=args.seed)
    except ComponentCollapseError as exc:
        return _fail(EXIT_COLLAPSE, exc)
    except (LcsemError, ValueError) as exc:
        return _fail(EXIT_INPUT, exc)
    doc = model_to_dict(model, trace, log_likelihood(model, x))
    if gmm is not None:
        doc["gmm"] = {"pi": gmm.model.pi.tolist(), "mu": gmm.model.mu.tolist(),
                      "sigma": gmm.model.sigma.tolist(), "loglik": gmm.loglik}
    atomic_write(args.output, json.dumps(doc, indent=2) + "\n")
    if args.grid:
        atomic_write(args.grid, grid_csv(density_grid(model, x)))
    print(f"{trace.status} after {trace.n_iter} iterations; loglik {doc['loglik']}",
          file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    try:
        spec = synth.preset(args.model, args.normal_param)
    except KeyError as exc:
        return _fail(EXIT_INPUT, exc.args[0])
    n = spec.default_n if args.n is None else args.n
    if n < 1:
        return _fail(EXIT_INPUT, "--n must be at least 1")
    data = synth.sample(spec, n, args.seed)
    atomic_write(args.output, data.to_csv())
    return EXIT_OK


def _parse_models(text):
    try:
        models = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"bad --models value {text!r}") from None
    for m in models:
        if m not in range(1, 6):
            raise InputError(f"unknown model id {m}")
    if not models:
        raise InputError("no models given")
    return models


def cmd_bench(args):
    try:
        models = _parse_models(args.models)
    except InputError as exc:
        return _fail(EXIT_INPUT, exc)
    if args.reps < 1:
        return _fail(EXIT_INPUT, "--reps must be at least 1")
    threads = args.threads or thread_count()
    rows = run_bench(models, args.reps, args.seed, threads=threads, n=args.n,
                     max_iter=args.max_iter, normal_second_param=args.normal_param)
    summary = summarize(rows)
    summary_path = args.summary or _default_summary_path(args.output)
    atomic_write(args.output, rows_csv(rows, timing=args.timing))
    atomic_write(summary_path, summary_csv(summary))
    for s in summary:
        if s["metric"] != "iterations":
            sd = "" if s["sd"] is None else f" ({s['sd']:.4g})"
            print(f"model {s['model_id']} {s['method']:>3} {s['metric']:<15} "
                  f"{s['mean']:.4g}{sd}", file=sys.stderr)
    return EXIT_OK


def _default_summary_path(path):
    root, ext = os.path.splitext(path)
    return f"{root}.summary{ext or '.csv'}"


def faithful_report(x, max_iter=200):
    model, trace, gmm = fit_sem(x, 2, SemConfig(k=2, max_iter=max_iter))
    return {
        "n": int(len(x)),
        "sem": {"pi_1": float(model.pi[0]), "mu_1": float(model.centers[0]),
                "mu_2": float(model.centers[1]), "iterations": trace.n_iter,
                "status": trace.status, "loglik": log_likelihood(model, x)},
        "gmm": {"pi_1": float(gmm.model.pi[0]), "mu_1": float(gmm.model.mu[0]),
                "mu_2": float(gmm.model.mu[1]), "sigma": gmm.model.sigma.tolist(),
                "iterations": gmm.n_iter, "loglik": gmm.loglik},
    }


def cmd_faithful(args):
    try:
        x = read_values(args.input, args.column)
        if x.size < 4:
            raise InputError(f"{args.input}: need at least 4 observations")
    except InputError as exc:
        return _fail(EXIT_INPUT, exc)
    try:
        report = faithful_report(x, args.max_iter)
    except ComponentCollapseError as exc:
        return _fail(EXIT_COLLAPSE, exc)
    atomic_write(args.output, json.dumps(report, indent=2) + "\n")
    s, g = report["sem"], report["gmm"]
    print(f"{'':6}{'GMM':>10}{'SEM':>10}", file=sys.stderr)
    for key in ("pi_1", "mu_1", "mu_2"):
        print(f"{key:6}{g[key]:10.4g}{s[key]:10.4g}", file=sys.stderr)
    return EXIT_OK


def cmd_figure1(args):
    data = synth.sample(synth.FIGURE1, args.n, args.seed)
    x = data.values
    try:
        model, trace, _ = fit_sem(x, 2, SemConfig(k=2, max_iter=args.max_iter))
    except ComponentCollapseError as exc:
        return _fail(EXIT_COLLAPSE, exc)
    doc = model_to_dict(model, trace, log_likelihood(model, x))
    doc["truth"] = {"pi": [0.15, 0.85], "mu": [-1.0, 2.0]}
    atomic_write(args.output, json.dumps(doc, indent=2) + "\n")
    if args.grid:
        grid = density_grid(model, x)
        truth = np.exp(synth.true_log_joint(synth.FIGURE1, grid[:, 0]))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "g", "f_1", "f_2", "g_true", "f_1_true", "f_2_true"])
        for row, t in zip(grid, truth):
            w.writerow([repr(float(v)) for v in row]
                       + [repr(float(t.sum())), repr(float(t[0] / 0.15)), repr(float(t[1] / 0.85))])
        atomic_write(args.grid, buf.getvalue())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="lcsem", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a k-component SEM model to a data file")
    f.add_argument("--input", required=True)
    f.add_argument("--column", default=None, help="column name when the CSV has several")
    f.add_argument("--components", type=int, default=2)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--max-iter", type=int, default=200)
    f.add_argument("--tol", type=float, default=1e-7, help="relative log-likelihood tolerance")
    f.add_argument("--init-variance", choices=VARIANCE_MODES, default="equal",
                   help="variance model of the starting Gaussian mixture")
    f.add_argument("--output", required=True, help="model JSON path")
    f.add_argument("--grid", default=None, help="optional density grid CSV path")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="draw a labelled sample from a preset model")
    s.add_argument("--model", type=int, required=True)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--normal-param", choices=("variance", "sd"), default="variance")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="GMM vs SEM over repeated simulations")
    b.add_argument("--models", default="1,2,3,4,5")
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n", type=int, default=None, help="override the preset sample size")
    b.add_argument("--max-iter", type=int, default=200)
    b.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default ${THREADS_ENV} or 1)")
    b.add_argument("--normal-param", choices=("variance", "sd"), default="variance")
    b.add_argument("--timing", action="store_true", help="add a wall_time_ms column")
    b.add_argument("--output", required=True)
    b.add_argument("--summary", default=None, help="summary CSV (default <output>.summary.csv)")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("faithful", help="two-component fit of geyser waiting times")
    g.add_argument("--input", required=True)
    g.add_argument("--column", default="waiting")
    g.add_argument("--max-iter", type=int, default=200)
    g.add_argument("--output", required=True)
    g.set_defaults(func=cmd_faithful)

    fig = sub.add_parser("figure1", help="SEM trace on 0.15 N(-1,1) + 0.85 N(2,1)")
    fig.add_argument("--n", type=int, default=300)
    fig.add_argument("--seed", type=int, default=0)
    fig.add_argument("--max-iter", type=int, default=200)
    fig.add_argument("--output", required=True)
    fig.add_argument("--grid", default=None)
    fig.set_defaults(func=cmd_figure1)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
