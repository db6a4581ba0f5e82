"""Command-line runner: generate datasets, cluster them, benchmark and sweep.

Exit codes: 0 on success, 2 on usage errors (bad flags or config values),
1 on runtime failures (unreadable files, parse errors).

Config files are INI documents::

    [experiment]
    datasets = I, II, III, IV, V, VI
    methods = GCT, SMC, SCR, EKM
    trials = 30
    seed = 0
    points_per_cluster = 130
    noise = 0.025
    sigmas = 0.025, 0.05, 0.075, 0.1   ; sweep only
    output = results                    ; writes results.csv and results.json
    workers = 1

    [GCT]
    n_neighbors = 20
    sigma_d = 1.0
    sigma_a = 1.0

    [SMCL]
    method = SMC
    weight_mode = linear

Every entry of ``methods`` is a label. A section with that label may set
``method`` (default: the label itself) and any parameter of that method.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import (
    METHODS,
    EkmParams,
    GctParams,
    ScrParams,
    SmcParams,
    TgctParams,
    run_method,
)
from .datasets import (
    DATASET_IDS,
    DatasetSpec,
    generate,
    load_dataset,
    noise_sweep,
    save_dataset,
    two_great_circles,
)
from .evaluation import TrialResult, clustering_rate, summarize
from .exceptions import TangentClustError

WORKERS_ENV = "TANGENTCLUST_WORKERS"
PARAM_TYPES = {"GCT": GctParams, "TGCT": TgctParams, "SMC": SmcParams, "SCR": ScrParams,
               "EKM": EkmParams}
BENCH_COLUMNS = ["dataset", "method", "trial", "seed", "rate", "affinity_ms", "spectral_ms",
                 "total_ms", "error"]
SWEEP_COLUMNS = ["dataset", "method", "sigma", "trial", "seed", "rate", "affinity_ms",
                 "spectral_ms", "total_ms", "error"]

_MASK = (1 << 64) - 1


class UsageError(Exception):
    pass


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(*parts):
    """Fold integers through splitmix64; result fits in 63 bits."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & _MASK))
    return h >> 1


def dataset_seed(base, dataset_id, trial):
    # shared by every method of one trial so they see the same data
    return derive_seed(base, DATASET_IDS.index(dataset_id), trial)


def trial_seed(base, dataset_id, method, trial):
    return derive_seed(base, DATASET_IDS.index(dataset_id), 1 + METHODS.index(method), trial)


# ---------------------------------------------------------------------------
# Config


@dataclass
class MethodSpec:
    label: str
    method: str
    params: dict = field(default_factory=dict)

    def build(self, K):
        return PARAM_TYPES[self.method](K=K, **self.params)


@dataclass
class ExperimentConfig:
    datasets: list = field(default_factory=lambda: list(DATASET_IDS))
    methods: list = field(default_factory=lambda: [MethodSpec(m, m) for m in
                                                   ("GCT", "SMC", "SCR", "EKM")])
    trials: int = 30
    seed: int = 0
    points_per_cluster: int = 130
    noise: float = 0.025
    sigmas: list = None
    output: str = "results"
    workers: int = 1

    def validate(self):
        if self.trials < 1:
            raise UsageError("trials must be >= 1")
        if self.points_per_cluster < 2:
            raise UsageError("points_per_cluster must be >= 2")
        if not self.noise >= 0:
            raise UsageError("noise must be nonnegative")
        for d in self.datasets:
            if d not in DATASET_IDS:
                raise UsageError(f"unknown dataset {d!r}; expected one of {', '.join(DATASET_IDS)}")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise UsageError("method labels must be unique")
        for m in self.methods:
            if m.method not in METHODS:
                raise UsageError(f"unknown method {m.method!r}; expected one of {', '.join(METHODS)}")
            try:
                m.build(2).validate()
            except (TypeError, ValueError) as exc:
                raise UsageError(f"[{m.label}]: {exc}") from None
        if self.sigmas is not None:
            if not self.sigmas:
                raise UsageError("sigmas must not be empty")
            if any(s < 0 for s in self.sigmas) or self.sigmas != sorted(self.sigmas):
                raise UsageError("sigmas must be nonnegative and ascending")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")

    def echo(self):
        d = asdict(self)
        d["methods"] = [asdict(m) for m in self.methods]
        return d


def _split(value):
    return [v.strip() for v in value.replace(",", " ").split() if v.strip()]


def _coerce(value, typ):
    if typ is bool:
        return value.lower() in ("1", "true", "yes", "on")
    if typ in (int, float):
        return typ(value)
    return value


def _method_spec(label, section):
    section = dict(section or {})
    method = section.pop("method", label).upper()
    if method not in PARAM_TYPES:
        raise UsageError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    types = {f.name: f.type for f in fields(PARAM_TYPES[method]) if f.name != "K"}
    params = {}
    for key, value in section.items():
        if key not in types:
            raise UsageError(f"[{label}]: unknown parameter {key!r} for {method}")
        typ = {"int": int, "float": float, "str": str, "bool": bool}.get(str(types[key]), str)
        try:
            params[key] = _coerce(value, typ)
        except ValueError:
            raise UsageError(f"[{label}]: bad value {value!r} for {key}") from None
    return MethodSpec(label, method, params)


def parse_config(text):
    """Parse an INI config into an :class:`ExperimentConfig` (raises UsageError)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config: {exc}") from None
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    cfg = ExperimentConfig()
    try:
        if "datasets" in exp:
            cfg.datasets = [d.upper() for d in _split(exp["datasets"])]
        labels = _split(exp["methods"]) if "methods" in exp else ["GCT", "SMC", "SCR", "EKM"]
        for key in ("trials", "seed", "points_per_cluster", "workers"):
            if key in exp:
                setattr(cfg, key, int(exp[key]))
        if "noise" in exp:
            cfg.noise = float(exp["noise"])
        if "sigmas" in exp:
            cfg.sigmas = [float(s) for s in _split(exp["sigmas"])]
        if "output" in exp:
            cfg.output = exp["output"]
    except ValueError as exc:
        raise UsageError(f"[experiment]: {exc}") from None
    cfg.methods = [_method_spec(lab, cp[lab] if cp.has_section(lab) else None) for lab in labels]
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Execution


@dataclass(frozen=True)
class Cell:
    dataset: str
    label: str
    method: str
    params: tuple
    trial: int
    seed: int
    data_seed: int
    points_per_cluster: int
    sigma: float
    sweep: bool


def _run_cell(cell):
    spec = DatasetSpec(cell.dataset, cell.points_per_cluster, cell.sigma, cell.data_seed)
    sigma = cell.sigma if cell.sweep else None
    try:
        ds = generate(spec)
        params = PARAM_TYPES[cell.method](K=2, **dict(cell.params))
        res = run_method(cell.method, ds.manifold, ds.points, params, seed=cell.seed)
        return TrialResult(cell.label, cell.dataset, cell.trial, cell.seed,
                           clustering_rate(res.labels, ds.labels), res.affinity_ms,
                           res.spectral_ms, res.total_ms, sigma)
    except (TangentClustError, ValueError, np.linalg.LinAlgError) as exc:
        return TrialResult(cell.label, cell.dataset, cell.trial, cell.seed, float("nan"),
                           sigma=sigma, error=f"{type(exc).__name__}: {exc}")


def plan_cells(cfg, sweep=False):
    sigmas = cfg.sigmas if sweep else [cfg.noise]
    cells = []
    for d in cfg.datasets:
        for sigma in sigmas:
            for m in cfg.methods:
                for t in range(cfg.trials):
                    cells.append(Cell(d, m.label, m.method, tuple(sorted(m.params.items())), t,
                                      trial_seed(cfg.seed, d, m.method, t),
                                      dataset_seed(cfg.seed, d, t), cfg.points_per_cluster,
                                      float(sigma), sweep))
    return cells


def resolve_workers(requested=None):
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer") from None
    return max(1, int(requested or 1))


def run_cells(cells, workers=1, progress=None):
    if workers <= 1:
        out = []
        for c in cells:
            out.append(_run_cell(c))
            if progress:
                progress(len(out), len(cells))
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, cells, chunksize=4))


def canonical_order(results, cfg):
    dorder = {d: i for i, d in enumerate(cfg.datasets)}
    morder = {m.label: i for i, m in enumerate(cfg.methods)}
    return sorted(results, key=lambda r: (dorder[r.dataset], r.sigma or 0.0,
                                          morder[r.method], r.trial))


def time_ratios(results, numerator="GCT", denominator="SMC"):
    """Total-time ratio per (dataset, sigma), summed over trials without errors."""
    tot = {}
    for r in results:
        if r.error or r.method not in (numerator, denominator):
            continue
        key = (r.dataset, r.sigma)
        tot.setdefault(key, {numerator: 0.0, denominator: 0.0})[r.method] += r.total_ms
    out = []
    for (d, s), t in tot.items():
        if t[denominator] > 0 and t[numerator] > 0:
            out.append({"dataset": d, "sigma": s, "ratio": t[numerator] / t[denominator]})
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


def write_results_csv(results, path, sweep=False):
    cols = SWEEP_COLUMNS if sweep else BENCH_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in results:
            w.writerow([_fmt(getattr(r, c)) for c in cols])


def read_results_csv(path):
    """Parse a CSV written by :func:`write_results_csv` back into TrialResults."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sigma = row.get("sigma")
            out.append(TrialResult(
                method=row["method"], dataset=row["dataset"], trial=int(row["trial"]),
                seed=int(row["seed"]),
                rate=float(row["rate"]) if row["rate"] else float("nan"),
                affinity_ms=float(row["affinity_ms"] or 0.0),
                spectral_ms=float(row["spectral_ms"] or 0.0),
                total_ms=float(row["total_ms"] or 0.0),
                sigma=float(sigma) if sigma else None, error=row["error"]))
    return out


def write_summary_json(results, cfg, path):
    summary = [asdict(s) for s in summarize(results)]
    doc = {
        "artifact_version": __version__,
        "config": cfg.echo(),
        "rows": len(results),
        "errors": sum(1 for r in results if r.error),
        "summary": summary,
        "gct_smc_time_ratio": time_ratios(results),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def run_experiment(cfg, sweep=False, workers=None, progress=None):
    cells = plan_cells(cfg, sweep)
    results = run_cells(cells, resolve_workers(workers or cfg.workers), progress)
    return canonical_order(results, cfg)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args, parser):
    if args.noise < 0:
        parser.error("--noise must be nonnegative")
    if args.points_per_cluster < 2:
        parser.error("--points-per-cluster must be >= 2")
    if args.dataset == "CIRCLES":
        ds = two_great_circles(2 * args.points_per_cluster, args.seed)
    else:
        ds = generate(DatasetSpec(args.dataset, args.points_per_cluster, args.noise, args.seed))
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} points to {args.out}")
    return 0


def _cluster_params(args, parser, K):
    method = args.method
    kw = {}
    if method == "TGCT":
        missing = [n for n in ("r", "eta", "sigma_d", "sigma_a") if getattr(args, n) is None]
        if missing:
            parser.error("TGCT needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
        kw = dict(r=args.r, eta=args.eta, sigma_d=args.sigma_d, sigma_a=args.sigma_a)
    elif method in ("GCT", "SMC"):
        kw["n_neighbors"] = args.n_neighbors
        if args.sigma_d is not None:
            kw["sigma_d"] = args.sigma_d
        if method == "GCT" and args.sigma_a is not None:
            kw["sigma_a"] = args.sigma_a
        if method == "SMC":
            kw["weight_mode"] = args.weight_mode
    elif method == "SCR":
        kw["sigma"] = args.sigma
    params = PARAM_TYPES[method](K=K, **kw)
    try:
        params.validate()
    except ValueError as exc:
        parser.error(str(exc))
    return params


def cmd_cluster(args, parser):
    ds = load_dataset(args.dataset)
    K = args.clusters
    if K is None:
        if ds.labels is None:
            parser.error("--clusters is required for a dataset without labels")
        K = len(np.unique(ds.labels))
    params = _cluster_params(args, parser, K)
    res = run_method(args.method, ds.manifold, ds.points, params, seed=args.seed)
    text = " ".join(str(int(v)) for v in res.labels)
    if args.labels_out:
        Path(args.labels_out).write_text("\n".join(text.split()) + "\n")
    else:
        print("labels " + text)
    if ds.labels is not None:
        print(f"rate {clustering_rate(res.labels, ds.labels):.4f}")
    print(f"total_ms {res.total_ms:.1f}")
    return 0


def _load_config(args, parser):
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise TangentClustError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
    else:
        cfg = ExperimentConfig()
    if args.trials is not None:
        cfg.trials = args.trials
    if args.out is not None:
        cfg.output = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def _report(results, cfg, sweep):
    csv_path, json_path = cfg.output + ".csv", cfg.output + ".json"
    Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(results, csv_path, sweep)
    doc = write_summary_json(results, cfg, json_path)
    for s in doc["summary"]:
        tag = f" sigma={s['sigma']:g}" if s["sigma"] is not None else ""
        print(f"{s['dataset']:>4} {s['method']:<6}{tag} {s['mean']:.3f} +- {s['std']:.3f}"
              f" (n={s['count']})")
    for r in doc["gct_smc_time_ratio"]:
        tag = f" sigma={r['sigma']:g}" if r["sigma"] is not None else ""
        print(f"GCT/SMC time {r['dataset']}{tag}: {r['ratio']:.2f}")
    print(f"wrote {len(results)} rows to {csv_path} and summary to {json_path}")


def cmd_benchmark(args, parser):
    cfg = _load_config(args, parser)
    results = run_experiment(cfg, sweep=False)
    _report(results, cfg, sweep=False)
    return 0


def cmd_sweep(args, parser):
    cfg = _load_config(args, parser)
    if args.sigmas is not None:
        cfg.sigmas = [float(s) for s in _split(args.sigmas)]
    if cfg.sigmas is None:
        parser.error("sweep needs sigmas (config key or --sigmas)")
    cfg.validate()
    results = run_experiment(cfg, sweep=True)
    _report(results, cfg, sweep=True)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tangentclust",
                                description="Riemannian multi-manifold clustering benchmarks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset file")
    g.add_argument("--dataset", required=True, type=str.upper,
                   choices=list(DATASET_IDS) + ["CIRCLES"])
    g.add_argument("--points-per-cluster", type=int, default=130)
    g.add_argument("--noise", type=float, default=0.025)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("cluster", help="cluster a dataset file")
    c.add_argument("dataset")
    c.add_argument("--method", required=True, type=str.upper, choices=METHODS)
    c.add_argument("--clusters", type=int, help="K (default: number of truth labels)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n-neighbors", type=int, default=20)
    c.add_argument("--sigma-d", type=float)
    c.add_argument("--sigma-a", type=float)
    c.add_argument("--r", type=float)
    c.add_argument("--eta", type=float)
    c.add_argument("--weight-mode", choices=("exponential", "linear"), default="exponential")
    c.add_argument("--sigma", type=float, default=1.0, help="SCR kernel width")
    c.add_argument("--labels-out")
    c.set_defaults(func=cmd_cluster)

    for name, func, helptext in (("benchmark", cmd_benchmark, "run the dataset by method grid"),
                                 ("sweep", cmd_sweep, "run methods over noise levels")):
        b = sub.add_parser(name, help=helptext)
        b.add_argument("--config")
        b.add_argument("--trials", type=int)
        b.add_argument("--out", help="output prefix for .csv and .json")
        b.add_argument("--workers", type=int, help=f"worker processes (env {WORKERS_ENV} wins)")
        if name == "sweep":
            b.add_argument("--sigmas", help="comma separated noise levels")
        b.set_defaults(func=func)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (TangentClustError, OSError, ValueError) as exc:
        print(f"{parser.prog}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
