import json
import math
import subprocess
import sys

import numpy as np
import pytest

from tangentclust import TrialResult, clustering_rate, load_dataset
from tangentclust import local_geometry as lg
from tangentclust.cli import (
    WORKERS_ENV,
    ExperimentConfig,
    UsageError,
    dataset_seed,
    derive_seed,
    main,
    parse_config,
    plan_cells,
    read_results_csv,
    resolve_workers,
    run_experiment,
    splitmix64,
    time_ratios,
    trial_seed,
    write_results_csv,
)
from tangentclust.clustering import METHODS


def run(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


# -- generate ----------------------------------------------------------------


def test_generate_writes_260_points(tmp_path, capsys):
    out = tmp_path / "d.json"
    assert run(["generate", "--dataset", "VI", "--noise", "0.025", "--seed", "7",
                "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert len(ds) == 260 and ds.spec.seed == 7
    assert "260" in capsys.readouterr().out


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(["generate", "--dataset", "II", "--seed", "3", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("argv", [
    ["generate", "--dataset", "VI", "--noise", "-1", "--out", "x.json"],
    ["generate", "--dataset", "VII", "--out", "x.json"],
    ["generate", "--dataset", "I", "--points-per-cluster", "1", "--out", "x.json"],
    ["cluster", "d.json", "--method", "FOO"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == 2


def test_unknown_method_lists_methods(capsys):
    assert run(["cluster", "d.json", "--method", "FOO"]) == 2
    err = capsys.readouterr().err
    assert all(m in err for m in METHODS)


def test_missing_file_exits_1(tmp_path, capsys):
    assert run(["cluster", str(tmp_path / "nope.json"), "--method", "GCT"]) == 1
    assert run(["benchmark", "--config", str(tmp_path / "nope.ini")]) == 1
    assert capsys.readouterr().err


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\ntrials = 0\n")
    assert run(["benchmark", "--config", str(cfg)]) == 2
    cfg.write_text("[experiment]\nmethods = GCT\n[GCT]\nbogus = 1\n")
    assert run(["benchmark", "--config", str(cfg)]) == 2


# -- cluster -----------------------------------------------------------------


def parse_stdout(text):
    lines = dict(line.split(" ", 1) for line in text.strip().splitlines())
    return lines


def test_cluster_gct_on_circles(tmp_path, capsys):
    data, labels = tmp_path / "c.json", tmp_path / "labels.txt"
    assert run(["generate", "--dataset", "CIRCLES", "--points-per-cluster", "100",
                "--out", str(data)]) == 0
    assert run(["cluster", str(data), "--method", "GCT", "--labels-out", str(labels)]) == 0
    out = parse_stdout(capsys.readouterr().out.split("\n", 1)[1])
    assert "rate" in out and "total_ms" in out
    ds = load_dataset(data)
    pred = np.loadtxt(labels, dtype=int)
    r = lg.choose_radius(lg.pairwise_distances(ds.manifold, ds.points), 20)
    far = np.abs(ds.points[:, 1]) < np.cos(r)
    assert clustering_rate(pred[far], ds.labels[far]) == 1.0


def test_cluster_without_truth_omits_rate(tmp_path, capsys):
    from dataclasses import replace

    from tangentclust import save_dataset, two_great_circles

    path = tmp_path / "ext.json"
    save_dataset(replace(two_great_circles(40, 1), labels=None), path)
    assert run(["cluster", str(path), "--method", "SCR"]) == 2  # K unknown
    capsys.readouterr()
    assert run(["cluster", str(path), "--method", "SCR", "--clusters", "2"]) == 0
    out = parse_stdout(capsys.readouterr().out)
    assert "rate" not in out
    assert len(out["labels"].split()) == 40


def test_tgct_requires_explicit_params(tmp_path):
    data = tmp_path / "c.json"
    run(["generate", "--dataset", "CIRCLES", "--points-per-cluster", "20", "--out", str(data)])
    assert run(["cluster", str(data), "--method", "TGCT", "--r", "0.3"]) == 2
    assert run(["cluster", str(data), "--method", "TGCT", "--r", "0.3", "--eta", "0.15",
                "--sigma-d", "0.5", "--sigma-a", "0.4"]) == 0


# -- config and planning -----------------------------------------------------


def test_default_config_plans_720_cells():
    cells = plan_cells(ExperimentConfig())
    assert len(cells) == 720
    assert len({(c.dataset, c.label, c.trial) for c in cells}) == 720


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    bench = parse_config((root / "benchmark.ini").read_text())
    assert len(plan_cells(bench)) == 720
    vi = parse_config((root / "sweep_sphere.ini").read_text())
    assert [m.label for m in vi.methods] == ["GCT", "SMC", "SMCL", "SCR", "EKM"]
    assert vi.methods[2].method == "SMC" and vi.methods[2].params == {"weight_mode": "linear"}
    assert len(plan_cells(vi, sweep=True)) == 4 * 5 * 10


def test_parse_config_errors():
    for text in ("[experiment]\ndatasets = VII\n", "[experiment]\nmethods = GCT, GCT\n",
                 "[experiment]\nsigmas = 0.1, 0.05\n", "[experiment]\ntrials = x\n",
                 "not an ini", "[experiment]\nmethods = X\n[X]\nmethod = NOPE\n"):
        with pytest.raises(UsageError):
            parse_config(text)


def test_seed_derivation():
    assert splitmix64(0) == 0xE220A8397B1DCDAF  # first output of the reference generator
    assert 0 <= derive_seed(1, 2, 3) < 2**63
    assert dataset_seed(0, "I", 0) != dataset_seed(0, "I", 1) != dataset_seed(0, "II", 0)
    seeds = {trial_seed(0, d, m, t) for d in ("I", "II") for m in METHODS for t in range(5)}
    assert len(seeds) == 2 * len(METHODS) * 5
    # every method of a trial sees the same data
    cells = plan_cells(ExperimentConfig(datasets=["IV"], trials=2))
    assert len({c.data_seed for c in cells if c.trial == 0}) == 1


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers(None) == 1 and resolve_workers(3) == 3
    monkeypatch.setenv(WORKERS_ENV, "2")
    assert resolve_workers(5) == 2
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(UsageError):
        resolve_workers(1)


# -- execution and output ------------------------------------------------------


def small_config(**kw):
    base = dict(datasets=["V", "VI"], trials=2, points_per_cluster=15)
    base.update(kw)
    cfg = parse_config("[experiment]\nmethods = GCT, SMC, SCR, EKM\n[GCT]\nn_neighbors = 8\n"
                       "[SMC]\nn_neighbors = 8\n")
    for k, v in base.items():
        setattr(cfg, k, v)
    return cfg


def rates(results):
    return [(r.dataset, r.method, r.trial, r.sigma, r.rate) for r in results]


def test_results_independent_of_workers(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    cfg = small_config()
    serial = run_experiment(cfg, workers=1)
    parallel = run_experiment(cfg, workers=2)
    assert len(serial) == 2 * 4 * 2
    assert rates(serial) == rates(parallel)
    assert not any(r.error for r in serial)


def test_csv_roundtrip(tmp_path):
    res = run_experiment(small_config(datasets=["V"], trials=1))
    res.append(TrialResult("GCT", "V", 9, 5, float("nan"), error="CutLocus: boom"))
    path = tmp_path / "r.csv"
    write_results_csv(res, path)
    back = read_results_csv(path)
    assert len(back) == len(res)
    for a, b in zip(res, back):
        for f in ("method", "dataset", "trial", "seed", "affinity_ms", "spectral_ms",
                  "total_ms", "sigma", "error"):
            assert getattr(a, f) == getattr(b, f), f
        assert a.rate == b.rate or (math.isnan(a.rate) and math.isnan(b.rate))


def test_time_ratios():
    rows = [TrialResult("GCT", "I", 0, 0, 1.0, total_ms=3.0),
            TrialResult("SMC", "I", 0, 0, 1.0, total_ms=2.0),
            TrialResult("GCT", "I", 1, 0, 1.0, total_ms=3.0),
            TrialResult("SMC", "I", 1, 0, 1.0, total_ms=4.0),
            TrialResult("GCT", "I", 2, 0, float("nan"), total_ms=99.0, error="x")]
    assert time_ratios(rows) == [{"dataset": "I", "sigma": None, "ratio": 1.0}]


def test_benchmark_command(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\ndatasets = V\nmethods = GCT, SMC\ntrials = 2\n"
                   "points_per_cluster = 15\n[GCT]\nn_neighbors = 8\n[SMC]\nn_neighbors = 8\n")
    prefix = tmp_path / "out" / "bench"
    assert run(["benchmark", "--config", str(cfg), "--out", str(prefix)]) == 0
    rows = read_results_csv(str(prefix) + ".csv")
    assert len(rows) == 4
    doc = json.loads((tmp_path / "out" / "bench.json").read_text())
    assert doc["rows"] == 4 and doc["config"]["trials"] == 2
    assert {(s["method"], s["dataset"]) for s in doc["summary"]} == {("GCT", "V"), ("SMC", "V")}
    (ratio,) = doc["gct_smc_time_ratio"]
    assert np.isfinite(ratio["ratio"]) and ratio["ratio"] > 0
    assert "GCT/SMC time V" in capsys.readouterr().out
    # rerun gives identical rates
    assert run(["benchmark", "--config", str(cfg), "--out", str(prefix) + "2"]) == 0
    assert [r.rate for r in read_results_csv(str(prefix) + "2.csv")] == [r.rate for r in rows]


def test_sweep_command(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\ndatasets = VI\nmethods = SCR\ntrials = 2\n"
                   "points_per_cluster = 10\n")
    prefix = str(tmp_path / "sw")
    assert run(["sweep", "--config", str(cfg), "--out", prefix]) == 2  # no sigmas
    assert run(["sweep", "--config", str(cfg), "--out", prefix, "--sigmas", "0.01,0.05"]) == 0
    rows = read_results_csv(prefix + ".csv")
    assert len(rows) == 4
    by_trial = {}
    for r in rows:
        by_trial.setdefault(r.trial, []).append(r.sigma)
    assert all(s == sorted(s) for s in by_trial.values())
    header = open(prefix + ".csv").readline().strip().split(",")
    assert "sigma" in header
    # single sigma has the benchmark shape plus the sigma column
    assert run(["sweep", "--config", str(cfg), "--out", prefix, "--sigmas", "0.02"]) == 0
    assert len(read_results_csv(prefix + ".csv")) == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "tangentclust.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "tangentclust" in out.stdout
