import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from rspc import cli
from rspc.harness.config import (ConfigError, ScenarioConfig, format_seeds, load_config,
                                 parse_seeds, parse_text)
from rspc.harness.experiments import EXPERIMENTS, run_experiment
from rspc.harness.metrics import (PLOT_COLUMNS, Figure, InvariantViolation, Point, Series,
                                  check_safety, emit_plotdata, plot_csv, summarize)
from rspc.harness.runner import simulate
from rspc.simnet import EpochMetrics


# ---------------------------------------------------------------- config
def test_seed_lists():
    assert parse_seeds("0-3,10") == (0, 1, 2, 3, 10)
    assert parse_seeds("7") == (7,)
    assert format_seeds(range(10)) == "0-9" and format_seeds([1, 5]) == "1,5"
    for bad in ("", "a-b", ","):
        with pytest.raises(ConfigError):
            parse_seeds(bad)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=1, max_size=20, unique=True))
def test_seed_list_round_trip(seeds):
    assert parse_seeds(format_seeds(seeds)) == tuple(seeds)


def test_config_precedence(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nN = 120\nW = 50   # inline\nT_policy = max\n")
    cfg = load_config(path, env={"RSPC_W": "70", "RSPC_F": "2"})
    assert (cfg.N, cfg.W, cfg.f, cfg.T_policy) == (120, 70, 2, "max")
    cfg = load_config(path, {"W": "90"}, env={"RSPC_W": "70"})
    assert cfg.W == 90


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_text("nonsense = 1")
    with pytest.raises(ConfigError):
        parse_text("N 100")
    with pytest.raises(ConfigError):
        load_config(overrides={"N": "many"}, env={})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg", env={})
    for bad in (dict(N=3), dict(f=100), dict(T_policy="best"), dict(delay="normal"),
                dict(tx_size=2048), dict(adversary="byzantine"), dict(churn_rate=2)):
        with pytest.raises(ConfigError):
            ScenarioConfig(**bad)


def test_config_text_round_trip():
    cfg = ScenarioConfig(N=150, T_policy="fixed:3", seeds=(0, 1, 2), t_g=0.25)
    assert load_config(overrides=parse_text(cfg.to_text()), env={}) == cfg


# ---------------------------------------------------------------- metrics
def _epoch(lat, duration, decided, **kw):
    m = EpochMetrics(1, 2, 10, submitted=decided, decided=decided, duration_us=duration,
                     latencies_us=list(lat))
    for k, v in kw.items():
        setattr(m.counters, k, v)
    return m


def test_summary_uses_full_sample():
    rep = summarize([_epoch(range(1, 101), 1_000_000, 100), _epoch([1000], 1_000_000, 1)])
    assert rep.decided == 101 and rep.throughput_tps == pytest.approx(50.5)
    assert rep.latency_mean_us == pytest.approx((5050 + 1000) / 101)
    assert rep.latency_p50_us == 51 and rep.latency_p95_us == pytest.approx(96.0)
    assert summarize([]).latency_mean_us is None


def test_check_safety_raises_on_counters():
    check_safety(summarize([_epoch([1], 10, 1)]))
    with pytest.raises(InvariantViolation):
        check_safety(summarize([_epoch([1], 10, 1, forks=1)]))


def _figure(series=("rspc",)):
    fig = Figure("demo", "N", "latency_ms", ScenarioConfig(), (0, 1))
    for s in series:
        fig.series.append(Series(s, [Point(100, [1.0, 3.0]), Point(150, [2.5, 2.5])]))
    return fig


def test_emit_plotdata_empty(tmp_path):
    assert emit_plotdata([], tmp_path / "none") == []
    assert not (tmp_path / "none").exists()


def test_emit_plotdata_schema_and_bytes(tmp_path):
    a = emit_plotdata([_figure()], tmp_path / "a")
    b = emit_plotdata([_figure()], tmp_path / "b")
    assert [p.name for p in a] == ["demo.csv"]
    assert a[0].read_bytes() == b[0].read_bytes()
    text = a[0].read_text()
    assert "# seeds: 0-1" in text and "# config: N = 100" in text
    rows = list(csv.reader(l for l in text.splitlines() if not l.startswith("#")))
    assert tuple(rows[0]) == PLOT_COLUMNS
    assert all(len(r) == len(PLOT_COLUMNS) for r in rows)
    assert rows[1] == ["100", "2.0", repr(2 ** 0.5), "2"]


def test_emit_plotdata_multi_series(tmp_path):
    paths = emit_plotdata([_figure(("optimal", "max"))], tmp_path)
    assert sorted(p.name for p in paths) == ["demo.max.csv", "demo.optimal.csv"]
    assert "# series: max" in plot_csv(_figure(("max",)), _figure(("max",)).series[0])


# ---------------------------------------------------------------- runner and experiments
def test_unknown_experiment():
    with pytest.raises(ConfigError):
        run_experiment("latency_vs_moon", ScenarioConfig())
    assert len(EXPERIMENTS) == 6


def test_small_experiment_points():
    cfg = ScenarioConfig(N=40, W=30)
    fig = run_experiment("throughput_vs_n", cfg, seeds=(0, 1), xs=(40, 60))
    (series,) = fig.series
    assert [p.x for p in series.points] == [40, 60]
    assert all(len(p.values) == 2 and p.mean > 0 for p in series.points)


def test_simulate_multi_epoch_reset_delay():
    result = simulate(ScenarioConfig(N=40, W=30, epochs=3, joiners=2), 0)
    assert [m.epoch for m in result.epochs] == [1, 2, 3]
    assert result.epochs[0].reset_delay_us is None
    assert all(m.reset_delay_us > 0 for m in result.epochs[1:])
    assert len(result.world.records) == 40 + 3 * 2    # joiners are admitted after every seal


# ---------------------------------------------------------------- command line
def test_cli_plan_and_allocate(tmp_path):
    assert cli.main(["plan", "--out", str(tmp_path), "--set", "N=100", "--set", "f=5"]) == 0
    rows = list(csv.DictReader((tmp_path / "plan.csv").open()))
    assert tuple(rows[0]) == cli.PLAN_COLUMNS and len(rows) == 25
    assert sum(int(r["chosen"]) for r in rows) == 1
    assert [int(r["feasible"]) for r in rows][:7] == [1, 1, 1, 1, 1, 1, 0]
    assert cli.main(["allocate", "--out", str(tmp_path), "--set", "N=40"]) == 0
    rows = list(csv.DictReader((tmp_path / "allocation.csv").open()))
    assert tuple(rows[0]) == cli.ALLOC_COLUMNS and len(rows) == 40


def test_cli_simulate_outputs(tmp_path):
    rc = cli.main(["simulate", "--out", str(tmp_path), "--seed", "3", "--set", "N=40",
                   "--set", "W=20", "--trace", "--xtrace", "--dump"])
    assert rc == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["runs"]["3"]["decided"] == 20
    for name in ("epochs-seed3.csv", "trace-seed3.csv", "xtrace-seed3.csv", "dump-seed3.json"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "trace-seed3.csv").read_text().splitlines()[0]
    assert header == ",".join(cli.TRACE_COLUMNS)
    dump = json.loads((tmp_path / "dump-seed3.json").read_text())
    assert sum(e[3] for e in dump["entries"]) > 0


def test_cli_config_errors_exit_2(tmp_path):
    assert cli.main(["simulate", "--set", "bogus=1"]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert cli.main(["experiment", "nothing", "--out", str(tmp_path)]) == 2
    assert cli.main(["simulate", "--set", "N=12", "--set", "f=4"]) == 2
    assert cli.main(["frobnicate"]) == 2


def test_cli_invariant_violation_exit_1(tmp_path, monkeypatch):
    real = cli.simulate

    def forked(*a, **kw):
        result = real(*a, **kw)
        result.epochs[0].counters.forks = 1
        return result
    monkeypatch.setattr(cli, "simulate", forked)
    rc = cli.main(["simulate", "--out", str(tmp_path), "--set", "N=40", "--set", "W=10"])
    assert rc == 1
