import csv

import pytest
from hypothesis import given, settings, strategies as st

from wbanmac import SimConfig, parse_config
from wbanmac.cli import main
from wbanmac.config import ConfigError, key_table, parse_config_text
from wbanmac.harness import (SweepSpec, emit_plot_data, read_rows, run_sweep, series,
                             write_rows)
from wbanmac.metrics import SummaryRow


def test_empty_config_gives_table_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg == SimConfig()
    assert cfg.bit_rate_kbps == 18.78
    assert cfg.cw_max == 32
    assert cfg.t_poll_ms == 20.0
    assert cfg.t_pi_ms == 50.0
    assert cfg.t_add_ms == 100.0
    assert cfg.t_detect_ms == 7.0
    assert cfg.n_nodes == 8
    assert cfg.stop_delivered == 1000


def test_negative_duration_names_key_and_line():
    with pytest.raises(ConfigError, match=r"2: t_poll_ms: must be positive"):
        parse_config_text("# comment\nt_poll_ms = -5\n")


def test_protocol_selection():
    assert parse_config_text("protocol = ADP2").protocol == "ADP2"
    with pytest.raises(ConfigError, match="protocol"):
        parse_config_text("protocol = TDMA")


@pytest.mark.parametrize("text, needle", [
    ("no equals sign", "expected 'key = value'"),
    ("bogus = 1", "unknown key"),
    ("cw_max =", "missing value"),
    ("cw_max = many", "expected an integer"),
    ("cw_adaptive = maybe", "expected true/false"),
    ("cw_urgent = 40", "contention windows"),
])
def test_malformed_lines_are_rejected(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="no such config file"):
        parse_config(tmp_path / "nope.cfg")


def test_mvdr_layout_must_fit_active_portion():
    with pytest.raises(ConfigError, match="active layout"):
        SimConfig(protocol="MVDR", mvdr_gts_slots=4)


def test_key_table_covers_every_key():
    names = [k for k, _, _ in key_table()]
    assert names == list(SimConfig.__dataclass_fields__)


@settings(max_examples=60, deadline=None)
@given(st.builds(
    SimConfig,
    protocol=st.sampled_from(["ADP", "ADP2", "MVDR"]),
    seed=st.integers(0, 10**9),
    t_poll_ms=st.floats(0.5, 100, allow_nan=False),
    cw_max=st.integers(8, 32),
    cw_urgent=st.integers(1, 8),
    cw_adaptive=st.booleans(),
    mean_interval_urgent_s=st.floats(0.1, 100, allow_nan=False),
    pattern_normal=st.sampled_from(["CBR", "Poisson"]),
))
def test_config_echo_round_trips(cfg):
    assert parse_config_text(cfg.echo()) == cfg


def test_sweep_spec_validation():
    assert len(SweepSpec().configs(SimConfig())) == 120
    with pytest.raises(ValueError):
        SweepSpec(seeds=0)
    with pytest.raises(ValueError):
        SweepSpec(intervals_urgent=())
    with pytest.raises(ValueError):
        SweepSpec(protocols=("X",))


SMALL = SimConfig(stop_delivered=15)


def test_sweep_rows_sorted_and_deterministic(tmp_path):
    spec = SweepSpec(intervals_urgent=(5.0, 2.0), protocols=("MVDR", "ADP"), seeds=2)
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    rows = run_sweep(spec, SMALL, a)
    run_sweep(spec, SMALL, b, parallel=2)
    assert a.read_bytes() == b.read_bytes()
    assert len(rows) == 8
    keys = [(r.protocol, r.mean_interval_urgent, r.seed) for r in rows]
    assert keys == [("ADP", 2.0, 1), ("ADP", 2.0, 2), ("ADP", 5.0, 1), ("ADP", 5.0, 2),
                    ("MVDR", 2.0, 1), ("MVDR", 2.0, 2), ("MVDR", 5.0, 1), ("MVDR", 5.0, 2)]
    with open(a) as fh:
        widths = {len(r) for r in csv.reader(fh)}
    assert widths == {len(SummaryRow.columns())}


def test_failed_run_becomes_a_row(tmp_path, monkeypatch):
    import wbanmac.harness as harness

    def boom(cfg):
        if cfg.seed == 2:
            raise RuntimeError("broken")
        return real(cfg)

    real = harness.run_config
    monkeypatch.setattr(harness, "run_config", boom)
    rows = run_sweep(SweepSpec((5.0,), protocols=("ADP",), seeds=2), SMALL, tmp_path / "r.csv")
    assert [r.status for r in rows] == ["ok", "failed"]
    assert "broken" in rows[1].error


def test_resume_skips_existing_rows(tmp_path, monkeypatch):
    import wbanmac.harness as harness
    out = tmp_path / "r.csv"
    spec = SweepSpec((5.0,), protocols=("ADP",), seeds=2)
    first = run_sweep(SweepSpec((5.0,), protocols=("ADP",), seeds=1), SMALL, out)
    calls = []
    real = harness.run_config
    monkeypatch.setattr(harness, "run_config", lambda cfg: calls.append(cfg.seed) or real(cfg))
    rows = run_sweep(spec, SMALL, out, resume=True)
    assert calls == [2]
    assert rows[0].as_csv_dict() == first[0].as_csv_dict()


def _row(protocol, interval, seed, delay, energy):
    return SummaryRow(protocol, interval, interval, seed, delivered=10,
                      avg_delay_urgent_ms=delay, avg_delay_normal_ms=delay * 2,
                      energy_per_delivered_urgent_mJ=energy,
                      energy_per_delivered_normal_mJ=energy * 2)


def test_plot_data_files_and_values(tmp_path):
    rows = [_row(p, x, s, 100.0 / x + s, 10.0 / x) for p in ("ADP", "ADP2", "MVDR")
            for x in (1.0, 2.0, 5.0, 10.0) for s in (1, 2)]
    path = tmp_path / "results.csv"
    write_rows(path, rows)
    files = emit_plot_data(path, tmp_path / "series")
    energy = [f for f in files if f.name.endswith("_energy.tsv")]
    assert len(energy) == 6
    lines = (tmp_path / "series" / "ADP2_urgent_delay.tsv").read_text().splitlines()
    assert lines[0] == "interval_s\tmean\tmin\tmax"
    xs = [float(line.split("\t")[0]) for line in lines[1:]]
    assert xs == [1.0, 2.0, 5.0, 10.0]
    first = [float(v) for v in lines[1].split("\t")]
    assert first == [1.0, 101.5, 101.0, 102.0]


def test_series_mean_of_one_seed_is_that_value():
    rows = [_row("ADP", 2.0, 1, 123.0, 4.0)]
    pt = series(rows, "ADP", "urgent", "delay")[0]
    assert (pt.mean, pt.lo, pt.hi) == (123.0, 123.0, 123.0)


def test_plot_data_rejects_empty_csv(tmp_path):
    path = tmp_path / "empty.csv"
    write_rows(path, [])
    with pytest.raises(ValueError):
        emit_plot_data(path, tmp_path / "s")


def test_cli_simulate_plotdata_and_trace(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("protocol = ADP2\nstop_delivered = 10\nmean_interval_urgent_s = 5\n"
                   "mean_interval_normal_s = 5\n")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--seeds", "1",
                 "--point", "--quiet"]) == 0
    assert (out / "results.csv").exists()
    assert parse_config(out / "config.echo") == parse_config(cfg)
    assert (out / "series" / "ADP2_urgent_energy.tsv").exists()
    assert main(["plotdata", "--csv", str(out / "results.csv"), "--out", str(tmp_path / "s")]) == 0
    capsys.readouterr()
    assert main(["trace", "--config", str(cfg), "--frames", "--stop", "2"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("# start_us\tkind")
    assert "PreambleStrobe" in text


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("t_poll_ms = -5\n")
    assert main(["trace", "--config", str(cfg)]) == 2
    assert "t_poll_ms" in capsys.readouterr().err
