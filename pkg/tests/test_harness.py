import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitmatch.errors import ConfigError, MissingSeriesError
from orbitmatch.harness import config as C
from orbitmatch.harness import experiments as ex
from orbitmatch.harness.cli import main
from orbitmatch.harness.report import emit_plot_data, plot_rows
from orbitmatch.orbits import ProductExpanding, Rotation, read_cloud
from orbitmatch.processes import Markov
from orbitmatch.rotation import golden_theta

# one small desk run per kind: schedule overrides, param overrides, trials
SMALL = {
    "lcs": ({"n_min": "64", "n_max": "4096"}, {}, 2),
    "mindist": ({"n_max": "2000"}, {}, 2),
    "dimension": ({"n_max": "2000"}, {}, 1),
    "entropy": ({"n_max": "20000"}, {"k": "6", "ks": "2, 4, 6"}, 1),
    "rotation": ({"n_max": "5000"}, {}, 2),
    "bridge": ({"n_max": "64"}, {}, 3),
    "duality": ({"n_max": "256"}, {}, 3),
    "moments": ({"n_max": "2000"}, {}, 1),
}

# sha256 of the series CSV of each small run; any change to sampling,
# kernels or formatting shows up here
GOLDEN = {
    "lcs": "823933134edcbbbf563023cfd34a0288cc2c1ea9eca3125acfcbb177a0b2e073",
    "mindist": "b89d77c6106fee472baa81849ea0c7e7db1104a03fa8b95ab8037fb8a232636d",
    "dimension": "441c2a807881d8d1f02e32e8062d420fdc78c2be8275cd9102fcd68540df9134",
    "entropy": "69c69a08fa573163831c836e6df4069756e6221cc2965792e020d2d3255fb8d5",
    "rotation": "f1e055e2b30ba90467fa40f1ae405c7542aec7ba930bd51d7499c4783fd4948d",
    "bridge": "958bb079b051e96cb16678a2194c80fbe5f42b36d6c279d4e833d6fc60626940",
    "duality": "a742c9912e6c45215875c42c14e1a0e0ad3ef6bcd902f2fae4ed631872f80a04",
    "moments": "050634748accef800965e7a8fb5e4cf8d4a71d88309fe32df303021992dc80e4",
}


def small(kind):
    d = C.default_config(kind)
    sched, params, trials = SMALL[kind]
    return C.ExperimentConfig(kind, d.source, {**d.schedule, **sched}, {**d.params, **params},
                              d.tolerance, d.seed, trials)


# -- config ------------------------------------------------------------------------

keys = st.text("abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=8)
values = st.text("abcdefghijklmnopqrstuvwxyz0123456789.,; -", min_size=1, max_size=20).map(
    str.strip).filter(bool)
sections = st.dictionaries(keys, values, max_size=4)


@given(st.sampled_from(C.KINDS), sections, sections, sections, sections,
       st.integers(0, 2**64 - 1), st.integers(1, 1000))
def test_config_round_trip(kind, source, schedule, params, tolerance, seed, trials):
    cfg = C.ExperimentConfig(kind, source, schedule, params, tolerance, seed, trials)
    text = C.serialize(cfg)
    back = C.parse(text)
    assert back == cfg
    assert C.serialize(back) == text
    assert back.digest() == cfg.digest()


def test_default_configs_round_trip():
    for kind in C.KINDS:
        cfg = C.default_config(kind)
        assert C.parse(C.serialize(cfg)) == cfg


def test_config_errors():
    with pytest.raises(ConfigError):
        C.parse("[experiment]\nkind = nope\n")
    with pytest.raises(ConfigError):
        C.parse("[source]\ntype = iid\n")
    with pytest.raises(ConfigError):
        C.parse("[experiment]\nkind = lcs\n[extra]\na = 1\n")
    with pytest.raises(ConfigError):
        C.parse("[experiment]\nkind = lcs\nseed = x\n")
    with pytest.raises(ConfigError):
        C.parse("not an ini file")
    with pytest.raises(ConfigError):
        C.ExperimentConfig("lcs", trials=0)
    with pytest.raises(ConfigError):
        C.ExperimentConfig("lcs", schedule={}).build_schedule()
    with pytest.raises(ConfigError):
        C.ExperimentConfig("lcs", schedule={"n_max": "1"}).build_schedule()
    with pytest.raises(ConfigError):
        C.ExperimentConfig("mindist", source={"metric": "taxicab"}).metric()
    with pytest.raises(ConfigError):
        C.load("/nonexistent/config.ini")


def test_source_parsing():
    cfg = C.parse("[experiment]\nkind = lcs\nseed = 0x10\n"
                  "[source]\ntype = markov\ntransition = 0.9 0.1; 0.5 0.5\n")
    assert cfg.seed == 16
    spec = C.process_spec(cfg)
    assert isinstance(spec, Markov)
    assert np.allclose(spec.transition, [[0.9, 0.1], [0.5, 0.5]])
    cfg = C.ExperimentConfig("mindist", {"type": "product", "factors": "2, 3"})
    assert C.map_spec(cfg) == ProductExpanding((2, 3))
    cfg = C.ExperimentConfig("rotation", {"type": "rotation", "theta": "golden"})
    assert C.map_spec(cfg) == Rotation(golden_theta())
    assert C.parse_theta(f"0x{golden_theta():032x}") == golden_theta()
    assert C.map_spec(C.ExperimentConfig("dimension", {"type": "uniform"})) is None
    with pytest.raises(ConfigError):
        C.process_spec(C.ExperimentConfig("lcs", {"type": "iid", "probs": "0.5, 0.6"}))


# -- CSV formatting --------------------------------------------------------------------


def test_fmt_and_csv():
    assert ex.fmt(True) == "1" and ex.fmt(3) == "3" and ex.fmt(None) == "nan"
    assert ex.fmt(0.1) == "0.10000000000000001"
    assert float(ex.fmt(math.pi)) == math.pi
    text = ex.render_csv(("a", "b"), [(1, 0.5), (2, math.nan)])
    assert text == "a,b\n1,0.5\n2,nan\n"
    assert ex.parse_rows(text)[0] == {"a": 1.0, "b": 0.5}


# -- runs --------------------------------------------------------------------------------


@pytest.mark.parametrize("kind", C.KINDS)
def test_golden_series_checksum(kind, tmp_path):
    m = ex.run_experiment(small(kind), tmp_path)
    assert m.files[ex.series_name(kind)] == GOLDEN[kind]
    header = (tmp_path / ex.series_name(kind)).read_text().splitlines()[0]
    assert header == ",".join(ex.SERIES_COLUMNS[kind])
    summary = (tmp_path / ex.summary_name(kind)).read_text().splitlines()
    assert summary[0] == ",".join(ex.SUMMARY_COLUMNS) and len(summary) > 1
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["trial_seeds"] == ex.trial_seeds(small(kind))
    assert set(doc["files"]) == {ex.series_name(kind), ex.summary_name(kind)}


@pytest.mark.parametrize("kind", ["lcs", "rotation", "bridge"])
def test_workers_do_not_change_output(kind, tmp_path):
    a = ex.run_experiment(small(kind), tmp_path / "a", workers=1)
    b = ex.run_experiment(small(kind), tmp_path / "b", workers=2)
    assert a.files == b.files


@pytest.mark.parametrize("kind", C.KINDS)
def test_manifest_rerun_byte_identical(kind, tmp_path):
    ex.run_experiment(small(kind), tmp_path / "first")
    new, diff = ex.rerun_manifest(tmp_path / "first" / "manifest.json", tmp_path / "second")
    assert diff == []
    for name in new.files:
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_manifest_tamper_detected(tmp_path):
    ex.run_experiment(small("bridge"), tmp_path / "a")
    path = tmp_path / "a" / "manifest.json"
    doc = json.loads(path.read_text())
    doc["config"] = doc["config"].replace("trials = 3", "trials = 4")
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        ex.rerun_manifest(path, tmp_path / "b")
    doc = json.loads((tmp_path / "a" / "manifest.json").read_text())
    with pytest.raises(ConfigError):
        ex.load_manifest(tmp_path / "missing.json")


def test_summary_is_function_of_series(tmp_path):
    for kind in ("lcs", "mindist", "rotation", "entropy"):
        cfg = small(kind)
        m = ex.run_experiment(cfg, tmp_path / kind)
        again = ex.recompute_summary(cfg, tmp_path / kind)
        assert ex.render_csv(ex.SUMMARY_COLUMNS, again) == \
            (tmp_path / kind / ex.summary_name(kind)).read_text()
        assert again == m.summary or ex.render_csv(ex.SUMMARY_COLUMNS, again) == \
            ex.render_csv(ex.SUMMARY_COLUMNS, m.summary)


def test_summary_targets(tmp_path):
    m = ex.run_experiment(small("lcs"), tmp_path / "lcs")
    assert m.summary[0][0] == "lcs_slope"
    assert m.summary[0][1] == pytest.approx(2 / math.log(2))
    cfg = C.ExperimentConfig("mindist", {"type": "product", "factors": "2, 2"},
                             {"n_max": "2000"}, {}, {}, 1, 1)
    m = ex.run_experiment(cfg, tmp_path / "prod")
    assert m.summary[0][1] == pytest.approx(1.0)
    cfg = C.ExperimentConfig("rotation", {"type": "rotation", "theta": "eta:2"},
                             {"n_max": "5000"}, {}, {}, 1, 1)
    m = ex.run_experiment(cfg, tmp_path / "rot")
    targets = {row[0]: row[1] for row in m.summary}
    assert targets["limsup_exponent"] == 1.0
    assert targets["liminf_exponent"] == pytest.approx(0.5, abs=0.02)


def test_renewal_entropy_reports_bracket_only(tmp_path):
    cfg = C.ExperimentConfig("entropy", {"type": "renewal", "q": "0.5, 0.3", "tail": "0.4"},
                             {"n_max": "20000"}, {"k": "6", "ks": "2, 4, 6"}, {}, 1, 1)
    m = ex.run_experiment(cfg, tmp_path)
    quantities = {row[0]: row for row in m.summary}
    assert set(quantities) == {"h2_bracket_lo", "h2_bracket_hi"}
    assert all(row[5] == "n/a" and math.isnan(row[1]) for row in m.summary)


# -- plot data ---------------------------------------------------------------------------


def test_emit_plot_data(tmp_path):
    for kind in ("mindist", "lcs", "dimension"):
        cfg = small(kind)
        ex.run_experiment(cfg, tmp_path / kind)
        paths = emit_plot_data(cfg, tmp_path / kind)
        assert [p.name for p in paths] == [f"{kind}_plot.csv", f"{kind}.png"]
        assert paths[1].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        rows = ex.parse_rows(paths[0].read_text())
        series = ex.read_series(tmp_path / kind / ex.series_name(kind))
        x_col = {"mindist": "neg_log_n", "lcs": "log_n", "dimension": "log_r"}[kind]
        y_col = {"mindist": "log_m_n", "lcs": "M_n", "dimension": "log_C"}[kind]
        assert [float(r["x"]) for r in rows] == [float(r[x_col]) for r in series]
        assert [float(r["y"]) for r in rows] == [float(r[y_col]) for r in series]
        # the fit column is the per-trial regression line
        assert all(math.isfinite(float(r["fit"])) for r in rows)
        first = paths[0].read_bytes()
        emit_plot_data(cfg, tmp_path / kind, figures=False)
        assert paths[0].read_bytes() == first


def test_plot_rows_fit_is_line(tmp_path):
    cfg = small("mindist")
    ex.run_experiment(cfg, tmp_path)
    rows = plot_rows(cfg, ex.read_series(tmp_path / ex.series_name("mindist")))
    t0 = [r for r in rows if r[0] == 0]
    x = np.array([r[2] for r in t0])
    fit = np.array([r[4] for r in t0])
    slope = np.diff(fit) / np.diff(x)
    assert np.allclose(slope, slope[0])


def test_emit_plot_data_missing(tmp_path):
    with pytest.raises(MissingSeriesError):
        emit_plot_data(small("lcs"), tmp_path)
    with pytest.raises(MissingSeriesError):
        ex.recompute_summary(small("lcs"), tmp_path)


# -- CLI ---------------------------------------------------------------------------------


def write_config(path, cfg):
    path.write_text(C.serialize(cfg))
    return str(path)


def test_cli_runs_and_writes_figures(tmp_path, capsys):
    cfgp = write_config(tmp_path / "lcs.ini", small("lcs"))
    out = tmp_path / "out"
    assert main(["lcs", "--config", cfgp, "--out", str(out), "--figures"]) == 0
    text = capsys.readouterr().out
    assert "lcs_slope" in text
    for name in ("lcs_series.csv", "lcs_summary.csv", "manifest.json", "lcs_plot.csv", "lcs.png"):
        assert (out / name).is_file()


def test_cli_strict_exit_code(tmp_path):
    cfgp = write_config(tmp_path / "lcs.ini", small("lcs"))
    # the tiny run misses the band, so --strict turns that into exit 4
    assert main(["lcs", "--config", cfgp, "--out", str(tmp_path / "o"), "--strict"]) == 4
    assert main(["experiment", "--manifest", str(tmp_path / "o" / "manifest.json"),
                 "--out", str(tmp_path / "r")]) == 0


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nkind = nope\n")
    assert main(["experiment", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["exit_code"] == 2 and rec["error"] == "ConfigError"
    assert json.loads((tmp_path / "o" / "error.json").read_text()) == rec
    cfgp = write_config(tmp_path / "m.ini", small("mindist"))
    assert main(["lcs", "--config", cfgp]) == 2


def test_cli_degenerate_exit_code(tmp_path, capsys):
    cfg = C.ExperimentConfig("entropy", {"type": "iid", "probs": "0.5, 0.5"},
                             {"n_max": "1000"}, {"k": "40", "ks": "40"}, {}, 1, 1)
    cfgp = write_config(tmp_path / "e.ini", cfg)
    assert main(["entropy", "--config", cfgp, "--out", str(tmp_path / "o")]) == 3
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "DegenerateError" and rec["exit_code"] == 3


def test_cli_overrides(tmp_path):
    cfgp = write_config(tmp_path / "b.ini", small("bridge"))
    out = tmp_path / "o"
    assert main(["experiment", "--config", cfgp, "--out", str(out), "--seed", "0x2a",
                 "--trials", "2", "--n-max", "32"]) == 0
    cfg = C.parse(ex.load_manifest(out / "manifest.json").config_text)
    assert (cfg.seed, cfg.trials, cfg.schedule["n_max"]) == (42, 2, "32")


def test_cli_simulate(tmp_path):
    cfgp = write_config(tmp_path / "m.ini", small("mindist"))
    assert main(["simulate", "--config", cfgp, "--out", str(tmp_path / "m")]) == 0
    cloud = read_cloud(tmp_path / "m" / "orbit.orbc")
    assert cloud.n == 2000 and cloud.dim == 1
    cfgp = write_config(tmp_path / "l.ini", small("lcs"))
    assert main(["simulate", "--config", cfgp, "--out", str(tmp_path / "l")]) == 0
    text = (tmp_path / "l" / "sequence.txt").read_text().strip()
    assert len(text) == 4096 and set(text) <= {"0", "1"}


def test_cli_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("ORBITMATCH_OUT", str(tmp_path / "env"))
    cfgp = write_config(tmp_path / "b.ini", small("bridge"))
    assert main(["experiment", "--config", cfgp]) == 0
    assert (tmp_path / "env" / "bridge" / "bridge_series.csv").is_file()
