import json
from pathlib import Path

import numpy as np
import pytest

from commonnoise.cli import main
from commonnoise.config import DEFAULTS, canonical_yaml, load_config, parse_config
from commonnoise.exceptions import ConfigError
from commonnoise.io import read_csv

DATA = Path(__file__).parent / "data"


def errors_of(text):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    return err.value.errors


def test_defaults():
    cfg = parse_config("experiment: simulate\n")
    assert (cfg.dt, cfg.T, cfg.seed) == (1e-3, 1.0, 42)
    assert cfg.coefficients.gamma.kind == "zero" and cfg.initial_law.kind == "gaussian"
    assert parse_config(b"").experiment is None


def test_unknown_keys_are_named():
    errs = errors_of("foo: 1\ngrid: {bogus: 2}\ncoefficients:\n  b: {kind: constant, value: 1, extra: 3}\n")
    assert "unknown key 'foo'" in errs
    assert "unknown key 'grid.bogus'" in errs
    assert "unknown key 'coefficients.b.extra'" in errs


def test_missing_required_subkey():
    assert "missing key 'coefficients.sigma.value'" in errors_of("coefficients:\n  sigma: {kind: constant}\n")


def test_negative_table_rejected_for_positivity():
    errs = errors_of("coefficients:\n  b: {kind: table, values: [1.0, -0.5, 2.0]}\n")
    assert len(errs) == 1 and "positivity" in errs[0] and "-0.5" in errs[0]


def test_gamma_probe_rejects_understated_lipschitz():
    errs = errors_of("coefficients:\n  gamma: {kind: mean, integrand: tanh, scale: 0.5, lipschitz: 0.01}\n")
    assert any("Lipschitz" in e for e in errs)


def test_all_errors_reported_together():
    errs = errors_of("T: -1\ndt: zero\nseed: -3\ngrid: {m: 2}\nfixed_point: {initial_shift: random}\n"
                     "converge: {n_values: [400, 100]}\nresidual: {scheme: rk4}\n")
    assert len(errs) == 7


def test_malformed_yaml():
    assert errors_of("a: [1, 2")[0].startswith("malformed YAML")


def test_experiment_conflict():
    with pytest.raises(ConfigError):
        parse_config("experiment: simulate\n", experiment="converge")


def test_golden_canonical_form():
    cfg = load_config(DATA / "minimal.yaml")
    golden = (DATA / "minimal_canonical.yaml").read_text()
    assert cfg.canonical() == golden
    assert parse_config(golden).canonical() == golden
    assert parse_config(golden) == cfg and cfg.sha256() == parse_config(golden).sha256()


def test_defaults_table_is_its_own_canonical_form():
    text = parse_config("").canonical()
    assert parse_config(text).canonical() == text
    assert set(DEFAULTS) == set(parse_config(text).data)


def test_seed_override():
    cfg = parse_config("").with_overrides(seed=7)
    assert cfg.seed == 7
    assert canonical_yaml(cfg.data) != parse_config("").canonical()


# -- CLI -------------------------------------------------------------------

def write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return str(p)


def manifest(out):
    return json.loads((Path(out) / "manifest.json").read_text())


def test_solve_pme_gaussian(tmp_path):
    cfg = write(tmp_path, "T: 1.0\ngrid: {x_min: -8, x_max: 9, m: 801}\nexport: {slice_times: [0.25, 0.5, 1.0]}\n")
    out = tmp_path / "out"
    assert main(["solve-pme", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    cols = read_csv(out / "pme_slice_002.csv")
    from scipy.special import ndtr
    assert np.max(np.abs(cols["R"] - ndtr((cols["x"] - 1) / np.sqrt(2)))) < 5e-3
    m = manifest(out)
    assert m["status"] == "ok" and m["exit_code"] == 0 and len(m["config_sha256"]) == 64
    assert m["seed_lineage"]["seed"] == 42 and "numpy" in m["versions"] and m["wall_time_s"] > 0
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".out.")]


def test_simulate_with_positions(tmp_path):
    cfg = write(tmp_path, "T: 0.05\nsimulate: {n: 20, dump_positions: true}\n")
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--seed", "3", "--quiet"]) == 0
    assert read_csv(out / "trajectory.csv")["t"].size == 51
    assert (out / "positions.bin").stat().st_size == 51 * 20 * 8
    assert manifest(out)["config"]["seed"] == 3


def test_converge_row_count(tmp_path):
    cfg = write(tmp_path, "dt: 0.005\ngrid: {m: 601}\nconverge: {T: 0.02}\n")
    out = tmp_path / "conv"
    assert main(["converge", "--config", cfg, "--out", str(out), "--workers", "1", "--quiet"]) == 0
    cols = read_csv(out / "report.csv")
    assert cols["n"].size == 80
    assert sorted(set(cols["n"].tolist())) == [100, 400, 1600, 6400]
    assert list(cols) == ["n", "replica", "sup_w1", "sup_cdf", "sup_gamma_gap"]
    assert len(manifest(out)["result"]["timings_ms"]) == 80


def test_fixed_point_huge_lipschitz_exits_4(tmp_path):
    cfg = write(tmp_path, "T: 1.0\ngrid: {m: 1501}\ncoefficients:\n  gamma: {kind: mean, integrand: sin, scale: 20}\n")
    out = tmp_path / "fp"
    assert main(["fixed-point", "--config", cfg, "--out", str(out), "--quiet"]) == 4
    m = manifest(out)
    assert m["status"] == "nonconvergence" and len(m["decay_log"]) == 30
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]


def test_invalid_config_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "coefficients:\n  b: {kind: table, values: [1, -1]}\nfoo: 1\n")
    out = tmp_path / "bad"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "unknown key 'foo'" in err and "positivity" in err
    assert manifest(out)["status"] == "invalid"


def test_blowup_exits_3(tmp_path):
    cfg = write(tmp_path, "T: 2.0\ndt: 0.5\nsimulate: {n: 3}\ncoefficients:\n  b: {kind: constant, value: 1.7e+308}\n")
    out = tmp_path / "blow"
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(["simulate", "--config", cfg, "--out", str(out), "--quiet"]) == 3
    assert manifest(out)["status"] == "blowup"


def test_domain_problem_exits_2(tmp_path):
    cfg = write(tmp_path, "grid: {x_min: -1, x_max: 1, m: 101}\n")
    assert main(["solve-pme", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("COMMONNOISE_OUT", str(tmp_path / "env"))
    cfg = write(tmp_path, "T: 0.02\nsimulate: {n: 5}\n")
    assert main(["simulate", "--config", cfg, "--quiet"]) == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()


def test_spde_residual_experiment(tmp_path):
    cfg = write(tmp_path, "coefficients:\n  gamma: {kind: constant, value: 0.5}\nresidual: {levels: 2}\n")
    out = tmp_path / "res"
    assert main(["spde-residual", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "residual_summary.json").read_text())
    assert len(s["residuals"]) == 2 and s["ratios"][0] > 1.4
    assert read_csv(out / "residual_defects.csv")["defect"].size == 10
