import json
import math
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import tomli_w

from msl import cli
from msl.harness import emit
from msl.harness.config import ConfigError, parse_config
from msl.harness.fitting import FitError, fit_rate_exponent
from msl.harness.runner import run
from msl.harness.seeding import stream, stream_id

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

SMALL_RATES = """
experiment = "rates"
seed = 7
replications = 40

[sweep]
axis = "n"
values = [16, 32, 64, 128]

[instance]
beta = 1.0
class = { kind = "thresholds", domain = [0.0, 1.0] }
target = { family = "uniform", cut = 0.5 }

[procedures]
list = ["target_erm"]
"""

SMALL_POOLING = """
experiment = "pooling"
seed = 11
replications = 30

[sweep]
axis = "N"
values = [2, 4, 8, 16]
fit_against = "total"

[instance]
beta = 1.0
target_n = 4
class = { kind = "thresholds", domain = [0.0, 2.0] }
target = { family = "uniform", cut = 0.5 }

[[instance.sources]]
n = 4
dist = { family = "uniform", a = 0.0, b = 2.0, cut = 0.5 }

[procedures]
list = ["pooled", "target_erm", "oracle", "rank_based"]
"""


# seeding ---------------------------------------------------------------


def test_stream_ids_do_not_collide():
    ids = {stream_id(2**63 + 5, "rates", t, r) for t in range(1000) for r in range(1000)}
    assert len(ids) == 10**6


def test_streams_differ_across_experiments_and_seeds():
    a = stream(1, "rates", 0, 0).random(4)
    assert not np.allclose(a, stream(1, "pooling", 0, 0).random(4))
    assert not np.allclose(a, stream(2, "rates", 0, 0).random(4))
    assert np.array_equal(a, stream(1, "rates", 0, 0).random(4))
    with pytest.raises(ValueError):
        stream(-1, "rates", 0, 0)


# fitting ---------------------------------------------------------------


def test_fit_exact_power_law():
    x = 2.0 ** np.arange(4, 12)
    f = fit_rate_exponent(x, 3.0 / x)
    assert f.slope == pytest.approx(-1.0, abs=1e-9)
    assert f.band == 0.0


def test_fit_constant_is_flat():
    assert fit_rate_exponent([1, 2, 4, 8], [0.3] * 4).slope == pytest.approx(0.0, abs=1e-12)


def test_fit_noisy_power_law_within_band():
    gen = np.random.default_rng(0)
    x = 2.0 ** np.arange(5, 14)
    truth = x**-0.5
    se = 0.02 * truth
    hits = 0
    for _ in range(400):
        f = fit_rate_exponent(x, truth + gen.normal(0, se), se)
        hits += f.low <= -0.5 <= f.high
    assert hits / 400 >= 0.9


def test_fit_drops_nonpositive_and_needs_four_points():
    with pytest.warns(UserWarning):
        f = fit_rate_exponent([1, 2, 4, 8, 16], [1, 0.5, 0.0, 0.125, 0.0625])
    assert f.points == 4
    with pytest.raises(FitError):
        with pytest.warns(UserWarning):
            fit_rate_exponent([1, 2, 4, 8], [1, 0, 0.25, 0.125])


# config ----------------------------------------------------------------


def test_config_unknown_key_has_line_number():
    with pytest.raises(ConfigError) as e:
        parse_config(SMALL_RATES.replace("beta = 1.0", "beta = 1.0\nbogus = 3"))
    assert e.value.line == 12 and "bogus" in str(e.value)


@pytest.mark.parametrize(
    "edit, word",
    [
        (("values = [16, 32, 64, 128]", "values = [16, 16, 64, 128]"), "increasing"),
        (("replications = 40", "replications = 0"), "replications"),
        (("family = \"uniform\"", "family = \"gauss\""), "family"),
        (("list = [\"target_erm\"]", "list = [\"magic\"]"), "procedures"),
        (("seed = 7", "seed = \"x\""), "type"),
    ],
)
def test_config_errors(edit, word):
    with pytest.raises(ConfigError) as e:
        parse_config(SMALL_RATES.replace(*edit))
    assert word in str(e.value)
    assert e.value.line is not None


def test_config_malformed_toml():
    with pytest.raises(ConfigError) as e:
        parse_config("experiment = \n")
    assert e.value.line == 1


def test_power_of_two_grid_default():
    cfg = parse_config(SMALL_RATES.replace("values = [16, 32, 64, 128]", "start = 64\nstop = 8192"))
    assert cfg.sweep.values == (64, 128, 256, 512, 1024, 2048, 4096, 8192)


def test_config_hash_ignores_threads_and_output():
    a = parse_config(SMALL_RATES)
    b = parse_config(SMALL_RATES + "threads = 4\n[output]\ndir = \"elsewhere\"\n".replace("threads = 4\n", ""))
    c = parse_config("threads = 4\n" + SMALL_RATES)
    assert a.config_hash() == b.config_hash() == c.config_hash()
    assert a.config_hash() != parse_config(SMALL_RATES.replace("seed = 7", "seed = 8")).config_hash()


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIGS)))
def test_shipped_configs_parse(name):
    cfg = parse_config(open(os.path.join(CONFIGS, name)).read())
    assert cfg.replications >= 1


# runs and emit -----------------------------------------------------------


def _csv(text, threads):
    cfg = parse_config(text)
    cfg.threads = threads
    return emit.to_csv(run(cfg))


def test_rate_report_contents():
    rep = run(parse_config(SMALL_RATES))
    assert rep.columns[:5] == ("sweep_value", "total_samples", "procedure", "mean_excess_risk", "stderr")
    assert len(rep.rows) == 4 and "target_erm" in rep.slopes
    assert rep.slopes["target_erm"].slope < -0.5


def test_all_procedures_run_on_pooling():
    rep = run(parse_config(SMALL_POOLING))
    assert {r[2] for r in rep.rows} == {"pooled", "target_erm", "oracle", "rank_based"}
    assert all(r[3] > 0 for r in rep.rows)


def test_zero_mean_is_clamped_and_flagged():
    # noiseless two-point target: ERM is always exactly right
    text = SMALL_RATES.replace("replications = 40", "replications = 3")
    text = text.replace('class = { kind = "thresholds", domain = [0.0, 1.0] }', 'class = { kind = "two_point" }')
    text = text.replace(
        'target = { family = "uniform", cut = 0.5 }',
        'target = { family = "two_point", mass_x1 = 0.5, eta_x1 = 1.0 }',
    )
    rep = run(parse_config(text))
    assert all(r[6] == 1 for r in rep.rows)
    # the worst member has excess 1/2, so the floor is 1/(2 * 3 * 1/2)
    assert all(r[3] == pytest.approx(1 / 3) for r in rep.rows)
    assert any("clamped" in f for f in rep.flags)


@pytest.mark.parametrize("text", [SMALL_RATES, SMALL_POOLING])
def test_thread_count_does_not_change_bytes(text):
    assert _csv(text, 1) == _csv(text, 8)


def test_csv_format():
    out = emit.to_csv(run(parse_config(SMALL_RATES)))
    assert "\r" not in out and out.endswith("\n")
    header, first = out.splitlines()[:2]
    assert header.split(",")[-1] == "config_hash"
    mean = first.split(",")[3]
    assert len(mean.replace(".", "").replace("-", "").lstrip("0").split("e")[0]) <= 12


def test_json_roundtrip_to_config():
    cfg = parse_config(SMALL_POOLING)
    doc = json.loads(emit.to_json(run(cfg)))
    assert doc["meta"]["config_hash"] == cfg.config_hash()
    again = parse_config(tomli_w.dumps(doc["meta"]["config"]))
    assert again.config_hash() == cfg.config_hash()
    assert list(doc) == ["experiment", "meta", "columns", "rows", "slopes", "flags"]


def test_svg_is_valid_and_stable():
    rep = run(parse_config(SMALL_RATES))
    a, b = emit.to_svg(rep), emit.to_svg(rep)
    assert a == b
    root = ET.fromstring(a.encode())
    assert root.tag.endswith("svg")
    assert "target_erm" in a


def test_write_all(tmp_path):
    rep = run(parse_config(SMALL_RATES))
    paths = emit.write_all(rep, str(tmp_path), "r", ["csv", "json", "svg"])
    assert sorted(os.path.basename(p) for p in paths) == ["r.csv", "r.json", "r.svg", "r_slopes.csv"]


# CLI -----------------------------------------------------------------------


def _write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return str(p)


def test_cli_success_and_outputs(tmp_path, capsys):
    path = _write(tmp_path, SMALL_RATES)
    out = tmp_path / "out"
    assert cli.main(["rates", "--config", path, "--out", str(out), "--format", "json", "--reps", "10"]) == 0
    assert (out / "rates.csv").exists() and (out / "rates.json").exists()
    assert "slope target_erm" in capsys.readouterr().out


def test_cli_seed_rerun_is_byte_identical(tmp_path):
    path = _write(tmp_path, SMALL_RATES)
    for k, th in (("a", "1"), ("b", "8")):
        assert cli.main(["rates", "--config", path, "--out", str(tmp_path / k), "--seed", "99", "--threads", th]) == 0
    assert (tmp_path / "a" / "rates.csv").read_bytes() == (tmp_path / "b" / "rates.csv").read_bytes()


def test_cli_config_error_exit(tmp_path):
    path = _write(tmp_path, SMALL_RATES.replace("beta = 1.0", "beta = 1.0\nzzz = 1"))
    assert cli.main(["rates", "--config", path, "--out", str(tmp_path)]) == 2
    assert cli.main(["pooling", "--config", _write(tmp_path, SMALL_RATES), "--out", str(tmp_path)]) == 2
    assert cli.main(["rates", "--config", str(tmp_path / "missing.toml")]) == 2


BAD_TRANSFER = SMALL_POOLING.replace(
    'target = { family = "uniform", cut = 0.5 }', 'target = { family = "powerlaw", rho = 3.0, cut = 0.5 }'
)


def test_cli_assumption_failure_and_force(tmp_path):
    path = _write(tmp_path, BAD_TRANSFER)
    assert cli.main(["pooling", "--config", path, "--out", str(tmp_path)]) == 3
    assert cli.main(["validate", "--config", path, "--out", str(tmp_path)]) == 3
    assert cli.main(["pooling", "--config", path, "--out", str(tmp_path), "--force", "--reps", "5"]) == 0


def test_cli_validate_passes(tmp_path):
    assert cli.main(["validate", "--config", _write(tmp_path, SMALL_POOLING), "--out", str(tmp_path)]) == 0


def test_cli_runtime_error(tmp_path, monkeypatch):
    import msl.cli as mod

    def boom(cfg, force=False):
        raise RuntimeError("boom")

    monkeypatch.setattr(mod, "run", boom)
    assert mod.main(["rates", "--config", _write(tmp_path, SMALL_RATES), "--out", str(tmp_path)]) == 4


def test_cli_bounds_and_pack(tmp_path):
    assert cli.main(["bounds", "--config", os.path.join(CONFIGS, "bounds.toml"), "--out", str(tmp_path)]) == 0
    assert cli.main(["pack", "--config", os.path.join(CONFIGS, "pack.toml"), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "pack.csv").read_text().splitlines()[1:]
    assert len(rows) >= 4 and all(int(r.split(",")[2]) >= 2 for r in rows)


def test_cli_asymmetry_and_adaptivity(tmp_path):
    assert cli.main(["asymmetry", "--config", os.path.join(CONFIGS, "asymmetry.toml"), "--out", str(tmp_path), "--reps", "50"]) == 0
    assert cli.main(["adaptivity", "--config", os.path.join(CONFIGS, "adaptivity_demo.toml"), "--out", str(tmp_path), "--reps", "20"]) == 0
