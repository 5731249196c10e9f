import csv
import json

import numpy as np
import pytest

from eventerr import cli
from eventerr.errors import ConfigError
from eventerr.harness import (HEADER_SIZE, build_reference, cache_dir, cache_key, parse_config,
                              read_reference, run)

HEAT = """\
# small heat sweep
problem = heat_linear
meshes = 10, 20
q_t = 1
q_s = 1
truth = analytic
emit_functional_trace = yes
"""


def _config(tmp_path, text=HEAT, **extra):
    body = text + "".join(f"{k} = {v}\n" for k, v in extra.items())
    body += f"output = {tmp_path / 'out'}\n"
    return parse_config(body)


def test_parse_config_defaults_and_alias():
    c = parse_config("problem = swe_constant\nmeshes = 50,100\nq_t=2\nq_s = 2\noccurrence = 1, 3\n"
                     "truth = reference\nn_ref = 400  # fine\n")
    assert c.meshes == (50, 100) and c.occurrences == (1, 3)
    assert c.adjoint_offset == 2 and c.ref_degree == 3 and c.workers == 1
    assert c.n_ref == 400 and not c.emit_functional_trace


@pytest.mark.parametrize("text,line", [
    ("problem = heat_linear\nmeshes = 10\nbogus = 1\n", 3),
    ("problem = heat_linear\nmeshes = ten\n", 2),
    ("problem heat_linear\n", 1),
    ("problem = heat_linear\nproblem = heat_linear\n", 2),
    ("problem = heat_linear\nmeshes = 10\nq_t = 1\nq_s = 1\nemit_functional_trace = maybe\n", 5),
])
def test_parse_errors_report_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


@pytest.mark.parametrize("text", [
    "problem = heat_linear\nmeshes =\nq_t = 1\nq_s = 1\n",
    "problem = heat_linear\nmeshes = 20, 10\nq_t = 1\nq_s = 1\n",
    "problem = heat_linear\nmeshes = 10\nq_t = 0\nq_s = 1\n",
    "problem = heat_linear\nmeshes = 10\nq_t = 1\n",
    "problem = nowhere\nmeshes = 10\nq_t = 1\nq_s = 1\n",
    "problem = swe_constant\nmeshes = 10\nq_t = 1\nq_s = 1\ntruth = reference\n",
    "problem = swe_constant\nmeshes = 10, 40\nq_t = 1\nq_s = 1\ntruth = reference\nn_ref = 60\n",
])
def test_config_validation(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_run_writes_tables_and_is_deterministic(tmp_path):
    config = _config(tmp_path)
    rows = run(config)
    assert [r.N for r in rows] == [10, 20] and not any(r.failed for r in rows)
    out = tmp_path / "out"
    first = (out / "table.csv").read_bytes()
    run(config)
    assert (out / "table.csv").read_bytes() == first
    with open(out / "table.csv") as fh:
        records = list(csv.DictReader(fh))
    assert list(records[0])[:5] == ["N", "t_c", "e_Q", "nu", "rho_eff"]
    assert float(records[1]["t_c"]) == rows[1].t_c  # shortest round-trip repr
    md = (out / "table.md").read_text().splitlines()
    assert md[2].startswith("| 10 | 1 | ") and len(md) == 4
    report = json.loads((out / "reports" / "report_N20_event1.json").read_text())
    assert report["rho_eff"] == rows[1].rho_eff and report["E3"] == 0.0
    trace = (out / "trace_10.csv").read_text().splitlines()
    assert trace[0] == "t,G" and len(trace) == 1 + 10 * 20 + 1


def test_worker_pool_matches_serial(tmp_path):
    serial = run(_config(tmp_path / "a"))
    pooled = run(_config(tmp_path / "b", workers=2))
    assert [(r.t_c, r.nu, r.rho_eff) for r in serial] == [(r.t_c, r.nu, r.rho_eff) for r in pooled]


def test_failed_row_does_not_suppress_others(tmp_path):
    config = _config(tmp_path, occurrences="1, 2")
    rows = run(config)
    assert [r.failed for r in rows] == [False, True, False, True]
    assert "EventNotFoundError" in rows[1].error
    text = (tmp_path / "out" / "table.csv").read_text()
    assert text.count("EventNotFoundError") == 2


def test_reference_cache_roundtrip(tmp_path):
    first = build_reference("swe_constant", 20, 2, directory=tmp_path)
    assert not first.loaded and len(first.crossings) >= 2
    second = build_reference("swe_constant", 20, 2, directory=tmp_path)
    assert second.loaded
    assert np.array_equal(first.solution.coeffs, second.solution.coeffs)
    assert first.crossings == second.crossings
    header = first.path.read_bytes()[:HEADER_SIZE].decode()
    assert header.startswith("EVREF1 ") and header.endswith("\n")
    coeffs, crossings = read_reference(first.path, cache_key("swe_constant", 20, 2, 9.8),
                                       *first.solution.coeffs.shape)
    assert np.array_equal(crossings, first.crossings)


def test_reference_cache_corruption_recomputes(tmp_path):
    ref = build_reference("swe_constant", 20, 2, directory=tmp_path)
    blob = ref.path.read_bytes()
    ref.path.write_bytes(blob[:-16])
    with pytest.warns(RuntimeWarning, match="corrupt"):
        again = build_reference("swe_constant", 20, 2, directory=tmp_path)
    assert not again.loaded and again.warnings
    assert again.crossings == ref.crossings
    assert ref.path.read_bytes() == blob


def test_cache_key_depends_on_gravity():
    assert cache_key("swe_shelf", 80, 3, 9.8) != cache_key("swe_shelf", 80, 3, 9.81)
    assert cache_key("swe_shelf", 80, 3, 9.8) == cache_key("swe_shelf", 80, 3, 9.8)


def test_cache_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("ESTIMATE_CACHE_DIR", str(tmp_path / "elsewhere"))
    assert cache_dir("out") == tmp_path / "elsewhere"
    monkeypatch.delenv("ESTIMATE_CACHE_DIR")
    assert cache_dir("out").as_posix() == "out/cache"


def test_cli_run_and_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text(HEAT + f"output = {tmp_path / 'g'}\n")
    assert cli.main(["run", str(good)]) == 0
    bad_row = tmp_path / "row.cfg"
    bad_row.write_text(HEAT + f"occurrence = 3\noutput = {tmp_path / 'r'}\n")
    assert cli.main(["run", str(bad_row)]) == 2
    broken = tmp_path / "broken.cfg"
    broken.write_text("problem = heat_linear\nmeshes = x\n")
    assert cli.main(["run", str(broken)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_cli_reference_and_list(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ESTIMATE_CACHE_DIR", str(tmp_path / "cache"))
    cfg = tmp_path / "ref.cfg"
    cfg.write_text("problem = swe_constant\nmeshes = 10\nq_t = 2\nq_s = 2\ntruth = reference\n"
                   "n_ref = 20\nref_degree = 2\n")
    assert cli.main(["reference", str(cfg)]) == 0
    assert cli.main(["reference", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "built" in out and "loaded" in out and "event 1: t = " in out
    assert cli.main(["list-problems"]) == 0
    listing = capsys.readouterr().out.splitlines()
    assert len(listing) == 6 and listing[0].startswith("heat_linear")
