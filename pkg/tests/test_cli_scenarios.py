import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from rdc import cli, scenarios
from rdc.apps import report

ROOT = Path(__file__).resolve().parent.parent


def run_cli(args, capsys):
    code = cli.main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_kmeans_cli_writes_csv_and_plot(tmp_path, capsys):
    out = tmp_path / "km.csv"
    code, stdout, _ = run_cli(["--places", "4", "--workers", "2", "--", "kmeans", "--points", "1000", "--k", "8",
                               "--dim", "3", "--iters", "10", "--seed", "42", "--out", str(out), "--plot"], capsys)
    assert code == 0
    header, rows = report.read_csv(out)
    assert header == ["iter", "assign_ms", "reduce1_ms", "reduce2_ms", "total_ms"]
    assert len(rows) == 10
    summary = json.loads(stdout)
    assert summary["checks"] == {"replicas": True}
    png = out.with_suffix(".png")
    assert png.exists() and png.read_bytes()[:4] == b"\x89PNG"


def test_moldyn_cli_single_place(tmp_path, capsys):
    out = tmp_path / "md.csv"
    code, stdout, _ = run_cli(["--places", "1", "--workers", "2", "--", "moldyn", "--n", "108", "--iters", "2",
                               "--out", str(out)], capsys)
    assert code == 0
    header, rows = report.read_csv(out)
    assert header == ["iter", "force_ms", "allreduce_ms", "move_ms"] and len(rows) == 2
    assert json.loads(stdout)["checks"] == {"replicas": True, "net-force": True}


def test_marketsim_cli_schema(tmp_path, capsys):
    out = tmp_path / "ms.csv"
    code, _, _ = run_cli(["--places", "4", "--workers", "2", "marketsim", "--agents", "300", "--iters", "12",
                          "--lb", "level-extremes", "--lb-period", "4", "--profile", "slow:1:3.0",
                          "--out", str(out), "--plot"], capsys)
    assert code == 0
    header, rows = report.read_csv(out)
    assert header == ["iter", "place", "phase2_ms", "agents_held"]
    assert len(rows) == 12 * 4
    assert out.with_suffix(".png").exists()


def test_kmeans_presets_parse():
    ra, d, da = cli.parse(["--places", "2", "--", "kmeans", "--config", "large"])
    assert d.name == "kmeans" and da.config == "large"
    assert cli.KMEANS_PRESETS["small"] == (10_000_000, 3, 50, 30)


@pytest.mark.parametrize("argv", [
    ["--", "nope"],
    ["--places", "2"],
    ["--places", "0", "--", "hello"],
    ["--", "kmeans", "--bogus"],
    ["--plot", "--", "kmeans"],
])
def test_usage_errors_exit_2(argv, capsys):
    code, _, err = run_cli(argv, capsys)
    assert code == 2 and "usage" in err


def test_runtime_failure_exit_1(capsys):
    code, _, err = run_cli(["--places", "1", "--", "marketsim", "--agents", "10", "--iters", "1"], capsys)
    assert code == 1 and "marketsim failed" in err


def test_bad_kmeans_sizes_exit_1(capsys):
    code, _, err = run_cli(["--", "kmeans", "--k", "0"], capsys)
    assert code == 1 and "--k" in err


def test_hello_over_proc_transport(capsys):
    code, stdout, _ = run_cli(["--places", "4", "--transport", "proc", "--workers", "1", "--", "hello"], capsys)
    assert code == 0 and json.loads(stdout)["checks"] == {"relocated": True}


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "rdc.cli", "--places", "2", "--", "rotation"],
                       capture_output=True, text=True, timeout=120)
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["checks"] == {"conservation": True, "bag-sizes": True, "rotated": True}


# -- scenario runner -------------------------------------------------------------


def test_smoke_scenarios_pass(tmp_path, capsys):
    junit = tmp_path / "junit.xml"
    code = scenarios.main([str(ROOT / "scenarios" / "smoke.scn"), "--junit", str(junit)])
    out = capsys.readouterr().out
    assert code == 0, out
    suite = ET.parse(junit).getroot()
    assert suite.get("failures") == "0" and suite.get("errors") == "0"
    assert int(suite.get("tests")) == len(scenarios.parse_file(ROOT / "scenarios" / "smoke.scn"))


def test_empty_scenario_file_passes(tmp_path, capsys):
    f = tmp_path / "empty.scn"
    f.write_text("# nothing here\n\n")
    junit = tmp_path / "j.xml"
    assert scenarios.main([str(f), "--junit", str(junit)]) == 0
    assert "0/0 scenarios passed" in capsys.readouterr().out
    assert ET.parse(junit).getroot().get("tests") == "0"


def test_golden_mismatch_fails_with_diff(tmp_path, capsys):
    golden = tmp_path / "g.csv"
    golden.write_text("place,key,value\n0,wrong,row\n")
    f = tmp_path / "s.scn"
    f.write_text("hello | --places 2 | golden=g.csv rows=99\n")
    assert scenarios.main([str(f)]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "-0,wrong,row" in out and "rows: expected 99" in out


def test_golden_content_hash(tmp_path):
    import hashlib

    f = tmp_path / "s.scn"
    f.write_text("rotation | --places 2 | golden=h.txt\n")
    csv_text = "place,bag_size,chunk_ranges,map_keys\n0,50,\"[100,200)\",10\n1,50,\"[0,100)\",10\n"
    (tmp_path / "h.txt").write_text("sha256:" + hashlib.sha256(csv_text.encode()).hexdigest() + "\n")
    outcomes = scenarios.run_file(f)
    assert outcomes[0].ok, outcomes[0].failures


def test_unknown_driver_in_scenario_is_error(tmp_path):
    f = tmp_path / "s.scn"
    f.write_text("bogus | --places 2 | rows=1\n")
    out = scenarios.run_file(f)
    assert out[0].error and not out[0].ok


def test_malformed_scenario_file_exit_2(tmp_path, capsys):
    f = tmp_path / "s.scn"
    f.write_text("hello --places 2\n")
    assert scenarios.main([str(f)]) == 2
    assert scenarios.main([str(tmp_path / "missing.scn")]) == 2
