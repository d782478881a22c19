import csv
import json
import math

import pytest

from stubs import constant_network, threshold_network, write_set
from quantreach.cli import EXIT_ASSETS, EXIT_CONFIG, main, read_config_file
from quantreach.dynamics import Advisory

FAST = ["--q-pos", "500", "--vown-min", "100", "--vown-max", "200", "--vint-min", "1000", "--vint-max", "1100"]
HEAD_ON = "pos(-1,0)|vown(1)|vint(10)|th(0)|prev(COC)|taudot(0)"


@pytest.fixture(scope="module")
def coc_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("coc")
    write_set(d, lambda a, t: constant_network(Advisory.COC))
    return d


@pytest.fixture(scope="module")
def right_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("right")
    write_set(d, lambda a, t: constant_network(Advisory.SR))
    return d


def test_partition_counts(capsys):
    assert main(["partitions"]) == 0
    assert capsys.readouterr().out.strip() == "1267200"
    assert main(["partitions", "--q-pos", "250", "--vown-min", "200", "--vown-max", "200", "--vint-min", "185", "--vint-max", "185"]) == 0
    assert capsys.readouterr().out.strip() == "38400"


def test_partition_listing(capsys):
    main(["partitions", "--list", "--q-pos", "250", "--vown-min", "200", "--vown-max", "200", "--vint-min", "185", "--vint-max", "185", "--tau-dot", "0"])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "19200"
    assert len(lines) == 19201
    assert lines[1].endswith("|taudot(0)")


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# fixed speeds\nq-pos = 250\nvown_min=200\nvown_max=200\nvint_min=185\nvint_max=185\n")
    assert read_config_file(cfg)["q_pos"] == 250.0
    main(["partitions", "--config", str(cfg)])
    assert capsys.readouterr().out.strip() == "38400"
    main(["partitions", "--config", str(cfg), "--q-pos", "500"])
    assert capsys.readouterr().out.strip() == str(38400 // 4)


def test_bad_config(tmp_path, capsys):
    assert main(["partitions", "--q-pos", "-3"]) == EXIT_CONFIG
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["partitions", "--config", str(bad)]) == EXIT_CONFIG
    assert "unknown key" in capsys.readouterr().err
    with pytest.raises(SystemExit) as usage:
        main(["partitions", "--tau-dot", "7"])
    assert usage.value.code == EXIT_CONFIG


def test_simulate_with_bad_network_dir(tmp_path, capsys):
    (tmp_path / "ACASXU_run2a_1_1_batch_2000.nnet").write_text("2,5,5,\nnot numbers\n")
    code = main(["simulate", "--nnet-dir", str(tmp_path), "--rho", "61000", "--theta", "0", "--psi", "3", "--v-own", "500", "--v-int", "500"])
    assert code == EXIT_ASSETS
    assert "asset error" in capsys.readouterr().err
    code = main(["simulate", "--nnet-dir", str(tmp_path / "nope"), "--rho", "61000", "--theta", "0", "--psi", "3", "--v-own", "500", "--v-int", "500"])
    assert code == EXIT_ASSETS


def test_simulate_prints_csv(coc_dir, capsys):
    code = main(["simulate", "--nnet-dir", str(coc_dir), "--rho", "61000", "--theta", "0", "--psi", str(math.pi), "--v-own", "600", "--v-int", "600"])
    assert code == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["step", "alpha_prev", "cmd", "rho_ft", "theta_deg", "psi_deg"]
    assert float(rows[-1][3]) < 500


def test_simulate_writes_files(coc_dir, tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--nnet-dir", str(coc_dir), "--out", str(out), "--rho", "61000", "--theta", "0", "--psi", "3.1", "--v-own", "600", "--v-int", "600", "--mode", "quantized"])
    assert code == 0
    assert (out / "trace.csv").exists()
    assert json.loads((out / "trace.json").read_text())["rows"][0]["state"]
    svg = (out / "trace.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 2 and "<circle" in svg


def verify_args(d, *extra):
    return ["verify", "--nnet-dir", str(d), *FAST, "--tau-dot", "0", *extra]


def test_verify_exit_codes(coc_dir, right_dir, tmp_path, capsys):
    # hard-right networks: nothing leads into a partition whose previous advisory is not SR
    assert main(verify_args(right_dir, "--limit", "4")) == 0
    assert json.loads(capsys.readouterr().out)["safe"] == 4
    # ...but a forced COC step followed by hard right turns does reach the fifth
    assert main(verify_args(right_dir, "--limit", "5")) == 1
    capsys.readouterr()
    assert main(verify_args(coc_dir, "--limit", "1", "--max-depth", "3")) == 2
    capsys.readouterr()
    out = tmp_path / "v"
    assert main(verify_args(coc_dir, "--limit", "1", "--out", str(out))) == 1
    assert json.loads((out / "verify.json").read_text())["counts"]["unsafe"] == 1


def test_verify_jobs_and_resume(right_dir, tmp_path, capsys):
    resume = tmp_path / "resume.txt"
    main(verify_args(right_dir, "--limit", "5", "--jobs", "1"))
    one = capsys.readouterr().out
    assert json.loads(one)["unsafe"] == 1
    main(verify_args(right_dir, "--limit", "5", "--jobs", "3"))
    assert capsys.readouterr().out == one
    main(verify_args(right_dir, "--limit", "4", "--resume", str(resume)))
    capsys.readouterr()
    main(verify_args(right_dir, "--limit", "4", "--resume", str(resume)))
    assert json.loads(capsys.readouterr().out)["resumed"] == len(resume.read_text().splitlines())


def test_replay_and_falsify(coc_dir, right_dir, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["replay", "--nnet-dir", str(coc_dir), *FAST, "--partition", HEAD_ON, "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["confirmed"] is True
    assert (out / "trace.svg").exists()
    assert main(["replay", "--nnet-dir", str(right_dir), *FAST, "--partition", HEAD_ON]) == 1
    capsys.readouterr()
    fout = tmp_path / "f"
    code = main(["falsify", "--nnet-dir", str(coc_dir), *FAST, "--tau-dot", "0", "--out", str(fout)])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["status"] == "confirmed"
    assert (fout / "trace.csv").exists()


def test_montecarlo(tmp_path, capsys):
    d = tmp_path / "turn"
    d.mkdir()
    write_set(d, lambda a, t: threshold_network(Advisory.SL, 8000.0))
    args = ["montecarlo", "--nnet-dir", str(d), "--samples", "3000", "--seed", "7", "--tau-dot", "0"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args + ["--jobs", "2"]) == 0
    assert capsys.readouterr().out == first
    assert json.loads(first)["samples"] == 3000
