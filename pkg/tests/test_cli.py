"""Config round-trip, CSV ingestion, subcommand behavior, goldens."""

import json
from pathlib import Path

import numpy as np
import pytest

from scentree.cli import RunConfig, ingest_prices, load_config, main
from scentree.errors import PriceDataError

REPO = Path(__file__).resolve().parents[1]
CONFIG = REPO / "configs" / "synthetic_small.json"
GOLDEN = Path(__file__).parent / "golden"


def write_csv(path: Path, rows, header="timestamp,price"):
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")


def hourly_rows(n, start_hour=0, value=30.0):
    return [
        f"2021-03-01 {start_hour + i:02d}:00,{value + i}" for i in range(n)
    ]


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def test_ingest_contiguous(tmp_path):
    path = tmp_path / "prices.csv"
    rows = [f"2021-03-0{1 + i // 24} {i % 24:02d}:00,{30 + i}" for i in range(48)]
    write_csv(path, rows)
    matrix, stamps, names = ingest_prices(path)
    assert matrix.shape == (48, 1)
    assert names == ["price"]
    assert stamps[0].hour == 0
    assert matrix[0, 0] == 30.0


def test_ingest_gap(tmp_path):
    path = tmp_path / "prices.csv"
    rows = hourly_rows(3) + ["2021-03-01 04:00,99"]  # 03:00 missing
    write_csv(path, rows)
    with pytest.raises(PriceDataError, match="missing hour"):
        ingest_prices(path)


def test_ingest_duplicate(tmp_path):
    path = tmp_path / "prices.csv"
    rows = hourly_rows(2) + ["2021-03-01 01:00,99"]
    write_csv(path, rows)
    with pytest.raises(PriceDataError, match="duplicate"):
        ingest_prices(path)


def test_ingest_non_numeric_names_row(tmp_path):
    path = tmp_path / "prices.csv"
    rows = hourly_rows(2) + ["2021-03-01 02:00,banana"]
    write_csv(path, rows)
    with pytest.raises(PriceDataError, match=":4"):
        ingest_prices(path)


def test_ingest_bad_header(tmp_path):
    path = tmp_path / "prices.csv"
    write_csv(path, hourly_rows(2), header="time,price")
    with pytest.raises(PriceDataError, match="header"):
        ingest_prices(path)


def test_ingest_multicolumn_selection(tmp_path):
    path = tmp_path / "prices.csv"
    rows = [f"2021-03-01 {i:02d}:00,{10 + i},{100 + i}" for i in range(4)]
    write_csv(path, rows, header="timestamp,zone_a,zone_b")
    matrix, _, names = ingest_prices(path, columns=["zone_b"])
    assert names == ["zone_b"]
    assert matrix[:, 0].tolist() == [100.0, 101.0, 102.0, 103.0]


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def test_config_round_trip_identity():
    config = load_config(CONFIG)
    doc = config.to_dict()
    reparsed = RunConfig.from_dict(json.loads(json.dumps(doc)))
    assert reparsed.to_dict() == doc
    assert reparsed.tree == config.tree
    assert reparsed.battery == config.battery
    assert reparsed.optimizer == config.optimizer


def test_config_missing_section(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"tree": {"depth": 1}}', encoding="utf-8")
    assert main(["build-tree", "--config", str(path)]) == 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def test_unknown_flag_exits_1(capsys):
    assert main(["simulate", "--config", str(CONFIG), "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err.lower()


def test_missing_data_exits_2(tmp_path, capsys):
    doc = json.loads(CONFIG.read_text())
    doc["data"]["path"] = str(tmp_path / "nope.csv")
    bad = tmp_path / "config.json"
    bad.write_text(json.dumps(doc), encoding="utf-8")
    assert main(["build-tree", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_build_tree_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        code = main(
            ["build-tree", "--config", str(CONFIG), "--seed", "7", "--out", str(out)]
        )
        assert code == 0
    assert (out_a / "tree.json").read_bytes() == (out_b / "tree.json").read_bytes()
    assert (out_a / "tree.dot").read_bytes() == (out_b / "tree.dot").read_bytes()


def test_build_tree_matches_golden(tmp_path):
    out = tmp_path / "tree"
    assert main(
        ["build-tree", "--config", str(CONFIG), "--seed", "7", "--out", str(out)]
    ) == 0
    assert (out / "tree.dot").read_bytes() == (GOLDEN / "tree.dot").read_bytes()


def test_simulate_matches_golden(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(CONFIG), "--out", str(out)]) == 0
    assert (out / "report.csv").read_bytes() == (GOLDEN / "report.csv").read_bytes()
    logs = sorted((out / "logs").iterdir())
    assert len(logs) == 10  # 2 months x 5 policies x 1 seed


def test_simulate_worker_count_does_not_change_results(tmp_path):
    out = tmp_path / "par"
    assert main(
        ["simulate", "--config", str(CONFIG), "--out", str(out), "--workers", "4"]
    ) == 0
    assert (out / "report.csv").read_bytes() == (GOLDEN / "report.csv").read_bytes()


def test_plan_json_output(capsys):
    assert main(["plan", "--config", str(CONFIG), "--policy", "dst_smpc"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["policy"] == "dst_smpc"
    assert len(payload["first_stage"]) == 4


def test_plan_csv_output(capsys):
    assert main(
        ["plan", "--config", str(CONFIG), "--policy", "oracle_mpc", "--format", "csv"]
    ) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "hour,p_charge,p_discharge"
    assert len(lines) == 5


def test_synth_deterministic_and_ingestible(tmp_path):
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    for out in (out_a, out_b):
        assert main(
            [
                "synth", "--config", str(CONFIG), "--seed", "5",
                "--out", str(out), "--hours", "24",
            ]
        ) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    matrix, stamps, names = ingest_prices(out_a)
    assert matrix.shape == (24, 1)
    assert names == ["price"]


def test_bench_runs(capsys):
    assert main(["bench", "--config", str(CONFIG)]) == 0
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert lines[0].startswith("depth,clusters")
    assert len(lines) == 5
