import csv
import json

import pytest

from strategem.cli import main
from strategem.config import config_from_dict, load_config
from strategem.errors import ValidationError
from strategem.outputs import load_document, validate_document

SMALL = {
    "schema_version": 1,
    "name": "tiny",
    "workload": {"components": [
        {"kind": "Embedding", "flops_fwd": 1e8, "param_count": 2_000_000, "activation_bytes_per_sample": 40_000},
        {"kind": "Attention", "flops_fwd": 4e8, "param_count": 3_000_000, "activation_bytes_per_sample": 40_000},
        {"kind": "Mlp", "flops_fwd": 6e8, "param_count": 5_000_000, "activation_bytes_per_sample": 40_000},
        {"kind": "Head", "flops_fwd": 1e6, "param_count": 80_000, "activation_bytes_per_sample": 400},
    ]},
    "cluster": {"k": 4, "mem_gb": 8, "throughput_tflops": 10, "bandwidth_gbps": 25, "latency_us": 5},
    "schedule": {"dataset_size": 2048, "global_batch": 64, "epochs": 3},
    "drift": {"sigma_noise": 0.0},
    "k_values": [1, 2, 4],
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_plan_writes_valid_document(cfg_path, tmp_path, capsys):
    assert main(["plan", "--config", str(cfg_path), "--out-dir", str(tmp_path)]) == 0
    doc = load_document(tmp_path / "plan.json")
    assert doc["kind"] == "plan" and len(doc["components"]) == 4
    assert "strategy" in capsys.readouterr().out


def test_plan_infeasible_exit_code(cfg_path, tmp_path):
    code = main(["plan", "--config", str(cfg_path), "--out-dir", str(tmp_path), "--cluster", "k=4,mem=0.001"])
    assert code == 2
    assert load_document(tmp_path / "plan.json")["feasible"] is False


def test_simulate_and_report(cfg_path, tmp_path, capsys):
    for mode in ("single", "dp", "adaptive"):
        assert main(["simulate", "--config", str(cfg_path), "--out-dir", str(tmp_path), "--mode", mode,
                     "--trace", f"trace_{mode}.csv"]) == 0
    with open(tmp_path / "trace_dp.csv") as f:
        header = next(csv.reader(f))
    assert header == ["t_start", "duration", "event_type", "component_id", "epoch", "batch"]
    assert main(["plan", "--config", str(cfg_path), "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()
    files = [str(tmp_path / f"metrics_{m}.json") for m in ("single", "dp", "adaptive")]
    assert main(["report", *files, "--plan", str(tmp_path / "plan.json"), "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    single_line = next(line for line in out.splitlines() if line.startswith("single"))
    assert single_line.split()[-1] == "0.0"
    with open(tmp_path / "strategies.csv") as f:
        assert len(list(csv.DictReader(f))) == 4


def test_report_requires_input(tmp_path):
    assert main(["report", "--out-dir", str(tmp_path)]) == 1


def test_report_schema_mismatch_names_field(cfg_path, tmp_path, capsys):
    main(["simulate", "--config", str(cfg_path), "--out-dir", str(tmp_path), "--mode", "dp"])
    doc = json.loads((tmp_path / "metrics_dp.json").read_text())
    del doc["comm_fraction"]
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    assert main(["report", str(tmp_path / "bad.json"), "--out-dir", str(tmp_path)]) == 1
    assert "comm_fraction" in capsys.readouterr().err


def test_sweep_k1_all_unit_speedup(cfg_path, tmp_path):
    assert main(["sweep", "--config", str(cfg_path), "--out-dir", str(tmp_path), "--k-values", "1"]) == 0
    with open(tmp_path / "sweep.csv") as f:
        rows = list(csv.DictReader(f))
    assert rows and all(float(r["speedup"]) == 1.0 for r in rows)
    validate_document(json.loads((tmp_path / "sweep.json").read_text()))


def test_sweep_parallel_matches_serial(cfg_path, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", str(cfg_path), "--out-dir", str(a)]) == 0
    assert main(["sweep", "--config", str(cfg_path), "--out-dir", str(b), "--jobs", "3"]) == 0
    assert (a / "sweep.csv").read_text() == (b / "sweep.csv").read_text()


def test_sweep_records_unsupported_points(cfg_path, tmp_path):
    assert main(["sweep", "--config", str(cfg_path), "--out-dir", str(tmp_path), "--k-values", "3"]) == 0
    with open(tmp_path / "sweep.csv") as f:
        rows = {r["mode"]: r for r in csv.DictReader(f) if r["k"] == "3"}
    assert rows["hp"]["status"] == "unsupported"
    assert rows["dp"]["status"] == "ok"


def test_verify(capsys):
    assert main(["verify", "--steps", "20", "--shards", "1,2,4"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_validation_errors_exit_1(tmp_path):
    bad = dict(SMALL, colour="blue")
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["plan", "--config", str(path), "--out-dir", str(tmp_path)]) == 1
    assert main(["plan", "--config", str(tmp_path / "missing.json")]) == 1


def test_global_flags_before_subcommand(cfg_path, tmp_path):
    assert main(["--config", str(cfg_path), "--out-dir", str(tmp_path), "plan"]) == 0
    assert (tmp_path / "plan.json").exists()


def test_config_rejects_unknown_nested_fields():
    with pytest.raises(ValidationError):
        config_from_dict(dict(SMALL, drift={"sigma_noise": 0, "wind": 3}))
    with pytest.raises(ValidationError):
        config_from_dict(dict(SMALL, modes=["dp", "zero"]))
    with pytest.raises(ValidationError):
        config_from_dict(dict(SMALL, schema_version=2))


@pytest.mark.parametrize("name", ["paper_resnet", "paper_vit"])
def test_shipped_configs_load(name):
    cfg = load_config(name)
    assert cfg.cluster.k == 8
    assert "fitted" in cfg.raw and cfg.raw["fitted"]["fields"]
