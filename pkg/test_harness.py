"""
测试命令行工具：退出码、报告与 CSV 输出
"""

import json

import pytest

from harness.app import create_parser, main
from harness.commands import depth_grid
from harness.config import HarnessConfig
from harness.models import RunReport
from sola_engine import load_config
from sola_engine.src.config import config as engine_config
from sola_engine.src.utils import read_csv


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


def test_parser_subcommands():
    parser = create_parser()
    args = parser.parse_args(["bench", "--resolution", "224", "448"])
    assert args.resolutions == [224, 448]
    args = parser.parse_args(["range", "--max-depth", "16"])
    assert args.max_depth == 16


def test_usage_error_exits_2(capsys):
    assert main(["no-such-command"]) == 2
    assert main(["forward", "--resolution", "0"]) == 2


def test_harness_reads_engine_config():
    assert HarnessConfig.OUTPUT_DIR == engine_config.OUTPUT_DIR
    assert HarnessConfig.LOG_LEVEL == engine_config.LOG_LEVEL
    assert create_parser().parse_args(["check"]).log_level == engine_config.LOG_LEVEL


def test_depth_grid():
    assert depth_grid(64) == [1, 2, 4, 8, 16, 32, 64]
    assert depth_grid(10) == [1, 2, 4, 8, 10]
    assert depth_grid(1) == [1]


def test_forward_report(capsys):
    code, report = run(capsys, "forward", "--config", "micro", "--resolution", "32", "--seed", "7")
    assert code == 0
    assert report["command"] == "forward"
    assert report["config_digest"] == load_config("micro").digest()
    assert report["metrics"]["final_dim"] == 16
    assert report["details"]["stage_shapes"][-1] == [1, 1, 16]
    _, again = run(capsys, "forward", "--config", "micro", "--resolution", "32", "--seed", "7")
    assert again["details"]["pooled"] == report["details"]["pooled"]


def test_forward_without_hsb(capsys):
    code, report = run(capsys, "forward", "--config", "micro", "--resolution", "32", "--no-hsb")
    assert code == 0
    assert report["details"]["taps"] == {}
    assert report["details"]["bridges"] == []


def test_forward_bad_resolution(capsys):
    code, report = run(capsys, "forward", "--config", "micro", "--resolution", "30")
    assert code == 2
    assert report["exit_code"] == 2


def test_bad_config_names_field(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(
        json.dumps({"stem_dim": 8, "stage_dims": [16, 16, 16, 16], "patterns": ["L", "L", "L", "L"]}),
        encoding="utf-8",
    )
    code, report = run(capsys, "forward", "--config", str(path))
    assert code == 2
    assert report["field"] == "stage_dims"


def test_missing_config(capsys):
    code, report = run(capsys, "forward", "--config", "does_not_exist.json")
    assert code == 2
    assert report["field"] == "config"


def test_bench_csv(capsys, tmp_path):
    out = tmp_path / "bench.csv"
    code, report = run(capsys, "bench", "--config", "sola_t", "--resolution", "224", "448", "896", "--out", str(out))
    assert code == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["variant", "resolution", "tokens", "flops"]
    assert len(rows) == 3 * 3
    assert report["metrics"]["exponent_sola"] <= 1.25
    assert report["metrics"]["exponent_full_softmax"] >= 1.5


def test_bench_bad_resolution(capsys, tmp_path):
    code, _ = run(capsys, "bench", "--config", "sola_t", "--resolution", "226", "--out", str(tmp_path / "b.csv"))
    assert code == 2


def test_range_csv(capsys, tmp_path):
    out = tmp_path / "range.csv"
    code, report = run(capsys, "range", "--w", "1.0", "--epsilon", "1e-3", "--max-depth", "64", "--out", str(out))
    assert code == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["M", "sigma", "xi", "xi_predicted", "gaussian_error"]
    assert rows[0]["M"] == "1" and rows[0]["xi"] == "7"
    # 浮点数至少保留 12 位有效数字
    assert len(rows[-1]["sigma"].replace(".", "").lstrip("0")) >= 12
    assert 0.42 <= report["metrics"]["exponent"] <= 0.58


def test_range_domain_error(capsys, tmp_path):
    code, _ = run(capsys, "range", "--w", "-1", "--out", str(tmp_path / "r.csv"))
    assert code == 2


def test_patterns_csv(capsys, tmp_path):
    out = tmp_path / "patterns.csv"
    code, report = run(capsys, "patterns", "--config", "sola_t", "--out", str(out))
    assert code == 0
    rows = read_csv(out)
    assert len(rows) == 10
    assert {r["name"]: r["pattern"] for r in rows}["sola"] == "LL/LL/LLSLLS/LL"
    assert report["details"]["isolate"] is True

    code, report = run(capsys, "patterns", "--config", "sola_t", "--keep-stages", "--out", str(out))
    assert code == 0
    assert {r["name"]: r["pattern"] for r in read_csv(out)}["sola"] == "LL/LL/LLSLLS/LS"
    assert report["details"]["isolate"] is False


def test_check_passes(capsys):
    code, report = run(capsys, "check", "--only", "wkv_oracle", "kernel_specialization", "hsb_noop")
    assert code == 0
    assert [c["name"] for c in report["checks"]] == ["wkv_oracle", "kernel_specialization", "hsb_noop"]
    assert all(c["passed"] for c in report["checks"])


def test_injected_fault_fails_check(capsys):
    code, report = run(capsys, "check", "--inject-fault", "--only", "wkv_oracle")
    assert code == 1
    assert report["checks"][0]["name"] == "wkv_oracle"
    assert not report["checks"][0]["passed"]


def test_train_toy_rejects_large_config(capsys):
    code, report = run(capsys, "train-toy", "--config", "sola_t", "--steps", "1")
    assert code == 2
    assert report["field"] == "config"


def test_train_toy_zero_lr(capsys, tmp_path):
    out = tmp_path / "train.json"
    code, report = run(capsys, "train-toy", "--steps", "1", "--lr", "0", "--out", str(out))
    assert code == 0
    losses = report["details"]["losses"]
    assert len(losses) == 2
    assert losses[0] == pytest.approx(losses[1], abs=1e-12)
    saved = RunReport.model_validate_json(out.read_text(encoding="utf-8"))
    assert saved.command == "train-toy"
