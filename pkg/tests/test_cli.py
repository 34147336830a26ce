import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from linswap.cli import ExperimentConfig, hardness_report, main
from linswap.errors import ConfigError
from linswap.regret import exact_linswap_regret
from linswap.geometry import Simplex

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def workdir(tmp_path):
    for f in CONFIGS.glob("*.json"):
        shutil.copy(f, tmp_path)
    return tmp_path


def _write(path: Path, obj) -> str:
    path.write_text(json.dumps(obj))
    return str(path)


def _rows(path: Path):
    return list(csv.reader(path.open()))


def test_regret_run_csv_and_summary(workdir):
    cfg = _write(workdir / "run.json", {"body": "simplex3.json", "T": 30, "adversary": "uniform", "seed": 3})
    out = workdir / "run.csv"
    assert main(["regret-run", "--config", cfg, "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 31 and rows[0][0] == "t"
    summary = json.loads((workdir / "run.summary.json").read_text())
    assert summary["rounds"] == 30
    # recompute the final regret from the CSV with the exact evaluator
    hist = [(np.array(r[1].split(";"), float), np.array(r[2].split(";"), float)) for r in rows[1:]]
    assert summary["final_regret_exact"] == pytest.approx(exact_linswap_regret(hist, Simplex(3)).linswap_regret,
                                                          abs=1e-12)
    assert summary["final_regret_exact"] <= summary["bound_value"]
    assert float(rows[-1][4]) == pytest.approx(summary["final_regret_exact"], abs=1e-9)


def test_single_round(workdir):
    cfg = _write(workdir / "one.json", {"body": {"shape": "simplex", "dim": 2}, "T": 1, "seed": 0})
    out = workdir / "one.csv"
    assert main(["regret-run", "--config", cfg, "--out", str(out)]) == 0
    assert len(_rows(out)) == 2


def test_runs_are_byte_identical(workdir):
    cfg = _write(workdir / "run.json", {"body": "simplex3.json", "T": 20, "adversary": "adaptive-worst-column"})
    outs = []
    for k in range(2):
        out = workdir / f"r{k}.csv"
        assert main(["regret-run", "--config", cfg, "--seed", "11", "--out", str(out)]) == 0
        outs.append((out.read_bytes(), out.with_suffix(".summary.json").read_bytes()))
    assert outs[0] == outs[1]


def test_config_errors(workdir, capsys):
    bad = workdir / "bad.json"
    bad.write_text("{ not json")
    assert main(["regret-run", "--config", str(bad)]) == 2
    assert main(["lce", "--config", str(workdir / "missing.json")]) == 2
    no_seed = _write(workdir / "ns.json", {"body": "simplex3.json", "T": 5})
    assert main(["regret-run", "--config", no_seed]) == 2
    bad_body = _write(workdir / "bb.json", {"body": {"shape": "torus"}, "T": 5, "seed": 1})
    assert main(["regret-run", "--config", bad_body]) == 2
    zero_T = _write(workdir / "zt.json", {"body": "simplex3.json", "T": 0, "seed": 1})
    assert main(["regret-run", "--config", zero_T]) == 2
    assert main(["selfplay"]) == 2
    assert main(["demo-hardness", "--dim", "1"]) == 2
    assert "config error" in capsys.readouterr().err


def test_lce_then_verify(workdir):
    out = workdir / "sol.json"
    assert main(["lce", "--config", str(workdir / "lce_mp.json"), "--out", str(out)]) == 0
    sol = json.loads(out.read_text())
    assert max(sol["gaps"]) <= 1e-3
    assert sum(sol["weights"]) == pytest.approx(1.0)
    cfg = _write(workdir / "v.json", {"game": "matching_pennies.json", "solution": "sol.json", "eps": 1e-3})
    report = workdir / "report.json"
    assert main(["verify", "--config", cfg, "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["ok"] is True and data["gaps"] == pytest.approx(sol["gaps"], abs=1e-15)


def test_verify_flags_a_bad_solution(workdir):
    point = {"atoms": [[[0.0], [0.0]]], "weights": [1.0]}
    cfg = _write(workdir / "v.json", {"game": "matching_pennies.json", "solution": point, "eps": 1e-3})
    report = workdir / "report.json"
    assert main(["verify", "--config", cfg, "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["ok"] is False and data["max_gap"] == pytest.approx(2.0)
    short = _write(workdir / "s.json", {"game": "matching_pennies.json", "solution": {"atoms": [[[0.0]]],
                                                                                      "weights": [1.0]}})
    assert main(["verify", "--config", short]) == 2


def test_selfplay_csv(workdir):
    cfg = _write(workdir / "sp.json", {"game": "rps.json", "T": 25, "seed": 2})
    out = workdir / "sp.csv"
    assert main(["selfplay", "--config", cfg, "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["t", "linswap_gap_0", "linswap_gap_1", "external_gap_0", "external_gap_1",
                       "linswap_max_gap", "external_max_gap"]
    assert len(rows) == 26
    last = [float(v) for v in rows[-1][1:]]
    assert last[4] == max(last[0:2]) and last[5] == max(last[2:4])


@pytest.mark.parametrize("d", [2, 3, 4])
def test_hardness_report(d):
    rep = hardness_report(d)
    assert np.isclose(rep["spectral_norm"], (4 * d - 1) / (4 * d))
    assert np.isclose(rep["cap_threshold"], (2 * d - 1) / (2 * d))
    assert rep["ball_endomorphism"] and rep["witness_in_capped_ball"]
    assert not rep["image_in_capped_ball"] and rep["image_cap_value"] > rep["cap_threshold"]
    assert rep["origin_fixed_on_both"]


def test_demo_hardness_writes_json(workdir):
    out = workdir / "h.json"
    assert main(["demo-hardness", "--config", str(workdir / "hardness.json"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["d"] == 3
    assert main(["demo-hardness", "--dim", "2", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["spectral_norm"] == 0.875


def test_config_accessors(workdir):
    cfg = ExperimentConfig.load(_write(workdir / "c.json", {"T": "x", "eps": -1, "seed": 4}), None)
    assert cfg.seed == 4
    with pytest.raises(ConfigError):
        cfg.integer("T")
    with pytest.raises(ConfigError):
        cfg.positive("eps")
    assert ExperimentConfig.load(str(workdir / "c.json"), 9).seed == 9
