import json
import subprocess
import sys

import pytest

from hybridpred.cli import git_blob_hash, main
from hybridpred.svg import line_plot, trajectory_panels
from hybridpred.scenario import crossing_paths

SMALL = {
    "n_scenes": 40,
    "epochs": 3,
    "hidden": [16],
    "irl_demos": 5,
    "irl_max_iter": 15,
    "n_samples": 20,
    "k": 5,
    "sweep_ratios": [0.0, 1.0],
    "sweep_repeats": 2,
    "corner_repeats": 1,
}

PIPELINE = ["gen-data", "train-cvae", "train-irl", "predict", "sweep", "corner-cases"]


def run_all(tmp_path, name, seed=0):
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / name
    for cmd in PIPELINE:
        assert main([cmd, "--config", str(cfg), "--out", str(out), "--seed", str(seed)]) == 0
    return out


def manifest_outputs(out):
    return {p.name: json.loads(p.read_text())["outputs"] for p in sorted(out.glob("manifest_*.json"))}


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    return run_all(tmp, "a"), run_all(tmp, "b")


class TestPipeline:
    def test_outputs_written(self, two_runs):
        out, _ = two_runs
        for name in ["data/scenes.csv", "data/scenes_index.csv", "cvae.json", "cvae_loss.csv", "rmse.csv", "rmse.svg",
                     "weights.json", "irl_likelihood.csv", "predictions.csv", "predict_report.csv",
                     "sweep.csv", "sweep.svg", "corner_cases.csv", "predict_corner_ego6.svg"]:
            assert (out / name).exists(), name
        assert len(list(out.glob("manifest_*.json"))) == len(PIPELINE)

    def test_byte_identical(self, two_runs):
        a, b = two_runs
        assert manifest_outputs(a) == manifest_outputs(b)
        for f in ["predictions.csv", "sweep.csv", "corner_cases.csv", "weights.json"]:
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_manifest_hashes(self, two_runs):
        out, _ = two_runs
        doc = json.loads((out / "manifest_predict.json").read_text())
        assert doc["seed"] == 0 and doc["config"]["k"] == 5
        assert doc["outputs"]["predictions.csv"] == git_blob_hash(out / "predictions.csv")
        assert set(doc["inputs"]) >= {"cvae.json", "weights.json"}

    def test_sweep_csv_header(self, two_runs):
        out, _ = two_runs
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "r,mean_collision_rate,std_collision_rate" and len(lines) == 3


def test_git_blob_hash(tmp_path):
    f = tmp_path / "x"
    f.write_bytes(b"hello\n")
    # `git hash-object` of "hello\n"
    assert git_blob_hash(f) == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_missing_explicit_model(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**SMALL, "cvae_file": str(tmp_path / "nope.json")}))
    assert main(["predict", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("MODEL_NOT_FOUND:")


def test_missing_data_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**SMALL, "data_file": str(tmp_path / "none.csv")}))
    assert main(["train-cvae", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("DATA_NOT_FOUND:")


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"unknown_knob": 1}))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("CONFIG_ERROR:")


def test_negative_force_ratio(tmp_path, capsys):
    assert main(["sweep", "--force-ratio", "-1", "--out", str(tmp_path / "o")]) == 2
    assert "force_ratio" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hybridpred.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "corner-cases" in res.stdout


class TestSvg:
    def test_line_plot(self):
        doc = line_plot([{"x": [0, 1, 2], "y": [0.5, 0.2, 0.1], "err": [0.1, 0.1, 0.0], "label": "a"}], "x", "y", "t")
        assert doc.startswith("<svg") and doc.rstrip().endswith("</svg>")
        assert "<polyline" in doc and ">a<" in doc

    def test_panels(self):
        import numpy as np

        paths = crossing_paths().values()
        doc = trajectory_panels([("p", [np.zeros((5, 2)), np.ones((5, 2))], [True, False]), ("empty", [], [])], paths)
        assert doc.count("<svg") == 3
        assert "#d62728" in doc
