import json

import pytest
from click.testing import CliRunner

from sarcolor.cli import main
from sarcolor.dataio import load_manifest, read_patch


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ds")
    r = CliRunner().invoke(main, ["--seed", "7", "synth-data", "--out", str(root),
                                  "--train", "4", "--test", "2", "--size", "64"])
    assert r.exit_code == 0, r.output
    return root


def test_synth_data_and_gt(runner, dataset, tmp_path):
    train_manifest = dataset / "train" / "manifest.jsonl"
    assert train_manifest.exists()
    r = runner.invoke(main, ["synth-gt", "--manifest", str(train_manifest),
                             "--out", str(tmp_path / "gt")])
    assert r.exit_code == 0, r.output
    m = load_manifest(tmp_path / "gt" / "manifest.jsonl")
    assert all(e.gt is not None for e in m.entries)


def test_fit_colorize_eval_round(runner, dataset, tmp_path):
    gt_dir = tmp_path / "gt"
    train_manifest = dataset / "train" / "manifest.jsonl"
    r = runner.invoke(main, ["synth-gt", "--manifest", str(train_manifest),
                             "--out", str(gt_dir)])
    assert r.exit_code == 0, r.output

    model_path = tmp_path / "lr.scm"
    r = runner.invoke(main, ["fit", "--method", "lr",
                             "--manifest", str(gt_dir / "manifest.jsonl"),
                             "--out", str(model_path), "--patches", "4"])
    assert r.exit_code == 0, r.output
    assert model_path.exists()

    pred_dir = tmp_path / "pred"
    r = runner.invoke(main, ["colorize", "--ckpt", str(model_path),
                             "--manifest", str(gt_dir / "manifest.jsonl"),
                             "--out", str(pred_dir), "--preview"])
    assert r.exit_code == 0, r.output
    ids = [e.id for e in load_manifest(gt_dir / "manifest.jsonl").entries]
    assert (pred_dir / f"{ids[0]}.scp").exists()
    assert (pred_dir / f"{ids[0]}.png").exists()

    report_path = tmp_path / "report.json"
    r = runner.invoke(main, ["eval", "--manifest", str(gt_dir / "manifest.jsonl"),
                             "--pred", str(pred_dir), "--method", "LR4ColSAR",
                             "--out", str(report_path)])
    assert r.exit_code == 0, r.output
    report = json.loads(report_path.read_text())
    assert report["method"] == "LR4ColSAR"
    assert set(report["aggregate"]) == {"q4", "nrmse", "sam_deg", "r2"}


def test_fit_nocol_and_nl(runner, dataset, tmp_path):
    gt_dir = tmp_path / "gt"
    r = runner.invoke(main, ["synth-gt", "--manifest",
                             str(dataset / "train" / "manifest.jsonl"),
                             "--out", str(gt_dir)])
    assert r.exit_code == 0, r.output
    for method, extra in (("nocol", []), ("nl", ["--hidden", "2"])):
        out = tmp_path / f"{method}.scm"
        r = runner.invoke(main, ["fit", "--method", method,
                                 "--manifest", str(gt_dir / "manifest.jsonl"),
                                 "--out", str(out), "--patches", "4"] + extra)
        assert r.exit_code == 0, r.output
        assert out.exists()


def test_train_and_colorize_cnn(runner, dataset, tmp_path):
    gt_dir = tmp_path / "gt"
    r = runner.invoke(main, ["synth-gt", "--manifest",
                             str(dataset / "train" / "manifest.jsonl"),
                             "--out", str(gt_dir)])
    assert r.exit_code == 0, r.output
    config = {"method": "cnn", "batch": 2, "lr": 1e-3, "epochs": 2,
              "cnn_kernels": [3], "cnn_filters": [3], "seed": 7}
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps(config))
    ckpt_path = tmp_path / "cnn.sck"
    r = runner.invoke(main, ["train", "--method", "cnn",
                             "--manifest", str(gt_dir / "manifest.jsonl"),
                             "--config", str(config_path), "--out", str(ckpt_path)])
    assert r.exit_code == 0, r.output
    pred_dir = tmp_path / "pred_cnn"
    r = runner.invoke(main, ["colorize", "--ckpt", str(ckpt_path),
                             "--manifest", str(gt_dir / "manifest.jsonl"),
                             "--out", str(pred_dir)])
    assert r.exit_code == 0, r.output
    pred = read_patch(pred_dir / "train_0000.scp")
    assert pred.channels == 3


def test_report_command(runner, dataset, tmp_path):
    out_dir = tmp_path / "bench"
    r = runner.invoke(main, ["--seed", "3", "report",
                             "--train-manifest", str(dataset / "train" / "manifest.jsonl"),
                             "--test-manifest", str(dataset / "test" / "manifest.jsonl"),
                             "--methods", "nocol,lr",
                             "--out", str(out_dir)])
    assert r.exit_code == 0, r.output
    assert "NoColSAR" in r.output and "LR4ColSAR" in r.output
    assert (out_dir / "run.json").exists()
    assert (out_dir / "table.txt").exists()


def test_sweep_command(runner, dataset, tmp_path):
    out_dir = tmp_path / "sw"
    r = runner.invoke(main, ["sweep", "--axis", "bias", "--grid", "on,off",
                             "--train-manifest", str(dataset / "train" / "manifest.jsonl"),
                             "--test-manifest", str(dataset / "test" / "manifest.jsonl"),
                             "--out", str(out_dir)])
    assert r.exit_code == 0, r.output
    merged = json.loads((out_dir / "sweep.json").read_text())
    assert merged["grid"] == [True, False]


def test_gradcheck_command(runner):
    r = runner.invoke(main, ["gradcheck", "--seeds", "1"])
    assert r.exit_code == 0, r.output
    assert "all operators passed" in r.output


def test_eval_missing_prediction_fails_nonzero(runner, dataset, tmp_path):
    gt_dir = tmp_path / "gt"
    r = runner.invoke(main, ["synth-gt", "--manifest",
                             str(dataset / "train" / "manifest.jsonl"),
                             "--out", str(gt_dir)])
    assert r.exit_code == 0
    empty = tmp_path / "empty_pred"
    empty.mkdir()
    r = runner.invoke(main, ["eval", "--manifest", str(gt_dir / "manifest.jsonl"),
                             "--pred", str(empty), "--method", "x",
                             "--out", str(tmp_path / "r.json")])
    assert r.exit_code != 0
    assert "missing prediction" in r.output
