import json

import numpy as np
import pytest
from click.testing import CliRunner

from flowrep.cli import main


def write_config(tmp_path, **overrides):
    cfg = {
        "system": "toy-fields",
        "seed": 0,
        "out": str(tmp_path / "runs"),
        "params": {"n": 60},
        "model": {"geometry_aware": True, "m": 2, "p": 2, "k": 8,
                  "hidden_channels": 8, "out_channels": 3, "epochs": 2},
        "compare": {"subsample": 50, "mds_dim": 2, "n_clusters": 2},
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One generate + train run shared by the downstream-command tests."""
    tmp_path = tmp_path_factory.mktemp("pipeline")
    config, cfg = write_config(tmp_path)
    runner = CliRunner()
    r = runner.invoke(main, ["generate", "--config", str(config)])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, ["train", "--config", str(config)])
    assert r.exit_code == 0, r.output
    return tmp_path, config, cfg


class TestGenerate:
    def test_writes_dataset_and_manifest(self, tmp_path):
        config, cfg = write_config(tmp_path)
        r = CliRunner().invoke(main, ["generate", "--config", str(config)])
        assert r.exit_code == 0, r.output
        data = tmp_path / "runs" / "data"
        assert (data / "dataset.csv").exists()
        manifest = json.loads((data / "manifest.json").read_text())
        assert len(manifest["conditions"]) == 4
        assert manifest["generator"]["system"] == "toy-fields"

    def test_same_seed_byte_identical(self, tmp_path):
        config, _ = write_config(tmp_path)
        runner = CliRunner()
        assert runner.invoke(main, ["generate", "--config", str(config)],
                             ).exit_code == 0
        first = (tmp_path / "runs" / "data" / "dataset.csv").read_bytes()
        assert runner.invoke(main, ["generate", "--config", str(config)],
                             ).exit_code == 0
        again = (tmp_path / "runs" / "data" / "dataset.csv").read_bytes()
        assert first == again

    def test_unknown_system_exit_2(self, tmp_path):
        config, _ = write_config(tmp_path, system="pendulum")
        r = CliRunner().invoke(main, ["generate", "--config", str(config)])
        assert r.exit_code == 2

    def test_missing_config_exit_2(self, tmp_path):
        r = CliRunner().invoke(main, ["generate", "--config",
                                      str(tmp_path / "nope.json")])
        assert r.exit_code == 2

    def test_malformed_json_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        r = CliRunner().invoke(main, ["generate", "--config", str(bad)])
        assert r.exit_code == 2


class TestTrain:
    def test_artifacts_written(self, pipeline):
        tmp_path, _, _ = pipeline
        run = tmp_path / "runs" / "run"
        assert (run / "checkpoint.json").exists()
        assert (run / "embeddings.csv").exists()
        curve = (run / "training_curve.csv").read_text().splitlines()
        assert curve[0] == "epoch,train_loss,val_loss"
        assert len(curve) == 3  # header + 2 epochs

    def test_mode_recorded_in_checkpoint(self, pipeline):
        tmp_path, _, _ = pipeline
        doc = json.loads(
            (tmp_path / "runs" / "run" / "checkpoint.json").read_text())
        assert doc["meta"]["geometry_aware"] is True
        assert doc["config"]["geometry_aware"] is True

    def test_system_mismatch_exit_2(self, pipeline, tmp_path):
        _, _, base = pipeline
        wrong = dict(base, system="vanderpol")
        path = tmp_path / "wrong.json"
        path.write_text(json.dumps(wrong))
        r = CliRunner().invoke(main, ["train", "--config", str(path)])
        assert r.exit_code == 2


class TestCompare:
    def test_outputs_and_summary(self, pipeline):
        tmp_path, config, _ = pipeline
        r = CliRunner().invoke(main, ["compare", "--config", str(config)])
        assert r.exit_code == 0, r.output
        run = tmp_path / "runs" / "run"
        D = np.genfromtxt(run / "distance.csv", delimiter=",", skip_header=1)
        assert D.shape == (4, 5)  # label column + 4 distance columns
        mat = D[:, 1:]
        assert np.allclose(mat, mat.T, atol=1e-12)
        assert np.allclose(np.diag(mat), 0.0)
        summary = json.loads((run / "compare_summary.json").read_text())
        assert summary["n_conditions"] == 4
        mds = np.genfromtxt(run / "mds.csv", delimiter=",", skip_header=1)
        assert mds.shape == (4, 3)

    def test_mds_dim_flag(self, pipeline):
        tmp_path, config, _ = pipeline
        r = CliRunner().invoke(main, ["compare", "--config", str(config),
                                      "--mds-dim", "3"])
        assert r.exit_code == 0, r.output
        mds = np.genfromtxt(tmp_path / "runs" / "run" / "mds.csv",
                            delimiter=",", skip_header=1)
        assert mds.shape == (4, 4)


class TestEmbed:
    def test_matches_training_embeddings(self, pipeline, tmp_path):
        src, config, base = pipeline
        trained = np.genfromtxt(src / "runs" / "run" / "embeddings.csv",
                                delimiter=",", skip_header=1)
        r = CliRunner().invoke(main, [
            "embed", "--config", str(config),
            "--checkpoint", str(src / "runs" / "run" / "checkpoint.json"),
            "--data", str(src / "runs" / "data"),
            "--out", str(tmp_path / "again")])
        assert r.exit_code == 0, r.output
        again = np.genfromtxt(tmp_path / "again" / "run" / "embeddings.csv",
                              delimiter=",", skip_header=1)
        assert np.allclose(trained, again, atol=1e-12)


class TestDecode:
    def test_knn_metric_echoed(self, pipeline, tmp_path):
        src, config, _ = pipeline
        targets = tmp_path / "targets.csv"
        targets.write_text("condition_id,y\n0,0.0\n1,1.0\n2,2.0\n3,3.0\n")
        r = CliRunner().invoke(main, ["decode", "--config", str(config),
                                      "--targets", str(targets),
                                      "--method", "knn"])
        assert r.exit_code == 0, r.output
        report = json.loads(
            (src / "runs" / "run" / "decode_report.json").read_text())
        assert report["metric"] == "cosine"
        assert len(report["fold_r2"]) == 10

    def test_ole_folds(self, pipeline, tmp_path):
        src, config, _ = pipeline
        targets = tmp_path / "t2.csv"
        targets.write_text("condition_id,y\n0,-1.0\n1,1.0\n2,-2.0\n3,2.0\n")
        r = CliRunner().invoke(main, ["decode", "--config", str(config),
                                      "--targets", str(targets)])
        assert r.exit_code == 0, r.output
        report = json.loads(
            (src / "runs" / "run" / "decode_report.json").read_text())
        assert report["method"] == "ole"
        assert len(report["fold_r2"]) == 10

    def test_malformed_targets_exit_2(self, pipeline, tmp_path):
        _, config, _ = pipeline
        targets = tmp_path / "bad_targets.csv"
        targets.write_text("foo,bar\n1,2\n")
        r = CliRunner().invoke(main, ["decode", "--config", str(config),
                                      "--targets", str(targets)])
        assert r.exit_code == 2

    def test_inconsistent_metric_exit_2(self, pipeline, tmp_path):
        _, config, _ = pipeline
        targets = tmp_path / "t3.csv"
        targets.write_text("condition_id,y\n0,0\n1,1\n2,2\n3,3\n")
        r = CliRunner().invoke(main, ["decode", "--config", str(config),
                                      "--targets", str(targets),
                                      "--method", "knn",
                                      "--metric", "euclidean"])
        assert r.exit_code == 2


class TestVerify:
    def test_clean_run_verifies(self, pipeline):
        tmp_path, config, _ = pipeline
        CliRunner().invoke(main, ["compare", "--config", str(config)])
        r = CliRunner().invoke(main, ["verify", str(tmp_path / "runs")])
        assert r.exit_code == 0, r.output
        assert "all hashes consistent" in r.output

    def test_tampered_manifest_fails(self, pipeline, tmp_path):
        src, config, cfg = pipeline
        out = tmp_path / "tamper"
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(dict(cfg, out=str(out))))
        r = CliRunner().invoke(main, ["generate", "--config", str(path)])
        assert r.exit_code == 0, r.output
        mpath = out / "data" / "manifest.json"
        doc = json.loads(mpath.read_text())
        doc["generator"]["seed"] = 999
        mpath.write_text(json.dumps(doc))
        r = CliRunner().invoke(main, ["verify", str(out)])
        assert r.exit_code == 1
