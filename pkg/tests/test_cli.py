import csv
import json
import os

import numpy as np
import pytest

from sotmram import cli, reporting
from sotmram.config import ConfigError, ExperimentConfig
from sotmram.data import FILES, IdxImages, IdxLabels


@pytest.fixture(scope="module")
def tiny_mnist(tmp_path_factory):
    """A 28x28, 10-class IDX dataset small enough for seconds-long CLI runs."""
    root = tmp_path_factory.mktemp("mnist")
    rng = np.random.default_rng(0)
    for split, n in (("train", 300), ("test", 60)):
        labels = rng.integers(10, size=n).astype(np.uint8)
        pixels = rng.integers(0, 40, (n, 28, 28)).astype(np.uint8)
        for i, lab in enumerate(labels):
            pixels[i, lab * 2:lab * 2 + 3, :] = 255
        prefix = "t10k" if split == "test" else "train"
        (root / f"{prefix}-images-idx3-ubyte").write_bytes(IdxImages(n, 28, 28, pixels).to_bytes())
        (root / f"{prefix}-labels-idx1-ubyte").write_bytes(IdxLabels(n, labels).to_bytes())
    return root


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def train_args(data, out, epochs=2, *extra):
    return ["train", "--data", data, "--out", out, "--epochs", epochs, "--set", "train.batch_size=50", *extra]


class TestConfig:
    def test_defaults_are_table_values(self):
        cfg = ExperimentConfig.from_mapping()
        p = cfg.device_params()
        assert p.ra_product == pytest.approx(1e-11, rel=1e-15)
        assert (p.mtj_length, p.mtj_width) == pytest.approx((50e-9, 30e-9))
        assert cfg["topology"] == [784, 16, 10]
        t = cfg.train_config()
        assert (t.learning_rate, t.epochs, t.batch_size, t.delta_b) == (0.01, 10, 100, 0.0)

    def test_coercion(self):
        cfg = ExperimentConfig.from_mapping({"topology": "784x32x10", "analog.nonideal": "off",
                                             "train.epochs": "3"})
        assert cfg["topology"] == [784, 32, 10]
        assert cfg["analog.nonideal"] is False and cfg["train.epochs"] == 3

    @pytest.mark.parametrize("bad", [{"nope": 1}, {"topology": [784]}, {"train.batch_size": 0},
                                     {"device.v0": -1}, {"train.binarization": "ternary"},
                                     {"analog.read_voltage": 0}, {"analog.nonideal": "maybe"}])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(bad)


class TestTrain:
    def test_artifacts(self, tiny_mnist, tmp_path, capsys):
        code, out, _ = run(train_args(tiny_mnist, tmp_path / "r"), capsys)
        assert code == 0
        summary = json.loads(out)
        assert 0 <= summary["student_test_acc"] <= 1
        rows = read_csv(tmp_path / "r" / "metrics_student.csv")
        assert rows[0] == ["epoch", "train_acc", "test_acc", "mean_loss"]
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert report["schema_version"] == reporting.SCHEMA_VERSION
        assert len(report["student_metrics"]["rows"]) == len(report["crossbar_metrics"]["rows"]) == 2
        cycles = report["cycles"]
        assert cycles["training_cycles"] == 2 * 26
        assert cycles["inference_cycles"] == 2 * (300 + 60)
        assert cycles["speedup_per_image"] == 1e5
        assert report["power_area"]["neuron_count"] == 26
        assert np.array(report["confusion"]["student"]).sum() == 60

    def test_zero_epochs(self, tiny_mnist, tmp_path, capsys):
        code, _, _ = run(train_args(tiny_mnist, tmp_path, 0), capsys)
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["student_metrics"]["rows"] == [] and report["crossbar_metrics"]["rows"] == []
        assert report["confusion"]["student"] is None
        assert read_csv(tmp_path / "metrics_crossbar.csv") == [["epoch", "train_acc", "test_acc", "mean_loss"]]

    def test_deterministic(self, tiny_mnist, tmp_path, capsys):
        for name in ("a", "b"):
            assert run(train_args(tiny_mnist, tmp_path / name, 2, "--seed", 3), capsys)[0] == 0
        for f in ("metrics_student.csv", "metrics_crossbar.csv", "checkpoint.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_config_echo_and_replay(self, tiny_mnist, tmp_path, capsys):
        cfg_path = tmp_path / "exp.json"
        cfg_text = '{"train.epochs": 2,\n "train.batch_size": 60, "seed": 9}\n'
        cfg_path.write_text(cfg_text)
        assert run(["train", "--config", cfg_path, "--data", tiny_mnist, "--out", tmp_path / "a"], capsys)[0] == 0
        assert (tmp_path / "a" / "config_echo.txt").read_text() == cfg_text
        assert json.loads((tmp_path / "a" / "report.json").read_text())["config_echo"] == cfg_text
        resolved = tmp_path / "a" / "resolved_config.json"
        assert run(["train", "--config", resolved, "--out", tmp_path / "b"], capsys)[0] == 0
        for f in ("metrics_student.csv", "metrics_crossbar.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_nonideal_flag(self, tiny_mnist, tmp_path, capsys):
        run(train_args(tiny_mnist, tmp_path, 1, "--nonideal", "off"), capsys)
        student = read_csv(tmp_path / "metrics_student.csv")[1]
        crossbar = read_csv(tmp_path / "metrics_crossbar.csv")[1]
        assert student[1:3] == crossbar[1:3]
        assert float(student[3]) == pytest.approx(float(crossbar[3]), rel=1e-9)

    def test_missing_data(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("SOTMRAM_DATA_DIR", raising=False)
        assert run(["train", "--data", tmp_path / "nothing", "--out", tmp_path], capsys)[0] == cli.EXIT_DATA
        code, _, err = run(["train", "--out", tmp_path], capsys)
        assert code == cli.EXIT_DATA and "SOTMRAM_DATA_DIR" in err

    def test_env_data_dir(self, tiny_mnist, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("SOTMRAM_DATA_DIR", str(tiny_mnist))
        assert run(["train", "--out", tmp_path, "--epochs", 1], capsys)[0] == 0

    def test_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(["train", "--config", bad], capsys)[0] == cli.EXIT_CONFIG
        assert run(["train", "--set", "unknown.key=1"], capsys)[0] == cli.EXIT_CONFIG
        assert run(["train", "--set", "novalue"], capsys)[0] == cli.EXIT_CONFIG

    def test_topology_data_mismatch(self, tiny_mnist, tmp_path, capsys):
        code, _, _ = run(train_args(tiny_mnist, tmp_path, 1, "--set", "topology=[100,10]"), capsys)
        assert code == cli.EXIT_CONFIG


@pytest.fixture(scope="module")
def run_dir(tiny_mnist, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main([str(a) for a in train_args(tiny_mnist, out, 1)]) == 0
    return out


class TestInfer:
    def test_single_image(self, tiny_mnist, run_dir, capsys):
        code, out, _ = run(["infer", "--checkpoint", run_dir / "checkpoint.json", "--data", tiny_mnist,
                            "--index", 3, "--nonideal", "off"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["cycles_crossbar"] == 1 and doc["cycles_gpu"] == 100000 and doc["speedup"] == 1e5
        assert doc["predicted"] == doc["oracle_predicted"]
        assert len(doc["activations"][0]) == 10

    def test_batch(self, tiny_mnist, run_dir, capsys):
        code, out, _ = run(["infer", "--checkpoint", run_dir / "checkpoint.json", "--data", tiny_mnist,
                            "--index", 0, 1, 2, 3, 4], capsys)
        doc = json.loads(out)
        assert doc["cycles_crossbar"] == 5 and doc["cycles_gpu"] == 5e5

    def test_idx_file(self, tiny_mnist, run_dir, capsys):
        code, out, _ = run(["infer", "--checkpoint", run_dir / "checkpoint.json",
                            "--image", tiny_mnist / FILES["test_images"]], capsys)
        assert code == 0 and json.loads(out)["cycles_crossbar"] == 60

    def test_corrupt_checkpoint(self, tmp_path, capsys):
        bad = tmp_path / "c.json"
        bad.write_text('{"format": "sotmram-checkpoint"')
        assert run(["infer", "--checkpoint", bad], capsys)[0] == cli.EXIT_DATA

    def test_bad_index(self, tiny_mnist, run_dir, capsys):
        code, _, _ = run(["infer", "--checkpoint", run_dir / "checkpoint.json", "--data", tiny_mnist,
                          "--index", 999], capsys)
        assert code == cli.EXIT_CONFIG


class TestExportVtc:
    def test_sweep(self, tmp_path, capsys):
        path = tmp_path / "vtc.csv"
        assert run(["export-vtc", "--csv", path], capsys)[0] == 0
        rows = read_csv(path)
        assert rows[0] == ["v_in", "v_out"]
        body = np.array(rows[1:], dtype=float)
        assert len(body) == 101
        assert np.all(np.diff(body[:, 1]) <= 0)
        assert body[50, 0] == pytest.approx(0.4) and body[50, 1] == pytest.approx(0.4, rel=1e-12)

    def test_slope_two_thirds(self, tmp_path, capsys):
        from sotmram.analog import NeuronCircuit, bare_inverter_vtc
        path = tmp_path / "fine.csv"
        run(["export-vtc", "--csv", path, "--start", 0.4 - 1e-6, "--stop", 0.4 + 1e-6, "--points", 3], capsys)
        body = np.array(read_csv(path)[1:], dtype=float)
        composite = (body[2, 1] - body[0, 1]) / (body[2, 0] - body[0, 0])
        n = NeuronCircuit()
        bare = (bare_inverter_vtc(n, 0.4 + 1e-6) - bare_inverter_vtc(n, 0.4 - 1e-6)) / 2e-6
        assert composite / bare == pytest.approx(2 / 3, abs=1e-6)

    @pytest.mark.parametrize("extra", [["--points", 1], ["--start", 0.8, "--stop", 0.1]])
    def test_invalid(self, tmp_path, capsys, extra):
        assert run(["export-vtc", "--csv", tmp_path / "x.csv", *extra], capsys)[0] == cli.EXIT_CONFIG


class TestSweep:
    def test_delta_b(self, tiny_mnist, tmp_path, capsys):
        code, _, _ = run(["sweep", "--param", "delta_b", "--values=-0.1,0,0.1", "--data", tiny_mnist,
                          "--out", tmp_path, "--epochs", 1, "--set", "train.batch_size=100"], capsys)
        assert code == 0
        rows = read_csv(tmp_path / "sweep.csv")
        assert rows[0] == ["parameter", "value", "student_test_acc", "crossbar_test_acc", "gap"]
        assert [r[1] for r in rows[1:]] == ["-0.1", "0.0", "0.1"]
        assert all(r[2] and r[3] for r in rows[1:])

    def test_single_value_equals_train(self, tiny_mnist, tmp_path, capsys):
        run(["sweep", "--param", "train.learning_rate", "--values", "0.01", "--data", tiny_mnist,
             "--out", tmp_path / "s", "--epochs", 1], capsys)
        run(["train", "--data", tiny_mnist, "--out", tmp_path / "t", "--epochs", 1], capsys)
        assert (tmp_path / "s" / "train.learning_rate_0" / "metrics_student.csv").read_bytes() == \
            (tmp_path / "t" / "metrics_student.csv").read_bytes()

    def test_unknown_param(self, tiny_mnist, tmp_path, capsys):
        code, _, _ = run(["sweep", "--param", "warp_factor", "--values", "1", "--data", tiny_mnist,
                          "--out", tmp_path], capsys)
        assert code == cli.EXIT_CONFIG


class TestReport:
    def test_topology(self, capsys):
        code, out, _ = run(["report"], capsys)
        doc = json.loads(out)
        assert code == 0
        assert doc["cycles"]["training_cycles"] == 26 and doc["cycles"]["inference_cycles"] == 1
        assert doc["cycles"]["speedup_per_image"] == 1e5
        assert doc["power_area"]["total_power"] == 26 * 64e-6

    def test_run_dir(self, tiny_mnist, tmp_path, capsys):
        run(train_args(tiny_mnist, tmp_path, 1), capsys)
        code, out, _ = run(["report", tmp_path], capsys)
        assert code == 0 and json.loads(out)["student_final_test_acc"] is not None

    def test_missing_run(self, tmp_path, capsys):
        assert run(["report", tmp_path / "none"], capsys)[0] == cli.EXIT_DATA


def test_atomic_write_leaves_no_partial(tmp_path, monkeypatch):
    target = tmp_path / "m.csv"

    def boom(src, dst):
        raise OSError("disk pulled")
    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        reporting.write_csv(target, ("a",), [(1,)])
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []
