import csv
import subprocess
import sys

import numpy as np
import pytest

from hamnet.cli import main
from hamnet.data import load_csv
from hamnet.layers import NetworkParams, OutputHead
from hamnet.modelio import dump_model, load_model, save_model

SMALL = "train_size = 400\ntest_size = 400\nbatch_size = 50\n"


def _spec(tmp_path, text, name="e.spec"):
    path = tmp_path / name
    path.write_text(SMALL + text)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gen_writes_requested_rows(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["gen", "--samples", "4", "--seed", "3", "--out", str(out)]) == 0
    d = load_csv(out)
    assert len(d) == 4 and d.n == 2
    first = out.read_bytes()
    assert main(["gen", "--samples", "4", "--seed", "3", "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_gen_usage_errors(tmp_path):
    assert main(["gen", "--dataset", "spiral", "--out", str(tmp_path / "x.csv")]) == 1
    assert main(["gen"]) == 1
    assert main(["frobnicate"]) == 1


def test_zero_epochs_store_initialization(tmp_path):
    spec = _spec(tmp_path, "arch = H2\nlayers = 3\nepochs = 0\nseed = 9\n")
    assert main(["train", "--spec", spec, "--out", str(tmp_path)]) == 0
    init = NetworkParams.initialize("H2", 4, 3, 0.2 / 3, 9)
    raw = (tmp_path / "model.hdnn").read_bytes()
    assert raw == dump_model(init, OutputHead.zeros(4, 2))
    assert _rows(tmp_path / "history.csv") == [["epoch", "iter", "loss", "train_acc"]]


def test_train_then_eval_reproduces_test_accuracy(tmp_path, capsys):
    spec = _spec(tmp_path, "layers = 2\nepochs = 2\ntest_out = test.csv\n")
    assert main(["train", "--spec", spec, "--out", str(tmp_path)]) == 0
    reported = [l for l in capsys.readouterr().out.splitlines() if l.startswith("test accuracy")][0]
    pred = tmp_path / "pred.csv"
    assert main(["eval", "--model", str(tmp_path / "model.hdnn"), "--data", str(tmp_path / "test.csv"),
                 "--out", str(pred)]) == 0
    printed = capsys.readouterr().out.strip()
    assert printed.split(": ")[1] == reported.split(": ")[1]
    rows = _rows(pred)
    assert rows[0] == ["index", "label", "pred", "p0", "p1"]
    recount = np.mean([r[1] == r[2] for r in rows[1:]])
    assert f"{recount:.4f}" == printed.split(": ")[1]
    assert len(rows) == 401


def test_eval_rejects_corrupted_model(tmp_path, capsys):
    (tmp_path / "bad.hdnn").write_bytes(b"HDNX1" + bytes(64))
    (tmp_path / "d.csv").write_text("x1,x2,label\n0,0,0\n")
    assert main(["eval", "--model", str(tmp_path / "bad.hdnn"), "--data", str(tmp_path / "d.csv")]) == 1
    assert "magic" in capsys.readouterr().err


def test_eval_dimension_mismatch(tmp_path, capsys):
    save_model(tmp_path / "m", NetworkParams.initialize("H1", 2, 1, 0.1, 0), OutputHead.zeros(2, 2))
    (tmp_path / "d.csv").write_text("x1,x2,x3,label\n0,0,0,0\n")
    assert main(["eval", "--model", str(tmp_path / "m"), "--data", str(tmp_path / "d.csv")]) == 1
    assert "dimension mismatch" in capsys.readouterr().err


def test_diagnose_gradnorms_on_zero_model(tmp_path):
    p = NetworkParams("H1", 4, 0.1, [np.zeros((4, 4))] * 25, [np.zeros(4)] * 25)
    save_model(tmp_path / "m", p, OutputHead.zeros(4, 2))
    out = tmp_path / "g.csv"
    assert main(["diagnose", "--model", str(tmp_path / "m"), "--mode", "gradnorms", "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["iteration", "layer", "norm"]
    assert [r[1] for r in rows[1:]] == ["0", "10", "20", "24"]
    assert all(float(r[2]) == 1.0 for r in rows[1:])


@pytest.mark.parametrize("variant", ["H1", "H2"])
def test_diagnose_spectrum_and_richardson(tmp_path, variant):
    save_model(tmp_path / "m", NetworkParams.initialize(variant, 4, 3, 0.3, 1), OutputHead.zeros(4, 2))
    spec_out, lem_out = tmp_path / "s.csv", tmp_path / "l.csv"
    assert main(["diagnose", "--model", str(tmp_path / "m"), "--mode", "spectrum", "--out", str(spec_out)]) == 0
    rows = _rows(spec_out)
    assert rows[0] == ["case", "max_re_lambda", "skew_residual"] and len(rows) == 1 + 3 * 8
    assert all(float(r[1]) < 1e-8 and float(r[2]) < 1e-9 for r in rows[1:])
    assert main(["diagnose", "--model", str(tmp_path / "m"), "--mode", "lemma1", "--out", str(lem_out)]) == 0
    rows = _rows(lem_out)
    assert rows[0] == ["steps", "h", "error", "ratio"]
    assert all(1.8 < float(r[3]) < 2.2 for r in rows[2:])


def test_diagnose_spectrum_needs_hamiltonian_model(tmp_path):
    save_model(tmp_path / "m", NetworkParams.initialize("MS1", 4, 2, 0.3, 1), OutputHead.zeros(4, 2))
    assert main(["diagnose", "--model", str(tmp_path / "m"), "--mode", "spectrum",
                 "--out", str(tmp_path / "s.csv")]) == 1
    assert main(["diagnose", "--model", str(tmp_path / "m"), "--mode", "nonsense",
                 "--out", str(tmp_path / "s.csv")]) == 1


def test_grid_rows_and_parameter_counts(tmp_path):
    spec = _spec(tmp_path, "grid_archs = MS1, MS2, MS3, H1, H2\ngrid_layers = 1\nepochs = 1\n")
    out = tmp_path / "grid.csv"
    assert main(["grid", "--spec", spec, "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["arch", "layers", "test_acc", "params_per_layer"]
    # nf = 4: nf^2/4 + nf, (nf^2 + nf)/2, nf^2/2 + nf, nf^2 + nf, nf^2 + nf
    assert [(r[0], r[3]) for r in rows[1:]] == [("MS1", "8"), ("MS2", "10"), ("MS3", "12"),
                                               ("H1", "20"), ("H2", "20")]


def test_empty_grid_is_header_only(tmp_path):
    out = tmp_path / "grid.csv"
    assert main(["grid", "--spec", _spec(tmp_path, ""), "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["arch,layers,test_acc,params_per_layer"]


def test_grid_keeps_partial_results(tmp_path):
    spec = _spec(tmp_path, "h = 1e308\ngrid_layers = 0, 2\nepochs = 1\n")
    out = tmp_path / "grid.csv"
    assert main(["grid", "--spec", spec, "--out", str(out)]) == 2
    rows = _rows(out)
    assert len(rows) == 3 and rows[1][1] == "0" and float(rows[1][2]) > 0
    assert rows[2][2] == "nan"


def test_numerical_failure_exit_code(tmp_path, capsys):
    spec = _spec(tmp_path, "h = 1e308\nlayers = 2\nepochs = 1\n")
    assert main(["train", "--spec", spec, "--out", str(tmp_path)]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_spec_error_exit_code(tmp_path, capsys):
    assert main(["train", "--spec", _spec(tmp_path, "layers = x\n")]) == 1
    assert "e.spec:4:" in capsys.readouterr().err
    assert main(["train"]) == 1


def test_thread_env_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("HAMNET_THREADS", "zero")
    assert main(["gen", "--samples", "4", "--out", str(tmp_path / "d.csv")]) == 1
    monkeypatch.setenv("HAMNET_THREADS", "1")
    assert main(["gen", "--samples", "4", "--out", str(tmp_path / "d.csv")]) == 0


def test_seed_flag_controls_determinism(tmp_path):
    spec = _spec(tmp_path, "layers = 2\nepochs = 1\n")
    outs = []
    for i, seed in enumerate([5, 5, 6]):
        d = tmp_path / f"run{i}"
        assert main(["train", "--spec", spec, "--seed", str(seed), "--out", str(d)]) == 0
        outs.append((d / "model.hdnn").read_bytes())
    assert outs[0] == outs[1] != outs[2]


def test_console_script_runs(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hamnet.cli", "gen", "--samples", "2",
                        "--out", str(tmp_path / "d.csv")], capture_output=True, text=True)
    assert r.returncode == 0 and load_model is not None
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 3


def test_mnist_pipeline_on_idx_directory(tmp_path):
    from hamnet.data import Dataset, dataset_to_idx
    r = np.random.default_rng(0)
    for split, names, count in (("train", ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"), 40),
                                ("test", ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"), 20)):
        y = np.arange(count) % 3
        X = r.uniform(0, 0.3, (count, 784))
        X[:, :100] += 0.2 * y[:, None]
        img, lab = dataset_to_idx(Dataset(X, y, 10))
        (tmp_path / names[0]).write_bytes(img)
        (tmp_path / names[1]).write_bytes(lab)
    spec = tmp_path / "m.spec"
    spec.write_text(f"dataset = mnist\nmnist_dir = {tmp_path}\nlayers = 1\nh = 0.05\nepochs = 1\n"
                    "batch_size = 20\ntrain_subset = 30\ninner_head_iters = 0\n")
    assert main(["train", "--spec", str(spec), "--out", str(tmp_path / "run")]) == 0
    params, head = load_model(tmp_path / "run" / "model.hdnn")
    assert params.variant == "H2" and head.M == 10
    pred = tmp_path / "pred.csv"
    assert main(["eval", "--model", str(tmp_path / "run" / "model.hdnn"), "--data", str(tmp_path),
                 "--out", str(pred)]) == 0
    rows = _rows(pred)
    assert len(rows) == 21 and rows[0][3:] == [f"p{k}" for k in range(10)]
    grid = tmp_path / "g.spec"
    grid.write_text(spec.read_text() + "grid_archs = MS1, H2\ngrid_layers = 0, 1\n")
    assert main(["grid", "--spec", str(grid), "--out", str(tmp_path / "grid.csv")]) == 0
    rows = _rows(tmp_path / "grid.csv")
    assert [(r[0], r[1], r[3]) for r in rows[1:]] == [("MS1", "0", "152"), ("MS1", "1", "152"),
                                                     ("H2", "0", "584"), ("H2", "1", "584")]
