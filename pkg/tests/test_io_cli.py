import subprocess
import sys

import numpy as np
import pytest

from tensorcatch.classifier import decision_scores, fit_catch
from tensorcatch.cli import EXIT_DATA, EXIT_IO, EXIT_OK, main
from tensorcatch.io import (
    load_dataset,
    load_model,
    read_matrix_csv,
    save_dataset,
    save_model,
    write_predictions,
)
from tensorcatch.simulation import CovSpec, SimulationSpec, generate
from tensorcatch.solver import SolverConfig
from tensorcatch.tensor import write_ctb


def tiny_spec(covariates=True):
    extra = {}
    if covariates:
        extra = dict(phi=np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]]),
                     alpha_box=((1, 2), (1, 2, 3), (1,)), alpha_value=1.0)
    return SimulationSpec(
        name="tiny", shape=(4, 5), K=3, class_sizes=(20, 20, 20),
        covs=(CovSpec("AR", 4, 0.5), CovSpec("identity", 5)),
        placements=((((1, 2), (1,)), (1.0, -1.0)),), n_test=40, **extra,
    )


@pytest.fixture
def files(tmp_path):
    train, val, test = generate(tiny_spec(), 3)
    paths = {}
    for name, data in (("train", train), ("val", val), ("test", test)):
        x, y, u = (tmp_path / f"{name}_{s}" for s in ("x.ctb", "y.csv", "u.csv"))
        save_dataset(data, x, y, u)
        paths[name] = (str(x), str(y), str(u))
    return tmp_path, paths


class TestFiles:
    def test_dataset_roundtrip(self, files):
        _, paths = files
        X, Y, U = load_dataset(*paths["train"][:2], paths["train"][2])
        assert X.shape == (4, 5, 60) and Y.shape == (60,) and U.shape == (60, 2)

    def test_inconsistent_n(self, files, tmp_path):
        _, paths = files
        bad = tmp_path / "y_short.csv"
        bad.write_text("1\n2\n")
        with pytest.raises(ValueError, match="labels"):
            load_dataset(paths["train"][0], bad)

    def test_model_roundtrip(self, files, tmp_path):
        _, paths = files
        from tensorcatch.estimation import LabeledDataset

        X, Y, U = load_dataset(*paths["train"])
        fit = fit_catch(LabeledDataset(X, Y, U), SolverConfig(n_lambda=5))
        model = fit.model(3)
        save_model(model, tmp_path / "m")
        back = load_model(tmp_path / "m")
        assert back.lam == model.lam
        Xt, _, Ut = load_dataset(*paths["test"])
        assert np.array_equal(decision_scores(back, Xt, Ut), decision_scores(model, Xt, Ut))
        names = sorted(p.name for p in (tmp_path / "m").iterdir())
        for expected in ("priors.csv", "phi.csv", "psi.csv", "gamma.csv", "alpha.ctb", "mu_1.ctb",
                         "mu_3.ctb", "sigma_1.csv", "sigma_2.csv", "B_2.ctb", "B_3.ctb", "intercepts.csv"):
            assert expected in names

    def test_predictions_header_only(self, tmp_path):
        path = tmp_path / "p.csv"
        write_predictions(path, np.zeros(0), np.zeros((0, 3)))
        assert path.read_text() == "index,label,score_1,score_2,score_3\n"

    def test_matrix_csv_ragged(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(ValueError):
            read_matrix_csv(path)

    def test_missing_model_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model(tmp_path / "nothing")


def run(*argv):
    return main([str(a) for a in argv])


class TestCommands:
    def test_fit_and_predict(self, files, capsys):
        tmp, p = files
        out = tmp / "model"
        code = run("fit", "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
                   "--val-x", p["val"][0], "--val-y", p["val"][1], "--val-u", p["val"][2],
                   "--out", out, "--n-lambda", 10)
        assert code == EXIT_OK
        summary = (out / "path_summary.csv").read_text().splitlines()
        assert summary[0] == "lambda,n_selected,objective,sweeps,val_error"
        assert len(summary) == 11
        assert summary[1].split(",")[1] == "0"
        code = run("predict", "--model", out, "--x", p["test"][0], "--u", p["test"][2],
                   "--y", p["test"][1], "--out", tmp / "pred.csv")
        assert code == EXIT_OK
        assert "error rate" in capsys.readouterr().out
        lines = (tmp / "pred.csv").read_text().splitlines()
        assert lines[0] == "index,label,score_1,score_2,score_3" and len(lines) == 41

    def test_training_error_below_validation(self, files, capsys):
        tmp, p = files
        out = tmp / "small"
        run("fit", "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
            "--val-x", p["val"][0], "--val-y", p["val"][1], "--val-u", p["val"][2],
            "--out", out, "--n-lambda", 10, "--select", "last")
        last = (out / "path_summary.csv").read_text().splitlines()[-1]
        val_err = float(last.split(",")[-1])
        capsys.readouterr()
        run("predict", "--model", out, "--x", p["train"][0], "--u", p["train"][2],
            "--y", p["train"][1], "--out", tmp / "train_pred.csv")
        train_err = float(capsys.readouterr().out.split(":")[1])
        assert train_err <= val_err

    def test_refit_is_byte_identical(self, files):
        tmp, p = files
        for name in ("a", "b"):
            assert run("fit", "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
                       "--out", tmp / name, "--n-lambda", 6) == EXIT_OK
        for f in (tmp / "a").iterdir():
            assert f.read_bytes() == (tmp / "b" / f.name).read_bytes(), f.name

    def test_missing_class(self, files, tmp_path, capsys):
        _, p = files
        x = tmp_path / "x.ctb"
        write_ctb(x, np.zeros((2, 2, 4)))
        y = tmp_path / "y.csv"
        y.write_text("1\n1\n3\n3\n")
        code = run("fit", "--x", x, "--y", y, "--out", tmp_path / "m")
        assert code == EXIT_DATA
        assert "class 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("fit", "--x", tmp_path / "none.ctb", "--y", tmp_path / "none.csv",
                   "--out", tmp_path / "m") == EXIT_IO

    def test_predict_wrong_shape(self, files, tmp_path):
        tmp, p = files
        run("fit", "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
            "--out", tmp / "m", "--n-lambda", 4)
        x = tmp_path / "bad.ctb"
        write_ctb(x, np.zeros((3, 5, 2)))
        assert run("predict", "--model", tmp / "m", "--x", x, "--u", p["test"][2],
                   "--out", tmp / "p.csv") == EXIT_DATA

    def test_predict_covariate_mismatch(self, files):
        tmp, p = files
        run("fit", "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
            "--out", tmp / "m", "--n-lambda", 4)
        assert run("predict", "--model", tmp / "m", "--x", p["test"][0],
                   "--out", tmp / "p.csv") == EXIT_DATA

    def test_predict_empty(self, files, tmp_path):
        tmp, p = files
        run("fit", "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
            "--out", tmp / "m", "--n-lambda", 4)
        x = tmp_path / "empty.ctb"
        write_ctb(x, np.zeros((4, 5, 0)))
        u = tmp_path / "empty_u.csv"
        u.write_text("")
        assert run("predict", "--model", tmp / "m", "--x", x, "--u", u, "--out", tmp / "e.csv") == EXIT_OK
        assert (tmp / "e.csv").read_text() == "index,label,score_1,score_2,score_3\n"

    def test_cv(self, files, capsys):
        tmp, p = files
        code = run("cv", "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
                   "--folds", 3, "--n-lambda", 6, "--out", tmp / "cv.csv")
        assert code == EXIT_OK
        assert "selected lambda" in capsys.readouterr().out
        assert (tmp / "cv.csv").read_text().startswith("lambda,mean_error,se\n")

    def test_config_file_and_precedence(self, files):
        tmp, p = files
        cfg = tmp / "run.cfg"
        cfg.write_text("n-lambda = 5\nmax_sweeps = 100\n")
        run("fit", "--config", cfg, "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
            "--out", tmp / "c1")
        assert len((tmp / "c1" / "path_summary.csv").read_text().splitlines()) == 6
        run("fit", "--config", cfg, "--x", p["train"][0], "--y", p["train"][1], "--u", p["train"][2],
            "--out", tmp / "c2", "--n-lambda", 3)
        assert len((tmp / "c2" / "path_summary.csv").read_text().splitlines()) == 4

    def test_example1(self, capsys):
        assert run("example1", "--alpha", "0,1,2,4,8") == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "alpha,R_U,R_X11_U,R_X11,R_X"
        rows = [list(map(float, l.split(","))) for l in lines[1:]]
        assert all(abs(r[2] - 0.158655) < 1e-6 for r in rows)
        assert rows[0][3] == pytest.approx(0.158655, abs=1e-6)

    def test_simulate_unknown_model(self, capsys):
        assert run("simulate", "--model", "Z1", "--seed", 1) == EXIT_DATA
        assert "M1" in capsys.readouterr().err

    def test_simulate_needs_seed(self):
        assert run("simulate", "--model", "M1") != EXIT_OK

    def test_simulate_spec_file(self, tmp_path):
        spec = tmp_path / "exp.txt"
        spec.write_text("model = M1\nn_test = 400\n")
        out = tmp_path / "res.csv"
        assert run("simulate", "--spec", spec, "--methods", "bayes,catch", "--replicates", 1,
                   "--seed", 5, "--out", out) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "method,model,mean,se,tpr,fpr"
        assert lines[1].startswith("bayes,M1,") and lines[1].endswith(",,")
        assert lines[2].startswith("catch,M1,")

    def test_threads_match_default(self, tmp_path):
        outs = []
        for threads in (1, 2):
            out = tmp_path / f"r{threads}.csv"
            run("simulate", "--model", "M1", "--methods", "catch", "--replicates", 2, "--seed", 9,
                "--n-test", 300, "--threads", threads, "--out", out)
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "tensorcatch.cli", "example1", "--alpha", "1"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("alpha,")
