import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionet import experiments as ex
from ionet.cli import main
from ionet.problems import EXPERIMENT_IDS
from ionet.training import Labels, read_history

SMALL = ["--set", "data.n_train=8", "--set", "data.n_test=3", "--set", "train.batch_functions=4",
         "--set", "train.n_residual=8", "--deterministic", "--no-figures"]


def _run(*argv):
    return main([str(a) for a in argv])


def test_list(capsys):
    assert _run("list") == 0
    names = capsys.readouterr().out.split()
    assert "ex1-pi-ionet" in names and "ex6-pi-ionet" in names


def test_unknown_experiment_is_usage_error(tmp_path, capsys):
    assert _run("reproduce", "ex9", "--out", tmp_path) == 2
    assert "unknown experiment" in capsys.readouterr().err


def test_train_without_data_exits_with_usage_error(tmp_path, capsys):
    assert _run("train", "--config", "ex1", "--out", tmp_path, "--quiet") == 2
    assert "run gen-data first" in capsys.readouterr().err


def test_every_registered_config_loads_and_round_trips():
    for name in ex.registered_configs():
        cfg = ex.load_config(name)
        again = ex.ExperimentConfig.from_ini(cfg.to_ini())
        assert again == cfg, name
    for exp in EXPERIMENT_IDS:
        assert ex.load_config(exp).experiment == exp


def test_data_regime_rejected_for_closed_form_examples():
    with pytest.raises(ex.ConfigError):
        ex.load_config("ex3", {"experiment.regime": "dd"})


def test_gen_data_counts_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert _run("gen-data", "--config", "ex1", "--out", out, "--deterministic") == 0
    records = set()
    for split in ("train", "test"):
        with open(a / "data" / f"{split}.jsonl") as fh:
            header = json.loads(fh.readline())
            records |= {(split, json.loads(line)["index"]) for line in fh}
        assert header["n_functions"] == {"train": 1000, "test": 100}[split]
    assert len(records) == 1100
    for f in ("train.jsonl", "test.jsonl", "test_labels.bin"):
        assert (a / "data" / f).read_bytes() == (b / "data" / f).read_bytes()


def test_labels_match_closed_form_record(tmp_path):
    _run("gen-data", "--config", "ex1", "--out", tmp_path, *SMALL)
    labels = ex._load_labels(tmp_path / "data" / "test_labels.bin")
    x = labels.points[:, 0]
    exact = np.where(labels.sides == 1, 1 - 2 * x, 2 - 2 * x)
    assert np.max(np.abs(labels.values[0] - exact)) < 1e-10


def test_train_smoke_and_schema(tmp_path):
    _run("gen-data", "--config", "ex1", "--out", tmp_path, *SMALL)
    assert _run("train", "--config", "ex1", "--out", tmp_path, "--iters", 100, "--quiet", *SMALL) == 0
    rows = read_history(tmp_path / "history.csv")
    assert len(rows) == 100
    assert [k for k in rows[0] if k.startswith("L_") and k != "L_data"] == ["L_r1", "L_r2", "L_GD", "L_GN", "L_b"]
    assert all(r["L_b"] > 0 for r in rows[:5])


def test_resume_continues_iteration_counter(tmp_path):
    base = ["--config", "ex1", "--iters", 60, "--set", "train.checkpoint_every=20", "--quiet", *SMALL]
    full, cut = tmp_path / "full", tmp_path / "cut"
    for out in (full, cut):
        _run("gen-data", "--out", out, *base)
    _run("train", "--out", full, *base)

    cfg = ex.load_config("ex1", {"train.epochs": "60", "train.checkpoint_every": "20",
                                 "data.n_train": "8", "data.n_test": "3",
                                 "train.batch_functions": "4", "train.n_residual": "8"})

    def interrupt(row):
        if row["iteration"] == 45:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        ex.cmd_train(cfg, cut, log=interrupt)
    assert len(read_history(cut / "history.csv")) == 40
    assert _run("train", "--out", cut, "--resume", *base) == 0
    rows = read_history(cut / "history.csv")
    assert [r["iteration"] for r in rows] == list(range(60))
    assert (cut / "history.csv").read_bytes() == (full / "history.csv").read_bytes()
    assert (cut / "model.ckpt").read_bytes() == (full / "model.ckpt").read_bytes()


def test_eval_outputs(tmp_path):
    assert _run("reproduce", "ex1", "--out", tmp_path, "--iters", 5, "--quiet", *SMALL) in (0, 1)
    metrics = (tmp_path / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "function,rel_l2" and len(metrics) == 1 + 3
    assert all(float(line.split(",")[1]) >= 0 for line in metrics[1:])
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[1].startswith("ex1-pi-ionet,ex1,ionet,pi,3,")
    fields = summary[1].split(",")
    assert float(fields[5]) >= 0 and float(fields[6]) >= 0
    assert (tmp_path / "pointwise.csv").exists()


def test_eval_against_own_predictions_is_zero(tmp_path):
    _run("reproduce", "ex1", "--out", tmp_path, "--iters", 3, "--quiet", *SMALL)
    cfg = ex.ExperimentConfig.from_ini((tmp_path / "config.ini").read_text())
    p = ex._paths(tmp_path)
    model, _, _, _ = ex.load_checkpoint(p["model"])
    _, fs = ex._load_split(cfg, p, "test")
    labels = ex._load_labels(p["test_labels"])
    pred = model.predict(fs.branch_inputs(np.arange(len(fs))), labels.points, labels.sides)
    ex._save_labels(p["test_labels"], Labels(labels.points, labels.sides, pred), {})
    assert ex.cmd_eval(cfg, tmp_path, figures=False)["mean"] == 0.0


def test_ex3_eval_uses_exact_solution(tmp_path):
    _run("gen-data", "--config", "ex3", "--out", tmp_path, "--set", "data.n_train=2")
    labels = ex._load_labels(tmp_path / "data" / "test_labels.bin")
    r2 = np.sum(labels.points ** 2, axis=1)
    expected = np.where(labels.sides == 1, 1.0, 2.0) / (1 + 10 * r2)
    np.testing.assert_allclose(labels.values[0], expected, rtol=1e-15)
    assert labels.points.shape == (101 * 101, 2)


def test_ex6_uses_monte_carlo_points(tmp_path):
    _run("gen-data", "--config", "ex6", "--out", tmp_path, "--set", "data.n_train=2")
    labels = ex._load_labels(tmp_path / "data" / "test_labels.bin")
    assert labels.points.shape == (10_000, 6)
    assert np.all(np.linalg.norm(labels.points, axis=1) <= 0.6)


def test_figures_rendered(tmp_path):
    args = [a for a in SMALL if a != "--no-figures"]
    _run("reproduce", "ex1", "--out", tmp_path, "--iters", 3, "--quiet", *args)
    assert (tmp_path / "figures" / "solutions.png").stat().st_size > 0
    assert (tmp_path / "figures" / "history.png").stat().st_size > 0


def test_commands_write_only_inside_output_dir(tmp_path):
    work, out = tmp_path / "work", tmp_path / "work" / "run"
    work.mkdir()
    cwd = os.getcwd()
    os.chdir(work)
    try:
        _run("reproduce", "ex1", "--out", "run", "--iters", 3, "--quiet", *SMALL)
    finally:
        os.chdir(cwd)
    outside = [p for p in work.rglob("*") if out not in p.parents and p != out]
    assert outside == []


def test_train_without_data_is_usage_error(tmp_path):
    with pytest.raises(ex.UsageError):
        ex.cmd_train(ex.load_config("ex1"), tmp_path)


def test_bad_override(tmp_path, capsys):
    assert _run("gen-data", "--config", "ex1", "--out", tmp_path, "--set", "nodots=1") == 2


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(EXPERIMENT_IDS), st.sampled_from(["ionet", "deeponet"]), st.integers(1, 5000),
       st.integers(1, 500), st.integers(1, 8), st.integers(1, 200), st.floats(1e-5, 1e-1),
       st.booleans(), st.floats(0, 100), st.one_of(st.none(), st.floats(1e-4, 1.0)))
def test_config_round_trip(exp, kind, n_train, epochs, depth, width, lr, resample, lam, thr):
    from ionet.losses import LossWeights
    from ionet.training import TrainConfig
    cfg = ex.ExperimentConfig(name="t", experiment=exp, model=kind, n_train=n_train, depth=depth, width=width,
                              threshold=thr, scales=[0.5, 2.0], train=TrainConfig(epochs=epochs, lr=lr,
                                                                                  resample=resample),
                              weights=LossWeights(interface=lam))
    assert ex.ExperimentConfig.from_ini(cfg.to_ini()) == cfg
