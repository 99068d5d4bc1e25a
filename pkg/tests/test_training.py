import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionet import problems as P
from ionet import training as T
from ionet.autodiff import ContractError, ParamStore
from ionet.losses import ConfigError, LossWeights
from ionet.networks import ModelConfig, build_model
from ionet.training import AdamState, TrainConfig, adam_step, lr_at


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_functions=0)
    with pytest.raises(ConfigError):
        TrainConfig(regime="other")
    assert TrainConfig(epochs=50).decay_interval == 1


def test_zero_gradient_leaves_params():
    p = ParamStore({"w": np.array([1.0, -2.0])})
    s = AdamState.zeros_like(p)
    adam_step(p, {"w": np.zeros(2)}, s, 1e-3)
    assert np.array_equal(p["w"], [1.0, -2.0]) and s.step == 1


def test_first_step():
    p = ParamStore({"w": np.array(0.0)})
    adam_step(p, {"w": np.array(1.0)}, AdamState.zeros_like(p), 1e-3)
    assert p["w"] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_moments_are_stateful():
    # one step with 2g is not the same as two steps with g
    a = ParamStore({"w": np.array(0.0)})
    sa = AdamState.zeros_like(a)
    adam_step(a, {"w": np.array(2.0)}, sa, 1e-3)
    b = ParamStore({"w": np.array(0.0)})
    sb = AdamState.zeros_like(b)
    for _ in range(2):
        adam_step(b, {"w": np.array(1.0)}, sb, 1e-3)
    assert sa.step == 1 and sb.step == 2
    assert b["w"] == pytest.approx(2 * a["w"])
    assert sb.m["w"] != sa.m["w"]


def test_shape_mismatch():
    p = ParamStore({"w": np.zeros(3)})
    with pytest.raises(ContractError):
        adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like(p), 1e-3)
    with pytest.raises(ContractError):
        adam_step(p, {"v": np.zeros(3)}, AdamState.zeros_like(p), 1e-3)


def test_lr_schedule():
    cfg = TrainConfig(epochs=10_000, lr=1e-3)
    assert lr_at(cfg, 0) == 1e-3
    assert lr_at(cfg, 100) == pytest.approx(0.95e-3)
    assert lr_at(cfg, 10_000) == pytest.approx(5.92e-6, rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(100, 50_000))
def test_schedule_has_100_plateaus(epochs):
    cfg = TrainConfig(epochs=epochs)
    values = {lr_at(cfg, it) for it in range(0, epochs, max(1, cfg.decay_interval // 2))}
    if epochs % 100 == 0:
        assert len(values) == 100
    assert len(values) >= 100


def test_quadratic_converges():
    cfg = TrainConfig(epochs=2000, lr=1e-2)
    p = ParamStore({"w": np.array([1.0])})
    s = AdamState.zeros_like(p)
    for it in range(cfg.epochs):
        adam_step(p, {"w": 2 * (p["w"] - 0.3)}, s, lr_at(cfg, it))
    assert abs(p["w"][0] - 0.3) < 1e-6


def _setup(n=8):
    geom, fs, _ = P.build_functions("ex1", n, seed=0)
    problem = P.build_problem("ex1", geom, fs)
    cfg = ModelConfig(branch_sizes=fs.branch_sizes(), depth=3, width=10, trunk_box=list(geom.bounding_box()))
    return problem, fs, cfg


def test_training_is_deterministic_and_resumable(tmp_path):
    problem, fs, mcfg = _setup()
    tcfg = TrainConfig(epochs=40, batch_functions=4, n_residual=8, seed=3)
    w = LossWeights.regime("pi")
    m1, h1, _ = T.train(build_model(mcfg, 1), problem, fs, tcfg, w)
    m2, h2, _ = T.train(build_model(mcfg, 1), problem, fs, tcfg, w)
    assert h1 == h2 and len(h1) == 40
    # interrupted at 25, checkpointed, resumed
    part, _, state = T.train(build_model(mcfg, 1), problem, fs, tcfg, w, stop=25)
    T.save_checkpoint(tmp_path / "c.ckpt", part, state, 25)
    model, state, start, _ = T.load_checkpoint(tmp_path / "c.ckpt")
    assert start == 25 and state.step == 25
    m3, h3, _ = T.train(model, problem, fs, tcfg, w, state=state, start=start)
    assert [r["iteration"] for r in h3] == list(range(25, 40))
    assert h3 == h1[25:]
    for k in m1.params:
        assert np.array_equal(m1.params[k], m3.params[k])


def test_fixed_collocation_when_not_resampling():
    problem, fs, _ = _setup()
    cfg = TrainConfig(resample=False, n_residual=5)
    a, b = T.sample_batch(problem, 8, cfg, 0), T.sample_batch(problem, 8, cfg, 7)
    assert np.array_equal(a.residual[1], b.residual[1])
    c = T.sample_batch(problem, 8, TrainConfig(n_residual=5), 7)
    assert not np.array_equal(a.residual[1], c.residual[1])


def test_divergence_reports_iteration_and_component():
    problem, fs, mcfg = _setup()
    model = build_model(mcfg, 0)
    model.params["bias0"][:] = np.nan
    with pytest.raises(T.TrainingDiverged, match="iteration 0"):
        T.train(model, problem, fs, TrainConfig(epochs=3), LossWeights.regime("pi"))


def test_data_regime_needs_labels():
    problem, fs, mcfg = _setup()
    with pytest.raises(ConfigError):
        T.train(build_model(mcfg), problem, fs, TrainConfig(epochs=2), LossWeights.regime("dd"))


def test_history_round_trip(tmp_path):
    rows = [{"iteration": 0, "lr": 1e-3, "total": 2.5, "L_r1": 1.0, "L_b": 0.125}]
    T.write_history(tmp_path / "h.csv", rows, 2)
    back = T.read_history(tmp_path / "h.csv")
    assert list(back[0]) == ["iteration", "lr", "total", "L_r1", "L_r2", "L_GD", "L_GN", "L_b", "L_data"]
    assert back[0]["total"] == 2.5 and back[0]["L_r2"] == 0.0


def test_window_means():
    vals = np.concatenate([np.full(500, 3.0), np.full(500, 2.0), np.full(100, 9.0)])
    np.testing.assert_array_equal(T.window_means(vals), [3.0, 2.0])
    assert T.moving_average_nonincreasing(vals)
    assert not T.moving_average_nonincreasing(vals[::-1][100:])
