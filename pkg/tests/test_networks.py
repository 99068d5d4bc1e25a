import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionet import networks as N
from ionet.geometry import GeometryError, IntervalGeometry
from ionet.networks import DomainError, ModelConfig, build_model, deeponet_forward, ionet_forward, ionet_jump

GEOM = IntervalGeometry()


def _constant_model(kind, branch_out, trunk_out, biases, m=(2, 2)):
    """Depth-1 nets with zero weights: every output equals its bias vector."""
    K = len(trunk_out[0])
    cfg = ModelConfig(kind=kind, branch_sizes=list(m), depth=1, width=K, latent=K)
    model = build_model(cfg)
    for j, b in enumerate(branch_out):
        model.params[f"branch{j}.W0"][:] = 0.0
        model.params[f"branch{j}.b0"][:] = b
    for i, t in enumerate(trunk_out):
        model.params[f"trunk{i}.W0"][:] = 0.0
        model.params[f"trunk{i}.b0"][:] = t
        model.params[f"bias{i}"][:] = biases[i]
    return model


def _random_model(kind="ionet", seed=0, width=8, depth=3, m=(5, 5), activation="tanh"):
    cfg = ModelConfig(kind=kind, branch_sizes=list(m), depth=depth, width=width, activation=activation)
    model = build_model(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    for k in model.params:
        if "bias" in k or ".b" in k:
            model.params[k] = 0.2 * rng.standard_normal(model.params[k].shape)
    return model


def test_table_parameter_counts():
    ionet = ModelConfig(branch_sizes=[50, 50], depth=5, width=100)
    assert ionet.param_count() == build_model(ionet).n_params == 172_202
    deeponet = ModelConfig(kind="deeponet", branch_sizes=[100], depth=5, width=140)
    assert deeponet.param_count() == build_model(deeponet).n_params == 172_341
    for n in (ionet.param_count(), deeponet.param_count()):
        assert abs(n - 172_000) / 172_000 < 0.01


def test_single_subdomain_degenerates_to_deeponet_shape():
    one = ModelConfig(branch_sizes=[100], n_subdomains=1, depth=3, width=20)
    deep = ModelConfig(kind="deeponet", branch_sizes=[100], depth=3, width=20)
    assert one.param_count() == deep.param_count()


def test_constant_trunks_select_by_subdomain():
    model = _constant_model("ionet", [[1.0], [1.0]], [[0.7], [-0.2]], [0.0, 0.0])
    s = [np.zeros(2), np.zeros(2)]
    assert ionet_forward(model, s, 0.2, GEOM) == pytest.approx(0.7)
    assert ionet_forward(model, s, 0.8, GEOM) == pytest.approx(-0.2)


def test_handpicked_hadamard_merge():
    b0 = 0.125
    model = _constant_model("ionet", [[2.0, 3.0], [1.0, -1.0]], [[0.5, 0.25], [0.5, 0.25]], [b0, b0])
    assert ionet_forward(model, [np.zeros(2)] * 2, 0.3, GEOM) == pytest.approx(0.25 + b0)


def test_zero_trunk_returns_bias():
    model = _constant_model("ionet", [[4.0], [9.0]], [[0.0], [0.0]], [0.3, -1.1])
    assert ionet_forward(model, [np.zeros(2)] * 2, 0.1, GEOM) == pytest.approx(0.3)
    assert ionet_forward(model, [np.zeros(2)] * 2, 0.9, GEOM) == pytest.approx(-1.1)


def test_interface_and_exterior_points():
    model = _random_model()
    s = [np.ones(5), np.ones(5)]
    with pytest.raises(DomainError):
        ionet_forward(model, s, 0.5, GEOM)
    with pytest.raises(DomainError):
        ionet_forward(model, s, 1.5, GEOM)
    assert ionet_forward(model, s, 0.5, GEOM, side=2) == pytest.approx(ionet_forward(model, s, 0.5 + 1e-11, GEOM), abs=1e-9)


def test_deeponet_examples():
    model = _constant_model("deeponet", [[2.0]], [[0.3]], [0.1], m=(4,))
    assert deeponet_forward(model, np.zeros(4), [0.4]) == pytest.approx(0.7)
    zero = _constant_model("deeponet", [[2.0]], [[0.0]], [0.1], m=(4,))
    assert deeponet_forward(zero, np.zeros(4), [0.4]) == pytest.approx(0.1)


def test_deeponet_continuity_scales_with_epsilon():
    model = _random_model("deeponet", m=(10,))
    s = np.linspace(0, 1, 10)
    gaps = [abs(deeponet_forward(model, s, 0.5 + e) - deeponet_forward(model, s, 0.5 - e)) for e in (1e-3, 1e-6)]
    assert gaps[1] < 1e-4
    assert gaps[1] < 1e-2 * gaps[0]


def test_identical_trunks_have_zero_jumps():
    model = _random_model()
    for k in list(model.params):
        if k.startswith("trunk1"):
            model.params[k] = model.params[k.replace("trunk1", "trunk0")].copy()
    model.params["bias1"] = model.params["bias0"].copy()
    vj, fj = ionet_jump(model, [np.ones(5), np.ones(5)], [0.5], [1.0], 1.3, 1.3)
    assert vj == 0.0 and abs(fj) < 1e-14


def test_constant_trunk_offset_jump():
    model = _constant_model("ionet", [[1.0], [1.0]], [[0.4], [1.9]], [0.25, 0.5])
    vj, _ = ionet_jump(model, [np.zeros(2)] * 2, [0.5], [1.0], 1.0, 1.0)
    assert vj == pytest.approx(1.5 + 0.25)


def test_flux_jump_vs_one_sided_fd():
    model = _random_model(seed=4)
    s = [np.linspace(0, 1, 5), np.linspace(1, 2, 5)]
    a1, a2, h = 1.7, 0.6, 1e-6
    _, fj = ionet_jump(model, s, [0.5], [1.0], a1, a2)
    f = lambda x, side: ionet_forward(model, s, x, GEOM, side=side)
    # second-order one-sided quotients, each from its own side of the interface
    d_out = (-3 * f(0.5, 2) + 4 * f(0.5 + h, 2) - f(0.5 + 2 * h, 2)) / (2 * h)
    d_in = (3 * f(0.5, 1) - 4 * f(0.5 - h, 1) + f(0.5 - 2 * h, 1)) / (2 * h)
    assert fj == pytest.approx(a2 * d_out - a1 * d_in, rel=1e-4)


def test_relu_model_jumps():
    model = _random_model(seed=2, activation="relu")
    s = [np.linspace(0, 1, 5), np.linspace(1, 2, 5)]
    a1, a2, h = 1.2, 0.8, 1e-7
    vj, fj = ionet_jump(model, s, [0.5], [1.0], a1, a2)
    f = lambda x, side: ionet_forward(model, s, x, GEOM, side=side)
    assert vj == f(0.5, 2) - f(0.5, 1)
    # piecewise linear: one-sided first differences are exact away from kinks
    d_out = (f(0.5 + h, 2) - f(0.5, 2)) / h
    d_in = (f(0.5, 1) - f(0.5 - h, 1)) / h
    assert fj == pytest.approx(a2 * d_out - a1 * d_in, rel=1e-5, abs=1e-9)


def test_jump_rejects_undefined_normal():
    with pytest.raises(GeometryError):
        ionet_jump(_random_model(), [np.ones(5)] * 2, [0.5], [np.nan], 1.0, 1.0)


def test_branch_size_mismatch():
    with pytest.raises(Exception, match="branch 0"):
        _random_model().bind([np.ones((1, 4)), np.ones((1, 5))])


def test_trunk_box_chain_rule():
    cfg = ModelConfig(branch_sizes=[3, 3], depth=3, width=6, trunk_box=[[0.0], [1.0]])
    model = build_model(cfg, 2)
    bound = model.bind([np.ones((1, 3)), np.ones((1, 3))])
    x, h = np.array([[0.3]]), 1e-4
    jet = bound.evaluate(1, x, order=2)
    v = lambda t: bound.evaluate(1, np.array([[t]])).value[0, 0]
    assert jet.grad[0][0, 0] == pytest.approx((v(0.3 + h) - v(0.3 - h)) / (2 * h), rel=1e-6)
    assert jet.second[0][0, 0] == pytest.approx((v(0.3 + h) - 2 * v(0.3) + v(0.3 - h)) / h ** 2, rel=1e-4)


def test_model_save_load(tmp_path):
    model = _random_model(seed=3)
    N.save_model(tmp_path / "m.ckpt", model, meta={"k": "v"})
    back, extra, meta = N.load_model(tmp_path / "m.ckpt")
    assert meta["k"] == "v" and not extra
    x = np.linspace(0, 1, 7).reshape(-1, 1)
    sides = np.where(x[:, 0] < 0.5, 1, 2)
    inputs = [np.ones((2, 5)), np.zeros((2, 5))]
    assert np.array_equal(back.predict(inputs, x, sides), model.predict(inputs, x, sides))


def test_multi_input_reduces_with_ones_channel():
    # a second channel whose branch outputs all ones leaves the merge unchanged
    one = _random_model(m=(5,), seed=8)
    one.config.n_subdomains = 1
    cfg = ModelConfig(branch_sizes=[5, 2], n_subdomains=1, depth=3, width=8)
    two = build_model(cfg, 0)
    for k, v in one.params.items():
        two.params[k] = v.copy()
    for k in two.params:
        if k.startswith("branch1"):
            two.params[k][:] = 0.0
    two.params["branch1.b2"][:] = 1.0
    x = np.array([[0.2], [0.4]])
    a = np.random.default_rng(0).standard_normal((3, 5))
    np.testing.assert_allclose(two.predict([a, np.zeros((3, 2))], x, [1, 1]), one.predict([a], x, [1, 1]),
                               rtol=1e-15, atol=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_trunk_selection_and_branch_sharing(seed):
    model = _random_model(seed=seed)
    inputs = [np.ones((1, 5)), 0.5 * np.ones((1, 5))]
    x = np.array([[0.2], [0.8]])
    base = model.predict(inputs, x, [1, 2])
    model.params["trunk1.W0"] = model.params["trunk1.W0"] + 0.3
    moved = model.predict(inputs, x, [1, 2])
    assert moved[0, 0] == base[0, 0] and moved[0, 1] != base[0, 1]
    model.params["branch0.b0"] = model.params["branch0.b0"] + 0.3
    shared = model.predict(inputs, x, [1, 2])
    assert shared[0, 0] != moved[0, 0] and shared[0, 1] != moved[0, 1]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_value_jump_is_difference_of_forwards(seed, a1, a2):
    model = _random_model(seed=seed)
    s = [np.full(5, a1), np.full(5, a2)]
    vj, _ = ionet_jump(model, s, [0.5], [1.0], a1, a2)
    direct = ionet_forward(model, s, 0.5, GEOM, side=2) - ionet_forward(model, s, 0.5, GEOM, side=1)
    assert vj == direct
