import numpy as np
import pytest

from grnnkit.autodiff import Tape, backward
from grnnkit.errors import Divergence, EmptyBatch, ShapeMismatch, ZeroTarget
from grnnkit.filters import FilterBank
from grnnkit.graphs import GsoKind, build_gso, sbm
from grnnkit.models import ArchSpec, OutputMap, init_model
from grnnkit.training import (
    AdamState,
    Metrics,
    TrainConfig,
    adam_step,
    binary_f1,
    class_weights_from_counts,
    l1_loss,
    rrmse,
    train,
    weighted_cross_entropy,
)

from helpers import central_diff_grads, max_rel_err


def test_l1_loss_examples():
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert l1_loss(x, x) == 0.0
    assert abs(l1_loss(np.zeros((2, 2)), np.ones((2, 2))) - 1.0) < 1e-15
    with pytest.raises(ShapeMismatch):
        l1_loss(np.zeros(3), np.zeros(4))


def test_cross_entropy_uniform_logits():
    logits = np.zeros((10, 2))
    labels = np.random.default_rng(1).integers(0, 2, size=10)
    assert abs(weighted_cross_entropy(logits, labels) - np.log(2.0)) < 1e-12


def test_class_weights_inverse_counts():
    w = class_weights_from_counts([90, 10])
    assert np.allclose(w / w[0], [1.0, 9.0])
    assert abs(w.mean() - 1.0) < 1e-15


def test_cross_entropy_gradient_matches_fd():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((5, 3))
    labels = rng.integers(0, 3, size=5)
    weights = class_weights_from_counts([2, 2, 1])

    tape = Tape()
    lv = tape.leaf(logits)
    loss = weighted_cross_entropy(lv, labels, weights)
    analytic = backward(tape, loss).wrt(lv)

    def f(arrs):
        return weighted_cross_entropy(arrs[0], labels, weights)

    numeric = central_diff_grads(f, [logits])[0]
    assert max_rel_err(analytic, numeric) < 1e-6


def test_cross_entropy_errors():
    with pytest.raises(ShapeMismatch):
        weighted_cross_entropy(np.zeros((3, 2)), np.zeros(4, dtype=int))
    with pytest.raises(EmptyBatch):
        weighted_cross_entropy(np.zeros((0, 2)), np.zeros(0, dtype=int))


def test_rrmse_examples():
    rng = np.random.default_rng(3)
    t = rng.standard_normal((4, 5, 3, 1))
    assert rrmse(t, t) == 0.0
    assert abs(rrmse(np.zeros_like(t), t) - 1.0) < 1e-15
    assert abs(rrmse(1.1 * t, t) - 0.1) < 1e-12
    with pytest.raises(ZeroTarget):
        rrmse(np.ones((2, 3)), np.zeros((2, 3)))


def test_binary_f1_examples():
    truth = np.array([1, 1, 0, 0, 1])
    m = binary_f1(truth, truth)
    assert m.f1 == m.precision == m.recall == 1.0
    m0 = binary_f1(np.zeros(5, dtype=int), truth)
    assert m0.recall == 0.0 and m0.f1 == 0.0
    pred = np.array([1] * 10 + [0] * 10)
    true = np.array([1] * 8 + [0] * 2 + [1] * 2 + [0] * 8)
    m2 = binary_f1(pred, true)  # TP=8 FP=2 FN=2
    assert abs(m2.precision - 0.8) < 1e-15
    assert abs(m2.recall - 0.8) < 1e-15
    assert abs(m2.f1 - 0.8) < 1e-15


def test_adam_zero_gradient_keeps_params():
    state = AdamState(lr=0.1)
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.zeros(2)}
    adam_step(state, p, g)
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_single_step_oracle():
    state = AdamState(lr=0.01)
    g = np.array([0.3, -0.7])
    p = {"w": np.zeros(2)}
    adam_step(state, p, {"w": g.copy()})
    # bias correction makes m_hat = g and v_hat = g^2 after one step
    expected = -0.01 * g / (np.abs(g) + state.eps)
    assert np.allclose(p["w"], expected, atol=1e-15)


def test_adam_constant_gradient_approaches_sign_update():
    state = AdamState(lr=1e-3)
    g = np.array([0.42, -1.7, 3.3])
    p = {"w": np.zeros(3)}
    prev = p["w"].copy()
    for _ in range(500):
        prev = p["w"].copy()
        adam_step(state, p, {"w": g.copy()})
    delta = p["w"] - prev
    assert np.allclose(delta, -1e-3 * np.sign(g), rtol=1e-3)


def test_adam_sign_symmetry():
    g = np.random.default_rng(4).standard_normal(6)
    sa, sb = AdamState(lr=0.05), AdamState(lr=0.05)
    pa = {"w": np.zeros(6)}
    pb = {"w": np.zeros(6)}
    adam_step(sa, pa, {"w": g.copy()})
    adam_step(sb, pb, {"w": -g.copy()})
    assert np.array_equal(pa["w"], -pb["w"])


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), {"w": np.zeros(3)}, {"w": np.zeros(4)})


def _one_param_dataset():
    # y = 2x learnable by a single-tap 1->1 snapshot map
    rng = np.random.default_rng(5)
    x = rng.standard_normal((200, 1, 1, 1))
    return x, 2.0 * x


def _one_param_model():
    return OutputMap(layers=((FilterBank(np.zeros((1, 1, 1))), "identity"),))


def test_train_converges_on_linear_regression():
    x, y = _one_param_dataset()
    model = _one_param_model()
    cfg = TrainConfig(lr=2e-3, epochs=150, batch_size=20, seed=0)
    model, trace = train(model, x, y, cfg, s=np.zeros((1, 1)))
    assert len(trace) <= 2000
    # closed-form oracle: L1 regression through the origin recovers the slope
    assert abs(model.layers[0][0].taps[0, 0, 0] - 2.0) <= 1e-3


def test_train_zero_lr_keeps_params():
    x, y = _one_param_dataset()
    model = _one_param_model()
    before = model.layers[0][0].taps.copy()
    cfg = TrainConfig(lr=0.0, epochs=2, batch_size=50, seed=0)
    train(model, x, y, cfg, s=np.zeros((1, 1)))
    assert np.array_equal(model.layers[0][0].taps, before)


def test_train_deterministic_trace():
    g = sbm(6, 2, 0.8, 0.3, np.random.default_rng(6))
    s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
    rng = np.random.default_rng(7)
    x = rng.standard_normal((40, 4, 6, 1))
    y = np.roll(x, -1, axis=1)
    traces = []
    for _ in range(2):
        model = init_model(ArchSpec(f_in=1, f_state=2, k_in=2, k_state=2),
                           np.random.default_rng(8))
        _, trace = train(model, x, y, TrainConfig(lr=1e-3, epochs=2, batch_size=10, seed=5), s=s)
        traces.append([loss for _, _, loss in trace])
    assert traces[0] == traces[1]  # bit-identical losses


def test_train_divergence_aborts():
    x, y = _one_param_dataset()
    y = y.copy()
    y[0] = np.nan
    model = _one_param_model()
    with pytest.raises(Divergence):
        train(model, x, y, TrainConfig(lr=0.1, epochs=1, batch_size=200, seed=0),
              s=np.zeros((1, 1)))


def test_train_empty_dataset():
    model = _one_param_model()
    with pytest.raises(EmptyBatch):
        train(model, np.zeros((0, 1, 1, 1)), np.zeros((0, 1, 1, 1)),
              TrainConfig(), s=np.zeros((1, 1)))


def test_gradient_flows_through_gate_path():
    # perturbing gate sub-GRNN parameters must change the loss
    g = sbm(5, 1, 0.9, 0.0, np.random.default_rng(9))
    s = build_gso(g, GsoKind.NORMALIZED_ADJACENCY)
    rng = np.random.default_rng(10)
    model = init_model(ArchSpec(f_in=1, f_state=2, k_in=2, k_state=2, gating="node",
                                gate_state=2, n=5), rng)
    x = rng.standard_normal((4, 5, 1))
    y = rng.standard_normal((4, 5, 1))
    tape = Tape()
    params = {name: tape.leaf(arr) for name, arr in model.parameters()}
    from grnnkit.models import grnn_forward
    from grnnkit.training import sequence_l1_loss

    y_seq, _, _ = grnn_forward(model, s, x, params=params)
    loss = sequence_l1_loss(y_seq, [y[t] for t in range(4)])
    grads = backward(tape, loss)
    for name in ("gate_in.a", "gate_in.b", "gate_in.c", "gate_fg.a", "core.a"):
        assert np.any(grads.wrt(params[name]) != 0.0), name


def test_metrics_to_dict_drops_none():
    m = Metrics(rrmse=0.5)
    assert m.to_dict() == {"rrmse": 0.5}
