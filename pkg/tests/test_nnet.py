import math

import numpy as np
import pytest

from lidkit.checkpoint import (load_bn_dnn, load_classifier, save_bn_dnn,
                               save_classifier)
from lidkit.errors import LidKitError, NonFiniteGradientError
from lidkit.gradcheck import (compare_gradients, finite_difference,
                              gradcheck_bn_dnn, gradcheck_classifier)
from lidkit.nnet import (BnDnn, Classifier, DenseLayer, LstmLayer, LstmState,
                         bn_dnn_loss_and_grads, classifier_forward,
                         classifier_loss_and_grads, cross_entropy, dnn_forward,
                         init_bn_dnn, init_classifier, init_lstm,
                         lstm_cell_forward, lstm_sequence_forward)
from lidkit.optim import AdamState, adam_init, adam_step, clip_gradients, sgd_step


def zero_lstm(hidden: int, inputs: int) -> LstmLayer:
    return LstmLayer(
        wf=np.zeros((hidden, 2 * hidden + inputs)),
        wi=np.zeros((hidden, 2 * hidden + inputs)),
        wc=np.zeros((hidden, hidden + inputs)),
        wo=np.zeros((hidden, 2 * hidden + inputs)),
        bf=np.zeros(hidden), bi=np.zeros(hidden), bc=np.zeros(hidden),
        bo=np.zeros(hidden),
    )


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------

def test_cell_all_zero_parameters():
    layer = zero_lstm(3, 2)
    state, gates = lstm_cell_forward(
        np.zeros(2), LstmState(c=np.zeros(3), h=np.zeros(3)), layer)
    assert np.allclose(gates["f"], 0.5)
    assert np.allclose(gates["i"], 0.5)
    assert np.allclose(gates["o"], 0.5)
    assert np.allclose(gates["cbar"], 0.0)
    assert np.allclose(state.c, 0.0)
    assert np.allclose(state.h, 0.0)


def test_cell_scalar_hand_oracle():
    # H=1, D=1, all weights one, biases zero, x=0, c_prev=1, h_prev=0;
    # chain evaluated independently with plain scalar math
    layer = LstmLayer(wf=np.ones((1, 3)), wi=np.ones((1, 3)), wc=np.ones((1, 2)),
                      wo=np.ones((1, 3)), bf=np.zeros(1), bi=np.zeros(1),
                      bc=np.zeros(1), bo=np.zeros(1))
    state, gates = lstm_cell_forward(
        np.array([0.0]), LstmState(c=np.array([1.0]), h=np.array([0.0])), layer)

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    f = sig(1.0)
    i = sig(1.0)
    cbar = math.tanh(0.0)
    c = f * 1.0 + i * cbar
    o = sig(c)
    h = math.tanh(c) * o

    assert f == pytest.approx(0.731059, abs=1e-6)
    assert gates["f"][0] == pytest.approx(f, abs=1e-6)
    assert gates["i"][0] == pytest.approx(i, abs=1e-6)
    assert gates["cbar"][0] == pytest.approx(cbar, abs=1e-6)
    assert gates["o"][0] == pytest.approx(o, abs=1e-6)
    assert state.c[0] == pytest.approx(c, abs=1e-6)
    assert state.h[0] == pytest.approx(h, abs=1e-6)


def test_cell_saturated_gates_copy_cell():
    # huge +forget / -input biases force f ~ 1 and i ~ 0
    layer = zero_lstm(4, 2)
    layer.bf[:] = 30.0
    layer.bi[:] = -30.0
    c_prev = np.array([0.3, -0.8, 1.2, 0.05])
    state, _ = lstm_cell_forward(
        np.array([0.4, -0.2]), LstmState(c=c_prev, h=np.zeros(4)), layer)
    assert np.allclose(state.c, c_prev, atol=1e-6)


def test_cell_shape_mismatch():
    layer = zero_lstm(3, 2)
    with pytest.raises(LidKitError):
        lstm_cell_forward(np.zeros(5), LstmState(c=np.zeros(3), h=np.zeros(3)),
                          layer)


# ---------------------------------------------------------------------------
# Sequence forward
# ---------------------------------------------------------------------------

def make_classifier(seed=0, dtype=np.float64, input_dim=4, lstm=5, relu=6,
                    classes=3) -> Classifier:
    rng = np.random.default_rng(seed)
    return init_classifier(rng, input_dim, lstm, relu, classes, dtype=dtype)


def test_sequence_probabilities_sum_to_one(rng):
    model = make_classifier()
    block = rng.normal(size=(9, 4))
    log_probs = lstm_sequence_forward(block, model)
    assert np.exp(log_probs).sum() == pytest.approx(1.0, abs=1e-9)


def test_sequence_zero_params_uniform():
    model = Classifier(
        lstm1=zero_lstm(5, 4), lstm2=zero_lstm(5, 5),
        fc=DenseLayer(np.zeros((6, 5)), np.zeros(6), "relu"),
        out=DenseLayer(np.zeros((3, 6)), np.zeros(3), "softmax"))
    log_probs = lstm_sequence_forward(np.ones((7, 4)), model)
    assert np.allclose(log_probs, -np.log(3.0), atol=1e-12)


def test_sequence_not_permutation_invariant(rng):
    model = make_classifier(seed=3)
    block = rng.normal(size=(8, 4))
    base = lstm_sequence_forward(block, model)
    shuffled = block.copy()
    shuffled[[0, 5]] = shuffled[[5, 0]]  # last frame untouched
    other = lstm_sequence_forward(shuffled, model)
    assert not np.allclose(base, other)


def test_forward_determinism(rng):
    model = make_classifier(seed=4)
    block = rng.normal(size=(2, 8, 4))
    a = classifier_forward(model, block)
    b = classifier_forward(model, block)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Bottleneck DNN forward
# ---------------------------------------------------------------------------

def test_dnn_zero_params_uniform():
    dnn = BnDnn(layers=[
        DenseLayer(np.zeros((5, 8)), np.zeros(5), "sigmoid"),
        DenseLayer(np.zeros((3, 5)), np.zeros(3), "linear"),
        DenseLayer(np.zeros((4, 3)), np.zeros(4), "softmax"),
    ])
    log_probs, bottleneck = dnn_forward(dnn, np.ones(8))
    assert np.allclose(np.exp(log_probs), 0.25)
    assert np.allclose(bottleneck, 0.0)


def test_dnn_sigmoid_range(rng):
    dnn = init_bn_dnn(np.random.default_rng(0), 6, (5,), 3, 4, dtype=np.float64)
    x = rng.normal(size=(10, 6)) * 3
    _, _, cache = dnn_forward(dnn, x, want_cache=True)
    hidden = cache[1]
    assert np.all(hidden > 0.0)
    assert np.all(hidden < 1.0)
    # extreme inputs saturate but stay within the closed bounds, no NaN
    _, _, cache = dnn_forward(dnn, x * 1000, want_cache=True)
    assert np.all(cache[1] >= 0.0)
    assert np.all(cache[1] <= 1.0)
    assert np.isfinite(cache[1]).all()


def test_dnn_matches_by_hand_evaluation(rng):
    dnn = init_bn_dnn(np.random.default_rng(7), 4, (3,), 2, 3, dtype=np.float64)
    x = rng.normal(size=4)
    # independent re-evaluation with explicit loops
    a = x
    outs = []
    for layer in dnn.layers:
        pre = np.array([float(np.dot(wr, a)) + float(b)
                        for wr, b in zip(layer.weight, layer.bias)])
        if layer.activation == "sigmoid":
            a = 1.0 / (1.0 + np.exp(-pre))
        elif layer.activation == "linear":
            a = pre
        else:
            e = np.exp(pre - pre.max())
            a = np.log(e / e.sum())
        outs.append(a)
    log_probs, bottleneck = dnn_forward(dnn, x)
    assert np.allclose(log_probs, outs[-1], atol=1e-9)
    assert np.allclose(bottleneck, outs[-2], atol=1e-9)


def test_dnn_shape_mismatch(rng):
    dnn = init_bn_dnn(np.random.default_rng(0), 4, (3,), 2, 3)
    with pytest.raises(LidKitError):
        dnn_forward(dnn, np.zeros(5))


# ---------------------------------------------------------------------------
# Cross entropy
# ---------------------------------------------------------------------------

def test_cross_entropy_uniform():
    lp = np.log(np.full(10, 0.1))
    assert cross_entropy(lp, 3) == pytest.approx(math.log(10.0), abs=1e-9)


def test_cross_entropy_confident():
    lp = np.log(np.array([1.0 - 1e-15, 1e-15]))
    assert cross_entropy(lp, 0) == pytest.approx(0.0, abs=1e-9)


def test_cross_entropy_half():
    lp = np.log(np.array([0.5, 0.25, 0.25]))
    assert cross_entropy(lp, 0) == pytest.approx(math.log(2.0), abs=1e-9)


def test_cross_entropy_bad_target():
    with pytest.raises(LidKitError):
        cross_entropy(np.log(np.full(4, 0.25)), 4)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def test_gradcheck_classifier():
    result = gradcheck_classifier()
    assert result.max_relative_error <= 1e-4


def test_gradcheck_bn_dnn():
    result = gradcheck_bn_dnn()
    assert result.max_relative_error <= 1e-4


def test_gradcheck_unused_class(rng):
    # class 2 never targeted; its output row still gets a correct gradient
    model = make_classifier(seed=9, classes=3)
    blocks = rng.normal(size=(2, 4, 4))
    targets = np.array([0, 1])
    _, analytic = classifier_loss_and_grads(model, blocks, targets)
    numeric = finite_difference(
        lambda: classifier_loss_and_grads(model, blocks, targets)[0],
        {"out.weight": model.out.weight, "out.bias": model.out.bias})
    result = compare_gradients(
        {k: analytic[k] for k in numeric}, numeric)
    assert result.max_relative_error <= 1e-4
    assert np.abs(analytic["out.weight"][2]).max() > 0.0


def test_zero_loss_point_gradient():
    # softmax-CE with probability ~1 on the target: output bias gradient ~ 0
    dnn = init_bn_dnn(np.random.default_rng(0), 3, (4,), 2, 2, dtype=np.float64)
    dnn.layers[-1].bias[0] = 50.0  # force p(target 0) ~ 1
    _, grads = bn_dnn_loss_and_grads(dnn, np.zeros((1, 3)), np.array([0]))
    assert np.all(np.abs(grads["layer2.bias"]) < 1e-9)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def test_sgd_zero_lr():
    p = {"w": np.array([1.0, 2.0])}
    sgd_step(p, {"w": np.array([3.0, -4.0])}, lr=0.0)
    assert np.array_equal(p["w"], [1.0, 2.0])


def test_sgd_scalar_case():
    p = {"w": np.array([1.0])}
    sgd_step(p, {"w": np.array([2.0])}, lr=0.1)
    assert p["w"][0] == pytest.approx(0.8)


def test_adam_first_step_magnitude():
    p = {"w": np.zeros(5)}
    state = adam_init(p)
    adam_step(p, {"w": np.ones(5)}, state, lr=0.01)
    assert np.all(np.abs(np.abs(p["w"]) - 0.01) < 1e-6)
    assert np.all(p["w"] < 0)


def test_adam_zero_lr():
    p = {"w": np.array([1.0, -1.0])}
    state = adam_init(p)
    adam_step(p, {"w": np.array([5.0, 5.0])}, state, lr=0.0)
    assert np.array_equal(p["w"], [1.0, -1.0])


def test_non_finite_gradient_rejected():
    p = {"w": np.array([1.0]), "v": np.array([2.0])}
    bad = {"w": np.array([np.nan]), "v": np.array([1.0])}
    with pytest.raises(NonFiniteGradientError):
        sgd_step(p, bad, lr=0.1)
    assert p["w"][0] == 1.0 and p["v"][0] == 2.0  # untouched
    state = adam_init(p)
    with pytest.raises(NonFiniteGradientError):
        adam_step(p, bad, state, lr=0.1)
    assert p["v"][0] == 2.0
    assert state.t == 0


def test_clip_gradients():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert grads["a"][0] == pytest.approx(0.6)
    assert grads["b"][0] == pytest.approx(0.8)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_bn_checkpoint_round_trip(tmp_path):
    dnn = init_bn_dnn(np.random.default_rng(1), 6, (5, 4), 3, 7)
    path = tmp_path / "bn.ckpt"
    save_bn_dnn(path, dnn)
    back = load_bn_dnn(path)
    for a, b in zip(dnn.layers, back.layers):
        assert np.array_equal(a.weight, b.weight)
        assert np.array_equal(a.bias, b.bias)
        assert a.activation == b.activation


def test_classifier_checkpoint_round_trip(tmp_path):
    model = init_classifier(np.random.default_rng(2), 5, 4, 6, 3)
    path = tmp_path / "cls.ckpt"
    save_classifier(path, model)
    back = load_classifier(path)
    for name, tensor in model.parameters().items():
        assert np.array_equal(tensor, back.parameters()[name]), name


def test_checkpoint_kind_mismatch(tmp_path):
    model = init_classifier(np.random.default_rng(2), 5, 4, 6, 3)
    path = tmp_path / "cls.ckpt"
    save_classifier(path, model)
    with pytest.raises(LidKitError):
        load_bn_dnn(path)


def test_checkpoint_deterministic_bytes(tmp_path):
    dnn = init_bn_dnn(np.random.default_rng(1), 6, (5,), 3, 7)
    save_bn_dnn(tmp_path / "a.ckpt", dnn)
    save_bn_dnn(tmp_path / "b.ckpt", dnn)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


# ---------------------------------------------------------------------------
# Training smoke: separable toy blocks
# ---------------------------------------------------------------------------

def test_classifier_learns_separable_blocks():
    rng = np.random.default_rng(5)
    centers = np.array([[1.5, 0.0, -1.0], [-1.5, 1.0, 0.5]])
    blocks = []
    labels = []
    for cls in (0, 1):
        for _ in range(12):
            blocks.append(centers[cls] + 0.1 * rng.normal(size=(6, 3)))
            labels.append(cls)
    blocks = np.asarray(blocks)
    labels = np.asarray(labels)

    model = init_classifier(np.random.default_rng(0), 3, 6, 8, 2,
                            dtype=np.float64)
    params = model.parameters()
    state = adam_init(params)
    loss = np.inf
    for epoch in range(200):
        loss, grads = classifier_loss_and_grads(model, blocks, labels)
        if loss < 0.1:
            break
        adam_step(params, grads, state, lr=0.02)
    assert loss < 0.1
