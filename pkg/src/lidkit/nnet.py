"""From-scratch dense network numerics (numpy only).

Two model families:

* ``BnDnn`` -- feed-forward phone classifier: sigmoid hidden layers, a
  linear bottleneck layer whose activations become transfer features,
  and a softmax output.
* ``Classifier`` -- two stacked peephole LSTM layers, a ReLU dense
  layer on the last frame's hidden state, and a softmax over languages.

Peephole gate layout: the forget/input gates see [c_{t-1}, h_{t-1}, x_t],
the candidate sees [h_{t-1}, x_t], and the output gate sees the freshly
computed [c_t, h_{t-1}, x_t]. Backpropagation through time therefore
routes gradient into c_t from the output gate as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lidkit.errors import LidKitError, ShapeError


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int,
                   dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in)).astype(dtype)


# ---------------------------------------------------------------------------
# Dense layers / bottleneck DNN
# ---------------------------------------------------------------------------

ACTIVATIONS = ("sigmoid", "linear", "relu", "softmax")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise LidKitError(f"unknown activation {self.activation}",
                              code="bad-activation")


def init_dense(rng: np.random.Generator, n_out: int, n_in: int, activation: str,
               dtype=np.float32) -> DenseLayer:
    return DenseLayer(weight=glorot_uniform(rng, n_out, n_in, dtype),
                      bias=np.zeros(n_out, dtype=dtype), activation=activation)


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "sigmoid":
        return sigmoid(pre)
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "linear":
        return pre
    return log_softmax(pre)  # softmax layers carry log-probabilities


@dataclass
class BnDnn:
    """Sigmoid stack -> linear bottleneck -> softmax output."""

    layers: list[DenseLayer]

    @property
    def bottleneck_index(self) -> int:
        return len(self.layers) - 2

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def bottleneck_dim(self) -> int:
        return self.layers[self.bottleneck_index].weight.shape[0]

    @property
    def num_targets(self) -> int:
        return self.layers[-1].weight.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for idx, layer in enumerate(self.layers):
            out[f"layer{idx}.weight"] = layer.weight
            out[f"layer{idx}.bias"] = layer.bias
        return out

    def astype(self, dtype) -> "BnDnn":
        return BnDnn(layers=[
            DenseLayer(weight=l.weight.astype(dtype), bias=l.bias.astype(dtype),
                       activation=l.activation)
            for l in self.layers
        ])


def init_bn_dnn(rng: np.random.Generator, input_dim: int,
                hidden_sizes: tuple[int, ...], bottleneck: int, targets: int,
                dtype=np.float32) -> BnDnn:
    sizes = [input_dim, *hidden_sizes, bottleneck, targets]
    acts = ["sigmoid"] * len(hidden_sizes) + ["linear", "softmax"]
    layers = [init_dense(rng, sizes[i + 1], sizes[i], acts[i], dtype)
              for i in range(len(acts))]
    return BnDnn(layers=layers)


def dnn_forward(dnn: BnDnn, x: np.ndarray,
                want_cache: bool = False):
    """Forward a batch (B, D) or single vector; returns (log-posteriors,
    bottleneck activations[, cache])."""
    squeeze = x.ndim == 1
    a = np.atleast_2d(np.asarray(x, dtype=dnn.layers[0].weight.dtype))
    if a.shape[1] != dnn.input_dim:
        raise ShapeError(f"input dim {a.shape[1]} != expected {dnn.input_dim}")
    cache = [a]
    bottleneck = None
    for idx, layer in enumerate(dnn.layers):
        pre = a @ layer.weight.T + layer.bias
        a = _activate(pre, layer.activation)
        cache.append(a)
        if idx == dnn.bottleneck_index:
            bottleneck = a
    log_probs = a
    if squeeze:
        log_probs, bottleneck = log_probs[0], bottleneck[0]
    if want_cache:
        return log_probs, bottleneck, cache
    return log_probs, bottleneck


def cross_entropy(log_probs: np.ndarray, targets) -> float:
    """Mean negative log-probability of the target class(es)."""
    lp = np.atleast_2d(log_probs)
    t = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    if t.min() < 0 or t.max() >= lp.shape[1]:
        raise LidKitError(f"target out of range [0, {lp.shape[1]})",
                          code="bad-target")
    return float(-lp[np.arange(len(t)), t].mean())


def bn_dnn_loss_and_grads(dnn: BnDnn, x: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over the batch plus gradients for every layer."""
    log_probs, _, cache = dnn_forward(dnn, x, want_cache=True)
    t = np.asarray(targets, dtype=np.intp)
    loss = cross_entropy(log_probs, t)

    batch = cache[0].shape[0]
    dtype = dnn.layers[0].weight.dtype
    probs = np.exp(log_probs)
    delta = probs.astype(dtype)
    delta[np.arange(batch), t] -= 1.0
    delta /= batch

    grads: dict[str, np.ndarray] = {}
    for idx in range(len(dnn.layers) - 1, -1, -1):
        layer = dnn.layers[idx]
        below = cache[idx]
        grads[f"layer{idx}.weight"] = delta.T @ below
        grads[f"layer{idx}.bias"] = delta.sum(axis=0)
        if idx == 0:
            break
        delta = delta @ layer.weight
        act_below = dnn.layers[idx - 1].activation
        if act_below == "sigmoid":
            delta = delta * cache[idx] * (1.0 - cache[idx])
        elif act_below == "relu":
            delta = delta * (cache[idx] > 0)
        # linear: unchanged
    return loss, grads


# ---------------------------------------------------------------------------
# Peephole LSTM
# ---------------------------------------------------------------------------


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray


@dataclass
class LstmLayer:
    """Gate weights. wf/wi/wo columns are [cell | hidden | input] blocks;
    wc columns are [hidden | input]."""

    wf: np.ndarray
    wi: np.ndarray
    wc: np.ndarray
    wo: np.ndarray
    bf: np.ndarray
    bi: np.ndarray
    bc: np.ndarray
    bo: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.wf.shape[0]

    @property
    def input_size(self) -> int:
        return self.wf.shape[1] - 2 * self.hidden_size


def init_lstm(rng: np.random.Generator, input_size: int, hidden_size: int,
              dtype=np.float32, forget_bias: float = 1.0) -> LstmLayer:
    h, d = hidden_size, input_size
    return LstmLayer(
        wf=glorot_uniform(rng, h, 2 * h + d, dtype),
        wi=glorot_uniform(rng, h, 2 * h + d, dtype),
        wc=glorot_uniform(rng, h, h + d, dtype),
        wo=glorot_uniform(rng, h, 2 * h + d, dtype),
        bf=np.full(h, forget_bias, dtype=dtype),
        bi=np.zeros(h, dtype=dtype),
        bc=np.zeros(h, dtype=dtype),
        bo=np.zeros(h, dtype=dtype),
    )


def _lstm_step(layer: LstmLayer, x, c_prev, h_prev):
    chx = np.concatenate([c_prev, h_prev, x], axis=1)
    f = sigmoid(chx @ layer.wf.T + layer.bf)
    i = sigmoid(chx @ layer.wi.T + layer.bi)
    hx = np.concatenate([h_prev, x], axis=1)
    cbar = np.tanh(hx @ layer.wc.T + layer.bc)
    c = f * c_prev + i * cbar
    chxo = np.concatenate([c, h_prev, x], axis=1)
    o = sigmoid(chxo @ layer.wo.T + layer.bo)
    tc = np.tanh(c)
    h = tc * o
    return {"x": x, "c_prev": c_prev, "h_prev": h_prev, "f": f, "i": i,
            "cbar": cbar, "o": o, "c": c, "tc": tc, "h": h}


def lstm_cell_forward(x_t: np.ndarray, prev: LstmState,
                      layer: LstmLayer) -> tuple[LstmState, dict]:
    """Single-step cell update on vectors; returns the new state and the
    gate record (f, i, cbar, o)."""
    x = np.atleast_2d(np.asarray(x_t, dtype=layer.wf.dtype))
    if x.shape[1] != layer.input_size:
        raise ShapeError(f"input size {x.shape[1]} != expected {layer.input_size}")
    step = _lstm_step(layer, x, np.atleast_2d(prev.c), np.atleast_2d(prev.h))
    state = LstmState(c=step["c"][0], h=step["h"][0])
    gates = {k: step[k][0] for k in ("f", "i", "cbar", "o")}
    return state, gates


def lstm_forward(layer: LstmLayer, xs: np.ndarray):
    """Run over (B, T, D); returns hidden sequence (B, T, H) and cache."""
    b, t, d = xs.shape
    if d != layer.input_size:
        raise ShapeError(f"input size {d} != expected {layer.input_size}")
    dtype = layer.wf.dtype
    c = np.zeros((b, layer.hidden_size), dtype=dtype)
    h = np.zeros((b, layer.hidden_size), dtype=dtype)
    steps = []
    hs = np.empty((b, t, layer.hidden_size), dtype=dtype)
    for ti in range(t):
        step = _lstm_step(layer, np.ascontiguousarray(xs[:, ti, :]), c, h)
        c, h = step["c"], step["h"]
        hs[:, ti, :] = h
        steps.append(step)
    return hs, steps


def lstm_backward(layer: LstmLayer, steps: list[dict], d_hs: np.ndarray):
    """BPTT. d_hs (B, T, H) holds the gradient arriving at each h_t from
    above; returns (grads dict, gradient w.r.t. the input sequence)."""
    h = layer.hidden_size
    b, t, _ = d_hs.shape
    dtype = layer.wf.dtype

    grads = {name: np.zeros_like(getattr(layer, name))
             for name in ("wf", "wi", "wc", "wo", "bf", "bi", "bc", "bo")}
    dxs = np.empty((b, t, layer.input_size), dtype=dtype)
    dh_rec = np.zeros((b, h), dtype=dtype)
    dc_next = np.zeros((b, h), dtype=dtype)

    wfc, wfh, wfx = layer.wf[:, :h], layer.wf[:, h : 2 * h], layer.wf[:, 2 * h :]
    wic, wih, wix = layer.wi[:, :h], layer.wi[:, h : 2 * h], layer.wi[:, 2 * h :]
    wch, wcx = layer.wc[:, :h], layer.wc[:, h:]
    woc, woh, wox = layer.wo[:, :h], layer.wo[:, h : 2 * h], layer.wo[:, 2 * h :]

    for ti in range(t - 1, -1, -1):
        s = steps[ti]
        dh = d_hs[:, ti, :] + dh_rec
        do = dh * s["tc"]
        dao = do * s["o"] * (1.0 - s["o"])
        dc = dh * s["o"] * (1.0 - s["tc"] ** 2) + dc_next + dao @ woc
        df = dc * s["c_prev"]
        daf = df * s["f"] * (1.0 - s["f"])
        di = dc * s["cbar"]
        dai = di * s["i"] * (1.0 - s["i"])
        dac = dc * s["i"] * (1.0 - s["cbar"] ** 2)

        chx = np.concatenate([s["c_prev"], s["h_prev"], s["x"]], axis=1)
        hx = np.concatenate([s["h_prev"], s["x"]], axis=1)
        chxo = np.concatenate([s["c"], s["h_prev"], s["x"]], axis=1)
        grads["wf"] += daf.T @ chx
        grads["bf"] += daf.sum(axis=0)
        grads["wi"] += dai.T @ chx
        grads["bi"] += dai.sum(axis=0)
        grads["wc"] += dac.T @ hx
        grads["bc"] += dac.sum(axis=0)
        grads["wo"] += dao.T @ chxo
        grads["bo"] += dao.sum(axis=0)

        dh_rec = daf @ wfh + dai @ wih + dac @ wch + dao @ woh
        dc_next = dc * s["f"] + daf @ wfc + dai @ wic
        dxs[:, ti, :] = daf @ wfx + dai @ wix + dac @ wcx + dao @ wox
    return grads, dxs


# ---------------------------------------------------------------------------
# Language classifier: LSTM x2 -> ReLU dense -> softmax on last frame
# ---------------------------------------------------------------------------


@dataclass
class Classifier:
    lstm1: LstmLayer
    lstm2: LstmLayer
    fc: DenseLayer  # relu
    out: DenseLayer  # softmax

    @property
    def input_dim(self) -> int:
        return self.lstm1.input_size

    @property
    def num_classes(self) -> int:
        return self.out.weight.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for name in ("lstm1", "lstm2"):
            layer = getattr(self, name)
            for field in ("wf", "wi", "wc", "wo", "bf", "bi", "bc", "bo"):
                params[f"{name}.{field}"] = getattr(layer, field)
        params["fc.weight"] = self.fc.weight
        params["fc.bias"] = self.fc.bias
        params["out.weight"] = self.out.weight
        params["out.bias"] = self.out.bias
        return params

    def astype(self, dtype) -> "Classifier":
        def conv_lstm(l: LstmLayer) -> LstmLayer:
            return LstmLayer(*(getattr(l, f).astype(dtype) for f in
                               ("wf", "wi", "wc", "wo", "bf", "bi", "bc", "bo")))

        return Classifier(
            lstm1=conv_lstm(self.lstm1), lstm2=conv_lstm(self.lstm2),
            fc=DenseLayer(self.fc.weight.astype(dtype), self.fc.bias.astype(dtype),
                          "relu"),
            out=DenseLayer(self.out.weight.astype(dtype), self.out.bias.astype(dtype),
                           "softmax"),
        )


def init_classifier(rng: np.random.Generator, input_dim: int, lstm_size: int,
                    relu_size: int, num_classes: int, dtype=np.float32) -> Classifier:
    return Classifier(
        lstm1=init_lstm(rng, input_dim, lstm_size, dtype),
        lstm2=init_lstm(rng, lstm_size, lstm_size, dtype),
        fc=init_dense(rng, relu_size, lstm_size, "relu", dtype),
        out=init_dense(rng, num_classes, relu_size, "softmax", dtype),
    )


def classifier_forward(model: Classifier, blocks: np.ndarray,
                       want_cache: bool = False):
    """Blocks (B, T, D) -> per-class log-probabilities (B, C). Only the
    last frame's top hidden state feeds the dense head."""
    x = np.asarray(blocks, dtype=model.lstm1.wf.dtype)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    h1, steps1 = lstm_forward(model.lstm1, x)
    h2, steps2 = lstm_forward(model.lstm2, h1)
    last = h2[:, -1, :]
    pre_fc = last @ model.fc.weight.T + model.fc.bias
    relu = np.maximum(pre_fc, 0.0)
    logits = relu @ model.out.weight.T + model.out.bias
    log_probs = log_softmax(logits)
    if squeeze:
        log_probs = log_probs[0]
    if want_cache:
        return log_probs, (steps1, steps2, h1.shape, pre_fc, relu)
    return log_probs


def lstm_sequence_forward(block: np.ndarray, model: Classifier) -> np.ndarray:
    """Single block (T, D) -> class log-probability vector."""
    return classifier_forward(model, block)


def classifier_loss_and_grads(model: Classifier, blocks: np.ndarray,
                              targets: np.ndarray):
    """Mean cross-entropy over a batch of blocks plus all gradients."""
    log_probs, cache = classifier_forward(model, blocks, want_cache=True)
    steps1, steps2, h1_shape, pre_fc, relu = cache
    t = np.asarray(targets, dtype=np.intp)
    loss = cross_entropy(log_probs, t)

    batch = log_probs.shape[0]
    dtype = model.lstm1.wf.dtype
    delta = np.exp(log_probs).astype(dtype)
    delta[np.arange(batch), t] -= 1.0
    delta /= batch

    grads: dict[str, np.ndarray] = {}
    grads["out.weight"] = delta.T @ relu
    grads["out.bias"] = delta.sum(axis=0)
    d_relu = delta @ model.out.weight
    d_pre = d_relu * (pre_fc > 0)
    last = steps2[-1]["h"]
    grads["fc.weight"] = d_pre.T @ last
    grads["fc.bias"] = d_pre.sum(axis=0)
    d_last = d_pre @ model.fc.weight

    d_h2 = np.zeros(h1_shape[:2] + (model.lstm2.hidden_size,), dtype=dtype)
    d_h2[:, -1, :] = d_last
    g2, d_h1 = lstm_backward(model.lstm2, steps2, d_h2)
    g1, _ = lstm_backward(model.lstm1, steps1, d_h1)
    for field, value in g1.items():
        grads[f"lstm1.{field}"] = value
    for field, value in g2.items():
        grads[f"lstm2.{field}"] = value
    return loss, grads
