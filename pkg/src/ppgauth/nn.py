"""BiLSTM + additive attention classifier with hand-written backprop and Adam.

Parameters live in an ordered ``dict`` of named float64 arrays:

* ``lstm.{layer}.{fwd|bwd}.W_x`` (4H, D_in), ``.W_h`` (4H, H), ``.b`` (4H,)
  with gate blocks ordered i, f, g, o
* ``attn.W_a`` (A, 2H), ``attn.b_a`` (A,), ``attn.v`` (A,)
* ``cls.W`` (M, 2H), ``cls.b`` (M,)

Gradients use the same dict layout.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from ppgauth import kernels
from ppgauth.errors import NonFiniteGradient, ShapeMismatch

LOG_CLAMP = 1e-12
DIRECTIONS = ("fwd", "bwd")


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int
    seq_len: int
    num_classes: int
    hidden_dim: int = 256
    num_layers: int = 3
    dropout_rate: float = 0.47
    attention_dim: int | None = None  # None -> hidden_dim

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_layers < 1:
            raise ValueError("hidden_dim and num_layers must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.input_channels < 1 or self.seq_len < 1:
            raise ValueError("input_channels and seq_len must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.attention_dim is None:
            object.__setattr__(self, "attention_dim", self.hidden_dim)

    def to_dict(self):
        return asdict(self)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def count(self):
        return int(sum(v.size for v in self.tensors.values()))


def param_shapes(config):
    h, a, m = config.hidden_dim, config.attention_dim, config.num_classes
    shapes = {}
    for layer in range(config.num_layers):
        d_in = config.input_channels if layer == 0 else 2 * h
        for d in DIRECTIONS:
            shapes[f"lstm.{layer}.{d}.W_x"] = (4 * h, d_in)
            shapes[f"lstm.{layer}.{d}.W_h"] = (4 * h, h)
            shapes[f"lstm.{layer}.{d}.b"] = (4 * h,)
    shapes["attn.W_a"] = (a, 2 * h)
    shapes["attn.b_a"] = (a,)
    shapes["attn.v"] = (a,)
    shapes["cls.W"] = (m, 2 * h)
    shapes["cls.b"] = (m,)
    return shapes


def init_params(config, seed=0):
    """Uniform(+-1/sqrt(H)) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(config.hidden_dim)
    h = config.hidden_dim
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b") or name == "attn.b_a":
            arr = np.zeros(shape)
            if name.startswith("lstm."):
                arr[h:2 * h] = 1.0
        else:
            arr = rng.uniform(-bound, bound, size=shape)
        tensors[name] = arr
    return ModelParams(config, tensors)


def zeros_like(params):
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# --------------------------------------------------------------------------
# single-window building blocks
# --------------------------------------------------------------------------

def lstm_cell(x_t, h_prev, c_prev, w_x, w_h, b):
    """One LSTM step. Returns ``(h, c)``."""
    x_t, h_prev, c_prev = (np.asarray(v, dtype=np.float64) for v in (x_t, h_prev, c_prev))
    hdim = h_prev.shape[-1]
    if w_x.shape != (4 * hdim, x_t.shape[-1]) or w_h.shape != (4 * hdim, hdim) \
            or b.shape != (4 * hdim,) or c_prev.shape != h_prev.shape:
        raise ShapeMismatch(
            f"lstm_cell: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}, "
            f"W_x {w_x.shape}, W_h {w_h.shape}, b {b.shape}"
        )
    z = w_x @ x_t + w_h @ h_prev + b
    i = sigmoid(z[:hdim])
    f = sigmoid(z[hdim:2 * hdim])
    g = np.tanh(z[2 * hdim:3 * hdim])
    o = sigmoid(z[3 * hdim:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def attention(hidden, w_a, b_a, v):
    """Additive attention over the rows of ``hidden`` (T, 2H).

    Returns ``(context, alpha)``.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    scores = np.tanh(hidden @ w_a.T + b_a) @ v
    alpha = softmax(scores)
    return alpha @ hidden, alpha


# --------------------------------------------------------------------------
# batched forward / backward
# --------------------------------------------------------------------------

def _check_input(params, x):
    cfg = params.config
    if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, cfg.input_channels):
        raise ShapeMismatch(
            f"expected input (B, {cfg.seq_len}, {cfg.input_channels}), got {x.shape}"
        )
    if x.shape[0] == 0:
        raise ShapeMismatch("empty batch")


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def _dropout_mask(rng, shape, rate):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(params, x, train=False, seed=None):
    """Batched forward pass.

    ``x`` is (B, T, C). In train mode dropout masks are drawn from
    ``np.random.default_rng(seed)``. Returns ``(probs, cache)``; ``cache``
    holds everything :func:`backward_from_cache` needs.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, x)
    cfg = params.config
    p = params.tensors
    rate = cfg.dropout_rate if train else 0.0
    rng = np.random.default_rng(seed) if rate > 0 else None

    inp = np.ascontiguousarray(x.transpose(1, 0, 2))  # (T, B, D)
    layers = []
    for layer in range(cfg.num_layers):
        dirs = {}
        for d in DIRECTIONS:
            pre = f"lstm.{layer}.{d}."
            xproj = (_flat(inp) @ p[pre + "W_x"].T + p[pre + "b"]).reshape(inp.shape[:2] + (-1,))
            hs, cs, gates = kernels.lstm_forward(xproj, p[pre + "W_h"], reverse=(d == "bwd"))
            dirs[d] = (hs, cs, gates)
        out = np.concatenate([dirs["fwd"][0], dirs["bwd"][0]], axis=-1)
        mask = None
        if rate > 0 and layer < cfg.num_layers - 1:
            mask = _dropout_mask(rng, out.shape, rate)
            out = out * mask
        layers.append({"input": inp, "dirs": dirs, "mask": mask})
        inp = out
    hidden = inp  # (T, B, 2H)

    u = np.tanh(_flat(hidden) @ p["attn.W_a"].T + p["attn.b_a"])
    u = u.reshape(hidden.shape[:2] + (-1,))  # (T, B, A)
    alpha = softmax(u @ p["attn.v"], axis=0)  # (T, B)
    context = (alpha[:, :, None] * hidden).sum(axis=0)
    ctx_mask = None
    if rate > 0:
        ctx_mask = _dropout_mask(rng, context.shape, rate)
        context_d = context * ctx_mask
    else:
        context_d = context
    logits = context_d @ p["cls.W"].T + p["cls.b"]
    probs = softmax(logits, axis=-1)
    cache = {
        "layers": layers, "hidden": hidden, "u": u, "alpha": alpha,
        "context_d": context_d, "ctx_mask": ctx_mask, "probs": probs,
    }
    return probs, cache


def _weights_array(weights, m):
    if weights is None:
        return np.ones(m)
    w = np.asarray(getattr(weights, "w", weights), dtype=np.float64)
    if w.shape != (m,):
        raise ShapeMismatch(f"class weights of shape {w.shape} for {m} classes")
    return w


def weighted_ce(probs, label, weights=None):
    """Per-sample class-weighted cross-entropy ``-w_y * log(p_y)``."""
    probs = np.asarray(probs, dtype=np.float64)
    w = _weights_array(weights, probs.shape[-1])
    return float(-w[label] * np.log(max(probs[label], LOG_CLAMP)))


def batch_loss(probs, y, weights=None):
    w = _weights_array(weights, probs.shape[-1])
    p_y = probs[np.arange(len(y)), y]
    return float(np.mean(-w[y] * np.log(np.maximum(p_y, LOG_CLAMP))))


def backward_from_cache(params, cache, y, weights=None):
    """Gradient of the mean weighted cross-entropy w.r.t. every parameter."""
    cfg = params.config
    p = params.tensors
    hdim = cfg.hidden_dim
    probs = cache["probs"]
    bsz, m = probs.shape
    y = np.asarray(y, dtype=np.int64)
    w = _weights_array(weights, m)
    grads = {}

    dlogits = probs.copy()
    dlogits[np.arange(bsz), y] -= 1.0
    dlogits *= (w[y] / bsz)[:, None]
    dlogits[probs[np.arange(bsz), y] < LOG_CLAMP] = 0.0  # clamped region is flat

    grads["cls.W"] = dlogits.T @ cache["context_d"]
    grads["cls.b"] = dlogits.sum(axis=0)
    dcontext = dlogits @ p["cls.W"]
    if cache["ctx_mask"] is not None:
        dcontext = dcontext * cache["ctx_mask"]

    hidden, u, alpha = cache["hidden"], cache["u"], cache["alpha"]
    dhidden = alpha[:, :, None] * dcontext[None, :, :]
    dalpha = (hidden * dcontext[None, :, :]).sum(axis=-1)
    dscore = alpha * (dalpha - (alpha * dalpha).sum(axis=0, keepdims=True))
    grads["attn.v"] = _flat(u).T @ dscore.reshape(-1)
    dpre = dscore[:, :, None] * p["attn.v"] * (1.0 - u * u)
    grads["attn.W_a"] = _flat(dpre).T @ _flat(hidden)
    grads["attn.b_a"] = dpre.sum(axis=(0, 1))
    dhidden += (_flat(dpre) @ p["attn.W_a"]).reshape(dhidden.shape)

    dout = dhidden
    for layer in reversed(range(cfg.num_layers)):
        rec = cache["layers"][layer]
        if rec["mask"] is not None:
            dout = dout * rec["mask"]
        inp = rec["input"]
        dinp = np.zeros_like(inp)
        for k, d in enumerate(DIRECTIONS):
            pre = f"lstm.{layer}.{d}."
            hs, cs, gates = rec["dirs"][d]
            reverse = d == "bwd"
            dz = kernels.lstm_backward(
                dout[:, :, k * hdim:(k + 1) * hdim], cs, gates, p[pre + "W_h"], reverse
            )
            h_prev = np.zeros_like(hs)
            if reverse:
                h_prev[:-1] = hs[1:]
            else:
                h_prev[1:] = hs[:-1]
            dz2 = _flat(dz)
            grads[pre + "W_h"] = dz2.T @ _flat(h_prev)
            grads[pre + "W_x"] = dz2.T @ _flat(inp)
            grads[pre + "b"] = dz.sum(axis=(0, 1))
            dinp += (dz2 @ p[pre + "W_x"]).reshape(dinp.shape)
        dout = dinp
    return {k: grads[k] for k in p}


def loss_and_grad(params, x, y, weights=None, train=False, seed=None):
    probs, cache = forward(params, x, train=train, seed=seed)
    loss = batch_loss(probs, np.asarray(y), weights)
    return loss, backward_from_cache(params, cache, y, weights)


def backward(batch, params, weights=None, seed=None, train=None):
    """Loss and gradients for a batch of ``(window, label)`` pairs.

    ``window`` may be a :class:`ppgauth.dataset.Window` or a (T, C) array.
    Dropout is active when a ``seed`` is given (train mode) unless ``train``
    says otherwise.
    """
    if not batch:
        raise ShapeMismatch("empty batch")
    x = np.stack([np.asarray(getattr(wnd, "values", wnd), dtype=np.float64) for wnd, _ in batch])
    y = np.array([lbl for _, lbl in batch], dtype=np.int64)
    if train is None:
        train = seed is not None
    return loss_and_grad(params, x, y, weights, train=train, seed=seed)


# --------------------------------------------------------------------------
# single-window wrappers
# --------------------------------------------------------------------------

def bilstm_forward(x, params, train=False, seed=None):
    """Top-layer hidden states (T, 2H) for one window."""
    probs, cache = forward(params, np.asarray(x)[None], train=train, seed=seed)
    return cache["hidden"][:, 0, :]


def classifier_forward(x, params, train=False, seed=None):
    probs, _ = forward(params, np.asarray(x)[None], train=train, seed=seed)
    return probs[0]


def predict_proba(params, x, batch_size=512):
    """Eval-mode class probabilities for a stack of windows (N, T, C)."""
    x = np.asarray(x, dtype=np.float64)
    out = [forward(params, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 9.23e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 8.21e-6


def adam_init(params, lr=9.23e-4, weight_decay=8.21e-6, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(zeros_like(params), zeros_like(params), 0, lr, beta1, beta2, eps, weight_decay)


def adam_step(params, grads, state):
    """One Adam update with L2 weight decay folded into the gradient.

    Returns new ``(params, state)``; the inputs are left untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_t, new_m, new_v = {}, {}, {}
    for name, theta in params.tensors.items():
        if grads[name].shape != theta.shape:
            raise ShapeMismatch(f"gradient {name} {grads[name].shape} vs param {theta.shape}")
        g = grads[name] + state.weight_decay * theta
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_t[name] = theta - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps, state.weight_decay)
    return ModelParams(params.config, new_t), new_state
