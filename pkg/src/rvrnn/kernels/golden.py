"""Layer descriptions and host-side reference models.

Every layer carries its parameters as raw Q3.12 integers. The ``*_q``
functions define the exact integer semantics the generated kernels must
reproduce; the ``*_float`` functions evaluate the same layer on the
real values the raws stand for.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import activation, fixp

GATES = ("o", "f", "i", "c")


def _q_array(a, shape=None, what="array") -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    if shape is not None and a.shape != tuple(shape):
        raise ValueError(f"{what} has shape {a.shape}, expected {tuple(shape)}")
    if a.size and (a.min() < fixp.Q_MIN or a.max() > fixp.Q_MAX):
        raise ValueError(f"{what} holds values outside the Q3.12 raw range")
    return a


def random_q(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform over [-1, 1) in Q3.12."""
    return rng.integers(-fixp.ONE, fixp.ONE, size=shape, dtype=np.int64)


@dataclass
class FcLayer:
    weights: np.ndarray  # (c_out, c_in)
    bias: np.ndarray  # (c_out,)

    def __post_init__(self):
        self.weights = _q_array(self.weights, what="weights")
        if self.weights.ndim != 2 or 0 in self.weights.shape:
            raise ValueError("FC weights must be a non-empty 2-D matrix")
        self.bias = _q_array(self.bias, (self.c_out,), "bias")

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def random(cls, c_in: int, c_out: int, rng) -> "FcLayer":
        return cls(random_q(rng, (c_out, c_in)), random_q(rng, (c_out,)))


@dataclass
class LstmLayer:
    n_in: int
    n_hidden: int
    W: dict = field(default_factory=dict)  # gate -> (n_hidden, n_in)
    U: dict = field(default_factory=dict)  # gate -> (n_hidden, n_hidden)
    b: dict = field(default_factory=dict)  # gate -> (n_hidden,)

    def __post_init__(self):
        if self.n_in < 1 or self.n_hidden < 1:
            raise ValueError("LSTM dimensions must be positive")
        for g in GATES:
            for name, table, shape in (("W", self.W, (self.n_hidden, self.n_in)),
                                       ("U", self.U, (self.n_hidden, self.n_hidden)),
                                       ("b", self.b, (self.n_hidden,))):
                if g not in table:
                    raise ValueError(f"missing {name}_{g}")
                table[g] = _q_array(table[g], shape, f"{name}_{g}")

    @classmethod
    def random(cls, n_in: int, n_hidden: int, rng) -> "LstmLayer":
        W = {g: random_q(rng, (n_hidden, n_in)) for g in GATES}
        U = {g: random_q(rng, (n_hidden, n_hidden)) for g in GATES}
        b = {g: random_q(rng, (n_hidden,)) for g in GATES}
        return cls(n_in, n_hidden, W, U, b)

    def stacked(self) -> FcLayer:
        """All four gate pre-activations as one FC over ``[x; h_prev]``."""
        w = np.concatenate([np.concatenate([self.W[g], self.U[g]], axis=1) for g in GATES])
        return FcLayer(w, np.concatenate([self.b[g] for g in GATES]))


@dataclass
class ConvLayer:
    weights: np.ndarray  # (n_out, n_in, h_k, w_k)
    bias: np.ndarray  # (n_out,)
    h_im: int
    w_im: int

    def __post_init__(self):
        self.weights = _q_array(self.weights, what="weights")
        if self.weights.ndim != 4 or 0 in self.weights.shape:
            raise ValueError("conv weights must be (n_out, n_in, h_k, w_k)")
        if self.h_k % 2 == 0 or self.w_k % 2 == 0:
            raise ValueError("kernel dimensions must be odd")
        if self.h_im < 1 or self.w_im < 1:
            raise ValueError("image dimensions must be positive")
        self.bias = _q_array(self.bias, (self.n_out,), "bias")

    n_out = property(lambda self: self.weights.shape[0])
    n_in = property(lambda self: self.weights.shape[1])
    h_k = property(lambda self: self.weights.shape[2])
    w_k = property(lambda self: self.weights.shape[3])

    @classmethod
    def random(cls, n_in, n_out, h_im, w_im, h_k, w_k, rng) -> "ConvLayer":
        return cls(random_q(rng, (n_out, n_in, h_k, w_k)), random_q(rng, (n_out,)), h_im, w_im)


def mac_count(layer) -> int:
    if isinstance(layer, FcLayer):
        return layer.c_in * layer.c_out
    if isinstance(layer, LstmLayer):
        return 4 * layer.n_hidden * (layer.n_in + layer.n_hidden)
    if isinstance(layer, ConvLayer):
        return layer.n_in * layer.n_out * layer.h_im * layer.w_im * layer.h_k * layer.w_k
    raise TypeError(f"unsupported layer type {type(layer).__name__}")


def _vec(x, n, what="input"):
    x = np.asarray(x)
    if x.shape != (n,):
        raise ValueError(f"{what} has shape {x.shape}, expected ({n},)")
    return x


# -- fully connected ----------------------------------------------------------

def golden_fc_float(layer: FcLayer, x) -> np.ndarray:
    x = _vec(np.asarray(x, dtype=np.float64), layer.c_in)
    return fixp.to_real_array(layer.bias) + fixp.to_real_array(layer.weights) @ x


def _fc_acc(weights, bias, x) -> np.ndarray:
    # int64 cannot overflow here (|w*x| < 2**30, c_in < 2**32), and wrapping
    # once at the end equals wrapping after every addition
    return fixp.wrap32_array((bias << fixp.FRAC_BITS) + weights @ x)


def golden_fc_q(layer: FcLayer, x) -> np.ndarray:
    x = _q_array(_vec(x, layer.c_in), what="input")
    return fixp.requantize_array(_fc_acc(layer.weights, layer.bias, x))


# -- LSTM -----------------------------------------------------------------------

def _sig(v):
    return 1.0 / (1.0 + np.exp(-v))


def golden_lstm_float(layer: LstmLayer, x, h_prev, c_prev):
    x = _vec(np.asarray(x, dtype=np.float64), layer.n_in)
    h_prev = _vec(np.asarray(h_prev, dtype=np.float64), layer.n_hidden, "h_prev")
    c_prev = _vec(np.asarray(c_prev, dtype=np.float64), layer.n_hidden, "c_prev")
    r = fixp.to_real_array

    def pre(g):
        return r(layer.W[g]) @ x + r(layer.U[g]) @ h_prev + r(layer.b[g])

    o, f, i = _sig(pre("o")), _sig(pre("f")), _sig(pre("i"))
    g = np.tanh(pre("c"))
    c_t = f * c_prev + i * g
    return o * np.tanh(c_t), c_t


def golden_lstm_q(layer: LstmLayer, x, h_prev, c_prev):
    """One step on raws; returns ``(h_t, c_t)``.

    Each gate pre-activation is a single 32-bit accumulation of bias,
    input and recurrent terms. The cell update sums both Hadamard
    products before the one requantization.
    """
    n = layer.n_hidden
    x = _q_array(_vec(x, layer.n_in), what="x")
    h_prev = _q_array(_vec(h_prev, n, "h_prev"), what="h_prev")
    c_prev = _q_array(_vec(c_prev, n, "c_prev"), what="c_prev")
    st = layer.stacked()
    pre = fixp.requantize_array(_fc_acc(st.weights, st.bias, np.concatenate([x, h_prev])))
    sig, tanh = activation.default_table("sig"), activation.default_table("tanh")
    o = activation.pla_eval_array(sig, pre[0:n])
    f = activation.pla_eval_array(sig, pre[n:2 * n])
    i = activation.pla_eval_array(sig, pre[2 * n:3 * n])
    g = activation.pla_eval_array(tanh, pre[3 * n:4 * n])
    c_t = fixp.requantize_array(f * c_prev + i * g)
    h_t = fixp.requantize_array(o * activation.pla_eval_array(tanh, c_t))
    return h_t, c_t


# -- convolution ---------------------------------------------------------------

def _conv_shape(layer, img):
    if img.shape != (layer.n_in, layer.h_im, layer.w_im):
        raise ValueError(f"input has shape {img.shape}, expected "
                         f"{(layer.n_in, layer.h_im, layer.w_im)}")


def _conv_sum(w, img, h_k, w_k):
    """Same-size zero-padded 2-D convolution summed over input channels."""
    n_out, n_in = w.shape[:2]
    _, hh, ww = img.shape
    ph, pw = h_k // 2, w_k // 2
    pad = np.zeros((n_in, hh + 2 * ph, ww + 2 * pw), dtype=img.dtype)
    pad[:, ph:ph + hh, pw:pw + ww] = img
    out = np.zeros((n_out, hh, ww), dtype=img.dtype)
    # out[y, x] = sum_{a,b} w[a, b] * in[y - a + ph, x - b + pw]
    for a in range(h_k):
        for b in range(w_k):
            win = pad[:, 2 * ph - a:2 * ph - a + hh, 2 * pw - b:2 * pw - b + ww]
            out += np.einsum("kn,nyx->kyx", w[:, :, a, b], win)
    return out


def golden_conv_float(layer: ConvLayer, img) -> np.ndarray:
    """``img`` is (n_in, h_im, w_im); returns (n_out, h_im, w_im)."""
    img = np.asarray(img, dtype=np.float64)
    _conv_shape(layer, img)
    out = _conv_sum(fixp.to_real_array(layer.weights), img, layer.h_k, layer.w_k)
    return out + fixp.to_real_array(layer.bias)[:, None, None]


def golden_conv_q(layer: ConvLayer, img) -> np.ndarray:
    img = _q_array(img, what="input")
    _conv_shape(layer, img)
    acc = _conv_sum(layer.weights, img, layer.h_k, layer.w_k)
    acc += (layer.bias << fixp.FRAC_BITS)[:, None, None]
    return fixp.requantize_array(acc)


def golden_network_q(layers, x, states=None):
    """Run layers back to back on raws.

    A convolution hands its output to the next layer flattened in
    height-width-channel order. ``states`` maps LSTM layer indices to
    ``(h_prev, c_prev)`` (zeros when absent). Returns ``(output, new_states)``
    where a trailing convolution's output keeps its (n_out, h, w) shape.
    """
    states = states or {}
    new_states = {}
    cur = np.asarray(x, dtype=np.int64)
    for i, layer in enumerate(layers):
        if cur.ndim == 3 and not isinstance(layer, ConvLayer):
            cur = cur.transpose(1, 2, 0).ravel()
        if isinstance(layer, FcLayer):
            cur = golden_fc_q(layer, cur)
        elif isinstance(layer, LstmLayer):
            zero = np.zeros(layer.n_hidden, dtype=np.int64)
            h, c = states.get(i, (zero, zero))
            cur, c_t = golden_lstm_q(layer, cur, h, c)
            new_states[i] = (cur, c_t)
        elif isinstance(layer, ConvLayer):
            cur = golden_conv_q(layer, cur)
        else:
            raise TypeError(f"unsupported layer type {type(layer).__name__}")
    return cur, new_states
